//! Command-line front end: train, parse, eval, analyze.
//!
//! Logs are line-oriented text on stderr; machine-readable results (JSON,
//! CoNLL, CSV) go to stdout or the requested output file. Exit codes:
//! 0 success, 1 usage error, 2 data error, 3 config/checkpoint mismatch.

use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use efparse::config::{ConfigError, RunConfig};
use efparse::conll::{is_well_formed_tree, read_conll, write_conll, PredictedTree, SentenceRecord};
use efparse::embed::load_external_context;
use efparse::eval::attachment_scores;
use efparse::model::{build_vocabs, Model, ModelError};
use efparse::parser::{parse_record, prepare_training, train_epoch, TrainOptions};
use efparse::subtree::EncoderKind;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_MISMATCH: u8 = 3;

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    fn mismatch(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_MISMATCH,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::usage(e.to_string())
    }
}

impl From<efparse::conll::ConllError> for Failure {
    fn from(e: efparse::conll::ConllError) -> Self {
        Failure::data(e.to_string())
    }
}

impl From<efparse::eval::EvalError> for Failure {
    fn from(e: efparse::eval::EvalError) -> Self {
        Failure::data(e.to_string())
    }
}

impl From<efparse::embed::EmbedError> for Failure {
    fn from(e: efparse::embed::EmbedError) -> Self {
        Failure::data(e.to_string())
    }
}

impl From<efparse::parser::ParserError> for Failure {
    fn from(e: efparse::parser::ParserError) -> Self {
        Failure::data(e.to_string())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io(io) => Failure::data(io.to_string()),
            ModelError::Param(efparse::params::ParamError::Io(io)) => {
                Failure::data(io.to_string())
            }
            other => Failure::mismatch(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::data(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "efparse",
    version,
    about = "Easy-first dependency parser with recursive subtree encoders"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and checkpoint the best development score.
    Train(TrainArgs),
    /// Parse CoNLL input with a trained model.
    Parse(ParseArgs),
    /// Score predictions against gold trees.
    Eval(EvalArgs),
    /// Emit error profiles by sentence length and POS group as CSV.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// JSON configuration; flags override config keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Checkpoint output path.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Pre-trained word vectors (text: `word v1 .. vd` per line).
    #[arg(long)]
    pretrained: Option<PathBuf>,
    /// Externally computed per-token context vectors for the train set.
    #[arg(long)]
    external_context: Option<PathBuf>,
    /// Context vectors for the dev set.
    #[arg(long)]
    dev_external_context: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Subtree encoder: tree-lstm, rcnn, or none.
    #[arg(long)]
    encoder: Option<String>,
    /// Train an unlabeled parser.
    #[arg(long)]
    unlabeled: bool,
}

#[derive(Args)]
struct ParseArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    external_context: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Emit the report as JSON instead of aligned text.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Parse(args) => cmd_parse(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Analyze(args) => cmd_analyze(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("efparse: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn read_records(path: &Path) -> Result<Vec<SentenceRecord>, Failure> {
    let file = File::open(path)
        .map_err(|e| Failure::data(format!("cannot open {}: {e}", path.display())))?;
    Ok(read_conll(BufReader::new(file))?)
}

fn read_context(
    path: &Option<PathBuf>,
    records: &[SentenceRecord],
) -> Result<Option<Vec<Vec<Vec<f64>>>>, Failure> {
    match path {
        None => Ok(None),
        Some(p) => {
            let file = File::open(p)
                .map_err(|e| Failure::data(format!("cannot open {}: {e}", p.display())))?;
            Ok(load_external_context(BufReader::new(file), records)?)
        }
    }
}

fn context_width(ctx: &Option<Vec<Vec<Vec<f64>>>>) -> usize {
    ctx.as_ref()
        .and_then(|blocks| blocks.iter().flat_map(|b| b.iter()).next())
        .map(|v| v.len())
        .unwrap_or(0)
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let mut cfg = load_config(&args.config)?;
    if let Some(p) = args.train {
        cfg.train = Some(p);
    }
    if let Some(p) = args.dev {
        cfg.dev = Some(p);
    }
    if let Some(p) = args.model {
        cfg.model = Some(p);
    }
    if let Some(p) = args.pretrained {
        cfg.pretrained = Some(p);
    }
    if let Some(p) = args.external_context {
        cfg.external_context = Some(p);
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(lr) = args.learning_rate {
        cfg.learning_rate = lr;
    }
    if let Some(enc) = &args.encoder {
        cfg.hyper.encoder = match enc.as_str() {
            "tree-lstm" => EncoderKind::TreeLstm,
            "rcnn" => EncoderKind::Rcnn,
            "none" => EncoderKind::None,
            other => return Err(Failure::usage(format!("unknown encoder `{other}`"))),
        };
    }
    if args.unlabeled {
        cfg.hyper.labeled = false;
    }

    let train_path = cfg
        .train
        .clone()
        .ok_or_else(|| Failure::usage("no training file given (--train or config.train)"))?;
    let dev_path = cfg
        .dev
        .clone()
        .ok_or_else(|| Failure::usage("no development file given (--dev or config.dev)"))?;
    let model_path = cfg
        .model
        .clone()
        .unwrap_or_else(|| PathBuf::from("model.eftp"));

    let train_records = read_records(&train_path)?;
    let dev_records = read_records(&dev_path)?;
    let train_ctx = read_context(&cfg.external_context, &train_records)?;
    let dev_ctx = read_context(&args.dev_external_context, &dev_records)?;

    let mut hyper = cfg.hyper.clone();
    let ctx_width = context_width(&train_ctx);
    if ctx_width > 0 {
        hyper.external_dim = ctx_width;
        eprintln!("external context enabled, width {ctx_width}");
    }

    let (words, pos, rels) = build_vocabs(&train_records);
    eprintln!(
        "vocab: {} words, {} pos tags, {} relations",
        words.non_special_count(),
        pos.non_special_count(),
        rels.non_special_count()
    );
    let mut model = Model::new(hyper, words, pos, rels, cfg.seed).map_err(Failure::from)?;

    if let Some(pre) = &cfg.pretrained {
        let file = File::open(pre)
            .map_err(|e| Failure::data(format!("cannot open {}: {e}", pre.display())))?;
        let table = model.embeds.word.clone();
        let coverage = efparse::embed::load_pretrained(
            BufReader::new(file),
            &model.words,
            &mut model.store,
            &table,
        )?;
        eprintln!(
            "pretrained vectors cover {}/{} vocabulary words ({:.4})",
            coverage.covered,
            coverage.vocab_words,
            coverage.fraction()
        );
    }

    let (corpus, word_freq, skipped) =
        prepare_training(&model, &train_records, train_ctx.as_deref());
    if skipped > 0 {
        eprintln!("skipped {skipped} non-projective or unannotated training sentences");
    }
    if corpus.is_empty() {
        return Err(Failure::data("no usable training sentences"));
    }

    let opts = TrainOptions {
        learning_rate: cfg.learning_rate,
        clip_norm: cfg.clip_norm,
        explore: cfg.explore,
        word_dropout_alpha: cfg.word_dropout_alpha,
    };
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_add(1));

    let mut best = (0usize, f64::NEG_INFINITY, 0.0f64);
    for epoch in 1..=cfg.epochs {
        let metrics =
            train_epoch(&mut model, &corpus, &word_freq, &opts, &mut rng).map_err(Failure::from)?;
        let trees = parse_corpus(&model, &dev_records, dev_ctx.as_deref())?;
        let report = attachment_scores(
            &dev_records,
            &trees,
            &cfg.punctuation,
            &cfg.pos_groups,
            cfg.bin_width,
        )?;
        eprintln!(
            "epoch {epoch} loss {:.6} dev-uas {:.4} dev-las {:.4}",
            metrics.mean_loss, report.uas, report.las
        );
        if report.uas > best.1 {
            best = (epoch, report.uas, report.las);
            model.save(&model_path).map_err(Failure::from)?;
        }
    }

    let summary = serde_json::json!({
        "best_epoch": best.0,
        "best_dev_uas": best.1,
        "best_dev_las": best.2,
        "epochs": cfg.epochs,
        "train_sentences": corpus.len(),
        "skipped_nonprojective": skipped,
        "checkpoint": model_path,
    });
    println!("{summary}");
    Ok(())
}

fn parse_corpus(
    model: &Model,
    records: &[SentenceRecord],
    ctx: Option<&[Vec<Vec<f64>>]>,
) -> Result<Vec<PredictedTree>, Failure> {
    let mut out = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let external = ctx.and_then(|c| c.get(i)).map(|v| v.as_slice());
        let tree = parse_record(model, rec, external)?;
        let heads: Vec<usize> = tree.iter().map(|(h, _)| *h).collect();
        debug_assert!(is_well_formed_tree(&heads));
        out.push(tree);
    }
    Ok(out)
}

fn cmd_parse(args: ParseArgs) -> Result<(), Failure> {
    let cfg = load_config(&args.config)?;
    let model_path = args
        .model
        .or(cfg.model)
        .ok_or_else(|| Failure::usage("no model given (--model or config.model)"))?;
    let input = args
        .input
        .or(cfg.test)
        .ok_or_else(|| Failure::usage("no input given (--input or config.test)"))?;

    let model = Model::load(&model_path).map_err(Failure::from)?;
    let records = read_records(&input)?;
    let ctx_path = args.external_context.or(cfg.external_context);
    let ctx = read_context(&ctx_path, &records)?;
    let width = context_width(&ctx);
    if width != model.hyper.external_dim {
        return Err(Failure::mismatch(format!(
            "external context width {} does not match model external dim {}",
            width, model.hyper.external_dim
        )));
    }

    let trees = parse_corpus(&model, &records, ctx.as_deref())?;
    match args.output {
        Some(path) => {
            let file = File::create(&path)?;
            write_conll(io::BufWriter::new(file), &records, Some(&trees))?;
        }
        None => {
            let stdout = io::stdout();
            write_conll(stdout.lock(), &records, Some(&trees))?;
        }
    }
    Ok(())
}

/// Read a predicted file's arcs; every token must carry a head.
fn predicted_trees(records: &[SentenceRecord]) -> Result<Vec<PredictedTree>, Failure> {
    let mut out = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let mut tree = Vec::with_capacity(rec.len());
        for t in &rec.tokens {
            let head = t.head.ok_or_else(|| {
                Failure::data(format!("prediction sentence {} lacks a head column", i + 1))
            })?;
            tree.push((head, t.rel.clone().unwrap_or_else(|| "_".to_string())));
        }
        out.push(tree);
    }
    Ok(out)
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let cfg = load_config(&args.config)?;
    let gold = read_records(&args.gold)?;
    let pred = predicted_trees(&read_records(&args.pred)?)?;
    let report =
        attachment_scores(&gold, &pred, &cfg.punctuation, &cfg.pos_groups, cfg.bin_width)?;
    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&report).expect("serializable")
        );
    } else {
        println!("{report}");
    }
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<(), Failure> {
    let cfg = load_config(&args.config)?;
    let gold = read_records(&args.gold)?;
    let pred = predicted_trees(&read_records(&args.pred)?)?;
    let (bins, groups) = efparse::eval::error_profile(
        &gold,
        &pred,
        &cfg.punctuation,
        &cfg.pos_groups,
        cfg.bin_width,
    )?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "kind,bucket,errors,total,rate")?;
    for row in bins.iter().chain(groups.iter()) {
        writeln!(
            out,
            "{},{},{},{},{:.6}",
            row.kind, row.bucket, row.errors, row.total, row.rate
        )?;
    }
    Ok(())
}
