//! Named parameter storage, SGD updates, and checkpoint I/O.
//!
//! Checkpoints use the `EFTP1` format: a little-endian binary key-value
//! stream of `name -> shape -> row-major f64 values`, written in sorted
//! name order so identical stores serialize to identical bytes.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::tensor::Tensor;

const MAGIC: &[u8; 6] = b"EFTP1\n";

#[derive(Debug, Error)]
pub enum ParamError {
    #[error("parameter `{0}` already exists")]
    Duplicate(String),
    #[error("unknown parameter `{0}`")]
    Unknown(String),
    #[error("gradient for `{name}` has shape {got:?}, parameter is {expected:?}")]
    GradShape {
        name: String,
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("checkpoint is not an EFTP1 file")]
    BadMagic,
    #[error("checkpoint is truncated or corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Uniquely named tensors. Shapes are fixed at insertion; values change
/// only through [`ParameterStore::get_mut`] and [`Sgd::step`].
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    params: BTreeMap<String, Tensor>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<(), ParamError> {
        if self.params.contains_key(name) {
            return Err(ParamError::Duplicate(name.to_string()));
        }
        self.params.insert(name.to_string(), tensor);
        Ok(())
    }

    /// Insert a tensor with entries drawn uniformly from `[-scale, scale]`.
    pub fn insert_uniform(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Result<(), ParamError> {
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-scale..=scale))
            .collect();
        self.insert(name, Tensor::from_vec(rows, cols, data).expect("sized above"))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Iterate in sorted name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(n, t)| (n.as_str(), t))
    }

    // ----- checkpoint I/O --------------------------------------------------

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<(), ParamError> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for (name, tensor) in &self.params {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u64).to_le_bytes())?;
            w.write_all(bytes)?;
            w.write_all(&(tensor.rows() as u64).to_le_bytes())?;
            w.write_all(&(tensor.cols() as u64).to_le_bytes())?;
            for v in tensor.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self, ParamError> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)
            .map_err(|_| ParamError::BadMagic)?;
        if &magic != MAGIC {
            return Err(ParamError::BadMagic);
        }
        let count = read_u64(&mut r)? as usize;
        let mut params = BTreeMap::new();
        for _ in 0..count {
            let name_len = read_u64(&mut r)? as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)
                .map_err(|e| ParamError::Corrupt(e.to_string()))?;
            let name = String::from_utf8(name_bytes)
                .map_err(|e| ParamError::Corrupt(e.to_string()))?;
            let rows = read_u64(&mut r)? as usize;
            let cols = read_u64(&mut r)? as usize;
            let mut data = vec![0.0f64; rows * cols];
            let mut buf = [0u8; 8];
            for v in data.iter_mut() {
                r.read_exact(&mut buf)
                    .map_err(|e| ParamError::Corrupt(e.to_string()))?;
                *v = f64::from_le_bytes(buf);
            }
            let tensor = Tensor::from_vec(rows, cols, data)
                .map_err(|e| ParamError::Corrupt(e.to_string()))?;
            if params.insert(name.clone(), tensor).is_some() {
                return Err(ParamError::Corrupt(format!("duplicate key `{name}`")));
            }
        }
        Ok(ParameterStore { params })
    }

    pub fn save(&self, path: &Path) -> Result<(), ParamError> {
        let file = std::fs::File::create(path)?;
        self.write_checkpoint(io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self, ParamError> {
        let file = std::fs::File::open(path)?;
        Self::read_checkpoint(io::BufReader::new(file))
    }
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, ParamError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|e| ParamError::Corrupt(e.to_string()))?;
    Ok(u64::from_le_bytes(buf))
}

/// Stochastic gradient descent with a fixed learning rate and optional
/// global-norm clipping.
#[derive(Debug, Clone, Copy)]
pub struct Sgd {
    pub learning_rate: f64,
    pub clip_norm: Option<f64>,
}

impl Sgd {
    pub fn new(learning_rate: f64, clip_norm: Option<f64>) -> Self {
        Sgd {
            learning_rate,
            clip_norm,
        }
    }

    /// Apply one update from `(name, grad)` pairs. Gradients are scaled
    /// jointly when their global L2 norm exceeds the clip threshold.
    pub fn step(
        &self,
        store: &mut ParameterStore,
        grads: &[(&str, &Tensor)],
    ) -> Result<(), ParamError> {
        let mut scale = -self.learning_rate;
        if let Some(clip) = self.clip_norm {
            let sq: f64 = grads
                .iter()
                .map(|(_, g)| g.data().iter().map(|v| v * v).sum::<f64>())
                .sum();
            let norm = sq.sqrt();
            if norm > clip {
                scale *= clip / norm;
            }
        }
        for (name, grad) in grads {
            let param = store
                .get_mut(name)
                .ok_or_else(|| ParamError::Unknown(name.to_string()))?;
            if param.shape() != grad.shape() {
                return Err(ParamError::GradShape {
                    name: name.to_string(),
                    got: grad.shape(),
                    expected: param.shape(),
                });
            }
            param.add_scaled(grad, scale);
        }
        Ok(())
    }
}
