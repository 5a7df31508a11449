//! Minimal f64 tensor kernel: row-major dense tensors, a Wengert tape for
//! reverse-mode autodiff, AdamW, seeded RNG, and versioned checkpoints.
//!
//! Everything is scalar f64 with fixed reduction order, so identical inputs
//! produce bit-identical outputs run to run.

mod checkpoint;
pub mod gradcheck;
mod optim;
mod rng;
mod tape;

pub use checkpoint::{load_checkpoint, save_checkpoint, write_atomic, Checkpoint, CheckpointError};
pub use optim::{AdamW, AdamWConfig, OptimizerState};
pub use rng::Rng;
pub use tape::{Tape, VarId};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Errors for tensor construction, tape ops, and optimizer configuration.
#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} values, got {got}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected a rank-{expected} tensor, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: index {index} out of bounds ({bound})")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("backward was already run on this tape; build a new forward pass first")]
    TapeConsumed,
    #[error("{0}")]
    Invalid(String),
}

/// Dense row-major tensor of f64 values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; len],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Row count for rank-2 tensors; rank-1 tensors count as a single row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            _ => self.shape[0],
        }
    }

    /// Size of the last dimension (1 for rank-0 degenerate tensors).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.last_dim() + col]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A named trainable tensor with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter {
            name: name.into(),
            value,
            grad,
        }
    }
}

/// Ordered store of model parameters, keyed by name.
///
/// Iteration order is the lexicographic name order, so every whole-model
/// operation (optimizer steps, checkpointing, gradient checks) is
/// deterministic.
#[derive(Debug, Clone, Default)]
pub struct Params {
    map: BTreeMap<String, Parameter>,
}

impl Params {
    pub fn new() -> Self {
        Params::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        self.map.insert(name.clone(), Parameter::new(name, value));
    }

    pub fn get(&self, name: &str) -> Result<&Parameter, TensorError> {
        self.map
            .get(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Parameter, TensorError> {
        self.map
            .get_mut(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.map.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.map.values_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|s| s.as_str())
    }

    /// Zero every gradient.
    pub fn reset_grads(&mut self) {
        for p in self.map.values_mut() {
            for g in p.grad.data_mut() {
                *g = 0.0;
            }
        }
    }

    /// Total number of scalar values across all parameters.
    pub fn value_count(&self) -> usize {
        self.map.values().map(|p| p.value.len()).sum()
    }

    /// Insert a matrix initialized uniformly in ±sqrt(6 / (fan_in + fan_out)).
    pub fn insert_glorot(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut Rng) {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect();
        self.insert(name, Tensor::from_vec(&[rows, cols], data).expect("sized data"));
    }

    /// Insert a tensor with independent uniform(lo, hi) entries.
    pub fn insert_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        lo: f64,
        hi: f64,
        rng: &mut Rng,
    ) {
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| rng.uniform(lo, hi)).collect();
        self.insert(name, Tensor::from_vec(shape, data).expect("sized data"));
    }

    pub fn insert_zeros(&mut self, name: impl Into<String>, shape: &[usize]) {
        self.insert(name, Tensor::zeros(shape));
    }

    pub fn insert_filled(&mut self, name: impl Into<String>, shape: &[usize], v: f64) {
        self.insert(name, Tensor::filled(shape, v));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_wrong_length() {
        let err = Tensor::from_vec(&[2, 3], vec![1.0; 5]).unwrap_err();
        match err {
            TensorError::DataLength { expected, got, .. } => {
                assert_eq!(expected, 6);
                assert_eq!(got, 5);
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn params_reset_zeroes_gradients() {
        let mut ps = Params::new();
        ps.insert("w", Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        ps.get_mut("w").unwrap().grad.data_mut()[0] = 3.5;
        ps.reset_grads();
        assert_eq!(ps.get("w").unwrap().grad.data(), &[0.0, 0.0]);
    }

    #[test]
    fn params_iterate_in_name_order() {
        let mut ps = Params::new();
        ps.insert("b", Tensor::scalar(1.0));
        ps.insert("a", Tensor::scalar(2.0));
        ps.insert("c", Tensor::scalar(3.0));
        let names: Vec<&str> = ps.names().collect();
        assert_eq!(names, vec!["a", "b", "c"]);
    }

    #[test]
    fn glorot_bound_respected() {
        let mut rng = Rng::seeded(11);
        let mut ps = Params::new();
        ps.insert_glorot("w", 8, 8, &mut rng);
        let bound = (6.0 / 16.0_f64).sqrt();
        for &v in ps.get("w").unwrap().value.data() {
            assert!(v > -bound && v < bound, "{v} outside ±{bound}");
        }
    }
}
