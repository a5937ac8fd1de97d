//! Named parameter storage.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Matrix;

/// Trainable tensors keyed by a dotted parameter path such as
/// `memory.entity` or `encoder.ctx.0.w`.
///
/// Iteration order is the lexicographic order of the keys, which keeps
/// initialization, optimizer state and serialization deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Matrix)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Matrix)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Matrix::len).sum()
    }

    /// Euclidean norm of each tensor, used in diagnostics.
    pub fn norms(&self) -> BTreeMap<String, f64> {
        self.tensors
            .iter()
            .map(|(k, v)| (k.clone(), v.squared_norm().sqrt()))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Matrix::is_finite)
    }
}

/// Uniform `[-bound, bound]` fill.
pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| {
            if bound == 0.0 {
                0.0
            } else {
                rng.gen_range(-bound..=bound)
            }
        })
        .collect();
    Matrix::from_vec(rows, cols, data)
}

/// Glorot-uniform fill for a `fan_in × fan_out` weight.
pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    uniform(fan_in, fan_out, bound, rng)
}
