use ndarray::Array2;
use rand::Rng;

use crate::metrics::{Layer, WeightSnapshot};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Array2<f64>,
}

/// Ordered named tensors. Vectors are stored as `1 x n` matrices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    pub params: Vec<Param>,
}

pub type Grads = Vec<Array2<f64>>;

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `±sqrt(6 / (rows + cols))`.
    Xavier,
}

impl ParamSet {
    pub fn add<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut R,
    ) -> usize {
        let value = match init {
            Init::Zeros => Array2::zeros((rows, cols)),
            Init::Ones => Array2::ones((rows, cols)),
            Init::Xavier => {
                let limit = (6.0 / (rows + cols) as f64).sqrt();
                Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..limit))
            }
        };
        self.params.push(Param {
            name: name.into(),
            value,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zeros_like(&self) -> Grads {
        self.params
            .iter()
            .map(|p| Array2::zeros(p.value.raw_dim()))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.value.iter().all(|v| v.is_finite()))
    }

    /// Flattened copy in parameter order.
    pub fn snapshot(&self, step: u64) -> WeightSnapshot {
        WeightSnapshot {
            step,
            layers: self
                .params
                .iter()
                .map(|p| Layer {
                    name: p.name.clone(),
                    values: p.value.iter().copied().collect(),
                })
                .collect(),
        }
    }
}

pub fn global_norm(grads: &Grads) -> f64 {
    grads
        .iter()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}
