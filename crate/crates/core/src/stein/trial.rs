use alloc::vec::Vec;

use crate::autodiff::{divergence_value, Field};
use crate::error::{Error, Result};

/// A vector field `Φ: R^D -> R^D` with an evaluable divergence.
pub trait TrialFunction {
    fn dim(&self) -> usize;
    fn value(&self, theta: &[f64]) -> Vec<f64>;
    fn divergence(&self, theta: &[f64]) -> f64;
}

/// `Φ(θ) = c`, the Stein form of a linear `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantTrial(pub Vec<f64>);

impl TrialFunction for ConstantTrial {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn value(&self, _: &[f64]) -> Vec<f64> {
        self.0.clone()
    }
    fn divergence(&self, _: &[f64]) -> f64 {
        0.0
    }
}

/// `Φ(θ) = Aθ + b`, the Stein form of a quadratic `Q` when `A` is symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTrial {
    dim: usize,
    /// Row-major `D x D`.
    matrix: Vec<f64>,
    offset: Vec<f64>,
}

impl LinearTrial {
    pub fn new(matrix: Vec<f64>, offset: Vec<f64>) -> Result<Self> {
        let dim = offset.len();
        if dim == 0 || matrix.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: matrix.len(),
            });
        }
        Ok(Self { dim, matrix, offset })
    }

    pub fn identity(dim: usize) -> Self {
        let mut matrix = alloc::vec![0.0; dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = 1.0;
        }
        Self {
            dim,
            matrix,
            offset: alloc::vec![0.0; dim],
        }
    }
}

impl TrialFunction for LinearTrial {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, theta: &[f64]) -> Vec<f64> {
        self.matrix
            .chunks_exact(self.dim)
            .zip(&self.offset)
            .map(|(row, b)| row.iter().zip(theta).map(|(a, t)| a * t).sum::<f64>() + b)
            .collect()
    }
    fn divergence(&self, _: &[f64]) -> f64 {
        (0..self.dim).map(|i| self.matrix[i * self.dim + i]).sum()
    }
}

/// Any square autodiff [`Field`] used as a trial function, with the
/// divergence taken by forward-mode passes.
#[derive(Debug, Clone)]
pub struct FieldTrial<F>(pub F);

impl<F: Field> TrialFunction for FieldTrial<F> {
    fn dim(&self) -> usize {
        self.0.dim_in()
    }
    fn value(&self, theta: &[f64]) -> Vec<f64> {
        self.0.apply(self.0.parameters(), theta)
    }
    fn divergence(&self, theta: &[f64]) -> f64 {
        divergence_value(&self.0, theta).unwrap_or(f64::NAN)
    }
}
