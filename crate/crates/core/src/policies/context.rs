use nalgebra::DVector;

use crate::error::{Error, Result};

/// Slack allowed on the unit-norm bound for context rows.
const NORM_SLACK: f64 = 1e-9;

/// Tolerance on `Σπ_i = 1`.
const SIMPLEX_TOL: f64 = 1e-9;

/// The `N×d` arm-feature matrix presented in one round, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSet {
    n_arms: usize,
    dim: usize,
    data: Vec<f64>,
}

impl ContextSet {
    /// Builds a context set from row-major data, enforcing `‖b_i‖₂ ≤ 1`.
    pub fn from_flat(n_arms: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if n_arms == 0 || dim == 0 {
            return Err(Error::Context(format!(
                "need at least one arm and one dimension, got N={n_arms}, d={dim}"
            )));
        }
        if data.len() != n_arms * dim {
            return Err(Error::DimensionMismatch {
                expected: n_arms * dim,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("context"));
        }
        let set = Self { n_arms, dim, data };
        for i in 0..n_arms {
            let norm = set.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1.0 + NORM_SLACK {
                return Err(Error::Context(format!(
                    "arm {i} has norm {norm}, exceeding 1"
                )));
            }
        }
        Ok(set)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: bad.len(),
            });
        }
        Self::from_flat(n, d, rows.concat())
    }

    pub fn n_arms(&self) -> usize {
        self.n_arms
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, arm: usize) -> &[f64] {
        &self.data[arm * self.dim..(arm + 1) * self.dim]
    }

    pub fn row_vector(&self, arm: usize) -> DVector<f64> {
        DVector::from_column_slice(self.row(arm))
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// `b_iᵀθ` for every arm.
    pub fn scores(&self, theta: &DVector<f64>) -> Vec<f64> {
        (0..self.n_arms)
            .map(|i| self.row(i).iter().zip(theta.iter()).map(|(b, t)| b * t).sum())
            .collect()
    }

    /// `Σ w_i·b_i`.
    pub fn weighted_mean(&self, weights: &[f64]) -> DVector<f64> {
        let mut mean = DVector::zeros(self.dim);
        for (i, &w) in weights.iter().enumerate() {
            if w != 0.0 {
                for (m, b) in mean.iter_mut().zip(self.row(i)) {
                    *m += w * b;
                }
            }
        }
        mean
    }

    /// `b_i − c`.
    pub fn centered_row(&self, arm: usize, center: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.dim,
            self.row(arm).iter().zip(center.iter()).map(|(b, c)| b - c),
        )
    }

    pub fn check_arm(&self, arm: usize) -> Result<()> {
        if arm >= self.n_arms {
            return Err(Error::InvalidArm {
                arm,
                n_arms: self.n_arms,
            });
        }
        Ok(())
    }
}

/// Selection probabilities `π` over arms and the matching mean context
/// `b̄ = Σ π_i b_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmDistribution {
    probs: Vec<f64>,
    mean_context: DVector<f64>,
}

impl ArmDistribution {
    pub fn new(probs: Vec<f64>, contexts: &ContextSet) -> Result<Self> {
        if probs.len() != contexts.n_arms() {
            return Err(Error::DimensionMismatch {
                expected: contexts.n_arms(),
                actual: probs.len(),
            });
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Distribution(format!("probability {p} outside [0, 1]")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Distribution(format!("probabilities sum to {total}")));
        }
        let mean_context = contexts.weighted_mean(&probs);
        Ok(Self {
            probs,
            mean_context,
        })
    }

    pub fn uniform(contexts: &ContextSet) -> Self {
        let n = contexts.n_arms();
        Self::new(vec![1.0 / n as f64; n], contexts).expect("uniform weights are a valid distribution")
    }

    /// All mass on one arm.
    pub fn point_mass(arm: usize, contexts: &ContextSet) -> Result<Self> {
        contexts.check_arm(arm)?;
        let mut probs = vec![0.0; contexts.n_arms()];
        probs[arm] = 1.0;
        Self::new(probs, contexts)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mean_context(&self) -> &DVector<f64> {
        &self.mean_context
    }

    pub fn n_arms(&self) -> usize {
        self.probs.len()
    }

    pub fn dim(&self) -> usize {
        self.mean_context.len()
    }

    /// Re-checks the simplex constraints and the mean-context identity.
    pub fn is_consistent_with(&self, contexts: &ContextSet) -> bool {
        let total: f64 = self.probs.iter().sum();
        self.probs.len() == contexts.n_arms()
            && self.probs.iter().all(|p| (0.0..=1.0).contains(p))
            && (total - 1.0).abs() <= SIMPLEX_TOL
            && contexts.weighted_mean(&self.probs) == self.mean_context
    }
}
