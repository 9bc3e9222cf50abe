//! Bandit policies behind one select/update contract.
//!
//! A round runs `select → environment reward → update`; the [`Selection`]
//! returned by `select` is handed back to `update` together with the reward,
//! so policies never have to remember per-round scratch state.

mod acts;
mod bose;
mod config;
mod context;
mod lints;
mod probs;
mod semits;
mod uniform;

use nalgebra::DVector;
use rand::Rng;

pub use acts::{acts_probability, pseudo_reward, Acts};
pub use bose::{bose_survivors, Bose};
pub use config::{PolicyConfig, PolicyKind};
pub use context::{ArmDistribution, ContextSet};
pub use lints::LinTs;
pub use probs::{closed_form_two_arm_probs, estimate_arm_probs, monte_carlo_arm_probs};
pub use semits::SemiTs;
pub use uniform::UniformPolicy;

use crate::error::{Error, Result};
use crate::numkit::SpdMatrix;

/// Regression state `(B, y)` shared by every regression-based policy.
#[derive(Debug, Clone)]
pub struct PrecisionState {
    pub matrix: SpdMatrix,
    pub response: DVector<f64>,
}

impl PrecisionState {
    /// `B = I_d`, `y = 0_d`.
    pub fn new(dim: usize) -> Self {
        Self::with_ridge(dim, 1.0)
    }

    /// `B = γ·I_d`, `y = 0_d`.
    pub fn with_ridge(dim: usize, gamma: f64) -> Self {
        Self {
            matrix: SpdMatrix::scaled_identity(dim, gamma),
            response: DVector::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.response.len()
    }

    /// `B⁻¹·y`.
    pub fn estimate(&self) -> Result<DVector<f64>> {
        self.matrix.solve(&self.response)
    }

    fn check_contexts(&self, contexts: &ContextSet) -> Result<()> {
        if contexts.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: contexts.dim(),
            });
        }
        Ok(())
    }
}

/// Policy-specific by-products of a selection.
#[derive(Debug, Clone, PartialEq)]
pub enum SelectionInfo {
    None,
    /// The posterior draw that picked the arm.
    Sample(DVector<f64>),
    /// ACTS: the non-base candidate and the probability of playing it.
    Acts { candidate: usize, prob: f64 },
    /// BOSE: arms that survived elimination.
    Bose { survivors: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub arm: usize,
    pub dist: ArmDistribution,
    pub info: SelectionInfo,
}

/// One completed round as seen by `update`.
#[derive(Debug, Clone, Copy)]
pub struct RoundFeedback<'a> {
    pub contexts: &'a ContextSet,
    pub selection: &'a Selection,
    pub reward: f64,
}

impl RoundFeedback<'_> {
    pub fn chosen(&self) -> usize {
        self.selection.arm
    }

    fn validate(&self) -> Result<()> {
        let n = self.contexts.n_arms();
        if self.selection.arm >= n {
            return Err(Error::InvalidArm {
                arm: self.selection.arm,
                n_arms: n,
            });
        }
        if self.selection.dist.n_arms() != n || self.selection.dist.dim() != self.contexts.dim() {
            return Err(Error::Distribution(
                "distribution shape does not match the context set".into(),
            ));
        }
        if !self.reward.is_finite() {
            return Err(Error::NonFinite("reward"));
        }
        Ok(())
    }
}

pub trait Policy {
    fn kind(&self) -> PolicyKind;

    fn select<R: Rng + ?Sized>(&mut self, contexts: &ContextSet, rng: &mut R) -> Result<Selection>;

    fn update(&mut self, feedback: &RoundFeedback<'_>) -> Result<()>;

    /// Current parameter estimate, for policies that keep one.
    fn estimate(&self) -> Option<DVector<f64>> {
        None
    }

    fn precision(&self) -> Option<&PrecisionState> {
        None
    }
}

/// Argmax with uniform random tie-breaking. Draws from `rng` only on ties.
pub fn argmax_random<R: Rng + ?Sized>(scores: &[f64], rng: &mut R) -> usize {
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut ties = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s == best)
        .map(|(i, _)| i);
    let first = ties.next().expect("scores must be nonempty");
    let count = 1 + ties.clone().count();
    if count == 1 {
        return first;
    }
    let pick = rng.random_range(0..count);
    if pick == 0 {
        first
    } else {
        ties.nth(pick - 1).unwrap()
    }
}

/// Any of the five policies, dispatched statically.
#[derive(Debug, Clone)]
pub enum BanditPolicy {
    Uniform(UniformPolicy),
    LinTs(LinTs),
    SemiTs(SemiTs),
    Acts(Acts),
    Bose(Bose),
}

impl BanditPolicy {
    /// Builds a fresh policy for `n_arms` arms of dimension `dim`.
    pub fn from_config(cfg: &PolicyConfig, n_arms: usize, dim: usize) -> Result<Self> {
        cfg.validate()?;
        cfg.validate_for(n_arms, dim)?;
        Ok(match cfg.kind {
            PolicyKind::Uniform => BanditPolicy::Uniform(UniformPolicy::new()),
            PolicyKind::LinTs => BanditPolicy::LinTs(LinTs::new(dim, cfg)),
            PolicyKind::SemiTs => BanditPolicy::SemiTs(SemiTs::new(dim, cfg)),
            PolicyKind::Acts => BanditPolicy::Acts(Acts::new(dim, cfg)),
            PolicyKind::Bose => BanditPolicy::Bose(Bose::new(dim, cfg)),
        })
    }
}

impl Policy for BanditPolicy {
    fn kind(&self) -> PolicyKind {
        match self {
            BanditPolicy::Uniform(p) => p.kind(),
            BanditPolicy::LinTs(p) => p.kind(),
            BanditPolicy::SemiTs(p) => p.kind(),
            BanditPolicy::Acts(p) => p.kind(),
            BanditPolicy::Bose(p) => p.kind(),
        }
    }

    fn select<R: Rng + ?Sized>(&mut self, contexts: &ContextSet, rng: &mut R) -> Result<Selection> {
        match self {
            BanditPolicy::Uniform(p) => p.select(contexts, rng),
            BanditPolicy::LinTs(p) => p.select(contexts, rng),
            BanditPolicy::SemiTs(p) => p.select(contexts, rng),
            BanditPolicy::Acts(p) => p.select(contexts, rng),
            BanditPolicy::Bose(p) => p.select(contexts, rng),
        }
    }

    fn update(&mut self, feedback: &RoundFeedback<'_>) -> Result<()> {
        match self {
            BanditPolicy::Uniform(p) => p.update(feedback),
            BanditPolicy::LinTs(p) => p.update(feedback),
            BanditPolicy::SemiTs(p) => p.update(feedback),
            BanditPolicy::Acts(p) => p.update(feedback),
            BanditPolicy::Bose(p) => p.update(feedback),
        }
    }

    fn estimate(&self) -> Option<DVector<f64>> {
        match self {
            BanditPolicy::Uniform(p) => p.estimate(),
            BanditPolicy::LinTs(p) => p.estimate(),
            BanditPolicy::SemiTs(p) => p.estimate(),
            BanditPolicy::Acts(p) => p.estimate(),
            BanditPolicy::Bose(p) => p.estimate(),
        }
    }

    fn precision(&self) -> Option<&PrecisionState> {
        match self {
            BanditPolicy::Uniform(p) => p.precision(),
            BanditPolicy::LinTs(p) => p.precision(),
            BanditPolicy::SemiTs(p) => p.precision(),
            BanditPolicy::Acts(p) => p.precision(),
            BanditPolicy::Bose(p) => p.precision(),
        }
    }
}
