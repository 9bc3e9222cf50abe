//! Thompson sampling with probability-weighted centered contexts.
//!
//! The regression runs on `X = b_a − b̄`, where `b̄ = Σ π_i b_i` is the expected
//! chosen context under the current posterior. Because `E[X | history] = 0`,
//! any action-independent intercept `ν(t)` drops out of `Σ X·r` in
//! expectation. The precision adds both the realized `XXᵀ` and its conditional
//! expectation `Σ π_i (b_i − b̄)(b_i − b̄)ᵀ`, and the response uses `2·X·r` to
//! match the doubled second moment.

use nalgebra::DVector;
use rand::Rng;

use super::{
    argmax_random, estimate_arm_probs, ContextSet, Policy, PolicyConfig, PolicyKind, PrecisionState,
    RoundFeedback, Selection, SelectionInfo,
};
use crate::error::Result;
use crate::numkit::sample_posterior;

#[derive(Debug, Clone)]
pub struct SemiTs {
    state: PrecisionState,
    v: f64,
    mc_samples: usize,
}

impl SemiTs {
    pub(super) fn new(dim: usize, cfg: &PolicyConfig) -> Self {
        Self::with_scale(dim, cfg.effective_v(dim).unwrap_or(cfg.v), cfg.mc_samples)
    }

    pub fn with_scale(dim: usize, v: f64, mc_samples: usize) -> Self {
        Self {
            state: PrecisionState::new(dim),
            v,
            mc_samples,
        }
    }

    /// Starts from an arbitrary regression state.
    pub fn from_state(state: PrecisionState, v: f64, mc_samples: usize) -> Self {
        Self {
            state,
            v,
            mc_samples,
        }
    }

    pub fn state(&self) -> &PrecisionState {
        &self.state
    }

    pub fn scale(&self) -> f64 {
        self.v
    }
}

impl Policy for SemiTs {
    fn kind(&self) -> PolicyKind {
        PolicyKind::SemiTs
    }

    fn select<R: Rng + ?Sized>(&mut self, contexts: &ContextSet, rng: &mut R) -> Result<Selection> {
        self.state.check_contexts(contexts)?;
        let mean = self.state.estimate()?;
        let sample = sample_posterior(&mean, &self.state.matrix, self.v, rng)?;
        let arm = argmax_random(&contexts.scores(&sample), rng);
        // π depends on the history only: fresh draws, never the one above.
        let dist = estimate_arm_probs(contexts, &mean, &self.state.matrix, self.v, self.mc_samples, rng)?;
        Ok(Selection {
            arm,
            dist,
            info: SelectionInfo::Sample(sample),
        })
    }

    fn update(&mut self, fb: &RoundFeedback<'_>) -> Result<()> {
        fb.validate()?;
        self.state.check_contexts(fb.contexts)?;
        let center = fb.selection.dist.mean_context();
        let chosen = fb.contexts.centered_row(fb.chosen(), center);
        let matrix = &mut self.state.matrix;
        matrix.rank_one_add(&chosen, 1.0)?;
        for (i, &p) in fb.selection.dist.probs().iter().enumerate() {
            if p > 0.0 {
                matrix.rank_one_add(&fb.contexts.centered_row(i, center), p)?;
            }
        }
        self.state.response += chosen * (2.0 * fb.reward);
        self.state.matrix.refresh()
    }

    fn estimate(&self) -> Option<DVector<f64>> {
        self.state.estimate().ok()
    }

    fn precision(&self) -> Option<&PrecisionState> {
        Some(&self.state)
    }
}
