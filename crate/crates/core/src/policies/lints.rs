//! Linear Thompson sampling: ridge regression on the raw chosen contexts.

use nalgebra::DVector;
use rand::Rng;

use super::{
    argmax_random, estimate_arm_probs, ArmDistribution, ContextSet, Policy, PolicyConfig, PolicyKind,
    PrecisionState, RoundFeedback, Selection, SelectionInfo,
};
use crate::error::Result;
use crate::numkit::sample_posterior;

#[derive(Debug, Clone)]
pub struct LinTs {
    state: PrecisionState,
    v: f64,
    mc_samples: usize,
    report_probs: bool,
}

impl LinTs {
    pub(super) fn new(dim: usize, cfg: &PolicyConfig) -> Self {
        Self {
            state: PrecisionState::new(dim),
            v: cfg.effective_v(dim).unwrap_or(cfg.v),
            mc_samples: cfg.mc_samples,
            report_probs: cfg.report_probs,
        }
    }

    pub fn with_scale(dim: usize, v: f64, mc_samples: usize) -> Self {
        Self {
            state: PrecisionState::new(dim),
            v,
            mc_samples,
            report_probs: true,
        }
    }

    pub fn state(&self) -> &PrecisionState {
        &self.state
    }
}

impl Policy for LinTs {
    fn kind(&self) -> PolicyKind {
        PolicyKind::LinTs
    }

    /// With `report_probs` off, the returned distribution is the point mass on
    /// the chosen arm (the law conditional on the realized draw).
    fn select<R: Rng + ?Sized>(&mut self, contexts: &ContextSet, rng: &mut R) -> Result<Selection> {
        self.state.check_contexts(contexts)?;
        let mean = self.state.estimate()?;
        let sample = sample_posterior(&mean, &self.state.matrix, self.v, rng)?;
        let arm = argmax_random(&contexts.scores(&sample), rng);
        let dist = if self.report_probs {
            estimate_arm_probs(contexts, &mean, &self.state.matrix, self.v, self.mc_samples, rng)?
        } else {
            ArmDistribution::point_mass(arm, contexts)?
        };
        Ok(Selection {
            arm,
            dist,
            info: SelectionInfo::Sample(sample),
        })
    }

    fn update(&mut self, fb: &RoundFeedback<'_>) -> Result<()> {
        fb.validate()?;
        self.state.check_contexts(fb.contexts)?;
        let chosen = fb.contexts.row_vector(fb.chosen());
        self.state.matrix.rank_one_add(&chosen, 1.0)?;
        self.state.response += chosen * fb.reward;
        self.state.matrix.refresh()
    }

    fn estimate(&self) -> Option<DVector<f64>> {
        self.state.estimate().ok()
    }

    fn precision(&self) -> Option<&PrecisionState> {
        Some(&self.state)
    }
}
