//! Action-centered Thompson sampling.
//!
//! Arm 0 is the base action (zero context). A Thompson draw picks the best
//! non-base candidate; a second coin plays it with a clipped probability
//! `p_t`, otherwise the base arm. The regression uses the pseudo-reward
//! `(1{a = ā} − p_t)·r`, whose conditional mean carries no intercept.

use nalgebra::DVector;
use rand::Rng;

use super::{
    argmax_random, ArmDistribution, ContextSet, Policy, PolicyConfig, PolicyKind, PrecisionState,
    RoundFeedback, Selection, SelectionInfo,
};
use crate::error::{Error, Result};
use crate::numkit::{gaussian_cdf, sample_posterior};

/// `max(p_min, min(1 − Φ(−gap/scale), p_max))`, with the `scale → 0` limit
/// taken explicitly.
pub fn acts_probability(gap: f64, scale: f64, p_min: f64, p_max: f64) -> f64 {
    let raw = if scale > 0.0 {
        1.0 - gaussian_cdf(-gap / scale)
    } else if gap > 0.0 {
        1.0
    } else if gap < 0.0 {
        0.0
    } else {
        0.5
    };
    p_min.max(raw.min(p_max))
}

/// `(1{played candidate} − p)·r`.
pub fn pseudo_reward(played_candidate: bool, prob: f64, reward: f64) -> f64 {
    (if played_candidate { 1.0 } else { 0.0 } - prob) * reward
}

#[derive(Debug, Clone)]
pub struct Acts {
    state: PrecisionState,
    v: f64,
    p_min: f64,
    p_max: f64,
    weighted: bool,
}

impl Acts {
    pub(super) fn new(dim: usize, cfg: &PolicyConfig) -> Self {
        Self {
            state: PrecisionState::new(dim),
            v: cfg.effective_v(dim).unwrap_or(cfg.v),
            p_min: cfg.p_min,
            p_max: cfg.p_max,
            weighted: cfg.acts_weighted,
        }
    }

    pub fn state(&self) -> &PrecisionState {
        &self.state
    }
}

impl Policy for Acts {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Acts
    }

    fn select<R: Rng + ?Sized>(&mut self, contexts: &ContextSet, rng: &mut R) -> Result<Selection> {
        self.state.check_contexts(contexts)?;
        if contexts.n_arms() < 2 {
            return Err(Error::Context("ACTS needs at least two arms".into()));
        }
        let mean = self.state.estimate()?;
        let sample = sample_posterior(&mean, &self.state.matrix, self.v, rng)?;
        let scores = contexts.scores(&sample);
        let candidate = 1 + argmax_random(&scores[1..], rng);

        let row = contexts.row_vector(candidate);
        let width = self.state.matrix.mahalanobis_width(&row)?;
        let prob = acts_probability(row.dot(&mean), self.v * width, self.p_min, self.p_max);
        let arm = if rng.random::<f64>() < prob { candidate } else { 0 };

        let mut probs = vec![0.0; contexts.n_arms()];
        probs[candidate] = prob;
        probs[0] = 1.0 - prob;
        Ok(Selection {
            arm,
            dist: ArmDistribution::new(probs, contexts)?,
            info: SelectionInfo::Acts { candidate, prob },
        })
    }

    fn update(&mut self, fb: &RoundFeedback<'_>) -> Result<()> {
        fb.validate()?;
        self.state.check_contexts(fb.contexts)?;
        let SelectionInfo::Acts { candidate, prob } = fb.selection.info else {
            return Err(Error::Distribution("ACTS update needs the ACTS selection record".into()));
        };
        fb.contexts.check_arm(candidate)?;
        let target = pseudo_reward(fb.chosen() == candidate, prob, fb.reward);
        let row = fb.contexts.row_vector(candidate);
        let weight = if self.weighted { prob * (1.0 - prob) } else { 1.0 };
        self.state.matrix.rank_one_add(&row, weight)?;
        self.state.response += row * target;
        self.state.matrix.refresh()
    }

    fn estimate(&self) -> Option<DVector<f64>> {
        self.state.estimate().ok()
    }

    fn precision(&self) -> Option<&PrecisionState> {
        Some(&self.state)
    }
}
