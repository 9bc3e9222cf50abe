use rand::Rng;

use super::{ArmDistribution, ContextSet, Policy, PolicyKind, RoundFeedback, Selection, SelectionInfo};
use crate::error::Result;

/// Picks an arm uniformly at random and learns nothing.
#[derive(Debug, Clone, Default)]
pub struct UniformPolicy;

impl UniformPolicy {
    pub fn new() -> Self {
        Self
    }
}

impl Policy for UniformPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Uniform
    }

    fn select<R: Rng + ?Sized>(&mut self, contexts: &ContextSet, rng: &mut R) -> Result<Selection> {
        Ok(Selection {
            arm: rng.random_range(0..contexts.n_arms()),
            dist: ArmDistribution::uniform(contexts),
            info: SelectionInfo::None,
        })
    }

    fn update(&mut self, fb: &RoundFeedback<'_>) -> Result<()> {
        fb.validate()
    }
}
