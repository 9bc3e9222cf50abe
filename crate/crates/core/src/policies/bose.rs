//! Bandit orthogonalized semiparametric estimation, two-arm form.
//!
//! Arms are eliminated when another arm beats them by more than `ω` times the
//! confidence width of their difference; the survivor set is played
//! uniformly. The estimate is ridge regression (`V = γI + ΣXXᵀ`) on contexts
//! centered by the uniform-over-survivors distribution.

use nalgebra::DVector;
use rand::Rng;

use super::{
    ArmDistribution, ContextSet, Policy, PolicyConfig, PolicyKind, PrecisionState, RoundFeedback,
    Selection, SelectionInfo,
};
use crate::error::{Error, Result};
use crate::numkit::SpdMatrix;

/// Arms not eliminated by any other arm.
pub fn bose_survivors(
    contexts: &ContextSet,
    estimate: &DVector<f64>,
    gram: &SpdMatrix,
    omega: f64,
) -> Result<Vec<usize>> {
    let n = contexts.n_arms();
    let scores = contexts.scores(estimate);
    let mut survivors = Vec::with_capacity(n);
    for i in 0..n {
        let mut eliminated = false;
        for j in (0..n).filter(|&j| j != i) {
            let diff = contexts.centered_row(i, &contexts.row_vector(j));
            let width = gram.mahalanobis_width(&diff)?;
            if scores[j] - scores[i] > omega * width {
                eliminated = true;
                break;
            }
        }
        if !eliminated {
            survivors.push(i);
        }
    }
    Ok(survivors)
}

#[derive(Debug, Clone)]
pub struct Bose {
    state: PrecisionState,
    omega: f64,
}

impl Bose {
    pub(super) fn new(dim: usize, cfg: &PolicyConfig) -> Self {
        Self::with_params(dim, cfg.omega, cfg.gamma)
    }

    pub fn with_params(dim: usize, omega: f64, gamma: f64) -> Self {
        Self {
            state: PrecisionState::with_ridge(dim, gamma),
            omega,
        }
    }

    pub fn state(&self) -> &PrecisionState {
        &self.state
    }
}

impl Policy for Bose {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Bose
    }

    fn select<R: Rng + ?Sized>(&mut self, contexts: &ContextSet, rng: &mut R) -> Result<Selection> {
        self.state.check_contexts(contexts)?;
        if contexts.n_arms() != 2 {
            return Err(Error::config(format!(
                "BOSE is only defined for N = 2 arms, got N = {}",
                contexts.n_arms()
            )));
        }
        let estimate = self.state.estimate()?;
        let survivors = bose_survivors(contexts, &estimate, &self.state.matrix, self.omega)?;
        let arm = survivors[rng.random_range(0..survivors.len())];
        let mut probs = vec![0.0; contexts.n_arms()];
        for &i in &survivors {
            probs[i] = 1.0 / survivors.len() as f64;
        }
        Ok(Selection {
            arm,
            dist: ArmDistribution::new(probs, contexts)?,
            info: SelectionInfo::Bose { survivors },
        })
    }

    fn update(&mut self, fb: &RoundFeedback<'_>) -> Result<()> {
        fb.validate()?;
        self.state.check_contexts(fb.contexts)?;
        let centered = fb
            .contexts
            .centered_row(fb.chosen(), fb.selection.dist.mean_context());
        self.state.matrix.rank_one_add(&centered, 1.0)?;
        self.state.response += centered * fb.reward;
        self.state.matrix.refresh()
    }

    fn estimate(&self) -> Option<DVector<f64>> {
        self.state.estimate().ok()
    }

    fn precision(&self) -> Option<&PrecisionState> {
        Some(&self.state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use rand::SeedableRng;

    use crate::SimRng;

    fn two_arms() -> ContextSet {
        ContextSet::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap()
    }

    #[test]
    fn zero_estimate_keeps_both() {
        let c = two_arms();
        let mut p = Bose::with_params(2, 0.0, 1.0);
        let mut rng = SimRng::seed_from_u64(1);
        let mut counts = [0; 2];
        for _ in 0..1000 {
            let sel = p.select(&c, &mut rng).unwrap();
            assert_eq!(sel.info, SelectionInfo::Bose { survivors: vec![0, 1] });
            assert_eq!(sel.dist.probs(), &[0.5, 0.5]);
            counts[sel.arm] += 1;
        }
        assert!(counts[0] > 400 && counts[1] > 400);
        assert_eq!(p.estimate().unwrap(), dvector![0.0, 0.0]);
    }

    #[test]
    fn elimination_inequality() {
        // (b₂ − b₁)ᵀμ̂ = 1, width of e₁ under V = 4I is 0.5, ω = 1 → 1 > 0.5.
        let c = two_arms();
        let v = SpdMatrix::scaled_identity(2, 4.0);
        let s = bose_survivors(&c, &dvector![1.0, 0.0], &v, 1.0).unwrap();
        assert_eq!(s, vec![1]);
        let s = bose_survivors(&c, &dvector![1.0, 0.0], &v, 1e6).unwrap();
        assert_eq!(s, vec![0, 1]);
    }

    #[test]
    fn update_examples() {
        let c = two_arms();
        let mut p = Bose::with_params(2, 1.0, 1.0);
        let both = Selection {
            arm: 1,
            dist: ArmDistribution::uniform(&c),
            info: SelectionInfo::Bose { survivors: vec![0, 1] },
        };
        p.update(&RoundFeedback { contexts: &c, selection: &both, reward: 1.0 }).unwrap();
        assert_eq!(p.state().response, dvector![0.5, 0.0]);
        assert_eq!(p.state().matrix.as_matrix()[(0, 0)], 1.25);

        let before = p.state().clone();
        let single = Selection {
            arm: 1,
            dist: ArmDistribution::point_mass(1, &c).unwrap(),
            info: SelectionInfo::Bose { survivors: vec![1] },
        };
        p.update(&RoundFeedback { contexts: &c, selection: &single, reward: 5.0 }).unwrap();
        assert_eq!(p.state().response, before.response);
        assert_eq!(p.state().matrix.as_matrix(), before.matrix.as_matrix());
    }

    #[test]
    fn rejects_more_than_two_arms() {
        let c = ContextSet::from_rows(&[vec![0.0], vec![0.5], vec![-0.5]]).unwrap();
        let mut p = Bose::with_params(1, 1.0, 1.0);
        assert!(p.select(&c, &mut SimRng::seed_from_u64(0)).is_err());
    }
}
