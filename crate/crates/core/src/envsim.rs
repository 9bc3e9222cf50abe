//! Synthetic semiparametric environment.
//!
//! Arm 0 is the base action with a zero context. Arm `i ≥ 1` carries a fresh
//! uniform draw from the unit sphere of dimension `d' = d/(N−1)`, placed in
//! the `i`-th block of `d'` coordinates. Rewards are
//! `ν(t) + b_iᵀμ + σ·z` with the intercept `ν(t)` chosen by [`NuCase`].

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::sample_unit_sphere;
use crate::policies::ContextSet;
use crate::SimRng;

/// Ten-dimensional parameter used by the reference simulation design.
pub const REFERENCE_MU: [f64; 10] = [
    -0.55, 0.666, -0.09, -0.232, 0.244, 0.55, -0.666, 0.09, 0.232, -0.244,
];

/// Regime for the action-independent intercept `ν(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuCase {
    /// `ν(t) = 0`.
    Zero,
    /// `ν(t) = −b_{a*(t)}(t)ᵀμ`: cancels the optimal arm's mean.
    Adversarial,
    /// `ν(t) = log(t + 1)`.
    LogDrift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSpec {
    pub n_arms: usize,
    pub dim: usize,
    /// Defaults to [`REFERENCE_MU`] when `dim = 10`.
    #[serde(default)]
    pub mu: Option<Vec<f64>>,
    /// Noise standard deviation; doubles as the sub-Gaussian scale.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    pub nu_case: NuCase,
}

fn default_sigma() -> f64 {
    0.01
}

impl EnvironmentSpec {
    /// The reference design: `d = 10`, `σ = 0.01`, [`REFERENCE_MU`].
    pub fn reference(n_arms: usize, nu_case: NuCase) -> Self {
        Self {
            n_arms,
            dim: REFERENCE_MU.len(),
            mu: Some(REFERENCE_MU.to_vec()),
            sigma: default_sigma(),
            nu_case,
        }
    }

    pub fn mu(&self) -> Result<Vec<f64>> {
        match &self.mu {
            Some(mu) => Ok(mu.clone()),
            None if self.dim == REFERENCE_MU.len() => Ok(REFERENCE_MU.to_vec()),
            None => Err(Error::config(format!(
                "no default mu for dim {}; set environment.mu",
                self.dim
            ))),
        }
    }

    /// Block width `d' = d/(N−1)`.
    pub fn block_dim(&self) -> Result<usize> {
        if self.n_arms < 2 {
            return Err(Error::config("block construction needs at least 2 arms"));
        }
        let others = self.n_arms - 1;
        if self.dim == 0 || !self.dim.is_multiple_of(others) {
            return Err(Error::config(format!(
                "dim {} is not divisible by N-1 = {others}",
                self.dim
            )));
        }
        Ok(self.dim / others)
    }

    /// `‖μ‖₂ ≤ 1` is deliberately not enforced: the reference vector has
    /// norm ≈ 1.317.
    pub fn validate(&self) -> Result<()> {
        self.block_dim()?;
        let mu = self.mu()?;
        if mu.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: mu.len(),
            });
        }
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mu"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::config(format!("sigma must be nonnegative, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Ground truth for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTruth {
    pub t: u64,
    pub contexts: ContextSet,
    pub nu: f64,
    /// `argmax_i b_iᵀμ`, lowest index on ties.
    pub optimal_arm: usize,
    pub optimal_value: f64,
    /// `b_iᵀμ` for every arm.
    pub means: Vec<f64>,
}

/// Block-structured contexts for one round.
pub fn gen_contexts<R: Rng + ?Sized>(spec: &EnvironmentSpec, rng: &mut R) -> Result<ContextSet> {
    let block = spec.block_dim()?;
    let mut data = vec![0.0; spec.n_arms * spec.dim];
    for arm in 1..spec.n_arms {
        let z = sample_unit_sphere(block, rng)?;
        let start = arm * spec.dim + (arm - 1) * block;
        data[start..start + block].copy_from_slice(z.as_slice());
    }
    ContextSet::from_flat(spec.n_arms, spec.dim, data)
}

/// `ν(t)` for round `t ≥ 1` given the round's optimal linear mean.
pub fn nu_value(case: NuCase, t: u64, optimal_value: f64) -> f64 {
    match case {
        NuCase::Zero => 0.0,
        NuCase::Adversarial => -optimal_value,
        NuCase::LogDrift => ((t + 1) as f64).ln(),
    }
}

/// `ν + b_armᵀμ + σ·z`.
pub fn draw_reward<R: Rng + ?Sized>(
    contexts: &ContextSet,
    mu: &[f64],
    sigma: f64,
    nu: f64,
    arm: usize,
    rng: &mut R,
) -> Result<f64> {
    contexts.check_arm(arm)?;
    let linear: f64 = contexts.row(arm).iter().zip(mu).map(|(b, m)| b * m).sum();
    let noise = if sigma > 0.0 {
        sigma * rng.sample::<f64, _>(StandardNormal)
    } else {
        0.0
    };
    Ok(nu + linear + noise)
}

/// `b_{a*}ᵀμ − b_armᵀμ`; independent of `ν`.
pub fn instant_regret(truth: &RoundTruth, arm: usize) -> Result<f64> {
    truth.contexts.check_arm(arm)?;
    Ok(truth.optimal_value - truth.means[arm])
}

/// One replication's environment stream.
///
/// Contexts and reward noise come from separate streams of the same seed, so
/// the context sequence is identical no matter which arms a policy pulls.
#[derive(Debug, Clone)]
pub struct Environment {
    spec: EnvironmentSpec,
    mu: Vec<f64>,
    contexts_rng: SimRng,
    noise_rng: SimRng,
    t: u64,
}

impl Environment {
    pub fn new(spec: EnvironmentSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mu = spec.mu()?;
        let mut contexts_rng = SimRng::seed_from_u64(seed);
        contexts_rng.set_stream(0);
        let mut noise_rng = SimRng::seed_from_u64(seed);
        noise_rng.set_stream(1);
        Ok(Self {
            spec,
            mu,
            contexts_rng,
            noise_rng,
            t: 0,
        })
    }

    pub fn spec(&self) -> &EnvironmentSpec {
        &self.spec
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn next_round(&mut self) -> Result<RoundTruth> {
        self.t += 1;
        let contexts = gen_contexts(&self.spec, &mut self.contexts_rng)?;
        Ok(self.truth_for(self.t, contexts))
    }

    fn truth_for(&self, t: u64, contexts: ContextSet) -> RoundTruth {
        let means: Vec<f64> = (0..contexts.n_arms())
            .map(|i| contexts.row(i).iter().zip(&self.mu).map(|(b, m)| b * m).sum())
            .collect();
        let mut optimal_arm = 0;
        for (i, &m) in means.iter().enumerate() {
            if m > means[optimal_arm] {
                optimal_arm = i;
            }
        }
        let optimal_value = means[optimal_arm];
        RoundTruth {
            t,
            nu: nu_value(self.spec.nu_case, t, optimal_value),
            contexts,
            optimal_arm,
            optimal_value,
            means,
        }
    }

    pub fn reward(&mut self, truth: &RoundTruth, arm: usize) -> Result<f64> {
        draw_reward(
            &truth.contexts,
            &self.mu,
            self.spec.sigma,
            truth.nu,
            arm,
            &mut self.noise_rng,
        )
    }
}
