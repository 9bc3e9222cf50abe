use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Uniform,
    #[serde(rename = "lints")]
    LinTs,
    #[serde(rename = "semits")]
    SemiTs,
    Acts,
    Bose,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Uniform => "uniform",
            PolicyKind::LinTs => "lints",
            PolicyKind::SemiTs => "semits",
            PolicyKind::Acts => "acts",
            PolicyKind::Bose => "bose",
        }
    }

    /// Whether the exploration scale `v` is meaningful for this policy.
    pub fn uses_v(self) -> bool {
        matches!(self, PolicyKind::LinTs | PolicyKind::SemiTs | PolicyKind::Acts)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(PolicyKind::Uniform),
            "lints" => Ok(PolicyKind::LinTs),
            "semits" => Ok(PolicyKind::SemiTs),
            "acts" => Ok(PolicyKind::Acts),
            "bose" => Ok(PolicyKind::Bose),
            other => Err(Error::config(format!("unknown policy kind `{other}`"))),
        }
    }
}

/// Policy hyperparameters. Fields irrelevant to `kind` are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Label used in output files; defaults to the kind name.
    #[serde(default)]
    pub name: Option<String>,
    /// Exploration scale of the Thompson-sampling variants.
    #[serde(default = "defaults::v")]
    pub v: f64,
    /// Replace `v` with `(2R+6)·√(6·d·log(T/δ))` at build time.
    #[serde(default)]
    pub theoretical_v: bool,
    /// Sub-Gaussian noise scale `R`.
    #[serde(default = "defaults::noise_scale")]
    pub noise_scale: f64,
    #[serde(default = "defaults::delta")]
    pub delta: f64,
    /// Horizon used by the theoretical `v`; the runner fills it in when unset.
    #[serde(default)]
    pub horizon: Option<usize>,
    /// Posterior draws per round for arm probabilities when `N > 2`.
    #[serde(default = "defaults::mc_samples")]
    pub mc_samples: usize,
    #[serde(default)]
    pub p_min: f64,
    #[serde(default = "defaults::p_max")]
    pub p_max: f64,
    /// ACTS: weight the precision update by `p_t(1−p_t)`.
    #[serde(default)]
    pub acts_weighted: bool,
    /// BOSE elimination multiplier.
    #[serde(default = "defaults::omega")]
    pub omega: f64,
    /// BOSE ridge.
    #[serde(default = "defaults::gamma")]
    pub gamma: f64,
    /// LinTS: compute the arm distribution every round (only used for logging).
    #[serde(default = "defaults::report_probs")]
    pub report_probs: bool,
}

mod defaults {
    pub fn v() -> f64 {
        0.1
    }
    pub fn noise_scale() -> f64 {
        0.01
    }
    pub fn delta() -> f64 {
        0.1
    }
    pub fn mc_samples() -> usize {
        10_000
    }
    pub fn p_max() -> f64 {
        1.0
    }
    pub fn omega() -> f64 {
        1.0
    }
    pub fn gamma() -> f64 {
        1.0
    }
    pub fn report_probs() -> bool {
        true
    }
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            name: None,
            v: defaults::v(),
            theoretical_v: false,
            noise_scale: defaults::noise_scale(),
            delta: defaults::delta(),
            horizon: None,
            mc_samples: defaults::mc_samples(),
            p_min: 0.0,
            p_max: defaults::p_max(),
            acts_weighted: false,
            omega: defaults::omega(),
            gamma: defaults::gamma(),
            report_probs: defaults::report_probs(),
        }
    }

    pub fn with_v(mut self, v: f64) -> Self {
        self.v = v;
        self
    }

    pub fn with_omega(mut self, omega: f64) -> Self {
        self.omega = omega;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind.to_string())
    }

    /// `(2R+6)·√(6·d·log(T/δ))`.
    pub fn theoretical_scale(noise_scale: f64, dim: usize, horizon: usize, delta: f64) -> f64 {
        (2.0 * noise_scale + 6.0) * (6.0 * dim as f64 * (horizon as f64 / delta).ln()).sqrt()
    }

    /// The exploration scale actually used for a problem of dimension `dim`.
    pub fn effective_v(&self, dim: usize) -> Result<f64> {
        if !self.theoretical_v {
            return Ok(self.v);
        }
        let horizon = self
            .horizon
            .ok_or_else(|| Error::config("theoretical_v requires a horizon"))?;
        Ok(Self::theoretical_scale(self.noise_scale, dim, horizon, self.delta))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::config(format!("{}: {msg}", self.label())));
        if !(self.v >= 0.0 && self.v.is_finite()) {
            return fail(format!("v must be finite and nonnegative, got {}", self.v));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return fail(format!("noise_scale must be nonnegative, got {}", self.noise_scale));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return fail(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if self.mc_samples == 0 {
            return fail("mc_samples must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.p_min) || !(0.0..=1.0).contains(&self.p_max) {
            return fail("p_min and p_max must lie in [0, 1]".into());
        }
        if self.p_min > self.p_max {
            return fail(format!("p_min {} exceeds p_max {}", self.p_min, self.p_max));
        }
        if !(self.omega >= 0.0 && self.omega.is_finite()) {
            return fail(format!("omega must be finite and nonnegative, got {}", self.omega));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return fail(format!("gamma must be positive, got {}", self.gamma));
        }
        if self.theoretical_v && self.horizon == Some(0) {
            return fail("horizon must be positive".into());
        }
        Ok(())
    }

    /// Checks constraints that depend on the problem shape.
    pub fn validate_for(&self, n_arms: usize, dim: usize) -> Result<()> {
        if n_arms == 0 || dim == 0 {
            return Err(Error::config("problem needs at least one arm and one dimension"));
        }
        match self.kind {
            PolicyKind::Bose if n_arms != 2 => Err(Error::config(format!(
                "{}: BOSE is only defined for N = 2 arms, got N = {n_arms}",
                self.label()
            ))),
            PolicyKind::Acts if n_arms < 2 => Err(Error::config(format!(
                "{}: ACTS needs a base arm plus at least one other arm",
                self.label()
            ))),
            _ => {
                let v = self.effective_v(dim)?;
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::config(format!("{}: invalid v {v}", self.label())));
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_toml() {
        let cfg: PolicyConfig = toml::from_str("kind = \"semits\"\nv = 0.5").unwrap();
        assert_eq!(cfg.kind, PolicyKind::SemiTs);
        assert_eq!(cfg.v, 0.5);
        assert_eq!(cfg.mc_samples, 10_000);
        assert_eq!(cfg.noise_scale, 0.01);
        assert!(toml::from_str::<PolicyConfig>("kind = \"semits\"\nvv = 0.5").is_err());
    }

    #[test]
    fn validation() {
        assert!(PolicyConfig::new(PolicyKind::SemiTs).validate().is_ok());
        let mut c = PolicyConfig::new(PolicyKind::Acts);
        c.p_min = 0.8;
        c.p_max = 0.2;
        assert!(c.validate().is_err());
        let mut c = PolicyConfig::new(PolicyKind::SemiTs);
        c.mc_samples = 0;
        assert!(c.validate().is_err());
        assert!(PolicyConfig::new(PolicyKind::Bose).validate_for(6, 10).is_err());
        assert!(PolicyConfig::new(PolicyKind::Bose).validate_for(2, 10).is_ok());
        assert!(PolicyConfig::new(PolicyKind::Acts).validate_for(1, 10).is_err());
    }

    #[test]
    fn theoretical_v() {
        let v = PolicyConfig::theoretical_scale(0.01, 10, 2000, 0.1);
        let expected = 6.02 * (60.0 * (20_000f64).ln()).sqrt();
        assert!((v - expected).abs() < 1e-12);

        let mut c = PolicyConfig::new(PolicyKind::SemiTs);
        c.theoretical_v = true;
        assert!(c.effective_v(10).is_err());
        c.horizon = Some(2000);
        assert_eq!(c.effective_v(10).unwrap(), v);
    }
}
