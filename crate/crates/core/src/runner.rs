//! Seeded multi-replication experiments, grid tuning and CSV output.
//!
//! ## Config file (TOML)
//!
//! ```toml
//! horizon = 2000          # T
//! replications = 30
//! base_seed = 1
//! output = "out"          # directory for CSV files (optional)
//! audit = false           # also write audit.csv
//!
//! [environment]
//! n_arms = 2
//! dim = 10
//! nu_case = "adversarial" # zero | adversarial | log_drift
//! # mu = [...]            # defaults to the reference vector when dim = 10
//! # sigma = 0.01
//!
//! [[policies]]
//! kind = "semits"         # uniform | lints | semits | acts | bose
//! v = 0.1
//! ```
//!
//! ## Output files
//!
//! - `quantiles.csv`: `t,policy,median,q1,q3` for the cumulative regret.
//! - `summary.csv`: `policy,median_RT`.
//! - `audit.csv` (with `audit = true`): see [`crate::diagnostics::AUDIT_HEADER`].
//!
//! Numbers are written with 17 significant digits. Quantiles use linear
//! interpolation between order statistics (type 7).
//!
//! ## Seeding
//!
//! Replication `r` draws contexts and noise from `derive_seed([base, 0, r])`
//! for every policy, so policies are compared on the same stream. Policy `p`
//! draws its own randomness from `derive_seed([base, 1, p, r])`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{record_round, write_audit_csv, RunAudit};
use crate::envsim::{instant_regret, Environment, EnvironmentSpec};
use crate::error::{Error, Result};
use crate::policies::{BanditPolicy, Policy, PolicyConfig, PolicyKind, RoundFeedback};
use crate::replay::{replay_evaluate, LogEvent, ReplayResult};
use crate::SimRng;

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "SEMIBANDIT_THREADS";

const ENV_STREAM: u64 = 0;
const POLICY_STREAM: u64 = 1;
const REPLAY_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvironmentSpec,
    pub policies: Vec<PolicyConfig>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub audit: bool,
}

fn default_horizon() -> usize {
    2000
}

fn default_replications() -> usize {
    30
}

impl ExperimentConfig {
    pub fn new(environment: EnvironmentSpec, policies: Vec<PolicyConfig>) -> Self {
        Self {
            environment,
            policies,
            horizon: default_horizon(),
            replications: default_replications(),
            base_seed: 0,
            output: None,
            audit: false,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Policies with the horizon filled in for the theoretical `v`.
    fn resolved_policies(&self) -> Vec<PolicyConfig> {
        self.policies
            .iter()
            .map(|p| {
                let mut p = p.clone();
                p.horizon.get_or_insert(self.horizon);
                p
            })
            .collect()
    }

    /// Checks everything up front so no replication starts on a bad config.
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config("horizon must be at least 1"));
        }
        if self.replications == 0 {
            return Err(Error::config("replications must be at least 1"));
        }
        if self.policies.is_empty() {
            return Err(Error::config("at least one policy is required"));
        }
        self.environment.validate()?;
        let mut labels: Vec<String> = Vec::new();
        for p in self.resolved_policies() {
            BanditPolicy::from_config(&p, self.environment.n_arms, self.environment.dim)?;
            let label = p.label();
            if labels.contains(&label) {
                return Err(Error::config(format!("duplicate policy label `{label}`")));
            }
            labels.push(label);
        }
        Ok(())
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes a tuple of integers into a seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x243f_6a88_85a3_08d3, |acc, &p| {
        mix64(acc.wrapping_add(0x9e37_79b9_7f4a_7c15) ^ mix64(p))
    })
}

pub fn environment_seed(base: u64, replication: usize) -> u64 {
    derive_seed(&[base, ENV_STREAM, replication as u64])
}

pub fn policy_seed(base: u64, policy: usize, replication: usize) -> u64 {
    derive_seed(&[base, POLICY_STREAM, policy as u64, replication as u64])
}

/// Runs `f` on a pool capped by `SEMIBANDIT_THREADS` when it is set.
pub fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var(THREADS_ENV) {
        let n: usize = raw
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::config(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Cumulative regret of one (policy, replication) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretTrace {
    pub policy: String,
    pub replication: usize,
    /// `R(t)` for `t = 1..=T`.
    pub cumulative: Vec<f64>,
    /// `‖μ̂ − μ‖₂` after each round's update, for policies with an estimate.
    pub estimation_error: Option<Vec<f64>>,
}

impl RegretTrace {
    pub fn final_regret(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }
}

/// Per-round quantiles of cumulative regret across replications.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileTrace {
    pub policy: String,
    pub median: Vec<f64>,
    pub q1: Vec<f64>,
    pub q3: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub policy: String,
    pub median_rt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    /// Ordered by policy, then replication.
    pub traces: Vec<RegretTrace>,
    pub quantiles: Vec<QuantileTrace>,
    pub summary: Vec<SummaryRow>,
    /// Empty unless auditing was requested.
    pub audits: Vec<RunAudit>,
}

impl ExperimentResult {
    pub fn traces_for<'a>(&'a self, policy: &'a str) -> impl Iterator<Item = &'a RegretTrace> + 'a {
        self.traces.iter().filter(move |t| t.policy == policy)
    }

    pub fn median_regret(&self, policy: &str) -> Option<f64> {
        self.summary.iter().find(|s| s.policy == policy).map(|s| s.median_rt)
    }
}

/// Type-7 quantile of unsorted data.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, q)
}

/// Type-7 quantile of ascending data: `x[⌊h⌋] + frac(h)·(x[⌊h⌋+1] − x[⌊h⌋])`
/// with `h = (n − 1)q`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Least-squares slope of `y` against `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

struct ReplicationOutput {
    trace: RegretTrace,
    audit: Option<RunAudit>,
}

fn run_replication(
    cfg: &ExperimentConfig,
    policy_cfg: &PolicyConfig,
    policy_idx: usize,
    replication: usize,
) -> Result<ReplicationOutput> {
    let spec = &cfg.environment;
    let mut env = Environment::new(spec.clone(), environment_seed(cfg.base_seed, replication))?;
    let mut policy = BanditPolicy::from_config(policy_cfg, spec.n_arms, spec.dim)?;
    let mut rng = SimRng::seed_from_u64(policy_seed(cfg.base_seed, policy_idx, replication));
    let mu = nalgebra::DVector::from_column_slice(env.mu());
    let label = policy_cfg.label();

    let mut cumulative = Vec::with_capacity(cfg.horizon);
    let mut errors = policy.precision().map(|_| Vec::with_capacity(cfg.horizon));
    let mut audit = (cfg.audit && policy.precision().is_some())
        .then(|| RunAudit::new(&label, policy_cfg.kind, replication, spec.dim, policy_cfg.noise_scale));
    let mut total = 0.0;

    for _ in 0..cfg.horizon {
        let truth = env.next_round()?;
        let selection = policy.select(&truth.contexts, &mut rng)?;
        if let (Some(audit), Some(state)) = (audit.as_mut(), policy.precision()) {
            audit.records.push(record_round(
                truth.t,
                state,
                &truth.contexts,
                &selection,
                Some(env.mu()),
            )?);
        }
        let reward = env.reward(&truth, selection.arm)?;
        policy.update(&RoundFeedback {
            contexts: &truth.contexts,
            selection: &selection,
            reward,
        })?;
        total += instant_regret(&truth, selection.arm)?;
        cumulative.push(total);
        if let (Some(errors), Some(state)) = (errors.as_mut(), policy.precision()) {
            errors.push((state.estimate()? - &mu).norm());
        }
    }

    Ok(ReplicationOutput {
        trace: RegretTrace {
            policy: label,
            replication,
            cumulative,
            estimation_error: errors,
        },
        audit,
    })
}

fn aggregate(labels: &[String], traces: &[RegretTrace], horizon: usize) -> (Vec<QuantileTrace>, Vec<SummaryRow>) {
    let mut quantiles = Vec::with_capacity(labels.len());
    let mut summary = Vec::with_capacity(labels.len());
    for label in labels {
        let runs: Vec<&RegretTrace> = traces.iter().filter(|t| &t.policy == label).collect();
        let mut q = QuantileTrace {
            policy: label.clone(),
            median: Vec::with_capacity(horizon),
            q1: Vec::with_capacity(horizon),
            q3: Vec::with_capacity(horizon),
        };
        let mut column = vec![0.0; runs.len()];
        for t in 0..horizon {
            for (c, run) in column.iter_mut().zip(&runs) {
                *c = run.cumulative[t];
            }
            column.sort_by(f64::total_cmp);
            q.median.push(quantile_sorted(&column, 0.5));
            q.q1.push(quantile_sorted(&column, 0.25));
            q.q3.push(quantile_sorted(&column, 0.75));
        }
        summary.push(SummaryRow {
            policy: label.clone(),
            median_rt: *q.median.last().expect("horizon is positive"),
        });
        quantiles.push(q);
    }
    (quantiles, summary)
}

/// Runs every (policy, replication) pair and aggregates the regret curves.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let policies = cfg.resolved_policies();
    let tasks: Vec<(usize, usize)> = (0..policies.len())
        .flat_map(|p| (0..cfg.replications).map(move |r| (p, r)))
        .collect();
    let outputs: Vec<ReplicationOutput> = with_pool(|| {
        tasks
            .par_iter()
            .map(|&(p, r)| run_replication(cfg, &policies[p], p, r))
            .collect::<Result<Vec<_>>>()
    })??;

    let mut traces = Vec::with_capacity(outputs.len());
    let mut audits = Vec::new();
    for out in outputs {
        traces.push(out.trace);
        audits.extend(out.audit);
    }
    let labels: Vec<String> = policies.iter().map(PolicyConfig::label).collect();
    let (quantiles, summary) = aggregate(&labels, &traces, cfg.horizon);
    Ok(ExperimentResult {
        traces,
        quantiles,
        summary,
        audits,
    })
}

/// Which hyperparameter a grid search varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TuneParam {
    /// Exploration scale of the Thompson-sampling variants.
    V,
    /// BOSE elimination multiplier.
    Omega,
}

impl std::str::FromStr for TuneParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "v" => Ok(TuneParam::V),
            "omega" => Ok(TuneParam::Omega),
            other => Err(Error::config(format!("unknown tuning parameter `{other}` (use v or omega)"))),
        }
    }
}

impl TuneParam {
    pub fn as_str(self) -> &'static str {
        match self {
            TuneParam::V => "v",
            TuneParam::Omega => "omega",
        }
    }

    /// Whether this parameter affects policies of `kind`.
    pub fn applies_to(self, kind: PolicyKind) -> bool {
        match self {
            TuneParam::V => kind.uses_v(),
            TuneParam::Omega => kind == PolicyKind::Bose,
        }
    }

    fn apply(self, cfg: &mut PolicyConfig, value: f64) {
        match self {
            TuneParam::V => {
                cfg.v = value;
                cfg.theoretical_v = false;
            }
            TuneParam::Omega => cfg.omega = value,
        }
    }
}

/// `n` log-spaced points from `lo` to `hi`, endpoints included.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..n)
                .map(|k| 10f64.powf(a + (b - a) * k as f64 / (n - 1) as f64))
                .collect()
        }
    }
}

/// Ten log-spaced values in `[1e-3, 10]`.
pub fn default_grid() -> Vec<f64> {
    log_grid(1e-3, 10.0, 10)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneRow {
    pub value: f64,
    pub median_rt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTuning {
    pub policy: String,
    pub best_value: f64,
    pub best_median_rt: f64,
    /// One row per grid value, in grid order.
    pub rows: Vec<TuneRow>,
}

/// Grid search over `param` for every policy it applies to.
///
/// The best value minimizes the median `R(T)`; ties go to the smaller value.
pub fn tune_parameter(cfg: &ExperimentConfig, param: TuneParam, grid: &[f64]) -> Result<Vec<PolicyTuning>> {
    if grid.is_empty() {
        return Err(Error::config("tuning grid is empty"));
    }
    if let Some(bad) = grid.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::config(format!("grid value {bad} must be finite and nonnegative")));
    }
    let targets: Vec<usize> = (0..cfg.policies.len())
        .filter(|&i| param.applies_to(cfg.policies[i].kind))
        .collect();
    if targets.is_empty() {
        return Err(Error::config(format!(
            "no configured policy uses parameter {}",
            param.as_str()
        )));
    }
    cfg.validate()?;

    let mut tuned = Vec::with_capacity(targets.len());
    for &idx in &targets {
        let mut rows = Vec::with_capacity(grid.len());
        for &value in grid {
            let mut run_cfg = cfg.clone();
            param.apply(&mut run_cfg.policies[idx], value);
            // Keep the policy's index (and so its seed) while running it alone.
            let result = run_single_policy(&run_cfg, idx)?;
            rows.push(TuneRow {
                value,
                median_rt: result.summary[0].median_rt,
            });
        }
        let best = rows
            .iter()
            .min_by(|a, b| a.median_rt.total_cmp(&b.median_rt).then(a.value.total_cmp(&b.value)))
            .expect("grid is nonempty");
        tuned.push(PolicyTuning {
            policy: cfg.policies[idx].label(),
            best_value: best.value,
            best_median_rt: best.median_rt,
            rows,
        });
    }
    Ok(tuned)
}

/// Runs only policy `idx` of `cfg`, with the seeds it would get in the full run.
pub fn run_single_policy(cfg: &ExperimentConfig, idx: usize) -> Result<ExperimentResult> {
    cfg.validate()?;
    let policy = cfg
        .resolved_policies()
        .into_iter()
        .nth(idx)
        .ok_or_else(|| Error::config(format!("no policy at index {idx}")))?;
    let outputs: Vec<ReplicationOutput> = with_pool(|| {
        (0..cfg.replications)
            .into_par_iter()
            .map(|r| run_replication(cfg, &policy, idx, r))
            .collect::<Result<Vec<_>>>()
    })??;
    let mut traces = Vec::with_capacity(outputs.len());
    let mut audits = Vec::new();
    for out in outputs {
        traces.push(out.trace);
        audits.extend(out.audit);
    }
    let (quantiles, summary) = aggregate(&[policy.label()], &traces, cfg.horizon);
    Ok(ExperimentResult {
        traces,
        quantiles,
        summary,
        audits,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_lines(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut out = create(path)?;
    body(&mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

/// Writes `quantiles.csv` and `summary.csv` into `dir`.
pub fn emit_csv(result: &ExperimentResult, dir: &Path) -> Result<()> {
    if result.traces.is_empty() {
        return Err(Error::config("no traces to write"));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_lines(&dir.join("quantiles.csv"), |out| {
        writeln!(out, "t,policy,median,q1,q3")?;
        for q in &result.quantiles {
            for t in 0..q.median.len() {
                writeln!(
                    out,
                    "{},{},{:.16e},{:.16e},{:.16e}",
                    t + 1,
                    q.policy,
                    q.median[t],
                    q.q1[t],
                    q.q3[t]
                )?;
            }
        }
        Ok(())
    })?;
    write_lines(&dir.join("summary.csv"), |out| {
        writeln!(out, "policy,median_RT")?;
        for row in &result.summary {
            writeln!(out, "{},{:.16e}", row.policy, row.median_rt)?;
        }
        Ok(())
    })?;
    if !result.audits.is_empty() {
        write_audit_csv(&result.audits, &dir.join("audit.csv"))?;
    }
    Ok(())
}

/// Writes the per-value table of a grid search.
pub fn emit_tuning_csv(tuning: &[PolicyTuning], param: TuneParam, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_lines(path, |out| {
        writeln!(out, "policy,{},median_RT,best", param.as_str())?;
        for t in tuning {
            for row in &t.rows {
                writeln!(
                    out,
                    "{},{:.16e},{:.16e},{}",
                    t.policy,
                    row.value,
                    row.median_rt,
                    u8::from(row.value == t.best_value)
                )?;
            }
        }
        Ok(())
    })
}

/// Mean and quartiles of replay estimates across runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReplaySummary {
    pub runs: usize,
    pub mean: f64,
    pub q1: f64,
    pub q3: f64,
}

pub fn summarize_replay(results: &[ReplayResult]) -> Option<ReplaySummary> {
    if results.is_empty() {
        return None;
    }
    let rates: Vec<f64> = results.iter().map(ReplayResult::reward_rate).collect();
    Some(ReplaySummary {
        runs: rates.len(),
        mean: rates.iter().sum::<f64>() / rates.len() as f64,
        q1: quantile(&rates, 0.25),
        q3: quantile(&rates, 0.75),
    })
}

/// Replays the same log `runs` times with independent policy seeds.
pub fn run_replay_campaign(
    events: &[LogEvent],
    policy: &PolicyConfig,
    target: usize,
    runs: usize,
    base_seed: u64,
) -> Result<Vec<ReplayResult>> {
    let first = events
        .first()
        .ok_or_else(|| Error::config("replay log is empty"))?;
    let (n, d) = (first.contexts.n_arms(), first.contexts.dim());
    let mut policy = policy.clone();
    policy.horizon.get_or_insert(target);
    BanditPolicy::from_config(&policy, n, d)?;
    with_pool(|| {
        (0..runs)
            .into_par_iter()
            .map(|run| {
                let mut p = BanditPolicy::from_config(&policy, n, d)?;
                let mut rng = SimRng::seed_from_u64(derive_seed(&[base_seed, REPLAY_STREAM, run as u64]));
                replay_evaluate(&mut p, events, target, &mut rng)
            })
            .collect()
    })?
}

/// Writes `run_id,matched,G_hat,consumed` rows.
pub fn emit_replay_csv(results: &[ReplayResult], path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_lines(path, |out| {
        writeln!(out, "run_id,matched,G_hat,consumed")?;
        for (i, r) in results.iter().enumerate() {
            writeln!(out, "{},{},{:.16e},{}", i + 1, r.matched, r.total_reward, r.events_consumed)?;
        }
        Ok(())
    })
}
