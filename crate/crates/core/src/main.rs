use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use serde_json::json;

use semibandit::diagnostics::{
    check_coverage, check_det_trace, check_potential_bound, check_state, read_audit_csv,
};
use semibandit::error::{Error, Result};
use semibandit::policies::{PolicyConfig, PolicyKind};
use semibandit::replay::{gen_synthetic_log, read_log};
use semibandit::runner::{
    default_grid, emit_csv, emit_replay_csv, emit_tuning_csv, run_experiment, run_replay_campaign, summarize_replay,
    tune_parameter, ExperimentConfig, TuneParam,
};
use semibandit::SimRng;

#[derive(Parser)]
#[command(name = "semibandit", version, about = "Contextual bandits under a semiparametric reward model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured policy and write regret quantiles.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid-search `v` or `omega` by median final regret.
    Tune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        param: TuneParam,
        /// Comma-separated values (default: 10 log-spaced points in [1e-3, 10]).
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        grid: Option<Vec<f64>>,
        /// Where to write the per-value table (default: <output>/tuning.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a policy offline on a uniformly logged event file.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        policy: PolicyKind,
        /// Number of matched events per run.
        #[arg(long = "T", default_value_t = 5000)]
        target: usize,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        v: Option<f64>,
        #[arg(long)]
        omega: Option<f64>,
        #[arg(long)]
        mc_samples: Option<usize>,
        /// CSV with one row per run.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic uniformly logged event file.
    GenLog {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        length: usize,
        #[arg(long)]
        out: PathBuf,
        /// Bernoulli rewards instead of Gaussian noise.
        #[arg(long)]
        binary: bool,
    },
    /// Check a recorded audit file.
    Audit {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
    },
}

fn print_summary(result: &semibandit::runner::ExperimentResult) {
    for row in &result.summary {
        println!("{}\tmedian R(T) = {:.6}", row.policy, row.median_rt);
    }
}

fn simulate(config: &Path, out: Option<PathBuf>) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let result = run_experiment(&cfg)?;
    print_summary(&result);
    if let Some(dir) = out.or(cfg.output.clone()) {
        emit_csv(&result, &dir)?;
    }
    Ok(())
}

fn tune(config: &Path, param: TuneParam, grid: &[f64], out: Option<PathBuf>) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let tuned = tune_parameter(&cfg, param, grid)?;
    for t in &tuned {
        println!(
            "{}\tbest {} = {}\tmedian R(T) = {:.6}",
            t.policy,
            param.as_str(),
            t.best_value,
            t.best_median_rt
        );
    }
    if let Some(path) = out.or_else(|| cfg.output.as_ref().map(|d| d.join("tuning.csv"))) {
        emit_tuning_csv(&tuned, param, &path)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn replay(
    log: &Path,
    kind: PolicyKind,
    target: usize,
    runs: usize,
    seed: u64,
    v: Option<f64>,
    omega: Option<f64>,
    mc_samples: Option<usize>,
    out: Option<PathBuf>,
) -> Result<()> {
    let events = read_log(log)?;
    let mut policy = PolicyConfig::new(kind);
    if let Some(v) = v {
        policy.v = v;
    }
    if let Some(omega) = omega {
        policy.omega = omega;
    }
    if let Some(m) = mc_samples {
        policy.mc_samples = m;
    }
    let results = run_replay_campaign(&events, &policy, target, runs, seed)?;
    for (i, r) in results.iter().enumerate() {
        println!(
            "run {}\tmatched {}\tG_hat {:.6}\tconsumed {}{}",
            i + 1,
            r.matched,
            r.total_reward,
            r.events_consumed,
            if r.truncated { "\ttruncated" } else { "" }
        );
    }
    if let Some(s) = summarize_replay(&results) {
        println!("G_hat/T\tmean {:.6}\tq1 {:.6}\tq3 {:.6}", s.mean, s.q1, s.q3);
    }
    if let Some(path) = out {
        emit_replay_csv(&results, &path)?;
    }
    Ok(())
}

fn gen_log(config: &Path, length: usize, out: &Path, binary: bool) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let mut rng = SimRng::seed_from_u64(cfg.base_seed);
    let file = File::create(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let mut sink = BufWriter::new(file);
    let written = gen_synthetic_log(&cfg.environment, length, binary, &mut rng, &mut sink)?;
    sink.flush()?;
    println!("wrote {written} events to {}", out.display());
    Ok(())
}

/// Returns whether every asserted check passed.
fn audit(run: &Path, delta: f64) -> Result<bool> {
    let audits = read_audit_csv(run)?;
    let mut all_ok = true;
    // The width and coverage bounds concern the centered estimator only.
    for a in &audits {
        let potential = check_potential_bound(a);
        let det_trace = check_det_trace(a);
        let state = check_state(a);
        let centered = a.kind == PolicyKind::SemiTs;
        all_ok &= det_trace.passed && state.passed && (!centered || potential.passed);
        println!(
            "{}",
            json!({
                "policy": a.policy,
                "kind": a.kind,
                "replication": a.replication,
                "potential": potential,
                "det_trace": det_trace,
                "state": state,
            })
        );
    }
    let with_truth: Vec<_> = audits
        .iter()
        .filter(|a| a.kind == PolicyKind::SemiTs && a.records.iter().all(|r| r.deviations.is_some()))
        .cloned()
        .collect();
    if !with_truth.is_empty() {
        let coverage = check_coverage(&with_truth, delta)?;
        all_ok &= coverage.passes(delta);
        println!("{}", json!({ "coverage": coverage, "delta": delta }));
    }
    Ok(all_ok)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate { config, out } => simulate(&config, out).map(|_| true),
        Command::Tune {
            config,
            param,
            grid,
            out,
        } => tune(&config, param, &grid.unwrap_or_else(default_grid), out).map(|_| true),
        Command::Replay {
            log,
            policy,
            target,
            runs,
            seed,
            v,
            omega,
            mc_samples,
            out,
        } => replay(&log, policy, target, runs, seed, v, omega, mc_samples, out).map(|_| true),
        Command::GenLog {
            config,
            length,
            out,
            binary,
        } => gen_log(&config, length, &out, binary).map(|_| true),
        Command::Audit { run, delta } => audit(&run, delta),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("{}", json!({ "error": "check_failed", "message": "one or more audit checks failed" }));
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
