//! Post-hoc checks on recorded runs.
//!
//! A [`RunAudit`] holds one [`AuditRecord`] per round, taken from the
//! regression state a policy used to choose its arm (so record `t` describes
//! `B(t)` after `t − 1` updates). Audits can be spilled to CSV and checked
//! later by the `audit` subcommand.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::policies::{ContextSet, PolicyKind, PrecisionState, Selection};

const EIGEN_TOL: f64 = 1e-9;
const BOUND_TOL: f64 = 1e-9;

/// Column header of the audit side file.
pub const AUDIT_HEADER: &str =
    "policy,kind,replication,dim,noise_scale,t,chosen_width,log_det,trace,min_eigenvalue,estimation_error,probs_ok,widths,deviations";

#[derive(Debug, Clone, PartialEq)]
pub struct AuditRecord {
    pub t: u64,
    /// `s^c_{t,a(t)} = ‖X_t‖_{B(t)⁻¹}`.
    pub chosen_width: f64,
    pub log_det: f64,
    pub trace: f64,
    pub min_eigenvalue: f64,
    /// `‖μ̂(t) − μ‖₂`, when the truth is known.
    pub estimation_error: Option<f64>,
    /// Whether the round's arm distribution satisfied the simplex constraints.
    pub probs_ok: bool,
    /// `s^c_{t,i}` for every arm.
    pub widths: Vec<f64>,
    /// `|(b_i − b̄)ᵀ(μ̂ − μ)|` for every arm, when the truth is known.
    pub deviations: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunAudit {
    pub policy: String,
    pub kind: PolicyKind,
    pub replication: usize,
    pub dim: usize,
    /// Sub-Gaussian scale `R` used for the confidence radius.
    pub noise_scale: f64,
    pub records: Vec<AuditRecord>,
}

impl RunAudit {
    pub fn new(policy: impl Into<String>, kind: PolicyKind, replication: usize, dim: usize, noise_scale: f64) -> Self {
        Self {
            policy: policy.into(),
            kind,
            replication,
            dim,
            noise_scale,
            records: Vec::new(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.records.len()
    }
}

/// Snapshot of round `t` from the state used to select and the selection made.
pub fn record_round(
    t: u64,
    state: &PrecisionState,
    contexts: &ContextSet,
    selection: &Selection,
    mu: Option<&[f64]>,
) -> Result<AuditRecord> {
    let matrix = &state.matrix;
    let estimate = state.estimate()?;
    let center = selection.dist.mean_context();
    let mut widths = Vec::with_capacity(contexts.n_arms());
    let mut deviations = mu.map(|_| Vec::with_capacity(contexts.n_arms()));
    let error_vec = match mu {
        Some(mu) => {
            if mu.len() != state.dim() {
                return Err(Error::DimensionMismatch {
                    expected: state.dim(),
                    actual: mu.len(),
                });
            }
            Some(&estimate - DVector::from_column_slice(mu))
        }
        None => None,
    };
    for i in 0..contexts.n_arms() {
        let centered = contexts.centered_row(i, center);
        widths.push(matrix.mahalanobis_width(&centered)?);
        if let (Some(devs), Some(err)) = (deviations.as_mut(), error_vec.as_ref()) {
            devs.push(centered.dot(err).abs());
        }
    }
    Ok(AuditRecord {
        t,
        chosen_width: widths[selection.arm],
        log_det: matrix.log_det()?,
        trace: matrix.trace(),
        min_eigenvalue: matrix.min_eigenvalue(),
        estimation_error: error_vec.map(|e| e.norm()),
        probs_ok: selection.dist.is_consistent_with(contexts),
        widths,
        deviations,
    })
}

/// `l(t) = (2R+6)·√(d·log(6t³/δ)) + 1`.
pub fn confidence_radius(noise_scale: f64, dim: usize, t: u64, delta: f64) -> f64 {
    let t = t as f64;
    (2.0 * noise_scale + 6.0) * (dim as f64 * (6.0 * t * t * t / delta).ln()).sqrt() + 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PotentialCheck {
    pub passed: bool,
    pub sum_sq_width: f64,
    /// `8·d·log(1 + 2T/d)`.
    pub bound: f64,
    pub margin: f64,
    pub sum_width: f64,
    /// `√(2·d·T·log(1 + T/d))`; reported only.
    pub literal_bound: f64,
    pub literal_held: bool,
}

/// Elliptical-potential check on the chosen widths.
pub fn check_potential_bound(audit: &RunAudit) -> PotentialCheck {
    let d = audit.dim as f64;
    let horizon = audit.horizon() as f64;
    let sum_sq_width: f64 = audit.records.iter().map(|r| r.chosen_width * r.chosen_width).sum();
    let sum_width: f64 = audit.records.iter().map(|r| r.chosen_width).sum();
    let bound = 8.0 * d * (1.0 + 2.0 * horizon / d).ln();
    let literal_bound = (2.0 * d * horizon * (1.0 + horizon / d).ln()).sqrt();
    PotentialCheck {
        passed: sum_sq_width <= bound + BOUND_TOL,
        sum_sq_width,
        bound,
        margin: bound - sum_sq_width,
        sum_width,
        literal_bound,
        literal_held: sum_width <= literal_bound,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoverageReport {
    pub rounds: usize,
    pub violating_rounds: usize,
    pub rate: f64,
}

impl CoverageReport {
    pub fn passes(&self, delta: f64) -> bool {
        self.rate <= delta
    }
}

/// Fraction of rounds in which some arm leaves the confidence band.
pub fn check_coverage(audits: &[RunAudit], delta: f64) -> Result<CoverageReport> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::config(format!("delta must lie in (0, 1), got {delta}")));
    }
    let mut rounds = 0;
    let mut violating_rounds = 0;
    for audit in audits {
        for rec in &audit.records {
            let devs = rec.deviations.as_ref().ok_or(Error::MissingTruth)?;
            let radius = confidence_radius(audit.noise_scale, audit.dim, rec.t, delta);
            rounds += 1;
            if devs.iter().zip(&rec.widths).any(|(dev, w)| *dev > radius * w) {
                violating_rounds += 1;
            }
        }
    }
    let rate = if rounds == 0 {
        0.0
    } else {
        violating_rounds as f64 / rounds as f64
    };
    Ok(CoverageReport {
        rounds,
        violating_rounds,
        rate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetTraceCheck {
    pub passed: bool,
    /// First round where either inequality failed.
    pub first_failure: Option<u64>,
    /// Smallest `d·log(trace/d) − log det` seen.
    pub min_margin: f64,
}

/// `det B ≤ (trace B / d)^d` and `trace B(t) ≤ d + 8(t − 1)` on every record.
pub fn check_det_trace(audit: &RunAudit) -> DetTraceCheck {
    let d = audit.dim as f64;
    let mut first_failure = None;
    let mut min_margin = f64::INFINITY;
    for rec in &audit.records {
        let margin = d * (rec.trace / d).ln() - rec.log_det;
        min_margin = min_margin.min(margin);
        let trace_cap = d + 8.0 * (rec.t as f64 - 1.0);
        let ok = margin >= -BOUND_TOL * d.max(rec.log_det.abs()) && rec.trace <= trace_cap + BOUND_TOL * trace_cap;
        if !ok && first_failure.is_none() {
            first_failure = Some(rec.t);
        }
    }
    DetTraceCheck {
        passed: first_failure.is_none(),
        first_failure,
        min_margin,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StateCheck {
    pub passed: bool,
    pub min_eigenvalue: f64,
    pub bad_distributions: usize,
}

/// Eigenvalues of `B` stay at or above 1 and every `π` was a valid distribution.
pub fn check_state(audit: &RunAudit) -> StateCheck {
    let min_eigenvalue = audit
        .records
        .iter()
        .map(|r| r.min_eigenvalue)
        .fold(f64::INFINITY, f64::min);
    let bad_distributions = audit.records.iter().filter(|r| !r.probs_ok).count();
    StateCheck {
        passed: min_eigenvalue >= 1.0 - EIGEN_TOL && bad_distributions == 0,
        min_eigenvalue,
        bad_distributions,
    }
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:.16e}"))
        .collect::<Vec<_>>()
        .join(";")
}

/// Writes audits in the side-file format (see [`AUDIT_HEADER`]).
pub fn write_audit_csv(audits: &[RunAudit], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "{AUDIT_HEADER}")?;
        for audit in audits {
            for r in &audit.records {
                writeln!(
                    out,
                    "{},{},{},{},{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{},{}",
                    audit.policy,
                    audit.kind,
                    audit.replication,
                    audit.dim,
                    audit.noise_scale,
                    r.t,
                    r.chosen_width,
                    r.log_det,
                    r.trace,
                    r.min_eigenvalue,
                    r.estimation_error.map_or(String::new(), |e| format!("{e:.16e}")),
                    u8::from(r.probs_ok),
                    join(&r.widths),
                    r.deviations.as_deref().map_or(String::new(), join),
                )?;
            }
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

fn parse_field<T: std::str::FromStr>(field: &str, name: &str, line: usize) -> Result<T> {
    field.parse().map_err(|_| Error::Parse {
        line,
        message: format!("bad {name} `{field}`"),
    })
}

fn parse_list(field: &str, name: &str, line: usize) -> Result<Vec<f64>> {
    field.split(';').map(|v| parse_field(v, name, line)).collect()
}

/// Reads an audit side file, grouping consecutive rows by run.
pub fn read_audit_csv(path: &Path) -> Result<Vec<RunAudit>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut audits: Vec<RunAudit> = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if idx == 0 {
            if line.trim() != AUDIT_HEADER {
                return Err(Error::Parse {
                    line: 1,
                    message: "unexpected audit header".into(),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 14 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 14 fields, found {}", f.len()),
            });
        }
        let kind: PolicyKind = f[1].parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("bad kind `{}`", f[1]),
        })?;
        let replication: usize = parse_field(f[2], "replication", line_no)?;
        let dim: usize = parse_field(f[3], "dim", line_no)?;
        let noise_scale: f64 = parse_field(f[4], "noise_scale", line_no)?;
        let record = AuditRecord {
            t: parse_field(f[5], "t", line_no)?,
            chosen_width: parse_field(f[6], "chosen_width", line_no)?,
            log_det: parse_field(f[7], "log_det", line_no)?,
            trace: parse_field(f[8], "trace", line_no)?,
            min_eigenvalue: parse_field(f[9], "min_eigenvalue", line_no)?,
            estimation_error: match f[10] {
                "" => None,
                s => Some(parse_field(s, "estimation_error", line_no)?),
            },
            probs_ok: parse_field::<u8>(f[11], "probs_ok", line_no)? == 1,
            widths: parse_list(f[12], "widths", line_no)?,
            deviations: match f[13] {
                "" => None,
                s => Some(parse_list(s, "deviations", line_no)?),
            },
        };
        let same_run = audits
            .last()
            .is_some_and(|a| a.policy == f[0] && a.kind == kind && a.replication == replication);
        if !same_run {
            audits.push(RunAudit::new(f[0], kind, replication, dim, noise_scale));
        }
        audits.last_mut().expect("pushed above").records.push(record);
    }
    Ok(audits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policies::{ArmDistribution, SelectionInfo};

    fn record(t: u64, width: f64, trace: f64, log_det: f64) -> AuditRecord {
        AuditRecord {
            t,
            chosen_width: width,
            log_det,
            trace,
            min_eigenvalue: 1.0,
            estimation_error: None,
            probs_ok: true,
            widths: vec![width],
            deviations: Some(vec![0.0]),
        }
    }

    fn first_round() -> (PrecisionState, ContextSet, Selection) {
        let c = ContextSet::from_rows(&[vec![0.0, 0.0], vec![0.6, 0.8]]).unwrap();
        let sel = Selection {
            arm: 1,
            dist: ArmDistribution::new(vec![0.5, 0.5], &c).unwrap(),
            info: SelectionInfo::None,
        };
        (PrecisionState::new(2), c, sel)
    }

    #[test]
    fn first_round_record() {
        let (state, c, sel) = first_round();
        let mu = [0.3, -0.4];
        let rec = record_round(1, &state, &c, &sel, Some(&mu)).unwrap();
        // b̄ = (0.3, 0.4); centered rows ±(0.3, 0.4) with norm 0.5.
        assert!((rec.chosen_width - 0.5).abs() < 1e-15);
        assert_eq!(rec.log_det, 0.0);
        assert_eq!(rec.trace, 2.0);
        assert!((rec.min_eigenvalue - 1.0).abs() < 1e-12);
        assert!((rec.estimation_error.unwrap() - 0.5).abs() < 1e-15);
        // |(0.3, 0.4)·(−0.3, 0.4)| = 0.07.
        for dev in rec.deviations.as_ref().unwrap() {
            assert!((dev - 0.07).abs() < 1e-15);
        }
        assert!(rec.probs_ok);

        let mut audit = RunAudit::new("semits", PolicyKind::SemiTs, 0, 2, 0.01);
        audit.records.push(rec);
        assert!(check_potential_bound(&audit).passed);
        assert!(check_det_trace(&audit).passed);
        assert!(check_state(&audit).passed);
        assert_eq!(check_coverage(&[audit], 0.1).unwrap().violating_rounds, 0);
    }

    #[test]
    fn radius_example() {
        let expected = 6.02 * (10.0 * (60.0f64).ln()).sqrt() + 1.0;
        assert!((confidence_radius(0.01, 10, 1, 0.1) - expected).abs() < 1e-12);
        assert!(confidence_radius(1.0, 10, 1, 0.1) > confidence_radius(0.01, 10, 1, 0.1));
    }

    #[test]
    fn potential_bound_negative_control() {
        let mut audit = RunAudit::new("x", PolicyKind::SemiTs, 0, 1, 0.01);
        for t in 1..=50 {
            audit.records.push(record(t, 2.0, 1.0, 0.0));
        }
        // 50·4 = 200 > 8·log(101) ≈ 36.9.
        let check = check_potential_bound(&audit);
        assert!(!check.passed);
        assert!(check.margin < 0.0);
        assert!(!check.literal_held);
    }

    #[test]
    fn det_trace_controls() {
        let mut audit = RunAudit::new("x", PolicyKind::SemiTs, 0, 2, 0.01);
        audit.records.push(record(1, 1.0, 2.0, 0.0));
        assert!(check_det_trace(&audit).passed);
        // log det above d·log(trace/d).
        audit.records.push(record(2, 1.0, 4.0, 2.0));
        let check = check_det_trace(&audit);
        assert!(!check.passed);
        assert_eq!(check.first_failure, Some(2));
        // Trace growing faster than 8 per round.
        let mut audit = RunAudit::new("x", PolicyKind::SemiTs, 0, 2, 0.01);
        audit.records.push(record(2, 1.0, 11.0, 0.0));
        assert!(!check_det_trace(&audit).passed);
    }

    #[test]
    fn coverage_needs_truth() {
        let mut audit = RunAudit::new("x", PolicyKind::SemiTs, 0, 2, 0.01);
        let mut rec = record(1, 1.0, 2.0, 0.0);
        rec.deviations = None;
        audit.records.push(rec);
        assert!(matches!(check_coverage(&[audit], 0.1), Err(Error::MissingTruth)));
    }

    #[test]
    fn coverage_counts_rounds() {
        let mut audit = RunAudit::new("x", PolicyKind::SemiTs, 0, 1, 0.0);
        let mut bad = record(1, 0.1, 1.0, 0.0);
        bad.deviations = Some(vec![10.0]);
        audit.records.push(bad);
        audit.records.push(record(2, 0.1, 1.0, 0.0));
        let report = check_coverage(&[audit.clone()], 0.1).unwrap();
        assert_eq!(report.rounds, 2);
        assert_eq!(report.violating_rounds, 1);
        assert!(!report.passes(0.1));
        // A much larger R widens the band enough to cover the outlier.
        audit.noise_scale = 100.0;
        assert_eq!(check_coverage(&[audit], 0.1).unwrap().violating_rounds, 0);
    }

    #[test]
    fn csv_round_trip() {
        let (state, c, sel) = first_round();
        let mut a = RunAudit::new("semits", PolicyKind::SemiTs, 3, 2, 0.01);
        a.records.push(record_round(1, &state, &c, &sel, Some(&[0.1, 0.2])).unwrap());
        a.records.push(record_round(2, &state, &c, &sel, Some(&[0.1, 0.2])).unwrap());
        let mut b = RunAudit::new("lints", PolicyKind::LinTs, 0, 2, 0.01);
        b.records.push(record_round(1, &state, &c, &sel, None).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.csv");
        write_audit_csv(&[a.clone(), b.clone()], &path).unwrap();
        assert_eq!(read_audit_csv(&path).unwrap(), vec![a, b]);
    }
}
