//! Replay evaluation over uniformly logged bandit feedback.
//!
//! ## Log format
//!
//! One event per line, tab-separated:
//!
//! ```text
//! t  N  d  action  reward  b_1[0] .. b_1[d-1]  b_2[0] ..  b_N[d-1]
//! ```
//!
//! `action` is one-based (`1..=N`); the `N·d` context values are row-major.
//! Blank lines are skipped. Gzip-compressed files are detected by their magic
//! bytes in [`open_log`].

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use rand::Rng;
use serde::Serialize;

use crate::envsim::{draw_reward, gen_contexts, nu_value, EnvironmentSpec};
use crate::error::{Error, Result};
use crate::policies::{ContextSet, Policy, RoundFeedback};

/// One logged interaction. `logged_action` is zero-based in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct LogEvent {
    pub t: u64,
    pub contexts: ContextSet,
    pub logged_action: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReplayResult {
    /// Accepted events.
    pub matched: usize,
    /// Sum of rewards over accepted events.
    pub total_reward: f64,
    pub events_consumed: usize,
    /// The log ran out before `matched` reached the target.
    pub truncated: bool,
}

impl ReplayResult {
    /// `Ĝ/T`, or 0 with no matches.
    pub fn reward_rate(&self) -> f64 {
        if self.matched == 0 {
            0.0
        } else {
            self.total_reward / self.matched as f64
        }
    }
}

/// Serializes one event as a log line (without the newline).
pub fn format_event(event: &LogEvent) -> String {
    let c = &event.contexts;
    let mut line = format!(
        "{}\t{}\t{}\t{}\t{}",
        event.t,
        c.n_arms(),
        c.dim(),
        event.logged_action + 1,
        event.reward
    );
    for v in c.as_flat() {
        line.push('\t');
        line.push_str(&v.to_string());
    }
    line
}

pub fn write_event<W: Write + ?Sized>(sink: &mut W, event: &LogEvent) -> Result<()> {
    writeln!(sink, "{}", format_event(event))?;
    Ok(())
}

fn parse_line(line: &str, line_no: usize) -> Result<LogEvent> {
    let err = |message: String| Error::Parse {
        line: line_no,
        message,
    };
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() < 5 {
        return Err(err(format!("expected at least 5 fields, found {}", fields.len())));
    }
    let int = |i: usize, name: &str| -> Result<u64> {
        fields[i]
            .trim()
            .parse()
            .map_err(|_| err(format!("bad {name} `{}`", fields[i])))
    };
    let t = int(0, "t")?;
    let n = int(1, "N")? as usize;
    let d = int(2, "d")? as usize;
    let action = int(3, "action")? as usize;
    if n == 0 || d == 0 {
        return Err(err("N and d must be positive".into()));
    }
    if action == 0 || action > n {
        return Err(err(format!("action {action} outside 1..={n}")));
    }
    let reward: f64 = fields[4]
        .trim()
        .parse()
        .map_err(|_| err(format!("bad reward `{}`", fields[4])))?;
    if !reward.is_finite() {
        return Err(err("reward is not finite".into()));
    }
    let values = &fields[5..];
    if values.len() != n * d {
        return Err(err(format!("expected {} context values, found {}", n * d, values.len())));
    }
    let data = values
        .iter()
        .map(|s| s.trim().parse::<f64>().map_err(|_| err(format!("bad context value `{s}`"))))
        .collect::<Result<Vec<_>>>()?;
    let contexts = ContextSet::from_flat(n, d, data).map_err(|e| err(e.to_string()))?;
    Ok(LogEvent {
        t,
        contexts,
        logged_action: action - 1,
        reward,
    })
}

/// Lazy event reader returned by [`parse_log`].
pub struct LogReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    shape: Option<(usize, usize)>,
    failed: bool,
}

impl<R: BufRead> Iterator for LogReader<R> {
    type Item = Result<LogEvent>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            self.line_no += 1;
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e.into()));
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            let parsed = parse_line(&line, self.line_no).and_then(|ev| {
                let shape = (ev.contexts.n_arms(), ev.contexts.dim());
                match self.shape {
                    Some(expected) if expected != shape => Err(Error::Parse {
                        line: self.line_no,
                        message: format!(
                            "shape N={}, d={} differs from earlier N={}, d={}",
                            shape.0, shape.1, expected.0, expected.1
                        ),
                    }),
                    _ => {
                        self.shape = Some(shape);
                        Ok(ev)
                    }
                }
            });
            if parsed.is_err() {
                self.failed = true;
            }
            return Some(parsed);
        }
    }
}

/// Parses a log stream lazily. Iteration stops after the first error.
pub fn parse_log<R: BufRead>(reader: R) -> LogReader<R> {
    LogReader {
        lines: reader.lines(),
        line_no: 0,
        shape: None,
        failed: false,
    }
}

/// Opens a log file, decompressing it if it starts with the gzip magic bytes.
pub fn open_log(path: &Path) -> Result<Box<dyn BufRead>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let head = reader.fill_buf().map_err(|e| Error::io(path, e))?;
    if head.starts_with(&[0x1f, 0x8b]) {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(reader))))
    } else {
        Ok(Box::new(reader))
    }
}

/// Reads a whole log file into memory.
pub fn read_log(path: &Path) -> Result<Vec<LogEvent>> {
    parse_log(open_log(path)?).collect()
}

/// Replays `events` through `policy` until `target` events have matched.
///
/// On a match the reward is credited and the policy is updated with that
/// round; non-matching events are dropped without touching the policy.
pub fn replay_evaluate<P, I, R>(policy: &mut P, events: I, target: usize, rng: &mut R) -> Result<ReplayResult>
where
    P: Policy + ?Sized,
    I: IntoIterator,
    I::Item: std::borrow::Borrow<LogEvent>,
    R: Rng + ?Sized,
{
    use std::borrow::Borrow;

    let mut result = ReplayResult {
        matched: 0,
        total_reward: 0.0,
        events_consumed: 0,
        truncated: false,
    };
    if target == 0 {
        return Ok(result);
    }
    for event in events {
        let event = event.borrow();
        result.events_consumed += 1;
        let selection = policy.select(&event.contexts, rng)?;
        if selection.arm != event.logged_action {
            continue;
        }
        result.matched += 1;
        result.total_reward += event.reward;
        policy.update(&RoundFeedback {
            contexts: &event.contexts,
            selection: &selection,
            reward: event.reward,
        })?;
        if result.matched == target {
            return Ok(result);
        }
    }
    result.truncated = true;
    Ok(result)
}

/// Generator of uniformly logged events from the semiparametric model.
///
/// With `binary` set, rewards are Bernoulli draws with success probability
/// `clamp(ν + b_aᵀμ, 0, 1)` instead of Gaussian-noised means.
pub struct SyntheticLog<'a, R: Rng + ?Sized> {
    spec: &'a EnvironmentSpec,
    mu: Vec<f64>,
    binary: bool,
    rng: &'a mut R,
    t: u64,
    remaining: usize,
}

impl<'a, R: Rng + ?Sized> SyntheticLog<'a, R> {
    pub fn new(spec: &'a EnvironmentSpec, length: usize, binary: bool, rng: &'a mut R) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            mu: spec.mu()?,
            spec,
            binary,
            rng,
            t: 0,
            remaining: length,
        })
    }

    fn generate(&mut self) -> Result<LogEvent> {
        self.t += 1;
        let contexts = gen_contexts(self.spec, self.rng)?;
        let means = contexts.scores(&nalgebra::DVector::from_column_slice(&self.mu));
        let optimal = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let nu = nu_value(self.spec.nu_case, self.t, optimal);
        let action = self.rng.random_range(0..contexts.n_arms());
        let reward = if self.binary {
            let p = (nu + means[action]).clamp(0.0, 1.0);
            if self.rng.random::<f64>() < p {
                1.0
            } else {
                0.0
            }
        } else {
            draw_reward(&contexts, &self.mu, self.spec.sigma, nu, action, self.rng)?
        };
        Ok(LogEvent {
            t: self.t,
            contexts,
            logged_action: action,
            reward,
        })
    }
}

impl<R: Rng + ?Sized> Iterator for SyntheticLog<'_, R> {
    type Item = Result<LogEvent>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        Some(self.generate())
    }
}

/// Writes `length` synthetic events to `sink`; returns the count written.
pub fn gen_synthetic_log<R, W>(
    spec: &EnvironmentSpec,
    length: usize,
    binary: bool,
    rng: &mut R,
    sink: &mut W,
) -> Result<usize>
where
    R: Rng + ?Sized,
    W: Write + ?Sized,
{
    let mut written = 0;
    for event in SyntheticLog::new(spec, length, binary, rng)? {
        write_event(sink, &event?)?;
        written += 1;
    }
    sink.flush()?;
    Ok(written)
}
