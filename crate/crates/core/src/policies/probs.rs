//! Probability that Thompson sampling picks each arm, given the history.
//!
//! For a posterior `μ̃ ~ N(mean, v²B⁻¹)` the scores `b_iᵀμ̃` are jointly
//! Gaussian. With two arms the win probability is a single Gaussian CDF; with
//! more arms there is no closed form and the probabilities are estimated from
//! independent posterior draws.

use nalgebra::DVector;
use rand::rngs::SmallRng;
use rand::{Rng, RngCore, SeedableRng};
use rand_distr::StandardNormal;

use super::context::{ArmDistribution, ContextSet};
use crate::error::{Error, Result};
use crate::numkit::{gaussian_cdf, SpdMatrix};

/// Arm probabilities for posterior mean `mean`, precision `precision` and
/// scale `v`: exact for `N ≤ 2`, Monte Carlo over `mc_samples` draws otherwise.
pub fn estimate_arm_probs<R: Rng + ?Sized>(
    contexts: &ContextSet,
    mean: &DVector<f64>,
    precision: &SpdMatrix,
    v: f64,
    mc_samples: usize,
    rng: &mut R,
) -> Result<ArmDistribution> {
    match contexts.n_arms() {
        1 => ArmDistribution::point_mass(0, contexts),
        2 => closed_form_two_arm_probs(contexts, mean, precision, v),
        _ => monte_carlo_arm_probs(contexts, mean, precision, v, mc_samples, rng),
    }
}

fn check_shapes(contexts: &ContextSet, mean: &DVector<f64>, precision: &SpdMatrix, v: f64) -> Result<()> {
    if mean.len() != contexts.dim() || precision.dim() != contexts.dim() {
        return Err(Error::DimensionMismatch {
            expected: contexts.dim(),
            actual: if mean.len() != contexts.dim() {
                mean.len()
            } else {
                precision.dim()
            },
        });
    }
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::config(format!("exploration scale must be nonnegative, got {v}")));
    }
    Ok(())
}

/// `π₂ = Φ(Δᵀmean / (v·√(ΔᵀB⁻¹Δ)))` with `Δ = b₂ − b₁`.
pub fn closed_form_two_arm_probs(
    contexts: &ContextSet,
    mean: &DVector<f64>,
    precision: &SpdMatrix,
    v: f64,
) -> Result<ArmDistribution> {
    check_shapes(contexts, mean, precision, v)?;
    if contexts.n_arms() != 2 {
        return Err(Error::Context(format!(
            "closed form needs exactly 2 arms, got {}",
            contexts.n_arms()
        )));
    }
    let diff = DVector::from_iterator(
        contexts.dim(),
        contexts.row(1).iter().zip(contexts.row(0)).map(|(a, b)| a - b),
    );
    let gap = diff.dot(mean);
    let scale = if diff.iter().all(|&x| x == 0.0) {
        0.0
    } else {
        v * precision.mahalanobis_width(&diff)?
    };
    let p2 = if scale > 0.0 {
        gaussian_cdf(gap / scale)
    } else if gap > 0.0 {
        1.0
    } else if gap < 0.0 {
        0.0
    } else {
        0.5
    };
    ArmDistribution::new(vec![1.0 - p2, p2], contexts)
}

/// Monte Carlo frequency of `argmax_i b_iᵀμ̃` over `mc_samples` posterior draws.
///
/// Identical rows are merged and share their group's mass equally; exact ties
/// between distinct rows split the draw evenly. Both match uniform random
/// tie-breaking in expectation.
pub fn monte_carlo_arm_probs<R: Rng + ?Sized>(
    contexts: &ContextSet,
    mean: &DVector<f64>,
    precision: &SpdMatrix,
    v: f64,
    mc_samples: usize,
    rng: &mut R,
) -> Result<ArmDistribution> {
    check_shapes(contexts, mean, precision, v)?;
    if mc_samples == 0 {
        return Err(Error::config("mc_samples must be at least 1"));
    }
    let n = contexts.n_arms();
    let groups = group_identical_rows(contexts);
    let reps: Vec<usize> = groups.iter().map(|g| g[0]).collect();
    let all_scores = contexts.scores(mean);
    let centers: Vec<f64> = reps.iter().map(|&i| all_scores[i]).collect();

    let loadings = if v > 0.0 {
        ScoreLoadings::new(contexts, &reps, precision, v)?
    } else {
        ScoreLoadings::zero(reps.len())
    };

    let mut wins = vec![0.0; reps.len()];
    if loadings.rank == 0 {
        credit_argmax(&centers, &mut wins, 1.0);
    } else {
        // The draws dominate the cost of a round, so they come from a small
        // generator seeded by the caller's stream.
        let mut fast = SmallRng::from_rng(&mut RngRef(rng));
        let mut z = vec![0.0; loadings.rank];
        let mut scores = vec![0.0; reps.len()];
        for _ in 0..mc_samples {
            for zk in z.iter_mut() {
                *zk = fast.sample(StandardNormal);
            }
            loadings.scores_into(&centers, &z, &mut scores);
            credit_argmax(&scores, &mut wins, 1.0);
        }
        for w in wins.iter_mut() {
            *w /= mc_samples as f64;
        }
    }

    let mut probs = vec![0.0; n];
    for (group, &w) in groups.iter().zip(&wins) {
        let share = w / group.len() as f64;
        for &i in group {
            probs[i] = share;
        }
    }
    normalize(&mut probs);
    ArmDistribution::new(probs, contexts)
}

/// Sized handle over a possibly unsized generator.
struct RngRef<'a, R: ?Sized>(&'a mut R);

impl<R: Rng + ?Sized> RngCore for RngRef<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

/// Rounding in repeated `1/k` credits can leave the sum a few ulps off.
fn normalize(probs: &mut [f64]) {
    let total: f64 = probs.iter().sum();
    if total > 0.0 && total != 1.0 {
        for p in probs.iter_mut() {
            *p = (*p / total).min(1.0);
        }
    }
}

fn credit_argmax(scores: &[f64], wins: &mut [f64], weight: f64) {
    let mut best = 0;
    let mut ties = 1usize;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
            ties = 1;
        } else if s == scores[best] {
            ties += 1;
        }
    }
    if ties == 1 {
        wins[best] += weight;
        return;
    }
    let top = scores[best];
    let share = weight / ties as f64;
    for (w, &s) in wins.iter_mut().zip(scores) {
        if s == top {
            *w += share;
        }
    }
}

fn group_identical_rows(contexts: &ContextSet) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..contexts.n_arms() {
        match groups.iter_mut().find(|g| contexts.row(g[0]) == contexts.row(i)) {
            Some(g) => g.push(i),
            None => groups.push(vec![i]),
        }
    }
    groups
}

/// Row-major `G×rank` matrix `F` with `v·F·z` distributed like the centered
/// score vector when `z` is standard normal.
struct ScoreLoadings {
    rows: usize,
    rank: usize,
    data: Vec<f64>,
}

impl ScoreLoadings {
    fn zero(rows: usize) -> Self {
        Self {
            rows,
            rank: 0,
            data: Vec::new(),
        }
    }

    fn new(contexts: &ContextSet, reps: &[usize], precision: &SpdMatrix, v: f64) -> Result<Self> {
        let factor = precision.factor()?;
        let d = contexts.dim();
        let g = reps.len();
        // Score deviations are v·w_iᵀz with w_i = L⁻¹b_i and z ~ N(0, I_d).
        let w: Vec<DVector<f64>> = reps
            .iter()
            .map(|&i| factor.solve_lower(&contexts.row_vector(i)))
            .collect();

        if g >= d {
            let mut data = Vec::with_capacity(g * d);
            for wi in &w {
                data.extend(wi.iter().map(|x| v * x));
            }
            return Ok(Self {
                rows: g,
                rank: d,
                data,
            });
        }

        // Fewer scores than dimensions: factor the G×G score covariance WᵀW
        // instead, so each draw needs only rank(WᵀW) normals.
        let mut gram = vec![0.0; g * g];
        for i in 0..g {
            for j in 0..=i {
                let dot = w[i].dot(&w[j]);
                gram[i * g + j] = dot;
                gram[j * g + i] = dot;
            }
        }
        let lower = semidefinite_cholesky(&gram, g);
        let kept: Vec<usize> = (0..g).filter(|&k| lower[k * g + k] > 0.0).collect();
        let rank = kept.len();
        let mut data = Vec::with_capacity(g * rank);
        for i in 0..g {
            data.extend(kept.iter().map(|&k| v * lower[i * g + k]));
        }
        Ok(Self {
            rows: g,
            rank,
            data,
        })
    }

    #[inline]
    fn scores_into(&self, centers: &[f64], z: &[f64], out: &mut [f64]) {
        for i in 0..self.rows {
            let row = &self.data[i * self.rank..(i + 1) * self.rank];
            out[i] = centers[i] + row.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

/// Lower-triangular `L` (row-major, `n×n`) with `L·Lᵀ = a` for a PSD `a`.
/// Columns whose pivot falls below the tolerance are zeroed; for a PSD matrix
/// the remaining Schur complement column is then zero as well.
fn semidefinite_cholesky(a: &[f64], n: usize) -> Vec<f64> {
    let max_diag = (0..n).map(|i| a[i * n + i]).fold(0.0, f64::max);
    let tol = 1e-12 * max_diag.max(f64::MIN_POSITIVE);
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut pivot = a[j * n + j];
        for k in 0..j {
            pivot -= l[j * n + k] * l[j * n + k];
        }
        if pivot <= tol {
            continue;
        }
        let root = pivot.sqrt();
        l[j * n + j] = root;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / root;
        }
    }
    l
}
