//! Dense SPD matrix maintenance and Gaussian sampling.
//!
//! Every precision matrix in the crate starts as `c·I` and only grows through
//! nonnegative rank-one additions, so it stays well conditioned (eigenvalues
//! never drop below `c`). The Cholesky factor is cached and recomputed in full
//! by [`SpdMatrix::refresh`] after each batch of updates.

use std::borrow::Cow;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;

/// Lower-triangular Cholesky factor `L` with `L·Lᵀ = A`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    inner: Cholesky<f64, Dyn>,
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.inner.l_dirty().nrows()
    }

    /// The factor with its upper triangle zeroed.
    pub fn lower(&self) -> DMatrix<f64> {
        self.inner.l()
    }

    /// Solves `A·x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.inner.solve(b)
    }

    /// Solves `L·x = b`.
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        self.inner
            .l_dirty()
            .solve_lower_triangular(b)
            .expect("cholesky factor has a positive diagonal")
    }

    /// Solves `Lᵀ·x = b`.
    pub fn solve_lower_transpose(&self, b: &DVector<f64>) -> DVector<f64> {
        self.inner
            .l_dirty()
            .tr_solve_lower_triangular(b)
            .expect("cholesky factor has a positive diagonal")
    }

    pub fn log_det(&self) -> f64 {
        let l = self.inner.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }
}

/// Symmetric positive definite matrix with a lazily refreshed Cholesky factor.
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    entries: DMatrix<f64>,
    chol: Option<CholeskyFactor>,
}

impl SpdMatrix {
    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        let entries = DMatrix::identity(dim, dim) * scale;
        let mut m = Self {
            entries,
            chol: None,
        };
        // c·I with c > 0 always factors; anything else surfaces at first use.
        let _ = m.refresh();
        m
    }

    /// Wraps a dense matrix after checking symmetry and positive definiteness.
    pub fn from_dense(entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::DimensionMismatch {
                expected: entries.nrows(),
                actual: entries.ncols(),
            });
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entries"));
        }
        let scale = entries.amax().max(1.0);
        let n = entries.nrows();
        for i in 0..n {
            for j in 0..i {
                if (entries[(i, j)] - entries[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::NotSymmetric);
                }
            }
        }
        let mut m = Self {
            entries,
            chol: None,
        };
        m.refresh()?;
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    /// `self ← self + w·x·xᵀ`. Invalidates the cached factor.
    pub fn rank_one_add(&mut self, x: &DVector<f64>, w: f64) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        if !(w >= 0.0 && w.is_finite()) {
            return Err(Error::config(format!(
                "rank-one weight must be finite and nonnegative, got {w}"
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rank-one vector"));
        }
        if w == 0.0 {
            return Ok(());
        }
        let n = self.dim();
        // Write both triangles from one product so symmetry is exact.
        for j in 0..n {
            let wx = w * x[j];
            for i in j..n {
                let delta = wx * x[i];
                self.entries[(i, j)] += delta;
                if i != j {
                    self.entries[(j, i)] += delta;
                }
            }
        }
        self.chol = None;
        Ok(())
    }

    /// Recomputes the cached Cholesky factor.
    pub fn refresh(&mut self) -> Result<()> {
        let chol = Cholesky::new(self.entries.clone()).ok_or(Error::NotPositiveDefinite)?;
        self.chol = Some(CholeskyFactor { inner: chol });
        Ok(())
    }

    pub fn is_factored(&self) -> bool {
        self.chol.is_some()
    }

    /// Cached factor when fresh, otherwise a newly computed one.
    pub fn factor(&self) -> Result<Cow<'_, CholeskyFactor>> {
        match &self.chol {
            Some(f) => Ok(Cow::Borrowed(f)),
            None => Cholesky::new(self.entries.clone())
                .map(|inner| Cow::Owned(CholeskyFactor { inner }))
                .ok_or(Error::NotPositiveDefinite),
        }
    }

    pub fn log_det(&self) -> Result<f64> {
        Ok(self.factor()?.log_det())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.entries.clone())
            .eigenvalues
            .min()
    }

    fn check_vec(&self, x: &DVector<f64>, what: &'static str) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(what));
        }
        Ok(())
    }

    /// Solves `self·x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_vec(b, "right-hand side")?;
        Ok(self.factor()?.solve(b))
    }

    /// `√(xᵀ·self⁻¹·x)`.
    pub fn mahalanobis_width(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_vec(x, "width vector")?;
        Ok(self.factor()?.solve_lower(x).norm())
    }
}

/// Free-function form of [`SpdMatrix::solve`].
pub fn solve_spd(m: &SpdMatrix, b: &DVector<f64>) -> Result<DVector<f64>> {
    m.solve(b)
}

/// Free-function form of [`SpdMatrix::mahalanobis_width`].
pub fn mahalanobis_width(m: &SpdMatrix, x: &DVector<f64>) -> Result<f64> {
    m.mahalanobis_width(x)
}

/// Draws from `N(mean, scale²·precision⁻¹)`. A zero scale returns `mean` exactly.
pub fn sample_posterior<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    precision: &SpdMatrix,
    scale: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if mean.len() != precision.dim() {
        return Err(Error::DimensionMismatch {
            expected: precision.dim(),
            actual: mean.len(),
        });
    }
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(Error::config(format!(
            "posterior scale must be finite and nonnegative, got {scale}"
        )));
    }
    if scale == 0.0 {
        return Ok(mean.clone());
    }
    let z = standard_normal_vector(mean.len(), rng);
    let dev = precision.factor()?.solve_lower_transpose(&z);
    Ok(mean + dev * scale)
}

pub fn standard_normal_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample(StandardNormal))
}

/// Uniform draw from the unit sphere in `dim` dimensions.
pub fn sample_unit_sphere<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<DVector<f64>> {
    if dim == 0 {
        return Err(Error::config("unit sphere dimension must be at least 1"));
    }
    loop {
        let z = standard_normal_vector(dim, rng);
        let norm = z.norm();
        if norm > 0.0 && norm.is_finite() {
            return Ok(z / norm);
        }
    }
}

/// Standard normal CDF.
pub fn gaussian_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;
    use nalgebra::dvector;
    use proptest::prelude::*;
    use rand::SeedableRng;

    use crate::SimRng;

    fn diag(values: &[f64]) -> SpdMatrix {
        SpdMatrix::from_dense(DMatrix::from_diagonal(&DVector::from_column_slice(values))).unwrap()
    }

    #[test]
    fn rank_one_add_examples() {
        let mut m = SpdMatrix::identity(2);
        m.rank_one_add(&dvector![1.0, 0.0], 1.0).unwrap();
        assert_eq!(m.as_matrix(), &dmatrix![2.0, 0.0; 0.0, 1.0]);

        let mut m = SpdMatrix::identity(2);
        m.rank_one_add(&dvector![0.0, 0.0], 1.0).unwrap();
        assert_eq!(m.as_matrix(), &DMatrix::<f64>::identity(2, 2));

        let mut m = diag(&[2.0, 1.0]);
        m.rank_one_add(&dvector![1.0, 1.0], 0.5).unwrap();
        assert_eq!(m.as_matrix(), &dmatrix![2.5, 0.5; 0.5, 1.5]);
        assert!(!m.is_factored());
    }

    #[test]
    fn rank_one_add_rejects_bad_input() {
        let mut m = SpdMatrix::identity(2);
        assert!(matches!(
            m.rank_one_add(&dvector![1.0, 0.0, 0.0], 1.0),
            Err(Error::DimensionMismatch { expected: 2, actual: 3 })
        ));
        assert!(m.rank_one_add(&dvector![1.0, 0.0], -1.0).is_err());
        assert!(m.rank_one_add(&dvector![f64::NAN, 0.0], 1.0).is_err());
    }

    #[test]
    fn solve_examples() {
        let b = dvector![0.3, -1.2, 4.0];
        assert_eq!(SpdMatrix::identity(3).solve(&b).unwrap(), b);

        let x = diag(&[2.0, 4.0]).solve(&dvector![2.0, 4.0]).unwrap();
        assert_abs_diff_eq!(x, dvector![1.0, 1.0], epsilon = 1e-15);

        let mut m = SpdMatrix::identity(2);
        m.rank_one_add(&dvector![1.0, 0.0], 1.0).unwrap();
        let x = m.solve(&dvector![1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(x, dvector![0.5, 0.0], epsilon = 1e-15);
    }

    #[test]
    fn solve_rejects_non_finite() {
        let m = SpdMatrix::identity(2);
        assert!(matches!(
            m.solve(&dvector![f64::INFINITY, 0.0]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn from_dense_validates() {
        assert!(matches!(
            SpdMatrix::from_dense(dmatrix![1.0, 0.5; 0.0, 1.0]),
            Err(Error::NotSymmetric)
        ));
        assert!(matches!(
            SpdMatrix::from_dense(dmatrix![1.0, 2.0; 2.0, 1.0]),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn width_examples() {
        let x = dvector![3.0, 4.0];
        assert_abs_diff_eq!(
            SpdMatrix::identity(2).mahalanobis_width(&x).unwrap(),
            5.0,
            epsilon = 1e-14
        );
        assert_eq!(diag(&[3.0, 7.0]).mahalanobis_width(&dvector![0.0, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            diag(&[4.0, 1.0]).mahalanobis_width(&dvector![1.0, 0.0]).unwrap(),
            0.5,
            epsilon = 1e-15
        );
        assert!(SpdMatrix::identity(2).mahalanobis_width(&dvector![1.0]).is_err());
    }

    #[test]
    fn zero_scale_posterior_is_mean() {
        let mut rng = SimRng::seed_from_u64(1);
        let mean = dvector![0.2, -0.7];
        let draw = sample_posterior(&mean, &diag(&[4.0, 1.0]), 0.0, &mut rng).unwrap();
        assert_eq!(draw, mean);
    }

    fn sample_moments(precision: &SpdMatrix, scale: f64, draws: usize, seed: u64) -> (DVector<f64>, DMatrix<f64>) {
        let d = precision.dim();
        let mut rng = SimRng::seed_from_u64(seed);
        let mean = DVector::zeros(d);
        let mut sum = DVector::zeros(d);
        let mut sum_sq = DMatrix::zeros(d, d);
        for _ in 0..draws {
            let x = sample_posterior(&mean, precision, scale, &mut rng).unwrap();
            sum += &x;
            sum_sq += &x * x.transpose();
        }
        let n = draws as f64;
        let m = sum / n;
        let cov = sum_sq / n - &m * m.transpose();
        (m, cov)
    }

    #[test]
    fn posterior_covariance_identity_precision() {
        let v = 0.7;
        let (_, cov) = sample_moments(&SpdMatrix::identity(3), v, 100_000, 11);
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { v * v } else { 0.0 };
                assert!(
                    (cov[(i, j)] - target).abs() <= 0.02 * v * v,
                    "cov[{i},{j}] = {}",
                    cov[(i, j)]
                );
            }
        }
    }

    #[test]
    fn posterior_marginal_variances_diagonal_precision() {
        let (_, cov) = sample_moments(&diag(&[4.0, 1.0]), 1.0, 100_000, 12);
        assert!((cov[(0, 0)] - 0.25).abs() <= 0.02 * 0.25);
        assert!((cov[(1, 1)] - 1.0).abs() <= 0.02);
    }

    #[test]
    fn posterior_mean_within_four_standard_errors() {
        let mut precision = SpdMatrix::identity(3);
        precision.rank_one_add(&dvector![0.6, -0.3, 0.5], 3.0).unwrap();
        precision.refresh().unwrap();
        let mean = dvector![0.4, -1.1, 2.0];
        let scale = 0.8;
        let mut rng = SimRng::seed_from_u64(13);
        let draws = 100_000;
        let mut sum = DVector::zeros(3);
        for _ in 0..draws {
            sum += sample_posterior(&mean, &precision, scale, &mut rng).unwrap();
        }
        let empirical = sum / draws as f64;
        let cov = precision.as_matrix().clone().try_inverse().unwrap() * (scale * scale);
        for i in 0..3 {
            let se = (cov[(i, i)] / draws as f64).sqrt();
            assert!((empirical[i] - mean[i]).abs() <= 4.0 * se);
        }
    }

    #[test]
    fn unit_sphere_examples() {
        let mut rng = SimRng::seed_from_u64(5);
        for _ in 0..100 {
            let x = sample_unit_sphere(1, &mut rng).unwrap();
            assert!(x[0] == 1.0 || x[0] == -1.0);
        }
        for dim in 2..12 {
            let x = sample_unit_sphere(dim, &mut rng).unwrap();
            assert!((x.norm() - 1.0).abs() <= 1e-12);
        }
        assert!(sample_unit_sphere(0, &mut rng).is_err());
    }

    #[test]
    fn unit_sphere_coordinates_centered() {
        let mut rng = SimRng::seed_from_u64(6);
        let draws = 100_000;
        let mut sum = DVector::zeros(5);
        for _ in 0..draws {
            sum += sample_unit_sphere(5, &mut rng).unwrap();
        }
        let mean = sum / draws as f64;
        assert!(mean.amax() <= 0.02);
    }

    /// Independent reference: Taylor series for small |z|, Lentz continued
    /// fraction for the upper tail.
    fn reference_cdf(z: f64) -> f64 {
        fn upper_tail(x: f64) -> f64 {
            // Q(x) = φ(x) / (x + 1/(x + 2/(x + 3/(x + ...))))
            let mut f = x;
            let tiny = 1e-300;
            let mut c = x;
            let mut d = 0.0;
            for k in 1..500 {
                let a = k as f64;
                d = x + a * d;
                d = if d.abs() < tiny { tiny } else { d };
                c = x + a / c;
                c = if c.abs() < tiny { tiny } else { c };
                d = 1.0 / d;
                let delta = c * d;
                f *= delta;
                if (delta - 1.0).abs() < 1e-16 {
                    break;
                }
            }
            let phi = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
            phi / f
        }
        if z.abs() < 3.0 {
            // Φ(z) = 1/2 + φ(z)·Σ z^(2n+1)/(1·3·…·(2n+1))
            let mut term = z;
            let mut sum = z;
            for n in 1..200 {
                term *= z * z / (2 * n + 1) as f64;
                sum += term;
                if term.abs() < 1e-18 {
                    break;
                }
            }
            let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
            0.5 + phi * sum
        } else if z > 0.0 {
            1.0 - upper_tail(z)
        } else {
            upper_tail(-z)
        }
    }

    #[test]
    fn gaussian_cdf_examples() {
        assert_eq!(gaussian_cdf(0.0), 0.5);
        assert_abs_diff_eq!(gaussian_cdf(1.96), 0.9750021048517795, epsilon = 1e-12);
        assert_abs_diff_eq!(reference_cdf(1.96), 0.9750021048517795, epsilon = 1e-12);
        for &z in &[-8.0, -4.5, -3.2, -1.0, -0.1, 0.3, 2.5, 3.7, 6.0] {
            assert_abs_diff_eq!(gaussian_cdf(z), reference_cdf(z), epsilon = 1e-10);
            assert_abs_diff_eq!(gaussian_cdf(z), 1.0 - gaussian_cdf(-z), epsilon = 1e-15);
        }
    }

    fn arb_updates(d: usize) -> impl Strategy<Value = Vec<(Vec<f64>, f64)>> {
        prop::collection::vec(
            (prop::collection::vec(-2.0f64..2.0, d), 0.0f64..3.0),
            0..40,
        )
    }

    proptest! {
        #[test]
        fn rank_one_accumulation_stays_spd(updates in arb_updates(4), rhs in prop::collection::vec(-5.0f64..5.0, 4)) {
            let mut m = SpdMatrix::identity(4);
            for (x, w) in &updates {
                m.rank_one_add(&DVector::from_column_slice(x), *w).unwrap();
            }
            let a = m.as_matrix().clone();
            prop_assert_eq!(&a, &a.transpose());
            prop_assert!(m.min_eigenvalue() >= 1.0 - 1e-9);
            m.refresh().unwrap();

            let l = m.factor().unwrap().lower();
            let rel = (&l * l.transpose() - &a).norm() / a.norm();
            prop_assert!(rel <= 1e-10);

            let b = DVector::from_column_slice(&rhs);
            let x = m.solve(&b).unwrap();
            if b.norm() > 0.0 {
                prop_assert!((a * &x - &b).norm() / b.norm() <= 1e-8);
            }
            let width = m.mahalanobis_width(&b).unwrap();
            let quad = b.dot(&x);
            prop_assert!((width * width - quad).abs() <= 1e-10 * quad.abs().max(1.0));
        }
    }
}
