//! Target densities.
//!
//! Samplers consume a [`TargetModel`]: a log-density with exact gradient and
//! Hessian. [`GaussianTarget`] covers the built-in targets, including the
//! heterogeneous-scale benchmark returned by [`build_neal_target`].

use std::f64::consts::PI;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::Cholesky;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;

use crate::{Error, Matrix, Result, Vector};

/// A differentiable log-density `l(θ) = ln π(θ)`.
///
/// Implementations must return exact derivatives; [`check_derivatives`]
/// compares them against finite differences. Callers are responsible for
/// passing vectors of length [`dim`](TargetModel::dim).
pub trait TargetModel: Send + Sync {
    fn dim(&self) -> usize;

    fn log_density(&self, theta: &Vector) -> f64;

    fn gradient(&self, theta: &Vector) -> Vector;

    fn hessian(&self, theta: &Vector) -> Matrix;
}

impl<T: TargetModel + ?Sized> TargetModel for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_density(&self, theta: &Vector) -> f64 {
        (**self).log_density(theta)
    }
    fn gradient(&self, theta: &Vector) -> Vector {
        (**self).gradient(theta)
    }
    fn hessian(&self, theta: &Vector) -> Matrix {
        (**self).hessian(theta)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Covariance {
    Diagonal(Vector),
    Dense(Matrix),
}

/// Multivariate normal target `N(μ, V)`.
///
/// The precision matrix, a Cholesky factor of `V`, and the log-normalizer are
/// computed once at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTarget {
    mean: Vector,
    covariance: Covariance,
    precision: Covariance,
    chol_factor: Matrix,
    log_normalizer: f64,
}

impl GaussianTarget {
    /// Gaussian with diagonal covariance given by `variances`.
    pub fn diagonal(mean: Vector, variances: Vector) -> Result<Self> {
        if mean.len() != variances.len() {
            return Err(Error::config(format!(
                "mean has length {} but cov_diag has length {}",
                mean.len(),
                variances.len()
            )));
        }
        check_nonempty_finite(&mean, "mean")?;
        if let Some((i, v)) = variances
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::Validation(format!(
                "cov_diag[{i}] = {v} is not a positive finite variance"
            )));
        }
        let dim = mean.len();
        let log_det: f64 = variances.iter().map(|v| v.ln()).sum();
        let chol_factor = Matrix::from_diagonal(&variances.map(f64::sqrt));
        Ok(GaussianTarget {
            mean,
            precision: Covariance::Diagonal(variances.map(|v| 1.0 / v)),
            covariance: Covariance::Diagonal(variances),
            chol_factor,
            log_normalizer: -0.5 * (dim as f64 * (2.0 * PI).ln() + log_det),
        })
    }

    /// Gaussian with a dense symmetric positive definite covariance.
    pub fn dense(mean: Vector, cov: Matrix) -> Result<Self> {
        let dim = mean.len();
        if cov.nrows() != dim || cov.ncols() != dim {
            return Err(Error::config(format!(
                "cov must be {dim}x{dim}, got {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        check_nonempty_finite(&mean, "mean")?;
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("cov has non-finite entries".into()));
        }
        let scale = cov.amax().max(f64::MIN_POSITIVE);
        for i in 0..dim {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::Validation(format!(
                        "cov is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let chol = Cholesky::new(cov.clone())
            .ok_or_else(|| Error::Validation("cov is not positive definite".into()))?;
        let chol_factor = chol.l();
        let log_det = 2.0 * chol_factor.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let mut precision = chol.inverse();
        precision = (&precision + precision.transpose()) * 0.5;
        Ok(GaussianTarget {
            mean,
            covariance: Covariance::Dense(cov),
            precision: Covariance::Dense(precision),
            chol_factor,
            log_normalizer: -0.5 * (dim as f64 * (2.0 * PI).ln() + log_det),
        })
    }

    /// Parses `{"mean": [...], "cov_diag": [...]}` or `{"mean": [...], "cov": [[...]]}`.
    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Doc {
            mean: Vec<f64>,
            cov_diag: Option<Vec<f64>>,
            cov: Option<Vec<Vec<f64>>>,
        }
        let doc: Doc = serde_json::from_str(text)
            .map_err(|e| Error::config(format!("invalid Gaussian target document: {e}")))?;
        let mean = Vector::from_vec(doc.mean);
        match (doc.cov_diag, doc.cov) {
            (Some(diag), None) => Self::diagonal(mean, Vector::from_vec(diag)),
            (None, Some(rows)) => {
                let n = rows.len();
                if let Some(i) = rows.iter().position(|r| r.len() != n) {
                    return Err(Error::config(format!("cov row {i} does not have {n} entries")));
                }
                let cov = Matrix::from_fn(n, n, |i, j| rows[i][j]);
                Self::dense(mean, cov)
            }
            (Some(_), Some(_)) => Err(Error::config(
                "exactly one of `cov_diag` and `cov` must be given, found both",
            )),
            (None, None) => Err(Error::config(
                "exactly one of `cov_diag` and `cov` must be given, found neither",
            )),
        }
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    /// Dense copy of the covariance matrix.
    pub fn covariance(&self) -> Matrix {
        match &self.covariance {
            Covariance::Diagonal(d) => Matrix::from_diagonal(d),
            Covariance::Dense(m) => m.clone(),
        }
    }

    /// Dense copy of the precision matrix `V⁻¹`.
    pub fn precision(&self) -> Matrix {
        match &self.precision {
            Covariance::Diagonal(d) => Matrix::from_diagonal(d),
            Covariance::Dense(m) => m.clone(),
        }
    }

    /// Marginal standard deviations `sqrt(V_ii)`.
    pub fn marginal_stds(&self) -> Vector {
        match &self.covariance {
            Covariance::Diagonal(d) => d.map(f64::sqrt),
            Covariance::Dense(m) => m.diagonal().map(f64::sqrt),
        }
    }

    /// `-½ ln det(2πV)`.
    pub fn log_normalizer(&self) -> f64 {
        self.log_normalizer
    }

    fn apply_precision(&self, x: &Vector) -> Vector {
        match &self.precision {
            Covariance::Diagonal(d) => x.component_mul(d),
            Covariance::Dense(m) => m * x,
        }
    }

    /// Returns `(l, ∂l, H)` at `theta`, checking its length.
    pub fn evaluate(&self, theta: &Vector) -> Result<(f64, Vector, Matrix)> {
        if theta.len() != self.dim() {
            return Err(Error::config(format!(
                "point has dimension {} but the target has dimension {}",
                theta.len(),
                self.dim()
            )));
        }
        let centered = theta - &self.mean;
        let prec_x = self.apply_precision(&centered);
        let l = self.log_normalizer - 0.5 * centered.dot(&prec_x);
        Ok((l, -prec_x, -self.precision()))
    }

    /// Draws one exact sample `μ + L z` with `L Lᵀ = V`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        let z = Vector::from_fn(self.dim(), |_, _| rng.sample(StandardNormal));
        &self.mean + &self.chol_factor * z
    }
}

fn check_nonempty_finite(v: &Vector, name: &str) -> Result<()> {
    if v.is_empty() {
        return Err(Error::config(format!("`{name}` must not be empty")));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::config(format!("`{name}` has non-finite entries")));
    }
    Ok(())
}

impl TargetModel for GaussianTarget {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, theta: &Vector) -> f64 {
        let centered = theta - &self.mean;
        self.log_normalizer - 0.5 * centered.dot(&self.apply_precision(&centered))
    }

    fn gradient(&self, theta: &Vector) -> Vector {
        -self.apply_precision(&(theta - &self.mean))
    }

    fn hessian(&self, _theta: &Vector) -> Matrix {
        -self.precision()
    }
}

/// Standard deviations of the heterogeneous-scale benchmark: 110, 100,
/// 26 evenly spaced values from 16 down to 8 inclusive, then 1.1 and 1.0.
pub fn neal_stds() -> Vec<f64> {
    let mut stds = Vec::with_capacity(30);
    stds.push(110.0);
    stds.push(100.0);
    stds.extend((0..26).map(|i| 16.0 - 8.0 * i as f64 / 25.0));
    stds.push(1.1);
    stds.push(1.0);
    stds
}

/// 30-dimensional zero-mean Gaussian with diagonal covariance whose scales
/// span two orders of magnitude. See [`neal_stds`].
pub fn build_neal_target() -> GaussianTarget {
    let stds = neal_stds();
    let var = Vector::from_iterator(stds.len(), stds.iter().map(|s| s * s));
    GaussianTarget::diagonal(Vector::zeros(stds.len()), var).expect("benchmark target is valid")
}

/// Wraps a target and counts derivative evaluations.
#[derive(Debug, Default)]
pub struct CountingTarget<T> {
    inner: T,
    gradients: AtomicUsize,
    hessians: AtomicUsize,
}

impl<T> CountingTarget<T> {
    pub fn new(inner: T) -> Self {
        CountingTarget {
            inner,
            gradients: AtomicUsize::new(0),
            hessians: AtomicUsize::new(0),
        }
    }

    pub fn gradient_evals(&self) -> usize {
        self.gradients.load(Ordering::Relaxed)
    }

    pub fn hessian_evals(&self) -> usize {
        self.hessians.load(Ordering::Relaxed)
    }

    pub fn inner(&self) -> &T {
        &self.inner
    }
}

impl<T: TargetModel> TargetModel for CountingTarget<T> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn log_density(&self, theta: &Vector) -> f64 {
        self.inner.log_density(theta)
    }
    fn gradient(&self, theta: &Vector) -> Vector {
        self.gradients.fetch_add(1, Ordering::Relaxed);
        self.inner.gradient(theta)
    }
    fn hessian(&self, theta: &Vector) -> Matrix {
        self.hessians.fetch_add(1, Ordering::Relaxed);
        self.inner.hessian(theta)
    }
}

/// Default finite-difference step for [`check_derivatives`].
pub const DEFAULT_FD_STEP: f64 = 1e-5;
pub const GRADIENT_TOLERANCE: f64 = 1e-5;
pub const HESSIAN_TOLERANCE: f64 = 1e-4;

/// Entries smaller than this in magnitude are compared absolutely.
const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// Result of comparing analytic derivatives with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeReport {
    /// Largest relative error over gradient components.
    pub gradient_error: f64,
    /// Component attaining `gradient_error`.
    pub worst_gradient_component: usize,
    /// Largest relative error over Hessian entries.
    pub hessian_error: f64,
    pub worst_hessian_entry: (usize, usize),
    pub passed: bool,
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares the target's gradient and Hessian with central differences at
/// `theta`.
///
/// The gradient is differenced with step `h`, the Hessian (as differences of
/// the gradient) with step `10h`, both scaled by `max(1, |θᵢ|)`.
pub fn check_derivatives<T: TargetModel + ?Sized>(
    target: &T,
    theta: &Vector,
    h: f64,
) -> Result<DerivativeReport> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::config(format!("finite-difference step must be positive, got {h}")));
    }
    let dim = target.dim();
    if theta.len() != dim {
        return Err(Error::config(format!(
            "point has dimension {} but the target has dimension {dim}",
            theta.len()
        )));
    }
    let grad = target.gradient(theta);
    let hess = target.hessian(theta);

    let mut report = DerivativeReport {
        gradient_error: 0.0,
        worst_gradient_component: 0,
        hessian_error: 0.0,
        worst_hessian_entry: (0, 0),
        passed: false,
    };
    let mut probe = theta.clone();
    for i in 0..dim {
        let step = h * theta[i].abs().max(1.0);
        probe[i] = theta[i] + step;
        let up = target.log_density(&probe);
        probe[i] = theta[i] - step;
        let down = target.log_density(&probe);
        probe[i] = theta[i];
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::Evaluation(format!(
                "log-density is not finite near coordinate {i}"
            )));
        }
        let err = relative_error(grad[i], (up - down) / (2.0 * step));
        if err > report.gradient_error {
            report.gradient_error = err;
            report.worst_gradient_component = i;
        }

        let step = 10.0 * h * theta[i].abs().max(1.0);
        probe[i] = theta[i] + step;
        let g_up = target.gradient(&probe);
        probe[i] = theta[i] - step;
        let g_down = target.gradient(&probe);
        probe[i] = theta[i];
        for j in 0..dim {
            let err = relative_error(hess[(j, i)], (g_up[j] - g_down[j]) / (2.0 * step));
            if err > report.hessian_error {
                report.hessian_error = err;
                report.worst_hessian_entry = (j, i);
            }
        }
    }
    report.passed =
        report.gradient_error <= GRADIENT_TOLERANCE && report.hessian_error <= HESSIAN_TOLERANCE;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar(mu: f64, var: f64) -> GaussianTarget {
        GaussianTarget::diagonal(Vector::from_element(1, mu), Vector::from_element(1, var)).unwrap()
    }

    #[test]
    fn scalar_gaussian_derivatives() {
        let t = scalar(0.0, 4.0);
        let (_, g, h) = t.evaluate(&Vector::from_element(1, 2.0)).unwrap();
        assert!((g[0] + 0.5).abs() < 1e-15);
        assert!((h[(0, 0)] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn standard_normal_log_density() {
        let t = scalar(0.0, 1.0);
        let (l, _, _) = t.evaluate(&Vector::from_element(1, 1.0)).unwrap();
        assert!((l - (-1.418_938_533_204_672_7)).abs() < 1e-12);
    }

    #[test]
    fn mode_has_zero_gradient_and_maximal_density() {
        let t = GaussianTarget::dense(
            Vector::from_vec(vec![1.0, -2.0]),
            Matrix::from_row_slice(2, 2, &[4.0, 1.9, 1.9, 1.0]),
        )
        .unwrap();
        let (l_mode, g, _) = t.evaluate(t.mean()).unwrap();
        assert_eq!(g.amax(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x = t.sample(&mut rng);
            assert!(t.log_density(&x) < l_mode);
        }
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let t = build_neal_target();
        let err = t.evaluate(&Vector::zeros(3)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn neal_layout() {
        let stds = build_neal_target().marginal_stds();
        assert_eq!(stds.len(), 30);
        assert_eq!(stds[0], 110.0);
        assert_eq!(stds[1], 100.0);
        assert_eq!(stds[2], 16.0);
        assert_eq!(stds[27], 8.0);
        assert_eq!(stds[28], 1.1);
        assert_eq!(stds[29], 1.0);
        for i in 2..27 {
            assert!((stds[i] - stds[i + 1] - 0.32).abs() < 1e-12);
        }
        assert_eq!(build_neal_target(), build_neal_target());
    }

    #[test]
    fn density_differences_do_not_depend_on_normalizer() {
        let t = build_neal_target();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let prec = t.precision();
        for _ in 0..20 {
            let a = t.sample(&mut rng);
            let b = t.sample(&mut rng);
            let direct = t.log_density(&a) - t.log_density(&b);
            let quad = -0.5 * ((a.transpose() * &prec * &a)[0] - (b.transpose() * &prec * &b)[0]);
            assert!((direct - quad).abs() <= 1e-12 * quad.abs().max(1.0));
        }
    }

    #[test]
    fn builtin_targets_pass_derivative_check() {
        let targets = [
            build_neal_target(),
            GaussianTarget::dense(
                Vector::zeros(2),
                Matrix::from_row_slice(2, 2, &[4.0, 1.9, 1.9, 1.0]),
            )
            .unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for t in &targets {
            let stds = t.marginal_stds();
            for _ in 0..20 {
                let theta = Vector::from_fn(t.dim(), |i, _| {
                    t.mean()[i] + stds[i] * rng.random_range(-3.0..3.0)
                });
                let report = check_derivatives(t, &theta, DEFAULT_FD_STEP).unwrap();
                assert!(report.passed, "{report:?}");
            }
        }
    }

    struct Corrupted(GaussianTarget);

    impl TargetModel for Corrupted {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn log_density(&self, theta: &Vector) -> f64 {
            self.0.log_density(theta)
        }
        fn gradient(&self, theta: &Vector) -> Vector {
            let mut g = self.0.gradient(theta);
            g[1] *= 2.0;
            g
        }
        fn hessian(&self, theta: &Vector) -> Matrix {
            self.0.hessian(theta)
        }
    }

    #[test]
    fn corrupted_gradient_fails() {
        let t = Corrupted(
            GaussianTarget::diagonal(Vector::zeros(3), Vector::from_vec(vec![1.0, 2.0, 3.0]))
                .unwrap(),
        );
        let report = check_derivatives(&t, &Vector::from_vec(vec![0.3, -1.2, 0.7]), 1e-5).unwrap();
        assert!(!report.passed);
        assert_eq!(report.worst_gradient_component, 1);
        assert!(report.gradient_error >= 0.5);
    }

    #[test]
    fn zero_step_is_rejected() {
        let t = scalar(0.0, 1.0);
        let err = check_derivatives(&t, &Vector::zeros(1), 0.0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn json_documents() {
        let t = GaussianTarget::from_json(r#"{"mean":[0,1],"cov_diag":[1,4]}"#).unwrap();
        assert_eq!(t.marginal_stds(), Vector::from_vec(vec![1.0, 2.0]));
        let t = GaussianTarget::from_json(r#"{"mean":[0,0],"cov":[[4,1.9],[1.9,1]]}"#).unwrap();
        assert_eq!(t.dim(), 2);

        let both = r#"{"mean":[0],"cov":[[1]],"cov_diag":[1]}"#;
        assert!(matches!(GaussianTarget::from_json(both), Err(Error::Config(_))));
        assert!(matches!(GaussianTarget::from_json(r#"{"mean":[0]}"#), Err(Error::Config(_))));
        assert!(matches!(GaussianTarget::from_json("{not json"), Err(Error::Config(_))));

        let not_spd = r#"{"mean":[0,0],"cov":[[1,2],[2,1]]}"#;
        assert!(matches!(GaussianTarget::from_json(not_spd), Err(Error::Validation(_))));
        let negative = r#"{"mean":[0],"cov_diag":[-1]}"#;
        assert!(matches!(GaussianTarget::from_json(negative), Err(Error::Validation(_))));
    }
}
