//! Matrix functions of the Hessian evaluated through its eigendecomposition.
//!
//! Every matrix function used by the Hessian-corrected sampler (`cosh(H^{1/2}t)`,
//! `H^{-1/2} sinh(H^{1/2}t)` and the momentum-law mean and covariance) has only
//! integer powers of `H` in its Taylor series, so it is real for indefinite `H`
//! and can be evaluated one eigenvalue at a time. Negative eigenvalues give
//! trigonometric branches, positive eigenvalues hyperbolic ones, and
//! eigenvalues with `|λ|t² < 1e-8` use truncated series.
//!
//! Positions in this module are displacements from the expansion point of a
//! [`QuadraticModel`], whose dynamics are `ẋ = p`, `ṗ = Hx + v`.

use std::f64::consts::PI;

use nalgebra::SymmetricEigen;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::TargetModel;
use crate::{Error, Matrix, Result, Vector};

/// Below this value of `|λ|t²` the series branch is used.
const SERIES_THRESHOLD: f64 = 1e-8;

/// Eigendecomposition of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    eigenvalues: Vector,
    eigenvectors: Matrix,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &Vector {
        &self.eigenvalues
    }

    /// Orthonormal eigenvectors, column `i` paired with eigenvalue `i`.
    pub fn eigenvectors(&self) -> &Matrix {
        &self.eigenvectors
    }

    /// `U diag(f(λ)) Uᵀ`.
    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Matrix {
        let scaled = Matrix::from_fn(self.dim(), self.dim(), |i, j| {
            self.eigenvectors[(i, j)] * f(self.eigenvalues[j])
        });
        scaled * self.eigenvectors.transpose()
    }

    /// `U diag(λ) Uᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        self.map(|l| l)
    }

    /// Largest absolute entry of `UᵀU − I`.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.eigenvectors.transpose() * &self.eigenvectors;
        (gram - Matrix::identity(self.dim(), self.dim())).amax()
    }
}

/// Eigendecomposition of the symmetric part `(M + Mᵀ)/2` of a square matrix.
pub fn eigendecompose_sym(m: &Matrix) -> Result<Spectrum> {
    if !m.is_square() {
        return Err(Error::config(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Evaluation("matrix has non-finite entries".into()));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = Vector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let eigenvectors = Matrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
    })
}

/// Per-eigenvalue values of the matrix functions at eigenvalue `λ` and time `δ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralCoefficients {
    /// Scalar form of `cosh(H^{1/2}δ)`.
    pub cosine: f64,
    /// Scalar form of `H^{-1/2} sinh(H^{1/2}δ)`.
    pub sine: f64,
    /// `-c/(λg)`: maps the gradient to the momentum-law mean.
    pub mean_gain: f64,
    /// `-1/(λg²)`: the momentum-law variance along this eigenvector.
    /// Negative for `λ > 0` and infinite at `λ = 0`.
    pub momentum_variance: f64,
}

/// `(c, g, (c − 1)/λ)` at eigenvalue `λ` and time `t`.
fn propagator(lambda: f64, t: f64) -> (f64, f64, f64) {
    let z = lambda * t * t;
    if z.abs() < SERIES_THRESHOLD {
        let c = 1.0 + z / 2.0 + z * z / 24.0;
        let g = t * (1.0 + z / 6.0 + z * z / 120.0);
        let h = t * t * (0.5 + z / 24.0 + z * z / 720.0);
        (c, g, h)
    } else if lambda > 0.0 {
        let s = lambda.sqrt();
        let half = (0.5 * s * t).sinh();
        ((s * t).cosh(), (s * t).sinh() / s, 2.0 * half * half / lambda)
    } else {
        let a = (-lambda).sqrt();
        let half = (0.5 * a * t).sin();
        ((a * t).cos(), (a * t).sin() / a, -2.0 * half * half / lambda)
    }
}

/// Evaluates the scalar branches at one eigenvalue. No regularization is
/// applied: singular values come back non-finite.
pub fn spectral_coefficients(lambda: f64, delta: f64) -> SpectralCoefficients {
    let (cosine, sine, _) = propagator(lambda, delta);
    let z = lambda * delta * delta;
    let (mean_gain, momentum_variance) = if z.abs() < SERIES_THRESHOLD {
        (-cosine / (lambda * sine), -1.0 / (lambda * sine * sine))
    } else if lambda > 0.0 {
        let s = lambda.sqrt();
        let sh = (s * delta).sinh();
        (-cosine / (s * sh), -1.0 / (sh * sh))
    } else {
        let a = (-lambda).sqrt();
        let sn = (a * delta).sin();
        (cosine / (a * sn), 1.0 / (sn * sn))
    };
    SpectralCoefficients {
        cosine,
        sine,
        mean_gain,
        momentum_variance,
    }
}

/// Regularization floors used when building a momentum law.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Floors {
    /// Eigenvalues are clamped to at most `-eigen_floor`.
    pub eigen_floor: f64,
    /// `sin²(√(-λ)δ)` is clamped to at least `sine_floor`.
    pub sine_floor: f64,
}

impl Default for Floors {
    fn default() -> Self {
        Floors {
            eigen_floor: 1e-6,
            sine_floor: 1e-12,
        }
    }
}

impl Floors {
    pub fn validate(&self) -> Result<()> {
        if !(self.eigen_floor > 0.0 && self.eigen_floor.is_finite()) {
            return Err(Error::config("lambda_floor must be positive"));
        }
        if !(self.sine_floor > 0.0 && self.sine_floor < 1.0) {
            return Err(Error::config("sine_floor must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Second-order expansion of a log-density around a point, together with
/// the trajectory time the momentum law is tuned for.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticModel {
    spectrum: Spectrum,
    gradient: Vector,
    duration: f64,
}

impl QuadraticModel {
    pub fn new(spectrum: Spectrum, gradient: Vector, duration: f64) -> Result<Self> {
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::config(format!(
                "trajectory time must be positive, got {duration}"
            )));
        }
        if gradient.len() != spectrum.dim() {
            return Err(Error::config(format!(
                "gradient has length {} but the Hessian is {}x{}",
                gradient.len(),
                spectrum.dim(),
                spectrum.dim()
            )));
        }
        if gradient.iter().any(|x| !x.is_finite()) {
            return Err(Error::Evaluation("gradient has non-finite entries".into()));
        }
        Ok(QuadraticModel {
            spectrum,
            gradient,
            duration,
        })
    }

    pub fn from_derivatives(hessian: &Matrix, gradient: Vector, duration: f64) -> Result<Self> {
        Self::new(eigendecompose_sym(hessian)?, gradient, duration)
    }

    /// Expansion of `target` at `theta`; evaluates one gradient and one Hessian.
    pub fn at<T: TargetModel + ?Sized>(target: &T, theta: &Vector, duration: f64) -> Result<Self> {
        Self::from_derivatives(&target.hessian(theta), target.gradient(theta), duration)
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    pub fn gradient(&self) -> &Vector {
        &self.gradient
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn dim(&self) -> usize {
        self.spectrum.dim()
    }

    pub fn hessian(&self) -> Matrix {
        self.spectrum.reconstruct()
    }
}

/// Gaussian momentum law `N(q, Q)` with `Q` held in spectral form.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumLaw {
    mean: Vector,
    eigenvectors: Matrix,
    variances: Vector,
    log_det: f64,
    eigen_clamps: usize,
    resonance_clamps: usize,
}

impl MomentumLaw {
    /// `N(0, I)`, the standard HMC refresh.
    pub fn standard(dim: usize) -> Self {
        MomentumLaw {
            mean: Vector::zeros(dim),
            eigenvectors: Matrix::identity(dim, dim),
            variances: Vector::from_element(dim, 1.0),
            log_det: 0.0,
            eigen_clamps: 0,
            resonance_clamps: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    pub fn eigenvectors(&self) -> &Matrix {
        &self.eigenvectors
    }

    /// Eigenvalues of `Q`, all positive.
    pub fn variances(&self) -> &Vector {
        &self.variances
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Eigenvalues that were raised to `-eigen_floor`.
    pub fn eigen_clamps(&self) -> usize {
        self.eigen_clamps
    }

    /// Eigen-directions whose `sin²` hit the resonance floor.
    pub fn resonance_clamps(&self) -> usize {
        self.resonance_clamps
    }

    pub fn clamp_events(&self) -> usize {
        self.eigen_clamps + self.resonance_clamps
    }

    /// Dense `Q`.
    pub fn covariance(&self) -> Matrix {
        let n = self.dim();
        let scaled = Matrix::from_fn(n, n, |i, j| self.eigenvectors[(i, j)] * self.variances[j]);
        scaled * self.eigenvectors.transpose()
    }

    /// Draws `q + U diag(√Q) z` with `z ~ N(0, I)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        let z = Vector::from_fn(self.dim(), |i, _| {
            self.variances[i].sqrt() * rng.sample::<f64, _>(StandardNormal)
        });
        &self.mean + &self.eigenvectors * z
    }

    /// `ln N(p | q, Q)`.
    pub fn log_density(&self, p: &Vector) -> f64 {
        let rotated = self.eigenvectors.tr_mul(&(p - &self.mean));
        let quad: f64 = rotated
            .iter()
            .zip(self.variances.iter())
            .map(|(y, v)| y * y / v)
            .sum();
        -0.5 * (self.dim() as f64 * (2.0 * PI).ln() + self.log_det + quad)
    }
}

/// Momentum law whose exact quadratic-model flow over `model.duration()`
/// reproduces the quadratic approximation of the target as the marginal of
/// the proposed position.
///
/// Each eigenvalue is first clamped to `min(λ, -eigen_floor)`; near
/// resonance `sin²(√(-λ)δ)` is floored at `sine_floor`.
pub fn momentum_law(model: &QuadraticModel, floors: Floors) -> MomentumLaw {
    let n = model.dim();
    let delta = model.duration();
    let mut gains = Vector::zeros(n);
    let mut variances = Vector::zeros(n);
    let mut eigen_clamps = 0;
    let mut resonance_clamps = 0;
    for (i, &lambda) in model.spectrum().eigenvalues().iter().enumerate() {
        let clamped = lambda.min(-floors.eigen_floor);
        if clamped != lambda {
            eigen_clamps += 1;
        }
        let coef = spectral_coefficients(clamped, delta);
        let sin2 = -clamped * coef.sine * coef.sine;
        if sin2 < floors.sine_floor {
            resonance_clamps += 1;
            let sine = coef.sine.signum() * (floors.sine_floor / -clamped).sqrt();
            gains[i] = -coef.cosine / (clamped * sine);
            variances[i] = 1.0 / floors.sine_floor;
        } else {
            gains[i] = coef.mean_gain;
            variances[i] = coef.momentum_variance;
        }
    }
    let u = model.spectrum().eigenvectors();
    let mean = u * u.tr_mul(model.gradient()).component_mul(&gains);
    MomentumLaw {
        mean,
        eigenvectors: u.clone(),
        log_det: variances.iter().map(|v| v.ln()).sum(),
        variances,
        eigen_clamps,
        resonance_clamps,
    }
}

/// Exact solution of `ẋ = p`, `ṗ = Hx + v` at time `t`, starting from
/// `(x0, p0)`.
///
/// Uses the raw eigenvalues of `H`; the offset term `(C − I)H⁻¹v` is
/// evaluated as a regular function of `λ`, so singular `H` is fine.
pub fn exact_quadratic_flow(
    model: &QuadraticModel,
    x0: &Vector,
    p0: &Vector,
    t: f64,
) -> (Vector, Vector) {
    if t == 0.0 {
        return (x0.clone(), p0.clone());
    }
    let u = model.spectrum().eigenvectors();
    let y0 = u.tr_mul(x0);
    let r0 = u.tr_mul(p0);
    let w = u.tr_mul(model.gradient());
    let mut y = Vector::zeros(model.dim());
    let mut r = Vector::zeros(model.dim());
    for (i, &lambda) in model.spectrum().eigenvalues().iter().enumerate() {
        let (c, g, h) = propagator(lambda, t);
        y[i] = c * y0[i] + g * r0[i] + h * w[i];
        r[i] = lambda * g * y0[i] + c * r0[i] + g * w[i];
    }
    (u * y, u * r)
}

/// State-transition matrix `Φ(t) = [[C, G], [HG, C]]` of the linear part
/// of the quadratic-model dynamics.
pub fn flow_matrix(model: &QuadraticModel, t: f64) -> Matrix {
    let n = model.dim();
    let spectrum = model.spectrum();
    let c = spectrum.map(|l| propagator(l, t).0);
    let g = spectrum.map(|l| propagator(l, t).1);
    let hg = spectrum.map(|l| l * propagator(l, t).1);
    let mut phi = Matrix::zeros(2 * n, 2 * n);
    phi.view_mut((0, 0), (n, n)).copy_from(&c);
    phi.view_mut((0, n), (n, n)).copy_from(&g);
    phi.view_mut((n, 0), (n, n)).copy_from(&hg);
    phi.view_mut((n, n), (n, n)).copy_from(&c);
    phi
}

/// Mean and covariance of the position reached from `x0 = 0` after
/// `model.duration()` when the initial momentum is drawn from `law`.
pub fn proposal_position_moments(model: &QuadraticModel, law: &MomentumLaw) -> (Vector, Matrix) {
    let n = model.dim();
    let t = model.duration();
    let (mean, _) = exact_quadratic_flow(model, &Vector::zeros(n), law.mean(), t);
    let g = model.spectrum().map(|l| propagator(l, t).1);
    let cov = &g * law.covariance() * &g;
    (mean, (&cov + cov.transpose()) * 0.5)
}

/// Mode `-H⁻¹v` and covariance `-H⁻¹` of the Gaussian defined by the
/// quadratic model, or `None` when `H` is not negative definite.
pub fn quadratic_target_moments(model: &QuadraticModel) -> Option<(Vector, Matrix)> {
    let spectrum = model.spectrum();
    if spectrum.eigenvalues().iter().any(|l| *l >= 0.0) {
        return None;
    }
    let cov = spectrum.map(|l| -1.0 / l);
    let mode = &cov * model.gradient();
    Some((mode, cov))
}

/// Gaussian state `(m, S)` over the stacked vector `(x, p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentState {
    pub mean: Vector,
    pub cov: Matrix,
}

impl MomentState {
    /// Position fixed at `x0`, momentum distributed as `law`.
    pub fn from_law(x0: &Vector, law: &MomentumLaw) -> Self {
        let n = law.dim();
        let mut mean = Vector::zeros(2 * n);
        mean.rows_mut(0, n).copy_from(x0);
        mean.rows_mut(n, n).copy_from(law.mean());
        let mut cov = Matrix::zeros(2 * n, 2 * n);
        cov.view_mut((n, n), (n, n)).copy_from(&law.covariance());
        MomentState { mean, cov }
    }

    pub fn position_mean(&self) -> Vector {
        self.mean.rows(0, self.mean.len() / 2).into_owned()
    }

    pub fn position_cov(&self) -> Matrix {
        let n = self.mean.len() / 2;
        self.cov.view((0, 0), (n, n)).into_owned()
    }
}

/// Closed-form push-forward of a Gaussian state through the quadratic-model
/// flow for time `t`.
pub fn pushforward_moments(model: &QuadraticModel, init: &MomentState, t: f64) -> MomentState {
    let n = model.dim();
    let x0 = init.mean.rows(0, n).into_owned();
    let p0 = init.mean.rows(n, n).into_owned();
    let (x, p) = exact_quadratic_flow(model, &x0, &p0, t);
    let mut mean = Vector::zeros(2 * n);
    mean.rows_mut(0, n).copy_from(&x);
    mean.rows_mut(n, n).copy_from(&p);
    let phi = flow_matrix(model, t);
    let cov = &phi * &init.cov * phi.transpose();
    MomentState {
        mean,
        cov: (&cov + cov.transpose()) * 0.5,
    }
}

/// Classical RK4 integration of `ṁ = Am + b`, `Ṡ = AS + SAᵀ` over `[0, t]`.
pub fn integrate_linear_moments(
    a: &Matrix,
    b: &Vector,
    init: &MomentState,
    t: f64,
    nsteps: usize,
) -> Result<MomentState> {
    if nsteps == 0 {
        return Err(Error::config("nsteps must be at least 1"));
    }
    let n = init.mean.len();
    if a.shape() != (n, n) || b.len() != n || init.cov.shape() != (n, n) {
        return Err(Error::config("moment ODE operands have inconsistent shapes"));
    }
    let dt = t / nsteps as f64;
    let dm = |m: &Vector| a * m + b;
    let ds = |s: &Matrix| {
        let as_ = a * s;
        &as_ + as_.transpose()
    };
    let mut m = init.mean.clone();
    let mut s = init.cov.clone();
    for _ in 0..nsteps {
        let k1 = dm(&m);
        let k2 = dm(&(&m + &k1 * (dt / 2.0)));
        let k3 = dm(&(&m + &k2 * (dt / 2.0)));
        let k4 = dm(&(&m + &k3 * dt));
        let l1 = ds(&s);
        let l2 = ds(&(&s + &l1 * (dt / 2.0)));
        let l3 = ds(&(&s + &l2 * (dt / 2.0)));
        let l4 = ds(&(&s + &l3 * dt));
        m += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        s += (l1 + l2 * 2.0 + l3 * 2.0 + l4) * (dt / 6.0);
    }
    Ok(MomentState { mean: m, cov: s })
}

/// RK4 integration of the moment equations of the quadratic-model dynamics,
/// `A = [[0, I], [H, 0]]`, `b = (0, v)`.
pub fn integrate_moment_ode(
    model: &QuadraticModel,
    init: &MomentState,
    t: f64,
    nsteps: usize,
) -> Result<MomentState> {
    let n = model.dim();
    let mut a = Matrix::zeros(2 * n, 2 * n);
    a.view_mut((0, n), (n, n)).fill_with_identity();
    a.view_mut((n, 0), (n, n)).copy_from(&model.hessian());
    let mut b = Vector::zeros(2 * n);
    b.rows_mut(n, n).copy_from(model.gradient());
    integrate_linear_moments(&a, &b, init, t, nsteps)
}
