//! Leapfrog integration of `dθ/dt = p`, `dp/dt = ∂l(θ)`.

use serde::{Deserialize, Serialize};

use crate::model::TargetModel;
use crate::{Error, Result, Vector};

/// Step size `ε` and step count `L`; the trajectory time is `δ = εL`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeapfrogConfig {
    step_size: f64,
    steps: usize,
    duration: f64,
}

impl LeapfrogConfig {
    pub fn new(step_size: f64, steps: usize) -> Result<Self> {
        if !(step_size > 0.0 && step_size.is_finite()) {
            return Err(Error::config("epsilon must be positive"));
        }
        if steps == 0 {
            return Err(Error::config("steps must be at least 1"));
        }
        Ok(LeapfrogConfig {
            step_size,
            steps,
            duration: step_size * steps as f64,
        })
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }
}

/// `½‖p‖² − l(θ)`.
pub fn hamiltonian<T: TargetModel + ?Sized>(target: &T, theta: &Vector, p: &Vector) -> f64 {
    0.5 * p.norm_squared() - target.log_density(theta)
}

/// End point of a leapfrog trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub position: Vector,
    pub momentum: Vector,
    /// `∂l` at `position`; reusable as the start gradient of the next trajectory.
    pub gradient: Vector,
    pub gradient_evals: usize,
    /// A non-finite state was produced; the other fields hold the last state
    /// reached and must not be used as a proposal.
    pub divergent: bool,
}

/// Runs `cfg.steps()` leapfrog steps from `(theta0, p0)`.
///
/// `start_gradient`, when given, must equal `target.gradient(theta0)`; it
/// saves one gradient evaluation. Without it the gradient is evaluated
/// `L + 1` times.
pub fn leapfrog<T: TargetModel + ?Sized>(
    target: &T,
    theta0: &Vector,
    p0: &Vector,
    start_gradient: Option<&Vector>,
    cfg: &LeapfrogConfig,
) -> Trajectory {
    let eps = cfg.step_size();
    let mut evals = 0;
    let mut grad = match start_gradient {
        Some(g) => g.clone(),
        None => {
            evals += 1;
            target.gradient(theta0)
        }
    };
    let mut theta = theta0.clone();
    let mut p = p0 + &grad * (0.5 * eps);
    let mut divergent = !all_finite(&p);

    for step in 1..=cfg.steps() {
        if divergent {
            break;
        }
        theta.axpy(eps, &p, 1.0);
        grad = target.gradient(&theta);
        evals += 1;
        let kick = if step == cfg.steps() { 0.5 * eps } else { eps };
        p.axpy(kick, &grad, 1.0);
        divergent = !(all_finite(&theta) && all_finite(&p));
    }

    Trajectory {
        position: theta,
        momentum: p,
        gradient: grad,
        gradient_evals: evals,
        divergent,
    }
}

fn all_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CountingTarget, GaussianTarget};
    use crate::spectral::{exact_quadratic_flow, QuadraticModel};
    use crate::Matrix;
    use proptest::prelude::*;

    struct Flat(usize);

    impl TargetModel for Flat {
        fn dim(&self) -> usize {
            self.0
        }
        fn log_density(&self, _: &Vector) -> f64 {
            -1.5
        }
        fn gradient(&self, _: &Vector) -> Vector {
            Vector::zeros(self.0)
        }
        fn hessian(&self, _: &Vector) -> Matrix {
            Matrix::zeros(self.0, self.0)
        }
    }

    /// Gradient blows up beyond |θ| > 1.
    struct Cliff;

    impl TargetModel for Cliff {
        fn dim(&self) -> usize {
            1
        }
        fn log_density(&self, t: &Vector) -> f64 {
            -0.5 * t[0] * t[0]
        }
        fn gradient(&self, t: &Vector) -> Vector {
            if t[0].abs() > 1.0 {
                Vector::from_element(1, f64::NAN)
            } else {
                -t.clone()
            }
        }
        fn hessian(&self, _: &Vector) -> Matrix {
            -Matrix::identity(1, 1)
        }
    }

    fn std_normal() -> GaussianTarget {
        GaussianTarget::diagonal(Vector::zeros(1), Vector::from_element(1, 1.0)).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(LeapfrogConfig::new(0.0, 10).is_err());
        assert!(LeapfrogConfig::new(-0.1, 10).is_err());
        assert!(LeapfrogConfig::new(0.1, 0).is_err());
        let cfg = LeapfrogConfig::new(0.2, 10).unwrap();
        assert_eq!(cfg.duration(), 0.2 * 10.0);
    }

    #[test]
    fn zero_momentum_hamiltonian() {
        let t = std_normal();
        let theta = Vector::from_element(1, 0.7);
        assert_eq!(hamiltonian(&t, &theta, &Vector::zeros(1)), -t.log_density(&theta));
        let h = hamiltonian(&t, &Vector::zeros(1), &Vector::from_element(1, 1.0));
        assert!((h - (0.5 + 0.918_938_533_204_672_8)).abs() < 1e-15);
    }

    #[test]
    fn energy_is_constant_along_exact_flow() {
        let t = std_normal();
        let model = QuadraticModel::at(&t, &Vector::zeros(1), 1.0).unwrap();
        let x0 = Vector::from_element(1, 0.8);
        let p0 = Vector::from_element(1, -0.4);
        let h0 = hamiltonian(&t, &x0, &p0);
        for k in 1..=20 {
            let (x, p) = exact_quadratic_flow(&model, &x0, &p0, 0.37 * k as f64);
            assert!((hamiltonian(&t, &x, &p) - h0).abs() < 1e-10);
        }
    }

    #[test]
    fn free_particle() {
        let cfg = LeapfrogConfig::new(0.25, 8).unwrap();
        let theta0 = Vector::from_vec(vec![1.0, -1.0]);
        let p0 = Vector::from_vec(vec![0.5, 2.0]);
        let tr = leapfrog(&Flat(2), &theta0, &p0, None, &cfg);
        assert!((tr.position - (&theta0 + &p0 * 2.0)).amax() < 1e-14);
        assert_eq!(tr.momentum, p0);
    }

    #[test]
    fn harmonic_oscillator_accuracy() {
        let cfg = LeapfrogConfig::new(0.2, 10).unwrap();
        let tr = leapfrog(&std_normal(), &Vector::from_element(1, 1.0), &Vector::zeros(1), None, &cfg);
        assert!((tr.position[0] - 2f64.cos()).abs() < 0.02);
        assert!((tr.momentum[0] + 2f64.sin()).abs() < 0.02);
    }

    #[test]
    fn gradient_evaluation_count() {
        let target = CountingTarget::new(std_normal());
        let cfg = LeapfrogConfig::new(0.1, 7).unwrap();
        let theta0 = Vector::from_element(1, 0.4);
        let tr = leapfrog(&target, &theta0, &Vector::from_element(1, 1.0), None, &cfg);
        assert_eq!(tr.gradient_evals, 8);
        assert_eq!(target.gradient_evals(), 8);
        assert_eq!(target.hessian_evals(), 0);
        let g = target.inner().gradient(&theta0);
        let cached = leapfrog(&target, &theta0, &Vector::from_element(1, 1.0), Some(&g), &cfg);
        assert_eq!(cached.gradient_evals, 7);
        assert_eq!(cached.position, tr.position);
    }

    #[test]
    fn divergence_is_flagged() {
        let cfg = LeapfrogConfig::new(0.5, 10).unwrap();
        let tr = leapfrog(&Cliff, &Vector::zeros(1), &Vector::from_element(1, 3.0), None, &cfg);
        assert!(tr.divergent);
        let ok = leapfrog(&Cliff, &Vector::zeros(1), &Vector::from_element(1, 0.1), None, &cfg);
        assert!(!ok.divergent);
    }

    proptest! {
        #[test]
        fn reversibility(theta in prop::collection::vec(-3.0f64..3.0, 2), p in prop::collection::vec(-3.0f64..3.0, 2)) {
            let target = GaussianTarget::dense(
                Vector::zeros(2),
                Matrix::from_row_slice(2, 2, &[4.0, 1.9, 1.9, 1.0]),
            ).unwrap();
            let cfg = LeapfrogConfig::new(0.1, 15).unwrap();
            let theta0 = Vector::from_vec(theta);
            let p0 = Vector::from_vec(p);
            let fwd = leapfrog(&target, &theta0, &p0, None, &cfg);
            let back = leapfrog(&target, &fwd.position, &(-&fwd.momentum), None, &cfg);
            prop_assert!((back.position - &theta0).amax() <= 1e-10);
            prop_assert!((back.momentum + &p0).amax() <= 1e-10);
        }
    }
}
