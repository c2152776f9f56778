//! HMC and Hessian-corrected HMC transition kernels, and the chain runner.
//!
//! Both kernels refresh the momentum completely at every iteration, simulate
//! a leapfrog trajectory, and apply a Metropolis–Hastings correction on the
//! extended `(θ, p)` space with momentum negation. For HMC the momentum law
//! is `N(0, I)` everywhere and the correction reduces to the usual energy
//! difference. For HHMC the law depends on position, so the correction uses
//! the momentum densities at both trajectory endpoints.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{summarize, RunSummary};
use crate::integrator::{leapfrog, LeapfrogConfig};
use crate::model::TargetModel;
use crate::spectral::{momentum_law, Floors, MomentumLaw, QuadraticModel};
use crate::{Error, Matrix, Result, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Hmc,
    Hhmc,
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hmc" => Ok(SamplerKind::Hmc),
            "hhmc" => Ok(SamplerKind::Hhmc),
            other => Err(Error::config(format!("unknown sampler '{other}'"))),
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplerKind::Hmc => "hmc",
            SamplerKind::Hhmc => "hhmc",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub leapfrog: LeapfrogConfig,
    pub floors: Floors,
    /// Recorded iterations.
    pub iterations: usize,
    /// Iterations run and discarded before recording starts.
    pub burn_in: usize,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn new(kind: SamplerKind, leapfrog: LeapfrogConfig, iterations: usize, seed: u64) -> Self {
        SamplerConfig {
            kind,
            leapfrog,
            floors: Floors::default(),
            iterations,
            burn_in: 0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("iterations must be at least 1"));
        }
        self.floors.validate()
    }
}

/// Current position of a chain with cached evaluations at that position.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub position: Vector,
    pub log_density: f64,
    pub gradient: Vector,
    /// Momentum law at `position`; `None` for HMC.
    pub law: Option<MomentumLaw>,
    pub iteration: usize,
    pub accepts: usize,
    pub clamp_events: usize,
    pub divergences: usize,
}

impl ChainState {
    /// Evaluates the target at `theta`, plus the Hessian when `kind` is HHMC.
    pub fn new<T: TargetModel + ?Sized>(
        target: &T,
        theta: Vector,
        kind: SamplerKind,
        leapfrog: &LeapfrogConfig,
        floors: Floors,
    ) -> Result<Self> {
        if theta.len() != target.dim() {
            return Err(Error::config(format!(
                "initial point has dimension {} but the target has dimension {}",
                theta.len(),
                target.dim()
            )));
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::config("initial point has non-finite entries"));
        }
        let log_density = target.log_density(&theta);
        if !log_density.is_finite() {
            return Err(Error::Evaluation("log-density is not finite at the initial point".into()));
        }
        let gradient = target.gradient(&theta);
        let law = match kind {
            SamplerKind::Hmc => None,
            SamplerKind::Hhmc => {
                let model = QuadraticModel::from_derivatives(
                    &target.hessian(&theta),
                    gradient.clone(),
                    leapfrog.duration(),
                )?;
                Some(momentum_law(&model, floors))
            }
        };
        let clamp_events = law.as_ref().map_or(0, MomentumLaw::clamp_events);
        Ok(ChainState {
            position: theta,
            log_density,
            gradient,
            law,
            iteration: 0,
            accepts: 0,
            clamp_events,
            divergences: 0,
        })
    }
}

/// What happened in one transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub accepted: bool,
    /// Log of the Metropolis–Hastings ratio; `-inf` for divergent proposals.
    pub log_accept_ratio: f64,
    pub divergent: bool,
}

fn accept_or_reject<R: Rng + ?Sized>(rng: &mut R, log_ratio: f64) -> bool {
    let u: f64 = rng.random();
    u.ln() < log_ratio
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vector {
    Vector::from_fn(dim, |_, _| rng.sample(StandardNormal))
}

/// One standard HMC transition with momentum `N(0, I)`.
pub fn hmc_step<T: TargetModel + ?Sized, R: Rng + ?Sized>(
    state: &mut ChainState,
    target: &T,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Transition {
    let p0 = standard_normal(rng, target.dim());
    let traj = leapfrog(target, &state.position, &p0, Some(&state.gradient), &cfg.leapfrog);
    let mut end_log_density = f64::NAN;
    let log_ratio = if traj.divergent {
        f64::NEG_INFINITY
    } else {
        end_log_density = target.log_density(&traj.position);
        let h0 = 0.5 * p0.norm_squared() - state.log_density;
        let h1 = 0.5 * traj.momentum.norm_squared() - end_log_density;
        h0 - h1
    };
    let divergent = traj.divergent || !end_log_density.is_finite();
    let accepted = accept_or_reject(rng, log_ratio) && !divergent;
    if accepted {
        state.position = traj.position;
        state.gradient = traj.gradient;
        state.log_density = end_log_density;
        state.accepts += 1;
    }
    state.divergences += divergent as usize;
    state.iteration += 1;
    Transition {
        accepted,
        log_accept_ratio: if divergent { f64::NEG_INFINITY } else { log_ratio },
        divergent,
    }
}

/// Log Metropolis–Hastings ratio of an HHMC proposal from `(θ, p)` to
/// `(θ*, p*)`: `l(θ*) − l(θ) + ln N(−p* | q(θ*), Q(θ*)) − ln N(p | q(θ), Q(θ))`.
pub fn hhmc_log_accept_ratio(
    start_log_density: f64,
    end_log_density: f64,
    start_law: &MomentumLaw,
    end_law: &MomentumLaw,
    start_momentum: &Vector,
    end_momentum: &Vector,
) -> f64 {
    end_log_density - start_log_density + end_law.log_density(&(-end_momentum))
        - start_law.log_density(start_momentum)
}

/// One Hessian-corrected HMC transition.
///
/// The Hessian is evaluated once, at the proposed endpoint; the law at the
/// current position is taken from `state`.
pub fn hhmc_step<T: TargetModel + ?Sized, R: Rng + ?Sized>(
    state: &mut ChainState,
    target: &T,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Transition> {
    if state.law.is_none() {
        let model = QuadraticModel::from_derivatives(
            &target.hessian(&state.position),
            state.gradient.clone(),
            cfg.leapfrog.duration(),
        )?;
        let law = momentum_law(&model, cfg.floors);
        state.clamp_events += law.clamp_events();
        state.law = Some(law);
    }
    let start_law = state.law.as_ref().expect("law cached above");
    let p0 = start_law.sample(rng);
    let traj = leapfrog(target, &state.position, &p0, Some(&state.gradient), &cfg.leapfrog);

    let mut proposal = None;
    if !traj.divergent {
        let end_log_density = target.log_density(&traj.position);
        let hessian = target.hessian(&traj.position);
        if end_log_density.is_finite() && hessian.iter().all(|h| h.is_finite()) {
            let model = QuadraticModel::from_derivatives(
                &hessian,
                traj.gradient.clone(),
                cfg.leapfrog.duration(),
            )?;
            let end_law = momentum_law(&model, cfg.floors);
            state.clamp_events += end_law.clamp_events();
            let log_ratio = hhmc_log_accept_ratio(
                state.log_density,
                end_log_density,
                start_law,
                &end_law,
                &p0,
                &traj.momentum,
            );
            proposal = Some((end_log_density, end_law, log_ratio));
        }
    }

    let log_ratio = proposal.as_ref().map_or(f64::NEG_INFINITY, |p| p.2);
    let divergent = proposal.is_none();
    let accepted = accept_or_reject(rng, log_ratio) && !divergent;
    if accepted {
        let (end_log_density, end_law, _) = proposal.expect("accepted proposals exist");
        state.position = traj.position;
        state.gradient = traj.gradient;
        state.log_density = end_log_density;
        state.law = Some(end_law);
        state.accepts += 1;
    }
    state.divergences += divergent as usize;
    state.iteration += 1;
    Ok(Transition {
        accepted,
        log_accept_ratio: log_ratio,
        divergent,
    })
}

/// Dispatches on `cfg.kind`.
pub fn step<T: TargetModel + ?Sized, R: Rng + ?Sized>(
    state: &mut ChainState,
    target: &T,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Transition> {
    match cfg.kind {
        SamplerKind::Hmc => Ok(hmc_step(state, target, cfg, rng)),
        SamplerKind::Hhmc => hhmc_step(state, target, cfg, rng),
    }
}

/// Output of [`run_chain`].
#[derive(Debug, Clone)]
pub struct ChainRun {
    /// `iterations × dim`, one row per recorded iteration.
    pub samples: Matrix,
    pub accepted: Vec<bool>,
    pub log_densities: Vec<f64>,
    pub summary: RunSummary,
    pub final_state: ChainState,
}

/// Runs `cfg.burn_in + cfg.iterations` transitions from `theta_init` and
/// records the last `cfg.iterations` of them.
///
/// Every recorded row is the post-step position, so a rejection repeats the
/// previous row. The random stream is a ChaCha20 generator seeded with
/// `cfg.seed`, which makes the output reproducible.
pub fn run_chain<T: TargetModel + ?Sized>(
    target: &T,
    cfg: &SamplerConfig,
    theta_init: &Vector,
) -> Result<ChainRun> {
    cfg.validate()?;
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut state = ChainState::new(target, theta_init.clone(), cfg.kind, &cfg.leapfrog, cfg.floors)?;

    for _ in 0..cfg.burn_in {
        step(&mut state, target, cfg, &mut rng)?;
    }
    let mut samples = Matrix::zeros(cfg.iterations, target.dim());
    let mut accepted = Vec::with_capacity(cfg.iterations);
    let mut log_densities = Vec::with_capacity(cfg.iterations);
    let divergences_before = state.divergences;
    for i in 0..cfg.iterations {
        let t = step(&mut state, target, cfg, &mut rng)?;
        samples.row_mut(i).copy_from(&state.position.transpose());
        accepted.push(t.accepted);
        log_densities.push(state.log_density);
    }

    let mut summary = if cfg.iterations >= 2 {
        summarize(&samples, &accepted, None)?
    } else {
        RunSummary {
            iterations: cfg.iterations,
            dim: target.dim(),
            acceptance_rate: accepted.iter().filter(|a| **a).count() as f64 / cfg.iterations as f64,
            clamp_events: 0,
            divergences: 0,
            wall_seconds: 0.0,
            coordinates: Vec::new(),
        }
    };
    summary.clamp_events = state.clamp_events;
    summary.divergences = state.divergences - divergences_before;
    summary.wall_seconds = start.elapsed().as_secs_f64();
    Ok(ChainRun {
        samples,
        accepted,
        log_densities,
        summary,
        final_state: state,
    })
}
