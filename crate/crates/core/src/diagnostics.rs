//! Chain diagnostics: autocorrelation, effective sample size, and
//! per-coordinate summaries.

use serde::{Deserialize, Serialize};

use crate::model::GaussianTarget;
use crate::{Error, Matrix, Result};

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|v| *v == x[0])
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Biased autocorrelation estimate at `lag`.
///
/// A constant series has autocorrelation 1 at lag 0 and 0 at every other lag.
pub fn autocorrelation(x: &[f64], lag: usize) -> Result<f64> {
    if x.len() <= lag {
        return Err(Error::config(format!(
            "series of length {} is too short for lag {lag}",
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation("series has non-finite values".into()));
    }
    if lag == 0 {
        return Ok(1.0);
    }
    if is_constant(x) {
        return Ok(0.0);
    }
    let m = mean(x);
    let centered: Vec<f64> = x.iter().map(|v| v - m).collect();
    Ok(autocovariance(&centered, lag) / autocovariance(&centered, 0))
}

/// `Σ_t c_t c_{t+lag}` over a centered series.
fn autocovariance(centered: &[f64], lag: usize) -> f64 {
    centered
        .iter()
        .zip(&centered[lag..])
        .map(|(a, b)| a * b)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EssEstimate {
    pub value: f64,
    /// The series was constant; `value` is then the series length.
    pub degenerate: bool,
}

/// Effective sample size with Geyer's initial positive sequence estimator.
///
/// Autocorrelations are summed in adjacent pairs `ρ_{2m} + ρ_{2m+1}` until
/// a pair is non-positive. The result is capped at the series length.
pub fn ess(x: &[f64]) -> Result<EssEstimate> {
    let n = x.len();
    if n < 10 {
        return Err(Error::config(format!("ESS needs at least 10 draws, got {n}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation("series has non-finite values".into()));
    }
    if is_constant(x) {
        return Ok(EssEstimate {
            value: n as f64,
            degenerate: true,
        });
    }
    let m = mean(x);
    let centered: Vec<f64> = x.iter().map(|v| v - m).collect();
    let var = autocovariance(&centered, 0);
    let rho = |k: usize| autocovariance(&centered, k) / var;

    let mut pair_sum = 0.0;
    let mut k = 0;
    while k + 1 < n {
        let pair = rho(k) + rho(k + 1);
        if pair <= 0.0 {
            break;
        }
        pair_sum += pair;
        k += 2;
    }
    let tau = (2.0 * pair_sum - 1.0).max(1.0);
    Ok(EssEstimate {
        value: n as f64 / tau,
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateSummary {
    pub index: usize,
    pub mean: f64,
    /// Sample standard deviation (`n − 1` denominator).
    pub std: f64,
    pub lag1: f64,
    /// Absent for chains shorter than 10 draws.
    pub ess: Option<f64>,
    pub degenerate: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_std: Option<f64>,
    /// `std / true_std`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub iterations: usize,
    pub dim: usize,
    pub acceptance_rate: f64,
    pub clamp_events: usize,
    pub divergences: usize,
    pub wall_seconds: f64,
    pub coordinates: Vec<CoordinateSummary>,
}

impl RunSummary {
    /// Fills in `true_std` and `std_ratio` from the target's marginals.
    pub fn attach_truth(&mut self, truth: &GaussianTarget) -> Result<()> {
        let stds = truth.marginal_stds();
        if stds.len() != self.dim {
            return Err(Error::config(format!(
                "truth has dimension {} but samples have {} columns",
                stds.len(),
                self.dim
            )));
        }
        for c in &mut self.coordinates {
            let s = stds[c.index];
            c.true_std = Some(s);
            c.std_ratio = Some(c.std / s);
        }
        Ok(())
    }

    pub fn means(&self) -> Vec<f64> {
        self.coordinates.iter().map(|c| c.mean).collect()
    }

    pub fn stds(&self) -> Vec<f64> {
        self.coordinates.iter().map(|c| c.std).collect()
    }
}

/// Summarizes an `iterations × dim` sample matrix.
pub fn summarize(
    samples: &Matrix,
    accepted: &[bool],
    truth: Option<&GaussianTarget>,
) -> Result<RunSummary> {
    let n = samples.nrows();
    if n < 2 {
        return Err(Error::config(format!("need at least 2 draws to summarize, got {n}")));
    }
    if accepted.len() != n {
        return Err(Error::config(format!(
            "{} acceptance flags for {n} draws",
            accepted.len()
        )));
    }
    let mut coordinates = Vec::with_capacity(samples.ncols());
    for (index, column) in samples.column_iter().enumerate() {
        let x: Vec<f64> = column.iter().copied().collect();
        let m = mean(&x);
        let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
        let (ess_value, degenerate) = if n >= 10 {
            let e = ess(&x)?;
            (Some(e.value), e.degenerate)
        } else {
            (None, is_constant(&x))
        };
        coordinates.push(CoordinateSummary {
            index,
            mean: m,
            std: var.sqrt(),
            lag1: autocorrelation(&x, 1)?,
            ess: ess_value,
            degenerate,
            true_std: None,
            std_ratio: None,
        });
    }
    let accepts = accepted.iter().filter(|a| **a).count();
    let mut summary = RunSummary {
        iterations: n,
        dim: samples.ncols(),
        acceptance_rate: accepts as f64 / n as f64,
        clamp_events: 0,
        divergences: 0,
        wall_seconds: 0.0,
        coordinates,
    };
    if let Some(t) = truth {
        summary.attach_truth(t)?;
    }
    Ok(summary)
}
