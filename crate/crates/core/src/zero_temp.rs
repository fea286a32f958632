//! Beta-sweep harness for the zero-temperature limit `u_beta -> u_theta`.
//!
//! A sweep solves the envelope once and `MA(u) = e^{beta u} g` for an increasing
//! list of `beta`, recording sup-norm, gradient and energy errors. The checks in
//! this module only read a finished [`SweepReport`].

use rayon::prelude::*;
use serde::Serialize;

use crate::envelope::{envelope_theta, EnvelopeSolution, LcpOptions};
use crate::error::{Error, Result};
use crate::forms::{BackgroundForm, VolumeDensity};
use crate::functionals::energy;
use crate::grid::{ScalarField, TorusGrid};
use crate::ma_solver::{solve_beta, solve_beta_from, SolveOptions};

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub solve: SolveOptions,
    pub lcp: LcpOptions,
    /// Warm-start each beta from the previous solution. Without it the solves
    /// run in parallel.
    pub continuation: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            solve: SolveOptions::default(),
            lcp: LcpOptions::default(),
            continuation: true,
        }
    }
}

/// Default beta grid `8, 16, ..., 1024`.
pub fn default_betas() -> Vec<f64> {
    (3..=10).map(|k| 2f64.powi(k)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub betas: Vec<f64>,
    /// `sup |u_beta - u_theta|`.
    pub sup_err: Vec<f64>,
    /// `grad_sup_norm(u_beta - u_theta)`.
    pub grad_err: Vec<f64>,
    /// `|E(u_beta) - E(u_theta)|`.
    pub energy_gap: Vec<f64>,
    /// `max(u_beta - u_theta)`, the one-sided error the refined bound controls.
    pub max_excess: Vec<f64>,
    /// Uniform bound on discrete second differences of `u_beta`.
    pub second_diff: Vec<f64>,
    pub newton_iters: Vec<usize>,
    /// `(C_fit, p_fit)` with `sup_err ~ C_fit beta^(-p_fit)` on the last half of the sweep.
    pub fitted_rate: Option<(f64, f64)>,
    /// `sup_D log(f_theta / g)`; `None` when the contact set is empty.
    pub refined_c: Option<f64>,
    #[serde(skip)]
    pub envelope: EnvelopeSolution,
    #[serde(skip)]
    pub solutions: Vec<ScalarField>,
}

impl SweepReport {
    /// `(C_fit, p_fit)` from a log-log fit on the last half of the series.
    fn fit(betas: &[f64], errs: &[f64]) -> Option<(f64, f64)> {
        let start = betas.len() / 2;
        let pts: Vec<(f64, f64)> = betas[start..]
            .iter()
            .zip(&errs[start..])
            .filter(|(_, e)| **e > 0.0)
            .map(|(b, e)| (b.ln(), e.ln()))
            .collect();
        let (slope, intercept) = linear_fit(&pts)?;
        Some((intercept.exp(), -slope))
    }

    /// Sweep rows for CSV export:
    /// `beta, sup_err, grad_err, energy_gap, max_excess`.
    pub fn rows(&self) -> Vec<[f64; 5]> {
        (0..self.betas.len())
            .map(|i| {
                [
                    self.betas[i],
                    self.sup_err[i],
                    self.grad_err[i],
                    self.energy_gap[i],
                    self.max_excess[i],
                ]
            })
            .collect()
    }
}

/// Least squares line through `pts`, returned as `(slope, intercept)`.
pub fn linear_fit(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// `sup_D log(f_theta / g)` over a contact mask.
pub fn refined_constant(theta: &BackgroundForm, g: &VolumeDensity, contact: &[bool]) -> Option<f64> {
    contact
        .iter()
        .enumerate()
        .filter(|(_, &c)| c)
        .map(|(k, _)| (theta.density[k].max(0.0) / g.density[k]).ln())
        .reduce(f64::max)
}

pub fn sweep_beta(
    grid: &TorusGrid,
    theta: &BackgroundForm,
    g: &VolumeDensity,
    betas: &[f64],
    opts: &SweepOptions,
) -> Result<SweepReport> {
    if theta.volume <= 0.0 {
        return Err(Error::NonKahler {
            volume: theta.volume,
        });
    }
    if betas.is_empty() {
        return Err(Error::InvalidArgument("beta list is empty".into()));
    }
    if let Some(b) = betas.iter().find(|&&b| !(b > 1.0)) {
        return Err(Error::InvalidArgument(format!("beta must exceed 1, got {b}")));
    }
    if betas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "beta list must be strictly increasing".into(),
        ));
    }

    let envelope = envelope_theta(grid, theta, &opts.lcp)?;
    let solutions = if opts.continuation {
        let mut out = Vec::with_capacity(betas.len());
        let mut prev: Option<ScalarField> = None;
        for &beta in betas {
            let sol = match prev.take() {
                Some(init) => solve_beta_from(grid, theta, g, beta, init, &opts.solve),
                None => solve_beta(grid, theta, g, beta, &opts.solve),
            }
            .map_err(Error::at("beta", beta))?;
            prev = Some(sol.u.clone());
            out.push(sol);
        }
        out
    } else {
        betas
            .par_iter()
            .map(|&beta| solve_beta(grid, theta, g, beta, &opts.solve).map_err(Error::at("beta", beta)))
            .collect::<Result<Vec<_>>>()?
    };

    let e_theta = energy(grid, &envelope.u, theta);
    let mut report = SweepReport {
        betas: betas.to_vec(),
        sup_err: Vec::new(),
        grad_err: Vec::new(),
        energy_gap: Vec::new(),
        max_excess: Vec::new(),
        second_diff: Vec::new(),
        newton_iters: Vec::new(),
        fitted_rate: None,
        refined_c: refined_constant(theta, g, &envelope.contact_mask),
        envelope,
        solutions: Vec::new(),
    };
    for sol in solutions {
        let diff = &sol.u - &report.envelope.u;
        report.sup_err.push(diff.sup_norm());
        report.grad_err.push(grid.grad_sup_norm(&diff));
        report
            .energy_gap
            .push((energy(grid, &sol.u, theta) - e_theta).abs());
        report.max_excess.push(diff.max());
        report.second_diff.push(grid.second_difference_sup(&sol.u));
        report.newton_iters.push(sol.iters);
        report.solutions.push(sol.u);
    }
    report.fitted_rate = SweepReport::fit(&report.betas, &report.sup_err);
    Ok(report)
}

/// Verdict of the one-sided bound `u_beta <= u_theta + C / beta + grid_slack`.
#[derive(Debug, Clone, Serialize)]
pub struct RefinedBoundVerdict {
    pub c_paper: f64,
    pub grid_slack: f64,
    /// `C / beta + grid_slack - max(u_beta - u_theta)` per beta; the bound holds where it is `>= 0`.
    pub margins: Vec<f64>,
    pub pass: bool,
}

pub fn refined_bound_check(report: &SweepReport, grid_slack: f64) -> Result<RefinedBoundVerdict> {
    let c = report.refined_c.ok_or_else(|| {
        Error::InvalidArgument("refined bound needs a non-empty contact set".into())
    })?;
    let margins: Vec<f64> = report
        .betas
        .iter()
        .zip(&report.max_excess)
        .map(|(b, e)| c / b + grid_slack - e)
        .collect();
    Ok(RefinedBoundVerdict {
        c_paper: c,
        grid_slack,
        pass: margins.iter().all(|&m| m >= 0.0),
        margins,
    })
}

/// Worst violation of the refined bound without slack: `max_beta (max(u_beta - u_theta) - C / beta)`.
pub fn bound_violation(report: &SweepReport) -> Option<f64> {
    let c = report.refined_c?;
    report
        .betas
        .iter()
        .zip(&report.max_excess)
        .map(|(b, e)| e - c / b)
        .reduce(f64::max)
}

/// Calibration of `grid_slack = c1 * h` from violations at several mesh sizes.
#[derive(Debug, Clone, Serialize)]
pub struct SlackCalibration {
    /// `(h, violation)` samples.
    pub samples: Vec<(f64, f64)>,
    /// Smallest `c1` with `violation <= c1 * h` at every sample (0 when none is violated).
    pub c1: f64,
    /// Linear extrapolation of the violation to `h = 0`.
    pub extrapolated: f64,
    pub pass: bool,
}

impl SlackCalibration {
    pub fn from_samples(samples: Vec<(f64, f64)>) -> Result<Self> {
        let (_, intercept) = linear_fit(&samples).ok_or_else(|| {
            Error::InvalidArgument("calibration needs at least two distinct mesh sizes".into())
        })?;
        let c1 = samples
            .iter()
            .map(|&(h, v)| (v / h).max(0.0))
            .fold(0.0, f64::max);
        Ok(Self {
            samples,
            c1,
            extrapolated: intercept,
            pass: intercept <= 0.0,
        })
    }

    pub fn slack(&self, h: f64) -> f64 {
        self.c1 * h
    }
}

/// Exponential decay of `MA(u_beta) = e^{beta u_beta} g` on `K_delta = {u_theta <= -delta}`.
#[derive(Debug, Clone, Serialize)]
pub struct DecayVerdict {
    pub delta: f64,
    pub region_nodes: usize,
    /// `sup_{K_delta} e^{beta u_beta} g` per beta.
    pub measured: Vec<f64>,
    /// `max(g) e^C e^{-beta delta}` per beta.
    pub bound: Vec<f64>,
    /// Negated slope of `log(measured)` against beta.
    pub fitted_rate: Option<f64>,
    /// `|fitted_rate - delta| / delta`.
    pub rate_rel_err: Option<f64>,
    pub pass: bool,
}

pub fn ma_decay_check(report: &SweepReport, g: &VolumeDensity, delta: f64) -> Result<DecayVerdict> {
    let u_theta = &report.envelope.u;
    let region: Vec<usize> = (0..u_theta.len()).filter(|&k| u_theta[k] <= -delta).collect();
    if !(delta > 0.0) || region.is_empty() {
        return Err(Error::EmptyRegion { delta });
    }
    let c = report.refined_c.unwrap_or(0.0);
    let g_max = g.density.max();
    let mut measured = Vec::new();
    let mut bound = Vec::new();
    for (beta, u) in report.betas.iter().zip(&report.solutions) {
        let sup = region
            .iter()
            .map(|&k| (beta * u[k]).exp() * g.density[k])
            .fold(0.0, f64::max);
        measured.push(sup);
        bound.push(g_max * c.exp() * (-beta * delta).exp());
    }
    let pts: Vec<(f64, f64)> = report
        .betas
        .iter()
        .zip(&measured)
        .filter(|(_, m)| **m > 0.0)
        .map(|(b, m)| (*b, m.ln()))
        .collect();
    let fitted_rate = linear_fit(&pts).map(|(s, _)| -s);
    Ok(DecayVerdict {
        delta,
        region_nodes: region.len(),
        pass: measured.iter().zip(&bound).all(|(m, b)| m <= b),
        rate_rel_err: fitted_rate.map(|r| (r - delta).abs() / delta),
        fitted_rate,
        measured,
        bound,
    })
}

/// Expansion `beta u_beta -> log(f_theta / g)` for positive backgrounds.
#[derive(Debug, Clone, Serialize)]
pub struct ExpansionVerdict {
    /// `sup |beta u_beta - log(f_theta / g)|` per beta.
    pub deviation: Vec<f64>,
    pub decreasing: bool,
}

pub fn positive_expansion_check(
    report: &SweepReport,
    theta: &BackgroundForm,
    g: &VolumeDensity,
) -> Result<ExpansionVerdict> {
    if theta.density.min() <= 0.0 {
        return Err(Error::InvalidArgument(
            "expansion check needs a strictly positive background".into(),
        ));
    }
    let target = theta.density.zip_map(&g.density, |f, gk| (f / gk).ln());
    let deviation: Vec<f64> = report
        .betas
        .iter()
        .zip(&report.solutions)
        .map(|(b, u)| u.zip_map(&target, |v, t| b * v - t).sup_norm())
        .collect();
    Ok(ExpansionVerdict {
        decreasing: deviation.windows(2).all(|w| w[1] < w[0]),
        deviation,
    })
}
