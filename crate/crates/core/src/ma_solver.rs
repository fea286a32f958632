//! Damped Newton solver for `f_theta + KAPPA lap u = e^{beta u} g`.
//!
//! The Jacobian `KAPPA lap - diag(beta e^{beta u} g)` is symmetric negative
//! definite, so each Newton step is a matrix-free PCG solve preconditioned by the
//! spectral inverse of `-KAPPA lap + mean(diag)`.

use log::warn;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forms::{twist, BackgroundForm, DivisorData, VolumeDensity};
use crate::grid::{ScalarField, TorusGrid};
use crate::linalg::pcg;
use crate::KAPPA;

/// Exponents above this are clamped (with a warning).
pub const EXP_CEIL: f64 = 700.0;
/// Exponents below this evaluate to exactly zero and are counted.
pub const EXP_FLOOR: f64 = -700.0;

#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Sup-norm residual target.
    pub newton_tol: f64,
    pub max_iters: usize,
    /// Upper bound on the relative PCG tolerance (forcing term).
    pub linear_tol: f64,
    pub max_linear_iters: usize,
    /// Smallest backtracking step before giving up.
    pub min_step: f64,
    /// Slack for the theta-psh check `f_theta + KAPPA lap u >= -psh_tol`.
    pub psh_tol: f64,
    /// Lower bound on `V` used by the constant initial guess.
    pub initial_floor: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            newton_tol: 1e-10,
            max_iters: 200,
            linear_tol: 1e-2,
            max_linear_iters: 5000,
            min_step: 2f64.powi(-30),
            psh_tol: 1e-8,
            initial_floor: 1e-12,
        }
    }
}

/// One line of solver telemetry.
#[derive(Debug, Clone, Serialize)]
pub struct IterRecord {
    pub iteration: usize,
    pub residual_sup: f64,
    pub step: f64,
    pub linear_iters: usize,
}

#[derive(Debug, Clone)]
pub struct BetaSolution {
    pub u: ScalarField,
    pub beta: f64,
    pub residual_sup: f64,
    pub iters: usize,
    pub telemetry: Vec<IterRecord>,
    /// Nodes whose exponent hit [`EXP_CEIL`] at the final iterate.
    pub exp_clamped: usize,
    /// Nodes whose exponent fell below [`EXP_FLOOR`] at the final iterate.
    pub exp_floored: usize,
}

impl BetaSolution {
    /// Solver telemetry as JSON lines.
    pub fn telemetry_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in &self.telemetry {
            out.push_str(&serde_json::to_string(rec).expect("telemetry serializes"));
            out.push('\n');
        }
        out
    }
}

/// Right-hand side `e^{beta u + log_weight} g` with the exponent guards.
struct Rhs<'a> {
    g: &'a [f64],
    log_weight: Option<&'a [f64]>,
    beta: f64,
}

impl Rhs<'_> {
    fn eval(&self, u: &[f64], out: &mut [f64]) -> (usize, usize) {
        let mut clamped = 0;
        let mut floored = 0;
        for k in 0..u.len() {
            let mut e = self.beta * u[k];
            if let Some(w) = self.log_weight {
                e += w[k];
            }
            out[k] = if e > EXP_CEIL {
                clamped += 1;
                EXP_CEIL.exp() * self.g[k]
            } else if e < EXP_FLOOR {
                floored += 1;
                0.0
            } else {
                e.exp() * self.g[k]
            };
        }
        (clamped, floored)
    }
}

fn residual(
    grid: &TorusGrid,
    f: &[f64],
    rhs: &Rhs<'_>,
    u: &[f64],
    res: &mut [f64],
    exp: &mut [f64],
) -> (f64, usize, usize) {
    grid.laplacian_into(u, res);
    let (c, fl) = rhs.eval(u, exp);
    let mut sup: f64 = 0.0;
    for k in 0..u.len() {
        res[k] = f[k] + KAPPA * res[k] - exp[k];
        sup = sup.max(res[k].abs());
    }
    if !sup.is_finite() {
        sup = f64::INFINITY;
    }
    (sup, c, fl)
}

fn newton(
    grid: &TorusGrid,
    f_theta: &ScalarField,
    g: &ScalarField,
    log_weight: Option<&ScalarField>,
    beta: f64,
    init: ScalarField,
    opts: &SolveOptions,
) -> Result<BetaSolution> {
    let n = grid.len();
    let rhs = Rhs {
        g: g.values(),
        log_weight: log_weight.map(|w| w.values()),
        beta,
    };
    let f = f_theta.values();
    let mut u = init.into_values();
    let mut res = vec![0.0; n];
    let mut exp = vec![0.0; n];
    let (mut sup, mut clamped, mut floored) = residual(grid, f, &rhs, &u, &mut res, &mut exp);
    let mut telemetry = vec![IterRecord {
        iteration: 0,
        residual_sup: sup,
        step: 0.0,
        linear_iters: 0,
    }];
    let mut trial = vec![0.0; n];
    let mut trial_res = vec![0.0; n];
    let mut trial_exp = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut lap_buf = vec![0.0; n];

    for iter in 1..=opts.max_iters {
        if sup <= opts.newton_tol {
            break;
        }
        for k in 0..n {
            diag[k] = beta * exp[k];
        }
        let shift = (diag.iter().sum::<f64>() / n as f64).max(1e-8);
        let mut delta = vec![0.0; n];
        let eta = opts.linear_tol.min(sup.sqrt());
        let stats = pcg(
            |v: &[f64], out: &mut [f64]| {
                grid.laplacian_into(v, &mut lap_buf);
                for k in 0..n {
                    out[k] = -KAPPA * lap_buf[k] + diag[k] * v[k];
                }
            },
            |r: &[f64], z: &mut [f64]| z.copy_from_slice(&grid.shifted_solve(r, shift)),
            &res,
            &mut delta,
            eta,
            0.1 * opts.newton_tol,
            opts.max_linear_iters,
        );
        // (-KAPPA lap + diag) delta = F  is the Newton step  J delta = -F.
        let mut step = 1.0;
        loop {
            for k in 0..n {
                trial[k] = u[k] + step * delta[k];
            }
            let (tsup, tc, tf) =
                residual(grid, f, &rhs, &trial, &mut trial_res, &mut trial_exp);
            if tsup < sup {
                std::mem::swap(&mut u, &mut trial);
                std::mem::swap(&mut res, &mut trial_res);
                std::mem::swap(&mut exp, &mut trial_exp);
                sup = tsup;
                clamped = tc;
                floored = tf;
                break;
            }
            step *= 0.5;
            if step < opts.min_step {
                telemetry.push(IterRecord {
                    iteration: iter,
                    residual_sup: sup,
                    step: 0.0,
                    linear_iters: stats.iters,
                });
                return Err(no_convergence(iter, sup, &telemetry));
            }
        }
        telemetry.push(IterRecord {
            iteration: iter,
            residual_sup: sup,
            step,
            linear_iters: stats.iters,
        });
    }
    if sup > opts.newton_tol {
        return Err(no_convergence(opts.max_iters, sup, &telemetry));
    }
    if clamped > 0 {
        warn!("beta = {beta}: exponent clamped at {EXP_CEIL} on {clamped} nodes");
    }
    let iters = telemetry.len() - 1;
    Ok(BetaSolution {
        u: grid.field_from_vec(u)?,
        beta,
        residual_sup: sup,
        iters,
        telemetry,
        exp_clamped: clamped,
        exp_floored: floored,
    })
}

fn no_convergence(iters: usize, residual: f64, telemetry: &[IterRecord]) -> Error {
    Error::NoConvergence {
        solver: "damped Newton",
        iters,
        residual,
        history: telemetry.iter().map(|r| r.residual_sup).collect(),
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    Ok(())
}

/// Solves `MA(u) = e^{beta u} dV` from the constant guess `log(max(V, floor)) / beta`.
pub fn solve_beta(
    grid: &TorusGrid,
    theta: &BackgroundForm,
    g: &VolumeDensity,
    beta: f64,
    opts: &SolveOptions,
) -> Result<BetaSolution> {
    let init = grid.constant(theta.volume.max(opts.initial_floor).ln() / beta);
    solve_beta_from(grid, theta, g, beta, init, opts)
}

/// [`solve_beta`] from a caller-provided initial guess (continuation).
pub fn solve_beta_from(
    grid: &TorusGrid,
    theta: &BackgroundForm,
    g: &VolumeDensity,
    beta: f64,
    init: ScalarField,
    opts: &SolveOptions,
) -> Result<BetaSolution> {
    check_beta(beta)?;
    if theta.volume <= 0.0 {
        return Err(Error::NonKahler {
            volume: theta.volume,
        });
    }
    grid.check(&init)?;
    newton(grid, &theta.density, &g.density, None, beta, init, opts)
}

/// Solves `(theta_lambda + dd^c u) = e^{beta u} |s|^{2 lambda beta} dV` with
/// `theta_lambda = omega - lambda theta_L`.
///
/// The weight `e^{lambda beta h_s}` is fused into the exponent. Without `init`
/// the constant solving the mass identity is used.
pub fn solve_beta_divisor(
    grid: &TorusGrid,
    omega: &BackgroundForm,
    divisor: &DivisorData,
    lambda: f64,
    beta: f64,
    g: &VolumeDensity,
    init: Option<ScalarField>,
    opts: &SolveOptions,
) -> Result<BetaSolution> {
    check_beta(beta)?;
    if lambda < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    let twisted = twist(omega, divisor, lambda, false)?;
    if twisted.volume <= 0.0 {
        return Err(Error::SeshadriViolation {
            lambda,
            volume: twisted.volume,
        });
    }
    let log_weight = divisor.h_s.scale(lambda * beta);
    let init = match init {
        Some(u) => {
            grid.check(&u)?;
            u
        }
        None => {
            // e^{beta c} integrate(e^{log_weight} g) = V_lambda
            let top = log_weight.max();
            let mass = grid.integrate(
                &log_weight.zip_map(&g.density, |w, gk| (w - top).exp() * gk),
            );
            let c = (twisted.volume.max(opts.initial_floor).ln() - top - mass.ln()) / beta;
            grid.constant(c)
        }
    };
    newton(
        grid,
        &twisted.density,
        &g.density,
        Some(&log_weight),
        beta,
        init,
        opts,
    )
}

/// Pointwise residual `f_theta + KAPPA lap w - e^{beta w} g`.
pub fn beta_residual(
    grid: &TorusGrid,
    theta: &BackgroundForm,
    g: &VolumeDensity,
    beta: f64,
    w: &ScalarField,
) -> ScalarField {
    let ma = grid.ma_density(&theta.density, w);
    let mut out = ma;
    for k in 0..grid.len() {
        out[k] -= (beta * w[k]).min(EXP_CEIL).exp() * g.density[k];
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonVerdict {
    pub holds: bool,
    /// Nodes where `lower > upper + comparison_tol`.
    pub violations: usize,
    /// `max(lower - upper)`.
    pub worst_gap: f64,
}

/// Discrete comparison principle.
///
/// `lower` must satisfy `MA(lower) >= e^{beta lower} dV` and `upper` must
/// satisfy `MA(upper) <= e^{beta upper} dV`, both up to `residual_tol`; the
/// verdict then checks `lower <= upper + comparison_tol`.
pub fn check_comparison(
    grid: &TorusGrid,
    theta: &BackgroundForm,
    g: &VolumeDensity,
    beta: f64,
    upper: &ScalarField,
    lower: &ScalarField,
    residual_tol: f64,
    comparison_tol: f64,
) -> Result<ComparisonVerdict> {
    if !upper.is_finite() || !lower.is_finite() {
        return Err(Error::InvalidArgument("comparison needs finite fields".into()));
    }
    let r_low = beta_residual(grid, theta, g, beta, lower);
    let r_up = beta_residual(grid, theta, g, beta, upper);
    let bad_low = r_low.values().iter().filter(|&&r| r < -residual_tol).count();
    let bad_up = r_up.values().iter().filter(|&&r| r > residual_tol).count();
    if bad_low > 0 || bad_up > 0 {
        return Err(Error::NotClassifiable(format!(
            "{bad_low} nodes break the lower (sub) inequality, {bad_up} break the upper one"
        )));
    }
    let gap = lower - upper;
    let violations = gap.values().iter().filter(|&&d| d > comparison_tol).count();
    Ok(ComparisonVerdict {
        holds: violations == 0,
        violations,
        worst_gap: gap.max(),
    })
}

/// Pointwise Laplacian estimate with a flat reference form (curvature bound `B = 0`).
#[derive(Debug, Clone, Serialize)]
pub struct LaplacianBoundReport {
    pub beta: f64,
    /// `max (f_theta + KAPPA lap u) / omega_ref`.
    pub max_trace_ratio: f64,
    /// `sup (f_theta / omega_ref)`.
    pub sup_trace_theta: f64,
    /// `(1 - 1/beta)^{-1}`.
    pub prefactor: f64,
    /// `prefactor * sup_trace_theta`.
    pub bound: f64,
    pub slack: f64,
    pub holds: bool,
    /// `osc(u - v)` with `omega_ref = theta + dd^c v`.
    pub osc_u_minus_v: f64,
}

pub fn laplacian_bound_report(
    grid: &TorusGrid,
    theta: &BackgroundForm,
    solution: &BetaSolution,
    omega_ref: &BackgroundForm,
) -> Result<LaplacianBoundReport> {
    let beta = solution.beta;
    if beta <= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "the Laplacian estimate needs beta > 1, got {beta}"
        )));
    }
    let min = omega_ref.density.min();
    if min <= 0.0 {
        return Err(Error::BadReference { min });
    }
    let v_rhs = omega_ref
        .density
        .zip_map(&theta.density, |w, f| (w - f) / KAPPA);
    let v = grid.poisson_solve(&v_rhs)?;
    let ma = grid.ma_density(&theta.density, &solution.u);
    let max_trace_ratio = ma.zip_map(&omega_ref.density, |a, w| a / w).max();
    let sup_trace_theta = theta
        .density
        .zip_map(&omega_ref.density, |f, w| f / w)
        .max();
    let prefactor = 1.0 / (1.0 - 1.0 / beta);
    let bound = prefactor * sup_trace_theta;
    Ok(LaplacianBoundReport {
        beta,
        max_trace_ratio,
        sup_trace_theta,
        prefactor,
        bound,
        slack: bound - max_trace_ratio,
        holds: max_trace_ratio <= bound,
        osc_u_minus_v: (&solution.u - &v).oscillation(),
    })
}

/// `f_theta + KAPPA lap u >= -psh_tol` everywhere.
pub fn is_theta_psh(grid: &TorusGrid, theta: &BackgroundForm, u: &ScalarField, psh_tol: f64) -> bool {
    grid.ma_density(&theta.density, u).min() >= -psh_tol
}
