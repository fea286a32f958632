//! Variational layer: Monge-Ampère energy, `L_beta`, `G_beta` and relative entropy.
//!
//! In complex dimension one the energy is the quadratic
//! `E(u) = integrate(u f_theta) + (KAPPA/2) integrate(u lap u)`, normalized by
//! `E(0) = 0`, and its differential is the Monge-Ampère measure.

use serde::Serialize;

use crate::forms::{BackgroundForm, VolumeDensity};
use crate::grid::{ScalarField, TorusGrid};
use crate::ma_solver::BetaSolution;
use crate::KAPPA;

pub fn energy(grid: &TorusGrid, u: &ScalarField, theta: &BackgroundForm) -> f64 {
    let lap = grid.laplacian(u);
    let linear = grid.integrate(&(u * &theta.density));
    let quad = grid.integrate(&(u * &lap));
    linear + 0.5 * KAPPA * quad
}

/// `(1/beta) log integrate(e^{beta u} mu0)` in log-sum-exp form.
pub fn l_beta(grid: &TorusGrid, u: &ScalarField, mu0: &VolumeDensity, beta: f64) -> f64 {
    let top = u.max();
    let s = grid.integrate(&u.zip_map(&mu0.density, |v, m| (beta * (v - top)).exp() * m));
    top + s.ln() / beta
}

/// `G_beta(u) = E(u) - V L_beta(u)`, invariant under adding constants.
///
/// The factor `V` makes the critical points solve `MA(u) = V e^{beta u} mu0 / integrate(e^{beta u} mu0)`.
pub fn g_beta(
    grid: &TorusGrid,
    u: &ScalarField,
    theta: &BackgroundForm,
    mu0: &VolumeDensity,
    beta: f64,
) -> f64 {
    energy(grid, u, theta) - theta.volume * l_beta(grid, u, mu0, beta)
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergyReport {
    pub energy: f64,
    pub l_beta: f64,
    pub g_beta: f64,
    pub entropy: Option<f64>,
}

pub fn energy_report(
    grid: &TorusGrid,
    u: &ScalarField,
    theta: &BackgroundForm,
    mu0: &VolumeDensity,
    beta: f64,
) -> EnergyReport {
    let e = energy(grid, u, theta);
    let l = l_beta(grid, u, mu0, beta);
    EnergyReport {
        energy: e,
        l_beta: l,
        g_beta: e - theta.volume * l,
        entropy: None,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeResult {
    pub first_difference: f64,
    pub second_difference: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StationarityReport {
    pub step: f64,
    pub probes: Vec<ProbeResult>,
    pub max_abs_derivative: f64,
    pub max_second_difference: f64,
    pub stationary: bool,
    pub concave: bool,
}

/// Checks that `U_beta = u_beta - sup u_beta` is a critical point of `G_beta`
/// along each probe and that `G_beta` is concave along those lines.
pub fn g_beta_stationarity(
    grid: &TorusGrid,
    solution: &BetaSolution,
    mu0: &VolumeDensity,
    theta: &BackgroundForm,
    probes: &[ScalarField],
    step: f64,
    stat_tol: f64,
    concavity_tol: f64,
) -> StationarityReport {
    let beta = solution.beta;
    let normalized = solution.u.shift(-solution.u.max());
    let g0 = g_beta(grid, &normalized, theta, mu0, beta);
    let probes: Vec<ProbeResult> = probes
        .iter()
        .map(|v| {
            let plus = g_beta(grid, &(&normalized + &v.scale(step)), theta, mu0, beta);
            let minus = g_beta(grid, &(&normalized - &v.scale(step)), theta, mu0, beta);
            ProbeResult {
                first_difference: (plus - minus) / (2.0 * step),
                second_difference: (plus - 2.0 * g0 + minus) / (step * step),
            }
        })
        .collect();
    let max_abs_derivative = probes
        .iter()
        .map(|p| p.first_difference.abs())
        .fold(0.0, f64::max);
    let max_second_difference = probes
        .iter()
        .map(|p| p.second_difference)
        .fold(f64::NEG_INFINITY, f64::max);
    StationarityReport {
        step,
        stationary: max_abs_derivative <= stat_tol,
        concave: max_second_difference <= concavity_tol,
        probes,
        max_abs_derivative,
        max_second_difference,
    }
}

/// `integrate(log(mu / mu0) mu)` over nodes with `mu > 0`.
pub fn relative_entropy(grid: &TorusGrid, mu: &ScalarField, mu0: &VolumeDensity) -> f64 {
    let s: f64 = mu
        .values()
        .iter()
        .zip(mu0.density.values())
        .filter(|(m, _)| **m > 0.0)
        .map(|(m, m0)| m * (m / m0).ln())
        .sum();
    s * grid.cell_area()
}

/// `integrate over D of log(f_theta / g) f_theta`: the entropy of `1_D theta` against `g dA`.
pub fn contact_entropy(
    grid: &TorusGrid,
    contact_mask: &[bool],
    theta: &BackgroundForm,
    mu0: &VolumeDensity,
) -> f64 {
    let mut s = 0.0;
    for (k, &c) in contact_mask.iter().enumerate() {
        let f = theta.density[k];
        if c && f > 0.0 {
            s += f * (f / mu0.density[k]).ln();
        }
    }
    s * grid.cell_area()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::make_background;
    use crate::ma_solver::{solve_beta, SolveOptions};
    use std::f64::consts::PI;

    #[test]
    fn energy_of_constants() {
        let g = TorusGrid::new(16).unwrap();
        let theta = make_background(&g, |x, _| 1.5 + (2.0 * PI * x).cos(), true).unwrap();
        assert_eq!(energy(&g, &g.zeros(), &theta), 0.0);
        let c = -0.7;
        assert!((energy(&g, &g.constant(c), &theta) - c * theta.volume).abs() < 1e-14);
    }

    #[test]
    fn energy_differential_is_ma() {
        let g = TorusGrid::new(32).unwrap();
        let theta = make_background(&g, |x, _| 1.0 + 2.0 * (2.0 * PI * x).cos(), true).unwrap();
        let u = g.from_fn(|x, y| 0.1 * (2.0 * PI * (x + 2.0 * y)).sin());
        let v = g.from_fn(|x, y| (2.0 * PI * x).cos() * (4.0 * PI * y).sin() + 0.3);
        let t = 1e-3;
        let fd = (energy(&g, &(&u + &v.scale(t)), &theta) - energy(&g, &(&u - &v.scale(t)), &theta))
            / (2.0 * t);
        let pairing = g.integrate(&(&v * &g.ma_density(&theta.density, &u)));
        assert!((fd - pairing).abs() < 1e-9 + 1e-10 * pairing.abs());
    }

    #[test]
    fn l_beta_properties() {
        let g = TorusGrid::new(16).unwrap();
        let mu0 = VolumeDensity::uniform(&g);
        assert!((l_beta(&g, &g.constant(0.4), &mu0, 7.0) - 0.4).abs() < 1e-14);
        let u = g.from_fn(|x, y| (2.0 * PI * x).sin() * (2.0 * PI * y).cos());
        let shifted = l_beta(&g, &u.shift(2.0), &mu0, 5.0);
        assert!((shifted - l_beta(&g, &u, &mu0, 5.0) - 2.0).abs() < 1e-13);
        let mut prev = f64::NEG_INFINITY;
        for beta in [1.0, 4.0, 16.0, 64.0, 1024.0] {
            let l = l_beta(&g, &u, &mu0, beta);
            assert!(l > prev && l <= u.max());
            prev = l;
        }
        assert!(u.max() - prev < 1e-2);
    }

    #[test]
    fn stationarity_on_converged_solve() {
        let g = TorusGrid::new(32).unwrap();
        let theta = make_background(&g, |x, _| 1.0 + 2.0 * (2.0 * PI * x).cos(), true).unwrap();
        let mu0 = VolumeDensity::uniform(&g);
        let sol = solve_beta(&g, &theta, &mu0, 16.0, &SolveOptions::default()).unwrap();
        let probes = vec![g.constant(1.0), g.from_fn(|x, _| (2.0 * PI * x).cos())];
        let rep = g_beta_stationarity(&g, &sol, &mu0, &theta, &probes, 1e-4, 1e-6, 1e-9);
        assert!(rep.probes[0].first_difference.abs() < 1e-10);
        assert!(rep.stationary, "{rep:?}");
        assert!(rep.concave, "{rep:?}");
    }

    #[test]
    fn beta_solution_maximizes_g_beta() {
        let g = TorusGrid::new(32).unwrap();
        let theta = make_background(&g, |x, _| 1.0 + 2.0 * (2.0 * PI * x).cos(), true).unwrap();
        let mu0 = VolumeDensity::uniform(&g);
        let beta = 16.0;
        let sol = solve_beta(&g, &theta, &mu0, beta, &SolveOptions::default()).unwrap();
        let best = g_beta(&g, &sol.u, &theta, &mu0, beta);
        let env = crate::envelope::envelope_theta(&g, &theta, &Default::default()).unwrap();
        let others = [
            g.zeros(),
            env.u.clone(),
            &sol.u + &g.from_fn(|x, y| 0.01 * (2.0 * PI * (x - y)).sin()),
            &sol.u + &g.from_fn(|x, _| 0.02 * (4.0 * PI * x).cos()),
        ];
        for w in &others {
            assert!(best >= g_beta(&g, w, &theta, &mu0, beta) - 1e-8);
        }
    }

    #[test]
    fn entropy_examples() {
        let g = TorusGrid::new(16).unwrap();
        let mu0 = VolumeDensity::uniform(&g);
        assert_eq!(relative_entropy(&g, &mu0.density, &mu0), 0.0);
        let half = g.from_fn(|x, _| if x < 0.5 { 2.0 } else { 0.0 });
        assert!((relative_entropy(&g, &half, &mu0) - 2f64.ln()).abs() < 1e-14);
    }
}
