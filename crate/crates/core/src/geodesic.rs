//! Geodesic rays from the deformation to the normal cone.
//!
//! The envelope family `psi_mu = phi_lambda` (`mu = lambda - c`) is concave in
//! `mu`; its Legendre transform `phi^t = max_mu (psi_mu + mu t)` is the ray.
//! The `beta`-subgeodesics replace the max by a log-integral of the twisted
//! solutions `phi_{beta,lambda}`.

use rayon::prelude::*;
use serde::Serialize;

use crate::envelope::{envelope_divisor, LcpOptions};
use crate::error::{Error, Result};
use crate::forms::{BackgroundForm, DivisorData, VolumeDensity};
use crate::functionals::energy;
use crate::grid::{ScalarField, TorusGrid};
use crate::ma_solver::{solve_beta_divisor, SolveOptions};
use crate::zero_temp::linear_fit;

/// Default ray times `{0, 0.25, ..., 2, 4, 8, 16, 32, 64}`.
pub fn default_times() -> Vec<f64> {
    let mut t: Vec<f64> = (0..=8).map(|k| 0.25 * k as f64).collect();
    t.extend([4.0, 8.0, 16.0, 32.0, 64.0]);
    t
}

/// `count` uniform points in `[0, c]`.
pub fn uniform_lambdas(c: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![c];
    }
    (0..count).map(|k| c * k as f64 / (count - 1) as f64).collect()
}

#[derive(Debug, Clone)]
pub struct RayFamily {
    pub c: f64,
    pub lambdas: Vec<f64>,
    /// `mu = lambda - c`, increasing.
    pub mus: Vec<f64>,
    /// `psi_mu = u_lambda + lambda h_s` per lambda.
    pub psi: Vec<ScalarField>,
    /// Largest concavity defect found while building.
    pub concavity_defect: f64,
    pub times: Vec<f64>,
    /// `phi^t` per time.
    pub ray: Vec<ScalarField>,
    /// Index into `mus` of the maximizer per time and node (ties go to the larger `mu`).
    pub argmax: Vec<Vec<u32>>,
}

fn check_lambdas(omega: &BackgroundForm, divisor: &DivisorData, c: f64, lambdas: &[f64]) -> Result<()> {
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("offset c must be positive, got {c}")));
    }
    if omega.volume - c * divisor.multiplicity <= 0.0 {
        return Err(Error::SeshadriViolation {
            lambda: c,
            volume: omega.volume - c * divisor.multiplicity,
        });
    }
    if lambdas.is_empty()
        || lambdas.iter().any(|&l| !(0.0..=c).contains(&l))
        || lambdas.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(Error::InvalidArgument(format!(
            "lambda grid must be strictly increasing inside [0, {c}]"
        )));
    }
    Ok(())
}

/// Largest (scale-adjusted) second difference of `mu -> psi_mu(x)` over all nodes,
/// with the index of the middle point. Positive values are concavity defects.
fn concavity_defect(mus: &[f64], psi: &[ScalarField]) -> (f64, usize) {
    let mut worst = (f64::NEG_INFINITY, 0);
    for i in 1..mus.len().saturating_sub(1) {
        let (d1, d2) = (mus[i] - mus[i - 1], mus[i + 1] - mus[i]);
        let scale = 0.5 * (d1 + d2);
        let defect = (0..psi[i].len())
            .map(|k| {
                let right = (psi[i + 1][k] - psi[i][k]) / d2;
                let left = (psi[i][k] - psi[i - 1][k]) / d1;
                (right - left) * scale
            })
            .fold(f64::NEG_INFINITY, f64::max);
        if defect > worst.0 {
            worst = (defect, i);
        }
    }
    worst
}

pub fn build_psi_family(
    grid: &TorusGrid,
    omega: &BackgroundForm,
    divisor: &DivisorData,
    c: f64,
    lambdas: &[f64],
    lcp: &LcpOptions,
    conc_tol: f64,
) -> Result<RayFamily> {
    check_lambdas(omega, divisor, c, lambdas)?;
    let mut psi: Vec<ScalarField> = Vec::with_capacity(lambdas.len());
    let mut prev: Option<ScalarField> = None;
    for &lambda in lambdas {
        let env = envelope_divisor(grid, omega, divisor, lambda, lcp, prev.as_ref())
            .map_err(Error::at("lambda", lambda))?;
        if env.phi.max() > 10.0 * lcp.lcp_tol {
            return Err(Error::InvalidArgument(format!(
                "envelope exceeds its obstacle by {:e} at lambda = {lambda}",
                env.phi.max()
            )));
        }
        prev = Some(env.solution.u);
        psi.push(env.phi);
    }
    let mus: Vec<f64> = lambdas.iter().map(|l| l - c).collect();
    let (defect, index) = concavity_defect(&mus, &psi);
    if defect > conc_tol {
        return Err(Error::ConcavityViolation {
            index,
            worst: defect,
        });
    }
    Ok(RayFamily {
        c,
        lambdas: lambdas.to_vec(),
        mus,
        psi,
        concavity_defect: defect.max(0.0),
        times: Vec::new(),
        ray: Vec::new(),
        argmax: Vec::new(),
    })
}

/// A family built from given `(mu, psi_mu)` pairs, for experiments with synthetic data.
pub fn family_from_parts(c: f64, mus: Vec<f64>, psi: Vec<ScalarField>) -> Result<RayFamily> {
    if mus.is_empty() || mus.len() != psi.len() || mus.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "mu grid must be strictly increasing and match the fields".into(),
        ));
    }
    let (defect, _) = concavity_defect(&mus, &psi);
    Ok(RayFamily {
        c,
        lambdas: mus.iter().map(|m| m + c).collect(),
        mus,
        psi,
        concavity_defect: defect.max(0.0),
        times: Vec::new(),
        ray: Vec::new(),
        argmax: Vec::new(),
    })
}

impl RayFamily {
    /// Fills `ray` and `argmax` on the given times.
    pub fn legendre_ray(&mut self, times: &[f64]) -> Result<()> {
        if self.psi.is_empty() {
            return Err(Error::InvalidArgument("psi family is empty".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("times must be strictly increasing".into()));
        }
        let n = self.psi[0].len();
        let (ray, argmax): (Vec<ScalarField>, Vec<Vec<u32>>) = times
            .par_iter()
            .map(|&t| {
                let mut vals = vec![f64::NEG_INFINITY; n];
                let mut arg = vec![0u32; n];
                for (i, (psi, mu)) in self.psi.iter().zip(&self.mus).enumerate() {
                    for k in 0..n {
                        let v = psi[k] + mu * t;
                        if v >= vals[k] {
                            vals[k] = v;
                            arg[k] = i as u32;
                        }
                    }
                }
                let mut f = self.psi[0].clone();
                f.values_mut().copy_from_slice(&vals);
                (f, arg)
            })
            .unzip();
        self.times = times.to_vec();
        self.ray = ray;
        self.argmax = argmax;
        Ok(())
    }

    /// Time after which the last `mu` dominates at node `k`.
    pub fn saturation_time(&self, k: usize) -> f64 {
        let last = self.mus.len() - 1;
        (0..last)
            .map(|i| (self.psi[i][k] - self.psi[last][k]) / (self.mus[last] - self.mus[i]))
            .fold(0.0, f64::max)
    }

    /// Number of (time step, node) pairs where the argmax index decreases.
    pub fn argmax_decreases(&self) -> usize {
        let mut count = 0;
        for w in self.argmax.windows(2) {
            count += w[0].iter().zip(&w[1]).filter(|(a, b)| b < a).count();
        }
        count
    }

    /// Largest drop in slope of `t -> phi^t(x)` between consecutive intervals (0 if convex).
    pub fn convexity_defect(&self) -> f64 {
        let t = &self.times;
        let mut worst: f64 = 0.0;
        for i in 1..t.len().saturating_sub(1) {
            let (d1, d2) = (t[i] - t[i - 1], t[i + 1] - t[i]);
            for k in 0..self.ray[i].len() {
                let right = (self.ray[i + 1][k] - self.ray[i][k]) / d2;
                let left = (self.ray[i][k] - self.ray[i - 1][k]) / d1;
                worst = worst.min(right - left);
            }
        }
        -worst
    }

    /// `max_t max_x -(f_omega + KAPPA lap phi^t)`, the psh slack of the discrete max.
    pub fn psh_slack(&self, grid: &TorusGrid, omega: &BackgroundForm) -> f64 {
        self.ray
            .iter()
            .map(|phi| -grid.ma_density(&omega.density, phi).min())
            .fold(0.0, f64::max)
    }

    /// Largest gap between two independent computations of the biconjugate at the
    /// grid points: the Legendre transform evaluated back at every breakpoint time,
    /// and the upper concave hull of `mu -> psi_mu(x)`.
    pub fn biconjugate_gap(&self) -> f64 {
        let n = self.psi[0].len();
        let l = self.mus.len();
        if l == 1 {
            return 0.0;
        }
        (0..n)
            .into_par_iter()
            .map(|k| {
                let y: Vec<f64> = self.psi.iter().map(|p| p[k]).collect();
                // route 1: phi at every pairwise breakpoint, then transform back
                let mut ts = Vec::with_capacity(l * (l - 1) / 2);
                for a in 0..l {
                    for b in a + 1..l {
                        ts.push(-(y[b] - y[a]) / (self.mus[b] - self.mus[a]));
                    }
                }
                let phi_t: Vec<f64> = ts
                    .iter()
                    .map(|&t| {
                        (0..l)
                            .map(|i| y[i] + self.mus[i] * t)
                            .fold(f64::NEG_INFINITY, f64::max)
                    })
                    .collect();
                // route 2: monotone-chain upper hull
                let hull = upper_hull(&self.mus, &y);
                (0..l)
                    .map(|j| {
                        let back = ts
                            .iter()
                            .zip(&phi_t)
                            .map(|(t, p)| p - self.mus[j] * t)
                            .fold(f64::INFINITY, f64::min);
                        (back - hull[j]).abs()
                    })
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max)
    }
}

/// Upper concave hull of `(x_i, y_i)` (increasing `x`) evaluated at each `x_i`.
pub fn upper_hull(x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut h: Vec<usize> = Vec::new();
    for i in 0..x.len() {
        while h.len() >= 2 {
            let (a, b) = (h[h.len() - 2], h[h.len() - 1]);
            // drop b if it lies on or below the chord a -> i
            let cross = (x[b] - x[a]) * (y[i] - y[a]) - (y[b] - y[a]) * (x[i] - x[a]);
            if cross >= 0.0 {
                h.pop();
            } else {
                break;
            }
        }
        h.push(i);
    }
    let mut out = vec![0.0; x.len()];
    for w in h.windows(2) {
        let (a, b) = (w[0], w[1]);
        for i in a..=b {
            let s = (x[i] - x[a]) / (x[b] - x[a]);
            out[i] = y[a] + s * (y[b] - y[a]);
        }
    }
    if h.len() == 1 {
        out[h[0]] = y[h[0]];
    }
    out
}

/// Trapezoid weights on a grid; a single point gets the full interval length `width`.
pub fn trapezoid_weights(x: &[f64], width: f64) -> Vec<f64> {
    let n = x.len();
    if n == 1 {
        return vec![width];
    }
    (0..n)
        .map(|i| {
            let left = if i > 0 { x[i] - x[i - 1] } else { 0.0 };
            let right = if i + 1 < n { x[i + 1] - x[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Subgeodesic {
    pub beta: f64,
    /// `phi_{beta,lambda} = u_{beta,lambda} + lambda h_s`.
    pub phi_lambda: Vec<ScalarField>,
    pub times: Vec<f64>,
    /// `phi_beta^t` per time.
    pub fields: Vec<ScalarField>,
}

/// `(1/beta) log sum_i w_i e^{beta((lambda_i - c) t + phi_i)}` in log-sum-exp form.
pub fn quadrature(
    lambdas: &[f64],
    c: f64,
    beta: f64,
    phi: &[ScalarField],
    t: f64,
) -> ScalarField {
    let w: Vec<f64> = trapezoid_weights(lambdas, c).iter().map(|w| w.ln()).collect();
    let n = phi[0].len();
    let mut out = phi[0].clone();
    for k in 0..n {
        let e: Vec<f64> = (0..lambdas.len())
            .map(|i| beta * ((lambdas[i] - c) * t + phi[i][k]) + w[i])
            .collect();
        let top = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = e.iter().map(|v| (v - top).exp()).sum();
        out[k] = (top + s.ln()) / beta;
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn subgeodesic(
    grid: &TorusGrid,
    omega: &BackgroundForm,
    divisor: &DivisorData,
    c: f64,
    beta: f64,
    lambdas: &[f64],
    times: &[f64],
    g: &VolumeDensity,
    opts: &SolveOptions,
) -> Result<Subgeodesic> {
    if !(beta > 1.0) {
        return Err(Error::InvalidArgument(format!("beta must exceed 1, got {beta}")));
    }
    check_lambdas(omega, divisor, c, lambdas)?;
    let mut phi_lambda = Vec::with_capacity(lambdas.len());
    let mut prev: Option<ScalarField> = None;
    for &lambda in lambdas {
        let sol = solve_beta_divisor(grid, omega, divisor, lambda, beta, g, prev.take(), opts)
            .map_err(Error::at("lambda", lambda))
            .map_err(Error::at("beta", beta))?;
        phi_lambda.push(sol.u.zip_map(&divisor.h_s, |u, h| u + lambda * h));
        prev = Some(sol.u);
    }
    let fields = times
        .par_iter()
        .map(|&t| quadrature(lambdas, c, beta, &phi_lambda, t))
        .collect();
    Ok(Subgeodesic {
        beta,
        phi_lambda,
        times: times.to_vec(),
        fields,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub beta: f64,
    /// `sup_x |phi_beta^t - phi^t|` per time.
    pub dev_by_time: Vec<f64>,
    pub sup_dev: f64,
    /// `max - min` of the deviation over times `>= tail_start`.
    pub tail_spread: f64,
}

pub fn convergence_row(family: &RayFamily, sub: &Subgeodesic, tail_start: f64) -> ConvergenceRow {
    let dev_by_time: Vec<f64> = family
        .ray
        .iter()
        .zip(&sub.fields)
        .map(|(a, b)| (a - b).sup_norm())
        .collect();
    let tail: Vec<f64> = family
        .times
        .iter()
        .zip(&dev_by_time)
        .filter(|(t, _)| **t >= tail_start)
        .map(|(_, d)| *d)
        .collect();
    let tail_spread = if tail.is_empty() {
        0.0
    } else {
        tail.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - tail.iter().copied().fold(f64::INFINITY, f64::min)
    };
    ConvergenceRow {
        beta: sub.beta,
        sup_dev: dev_by_time.iter().copied().fold(0.0, f64::max),
        dev_by_time,
        tail_spread,
    }
}

/// `integrate_0^c (lambda - c)(V - lambda m) d lambda` by composite Simpson.
pub fn paper_slope(volume: f64, multiplicity: f64, c: f64) -> f64 {
    let n = 1000;
    let h = c / n as f64;
    let f = |l: f64| (l - c) * (volume - l * multiplicity);
    let mut s = f(0.0) + f(c);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[derive(Debug, Clone, Serialize)]
pub struct RayReport {
    pub times: Vec<f64>,
    pub energies: Vec<f64>,
    /// Times used for the affine fit.
    pub horizon: f64,
    pub energy_slope_measured: f64,
    pub energy_slope_paper: f64,
    /// `-m c^2 / 2`, the first moment of the Duistermaat-Heckman measure of the
    /// deformation, reported next to the paper value.
    pub energy_slope_moment: f64,
    pub affine_deviation: f64,
    pub affine_tol: f64,
    pub slope_rel_err: f64,
    pub affine: bool,
    pub slope_ok: bool,
}

/// Fits `E(phi^t)` against `t` for `t <= horizon`.
///
/// The discrete ray saturates once the argmax at the divisor reaches `mu = 0`,
/// after which `E` is constant; without an explicit horizon half the saturation
/// time at the deepest divisor node is used.
pub fn energy_slope_check(
    grid: &TorusGrid,
    family: &RayFamily,
    omega: &BackgroundForm,
    divisor: &DivisorData,
    horizon: Option<f64>,
    slope_tol: f64,
) -> Result<RayReport> {
    if family.times.len() < 3 {
        return Err(Error::InvalidArgument(
            "energy slope needs the ray on at least three times".into(),
        ));
    }
    let energies: Vec<f64> = family.ray.iter().map(|phi| energy(grid, phi, omega)).collect();
    let horizon =
        horizon.unwrap_or_else(|| 0.5 * family.saturation_time(divisor.deepest_node()));
    let pts: Vec<(f64, f64)> = family
        .times
        .iter()
        .zip(&energies)
        .filter(|(t, _)| **t <= horizon)
        .map(|(t, e)| (*t, *e))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "only {} ray times below the affine horizon {horizon}",
            pts.len()
        )));
    }
    let (slope, intercept) = linear_fit(&pts).expect("three distinct times");
    let affine_deviation = pts
        .iter()
        .map(|(t, e)| (e - slope * t - intercept).abs())
        .fold(0.0, f64::max);
    let paper = paper_slope(omega.volume, divisor.multiplicity, family.c);
    // kink error of the discrete Legendre transform grows like the largest ray time
    let t_max = *family.times.last().unwrap();
    let affine_tol = 1e-4 * paper.abs() * t_max;
    let slope_rel_err = (slope - paper).abs() / paper.abs();
    Ok(RayReport {
        times: family.times.clone(),
        energies,
        horizon,
        energy_slope_measured: slope,
        energy_slope_paper: paper,
        energy_slope_moment: -0.5 * divisor.multiplicity * family.c * family.c,
        affine_deviation,
        affine_tol,
        slope_rel_err,
        affine: affine_deviation <= affine_tol,
        slope_ok: slope_rel_err <= slope_tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::envelope_theta;
    use crate::forms::{make_background, make_divisor, CurvatureChoice};

    #[test]
    fn paper_slope_value() {
        assert!((paper_slope(1.0, 1.0, 0.5) + 0.1041666666).abs() < 1e-9);
        assert!(paper_slope(2.0, 1.5, 1.0) < 0.0);
    }

    #[test]
    fn hull_and_weights() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [0.0, -1.0, 1.0, 0.0];
        let h = upper_hull(&x, &y);
        assert_eq!(h, vec![0.0, 0.5, 1.0, 0.0]);
        assert_eq!(trapezoid_weights(&x, 3.0), vec![0.5, 1.0, 1.0, 0.5]);
        assert_eq!(trapezoid_weights(&[0.2], 0.5), vec![0.5]);
    }

    #[test]
    fn single_mu_ray_is_affine() {
        let g = TorusGrid::new(16).unwrap();
        let omega = make_background(&g, |_, _| 1.0, true).unwrap();
        let psi = g.from_fn(|x, y| -0.1 * ((6.28 * x).sin() * (6.28 * y).cos()).powi(2));
        let mu0 = -0.3;
        let mut fam = family_from_parts(0.5, vec![mu0], vec![psi.clone()]).unwrap();
        fam.legendre_ray(&[0.0, 1.0, 2.0, 5.0]).unwrap();
        for (t, phi) in fam.times.iter().zip(&fam.ray) {
            assert!((phi - &psi.shift(mu0 * t)).sup_norm() < 1e-15);
            let e = energy(&g, phi, &omega);
            assert!((e - energy(&g, &psi, &omega) - mu0 * t * omega.volume).abs() < 1e-12);
        }
        assert_eq!(fam.biconjugate_gap(), 0.0);
        // one-point quadrature
        let beta = 8.0;
        let q = quadrature(&[0.2], 0.5, beta, &[psi.clone()], 2.0);
        let want = psi.shift((0.2 - 0.5) * 2.0 + (0.5f64).ln() / beta);
        assert!((&q - &want).sup_norm() < 1e-12);
    }

    #[test]
    fn divisor_family_ray() {
        let n = 32;
        let g = TorusGrid::new(n).unwrap();
        let omega = make_background(&g, |_, _| 1.0, true).unwrap();
        let z = make_divisor(&g, &[(g.idx(n / 2, n / 2), 1.0)], CurvatureChoice::Constant).unwrap();
        let lcp = LcpOptions::default();
        let lambdas = uniform_lambdas(0.5, 9);
        let mut fam = build_psi_family(&g, &omega, &z, 0.5, &lambdas, &lcp, 1e-6).unwrap();
        let u0 = envelope_theta(&g, &omega, &lcp).unwrap().u;
        assert!((&fam.psi[0] - &u0).sup_norm() < 1e-12);
        fam.legendre_ray(&default_times()).unwrap();
        assert!(fam.convexity_defect() < 1e-12);
        assert_eq!(fam.argmax_decreases(), 0);
        assert!(fam.biconjugate_gap() < 1e-9);
        // large times: argmax saturates at mu = 0
        assert!(fam.argmax.last().unwrap().iter().all(|&a| a as usize == lambdas.len() - 1));

        let rep = energy_slope_check(&g, &fam, &omega, &z, None, 0.02).unwrap();
        assert!(rep.energy_slope_measured < 0.0);

        let mu0 = VolumeDensity::uniform(&g);
        let opts = SolveOptions::default();
        let times = fam.times.clone();
        let mut prev = f64::INFINITY;
        for beta in [16.0, 64.0] {
            let sub = subgeodesic(&g, &omega, &z, 0.5, beta, &lambdas, &times, &mu0, &opts).unwrap();
            let row = convergence_row(&fam, &sub, 32.0);
            assert!(row.sup_dev < prev);
            prev = row.sup_dev;
        }
    }

    #[test]
    fn rejects_bad_grids() {
        let g = TorusGrid::new(16).unwrap();
        let omega = make_background(&g, |_, _| 1.0, true).unwrap();
        let z = make_divisor(&g, &[(0, 1.0)], CurvatureChoice::Constant).unwrap();
        let lcp = LcpOptions::default();
        assert!(build_psi_family(&g, &omega, &z, 1.5, &[0.0], &lcp, 1e-6).is_err());
        assert!(build_psi_family(&g, &omega, &z, 0.5, &[0.0, 0.6], &lcp, 1e-6).is_err());
    }
}
