//! Envelopes as solutions of the discrete obstacle problem.
//!
//! `P_theta(phi0)` is the largest `u` with `u <= phi0` and `f_theta + KAPPA lap u >= 0`.
//! On the grid this is the linear complementarity problem
//!
//! ```text
//! u <= phi0,   w := f_theta + KAPPA lap u >= 0,   (phi0 - u) w = 0,
//! ```
//!
//! solved by projected SOR to a rough contact set, then a primal-dual active-set
//! iteration that solves the Dirichlet problem on the non-contact set exactly.

use serde::Serialize;

use crate::contour::{periodic_contours, Polyline};
use crate::error::{Error, Result};
use crate::forms::{twist, BackgroundForm, DivisorData};
use crate::grid::{ScalarField, TorusGrid};
use crate::linalg::pcg;
use crate::KAPPA;

/// Obstacle `phi0`; nodes with `constrained[k] == false` carry the value `+inf`.
#[derive(Debug, Clone)]
pub struct Obstacle {
    values: ScalarField,
    constrained: Vec<bool>,
}

impl Obstacle {
    /// Builds an obstacle; `+inf` entries become unconstrained nodes.
    pub fn new(values: ScalarField) -> Result<Self> {
        let constrained: Vec<bool> = values.values().iter().map(|v| *v != f64::INFINITY).collect();
        if !constrained.iter().any(|&c| c) {
            return Err(Error::InvalidArgument(
                "obstacle has no finite value".into(),
            ));
        }
        if values
            .values()
            .iter()
            .any(|v| v.is_nan() || *v == f64::NEG_INFINITY)
        {
            return Err(Error::InvalidArgument(
                "obstacle must be bounded below and not NaN".into(),
            ));
        }
        let values = values.map(|v| if v.is_finite() { v } else { 0.0 });
        Ok(Self {
            values,
            constrained,
        })
    }

    pub fn zero(grid: &TorusGrid) -> Self {
        Self {
            values: grid.zeros(),
            constrained: vec![true; grid.len()],
        }
    }

    /// Finite part of the obstacle (0 at unconstrained nodes).
    pub fn values(&self) -> &ScalarField {
        &self.values
    }

    pub fn is_constrained(&self, k: usize) -> bool {
        self.constrained[k]
    }
}

#[derive(Debug, Clone)]
pub struct LcpOptions {
    /// Over-relaxation factor of projected SOR.
    pub relax: f64,
    pub sor_sweeps: usize,
    /// Stop SOR early once the largest update falls below this.
    pub sor_tol: f64,
    /// Target for every complementarity condition.
    pub lcp_tol: f64,
    /// Gap below which a constrained node counts as contact.
    pub contact_tol: f64,
    pub max_active_iters: usize,
    pub max_cg_iters: usize,
}

impl Default for LcpOptions {
    fn default() -> Self {
        Self {
            relax: 1.5,
            sor_sweeps: 400,
            sor_tol: 1e-9,
            lcp_tol: 1e-10,
            contact_tol: 1e-7,
            max_active_iters: 2000,
            max_cg_iters: 20_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnvelopeSolution {
    pub u: ScalarField,
    /// Contact set `D = {phi0 - u <= contact_tol}` (constrained nodes only).
    pub contact_mask: Vec<bool>,
    /// `phi0 - u`, `+inf` at unconstrained nodes.
    pub gap: ScalarField,
    /// Monge-Ampère density `f_theta + KAPPA lap u`.
    pub ma: ScalarField,
    /// `max_k |min(w_k, gap_k)|`.
    pub comp_residual: f64,
    pub active_iters: usize,
    pub sor_sweeps: usize,
}

impl EnvelopeSolution {
    pub fn contact_count(&self) -> usize {
        self.contact_mask.iter().filter(|&&c| c).count()
    }

    /// Non-contact set `M`.
    pub fn free_mask(&self) -> Vec<bool> {
        self.contact_mask.iter().map(|c| !c).collect()
    }

    /// `integrate(u * MA(u))`.
    pub fn orthogonality(&self, grid: &TorusGrid) -> f64 {
        grid.integrate(&(&self.u * &self.ma))
    }

    /// Mass of `MA(u)^+` off the contact set.
    pub fn off_contact_mass(&self, grid: &TorusGrid) -> f64 {
        let mut s = 0.0;
        for (k, &c) in self.contact_mask.iter().enumerate() {
            if !c {
                s += self.ma[k].max(0.0);
            }
        }
        s * grid.cell_area()
    }

    /// Largest violation among the three complementarity conditions.
    pub fn lcp_violations(&self) -> (f64, f64, f64) {
        let mut above = 0.0f64;
        let mut negative = 0.0f64;
        let mut product = 0.0f64;
        for k in 0..self.u.len() {
            let g = self.gap[k];
            let w = self.ma[k];
            if g.is_finite() {
                above = above.max(-g);
                product = product.max(g.min(w));
            } else {
                product = product.max(w.abs());
            }
            negative = negative.max(-w);
        }
        (above, negative, product)
    }
}

fn validate(grid: &TorusGrid, theta: &BackgroundForm, obstacle: &Obstacle) -> Result<()> {
    grid.check(&theta.density)?;
    grid.check(&obstacle.values)?;
    if theta.volume <= 0.0 {
        return Err(Error::InfeasibleClass {
            volume: theta.volume,
        });
    }
    Ok(())
}

/// `P_theta(phi0)`.
///
/// `init`, when given, seeds projected SOR (warm start across families).
pub fn project(
    grid: &TorusGrid,
    theta: &BackgroundForm,
    obstacle: &Obstacle,
    opts: &LcpOptions,
    init: Option<&ScalarField>,
) -> Result<EnvelopeSolution> {
    validate(grid, theta, obstacle)?;
    let n = grid.len();
    let f = theta.density.values();
    let phi0 = obstacle.values.values();
    let con = &obstacle.constrained;
    let top = (0..n)
        .filter(|&k| con[k])
        .map(|k| phi0[k])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut u: Vec<f64> = match init {
        Some(init) => {
            grid.check(init)?;
            (0..n)
                .map(|k| if con[k] { init[k].min(phi0[k]) } else { init[k] })
                .collect()
        }
        None => (0..n).map(|k| if con[k] { phi0[k] } else { top }).collect(),
    };

    // projected SOR
    let h2k = grid.cell_area() / KAPPA;
    let mut sweeps = 0;
    for _ in 0..opts.sor_sweeps {
        sweeps += 1;
        let mut change: f64 = 0.0;
        for i in 0..grid.n() {
            for j in 0..grid.n() {
                let k = grid.idx(i, j);
                let nb = grid.neighbors(i, j);
                let s = u[nb[0]] + u[nb[1]] + u[nb[2]] + u[nb[3]];
                let target = 0.25 * (s + f[k] * h2k);
                let mut next = u[k] + opts.relax * (target - u[k]);
                if con[k] {
                    next = next.min(phi0[k]);
                }
                change = change.max((next - u[k]).abs());
                u[k] = next;
            }
        }
        if change < opts.sor_tol {
            break;
        }
    }

    // primal-dual active set
    let c = h2k;
    let mut w = vec![0.0; n];
    let ma_of = |u: &[f64], w: &mut [f64]| {
        grid.laplacian_into(u, w);
        for k in 0..n {
            w[k] = f[k] + KAPPA * w[k];
        }
    };
    ma_of(&u, &mut w);
    let mut active: Vec<bool> = (0..n)
        .map(|k| con[k] && c * w[k] > phi0[k] - u[k])
        .collect();
    if !active.iter().any(|&a| a) {
        // keep the node closest to its obstacle
        let k = (0..n)
            .filter(|&k| con[k])
            .min_by(|&a, &b| (phi0[a] - u[a]).total_cmp(&(phi0[b] - u[b])))
            .expect("obstacle has a constrained node");
        active[k] = true;
    }

    let diag = 4.0 * KAPPA / grid.cell_area();
    let off = KAPPA / grid.cell_area();
    let mut rhs = vec![0.0; n];
    let mut iters = 0;
    let mut converged = false;
    for it in 1..=opts.max_active_iters {
        iters = it;
        for i in 0..grid.n() {
            for j in 0..grid.n() {
                let k = grid.idx(i, j);
                if active[k] {
                    rhs[k] = diag * phi0[k];
                    u[k] = phi0[k];
                } else {
                    let mut r = f[k];
                    for nb in grid.neighbors(i, j) {
                        if active[nb] {
                            r += off * phi0[nb];
                        }
                    }
                    rhs[k] = r;
                }
            }
        }
        let stats = pcg(
            |v: &[f64], out: &mut [f64]| {
                for i in 0..grid.n() {
                    for j in 0..grid.n() {
                        let k = grid.idx(i, j);
                        if active[k] {
                            out[k] = diag * v[k];
                        } else {
                            let mut s = diag * v[k];
                            for nb in grid.neighbors(i, j) {
                                if !active[nb] {
                                    s -= off * v[nb];
                                }
                            }
                            out[k] = s;
                        }
                    }
                }
            },
            |r: &[f64], z: &mut [f64]| z.copy_from_slice(r),
            &rhs,
            &mut u,
            0.0,
            1e-3 * opts.lcp_tol,
            opts.max_cg_iters,
        );
        if !stats.converged {
            return Err(Error::NoConvergence {
                solver: "active-set inner CG",
                iters: stats.iters,
                residual: stats.residual,
                history: vec![stats.residual],
            });
        }
        ma_of(&u, &mut w);
        let residual = (0..n)
            .map(|k| {
                let gap = if con[k] { phi0[k] - u[k] } else { f64::INFINITY };
                w[k].min(gap).abs()
            })
            .fold(0.0, f64::max);
        let next: Vec<bool> = (0..n)
            .map(|k| con[k] && c * w[k] > phi0[k] - u[k])
            .collect();
        // degenerate nodes (w = gap = 0) can make the active set cycle
        if next == active || residual <= opts.lcp_tol || !next.iter().any(|&a| a) {
            converged = true;
            break;
        }
        active = next;
    }

    let u = grid.field_from_vec(u)?;
    let ma = grid.field_from_vec(w)?;
    let gap = grid.field_from_vec(
        (0..n)
            .map(|k| if con[k] { phi0[k] - u[k] } else { f64::INFINITY })
            .collect(),
    )?;
    let comp_residual = (0..n)
        .map(|k| ma[k].min(gap[k]).abs())
        .fold(0.0, f64::max);
    if !converged || comp_residual > opts.lcp_tol {
        return Err(Error::NoConvergence {
            solver: "obstacle active set",
            iters,
            residual: comp_residual,
            history: vec![comp_residual],
        });
    }
    let contact_mask = (0..n)
        .map(|k| con[k] && gap[k] <= opts.contact_tol)
        .collect();
    Ok(EnvelopeSolution {
        u,
        contact_mask,
        gap,
        ma,
        comp_residual,
        active_iters: iters,
        sor_sweeps: sweeps,
    })
}

/// `u_theta = P_theta(0)`.
pub fn envelope_theta(
    grid: &TorusGrid,
    theta: &BackgroundForm,
    opts: &LcpOptions,
) -> Result<EnvelopeSolution> {
    let sol = project(grid, theta, &Obstacle::zero(grid), opts, None)?;
    if sol.contact_count() > 0 {
        let top = sol.u.max();
        if top.abs() > opts.contact_tol + opts.lcp_tol {
            return Err(Error::InvalidArgument(format!(
                "envelope touches its obstacle but sup u = {top:e}"
            )));
        }
    }
    Ok(sol)
}

/// Envelope with prescribed singularity along a divisor.
#[derive(Debug, Clone)]
pub struct DivisorEnvelope {
    pub lambda: f64,
    /// `u_lambda = P_{theta_lambda}(-lambda h_s)`.
    pub solution: EnvelopeSolution,
    /// `phi_lambda = u_lambda + lambda h_s <= 0`.
    pub phi: ScalarField,
}

pub fn envelope_divisor(
    grid: &TorusGrid,
    omega: &BackgroundForm,
    divisor: &DivisorData,
    lambda: f64,
    opts: &LcpOptions,
    init: Option<&ScalarField>,
) -> Result<DivisorEnvelope> {
    let twisted = twist(omega, divisor, lambda, false)?;
    if twisted.volume <= 0.0 {
        return Err(Error::SeshadriViolation {
            lambda,
            volume: twisted.volume,
        });
    }
    let obstacle = Obstacle::new(divisor.h_s.scale(-lambda))?;
    let solution = project(grid, &twisted, &obstacle, opts, init)?;
    let phi = solution.u.zip_map(&divisor.h_s, |u, h| u + lambda * h);
    debug_assert!(phi.max() <= opts.lcp_tol * 10.0);
    Ok(DivisorEnvelope {
        lambda,
        solution,
        phi,
    })
}

/// Closed polylines of `phi0 - u = contact_tol`, the boundary of the non-contact set.
pub fn free_boundary(
    grid: &TorusGrid,
    sol: &EnvelopeSolution,
    contact_tol: f64,
) -> Result<Vec<Polyline>> {
    let contact = sol.contact_count();
    if contact == 0 || contact == sol.contact_mask.len() {
        return Err(Error::EmptyBoundary);
    }
    Ok(periodic_contours(grid, sol.gap.values(), contact_tol))
}

pub fn total_length(lines: &[Polyline]) -> f64 {
    lines.iter().map(|l| l.length).sum()
}

/// Summary of a contact-set extraction, used by the exports.
#[derive(Debug, Clone, Serialize)]
pub struct ContactSummary {
    pub contact_nodes: usize,
    pub free_nodes: usize,
    pub boundary_components: usize,
    pub boundary_length: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::{make_background, make_divisor, CurvatureChoice};
    use std::f64::consts::PI;

    fn cosine(grid: &TorusGrid) -> BackgroundForm {
        make_background(grid, |x, _| 1.0 + 2.0 * (2.0 * PI * x).cos(), true).unwrap()
    }

    #[test]
    fn semipositive_form_has_zero_envelope() {
        let g = TorusGrid::new(32).unwrap();
        let theta = make_background(&g, |x, y| 1.0 + 0.5 * (2.0 * PI * x).sin() * (2.0 * PI * y).cos(), true).unwrap();
        let sol = envelope_theta(&g, &theta, &LcpOptions::default()).unwrap();
        assert!(sol.u.sup_norm() < 1e-12);
        assert_eq!(sol.contact_count(), g.len());
        assert!(matches!(free_boundary(&g, &sol, 1e-7), Err(Error::EmptyBoundary)));
    }

    #[test]
    fn psh_obstacle_is_its_own_envelope() {
        let g = TorusGrid::new(32).unwrap();
        let theta = make_background(&g, |_, _| 1.0, true).unwrap();
        // f + KAPPA lap(phi0) = 1 - 0.3 KAPPA (2 pi)^2 cos(..) * (stencil factor) > 0
        let phi0 = g.from_fn(|x, _| 0.3 * (2.0 * PI * x).cos());
        let sol = project(&g, &theta, &Obstacle::new(phi0.clone()).unwrap(), &LcpOptions::default(), None).unwrap();
        assert!((&sol.u - &phi0).sup_norm() < 1e-12);
    }

    #[test]
    fn cosine_envelope_conditions() {
        let g = TorusGrid::new(64).unwrap();
        let theta = cosine(&g);
        let opts = LcpOptions::default();
        let sol = envelope_theta(&g, &theta, &opts).unwrap();
        let (above, negative, product) = sol.lcp_violations();
        assert!(above <= opts.lcp_tol && negative <= opts.lcp_tol && product <= opts.lcp_tol);
        assert!(sol.orthogonality(&g).abs() < 1e-10);
        assert!(sol.off_contact_mass(&g) < 1e-10);
        assert!((g.integrate(&sol.ma) - theta.volume).abs() < 1e-12);
        assert!(sol.u.max().abs() < 1e-12);
        assert!(sol.u.min() < -0.2);
        // strip boundary: two straight loops of length 1
        let lines = free_boundary(&g, &sol, opts.contact_tol).unwrap();
        assert_eq!(lines.len(), 2);
        assert!((total_length(&lines) - 2.0).abs() < 1e-9);
        // y-independence
        for i in 0..64 {
            assert!((sol.u[(i, 0)] - sol.u[(i, 37)]).abs() < 1e-12);
        }
    }

    #[test]
    fn unconstrained_nodes_never_touch() {
        let g = TorusGrid::new(16).unwrap();
        let theta = make_background(&g, |_, _| 1.0, true).unwrap();
        let mut phi0 = g.zeros();
        phi0[5] = f64::INFINITY;
        let sol = project(&g, &theta, &Obstacle::new(phi0).unwrap(), &LcpOptions::default(), None).unwrap();
        assert!(!sol.contact_mask[5]);
        assert!(sol.gap[5].is_infinite());
        assert!(Obstacle::new(g.constant(f64::INFINITY)).is_err());
    }

    #[test]
    fn rejects_non_big_class() {
        let g = TorusGrid::new(16).unwrap();
        let theta = make_background(&g, |_, _| -0.5, false).unwrap();
        assert!(matches!(
            envelope_theta(&g, &theta, &LcpOptions::default()),
            Err(Error::InfeasibleClass { .. })
        ));
    }

    #[test]
    fn projection_is_monotone_and_idempotent() {
        let g = TorusGrid::new(32).unwrap();
        let theta = cosine(&g);
        let opts = LcpOptions::default();
        let lo = g.from_fn(|x, y| 0.1 * (2.0 * PI * y).sin() - 0.05 * x);
        let hi = lo.zip_map(&g.from_fn(|x, _| 0.05 + 0.05 * (2.0 * PI * x).cos()), |a, b| a + b);
        let p_lo = project(&g, &theta, &Obstacle::new(lo).unwrap(), &opts, None).unwrap();
        let p_hi = project(&g, &theta, &Obstacle::new(hi).unwrap(), &opts, None).unwrap();
        assert!((&p_lo.u - &p_hi.u).max() <= opts.lcp_tol);
        let again = project(&g, &theta, &Obstacle::new(p_lo.u.clone()).unwrap(), &opts, None).unwrap();
        assert!((&again.u - &p_lo.u).sup_norm() <= opts.lcp_tol);
    }

    #[test]
    fn divisor_envelope_basics() {
        let g = TorusGrid::new(64).unwrap();
        let omega = make_background(&g, |_, _| 1.0, true).unwrap();
        let p = g.idx(32, 32);
        let z = make_divisor(&g, &[(p, 1.0)], CurvatureChoice::Constant).unwrap();
        let opts = LcpOptions::default();
        let zero = envelope_divisor(&g, &omega, &z, 0.0, &opts, None).unwrap();
        let plain = envelope_theta(&g, &omega, &opts).unwrap();
        assert_eq!(zero.solution.u, plain.u);

        let small = envelope_divisor(&g, &omega, &z, 0.05, &opts, None).unwrap();
        assert!(small.phi.max() <= 1e-10);
        assert!(!small.solution.contact_mask[p]);
        let free = small.solution.free_mask().iter().filter(|&&m| m).count();
        assert!(free > 0 && (free as f64) < 0.1 * g.len() as f64);
        let lines = free_boundary(&g, &small.solution, opts.contact_tol).unwrap();
        assert_eq!(lines.len(), 1);
        let (_, dev) = lines[0].radial_spread();
        assert!(dev < 0.1, "dev = {dev}");

        assert!(matches!(
            envelope_divisor(&g, &omega, &z, 1.0, &opts, None),
            Err(Error::SeshadriViolation { .. })
        ));
    }
}
