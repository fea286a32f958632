//! Families of divisor envelopes indexed by `lambda` and their growing
//! non-contact domains `M_lambda` (Laplace growth).

use rayon::prelude::*;
use serde::Serialize;

use crate::contour::Polyline;
use crate::envelope::{envelope_divisor, free_boundary, total_length, DivisorEnvelope, LcpOptions};
use crate::error::{Error, Result};
use crate::forms::{BackgroundForm, DivisorData};
use crate::grid::TorusGrid;

#[derive(Debug, Clone)]
pub struct FamilyOptions {
    pub lcp: LcpOptions,
    /// Seed each envelope with the previous one. Without it the solves run in parallel.
    pub warm_start: bool,
}

impl Default for FamilyOptions {
    fn default() -> Self {
        Self {
            lcp: LcpOptions::default(),
            warm_start: true,
        }
    }
}

/// `count` uniform steps from 0 to `0.9 V / m` inclusive.
pub fn default_lambdas(omega: &BackgroundForm, divisor: &DivisorData, count: usize) -> Vec<f64> {
    let top = 0.9 * omega.volume / divisor.multiplicity;
    let count = count.max(2);
    (0..count).map(|k| top * k as f64 / (count - 1) as f64).collect()
}

#[derive(Debug, Clone)]
pub struct HeleShawFamily {
    pub lambdas: Vec<f64>,
    pub solutions: Vec<DivisorEnvelope>,
    /// `M_lambda`, the non-contact set.
    pub domains: Vec<Vec<bool>>,
    /// `integrate over M_lambda of f_omega`.
    pub areas: Vec<f64>,
    pub boundaries: Vec<Vec<Polyline>>,
    pub multiplicity: f64,
    pub volume: f64,
}

/// One row of the family summary.
#[derive(Debug, Clone, Serialize)]
pub struct FamilyRow {
    pub lambda: f64,
    pub area: f64,
    pub boundary_length: f64,
    pub n_components: usize,
}

impl HeleShawFamily {
    pub fn rows(&self) -> Vec<FamilyRow> {
        (0..self.lambdas.len())
            .map(|i| FamilyRow {
                lambda: self.lambdas[i],
                area: self.areas[i],
                boundary_length: total_length(&self.boundaries[i]),
                n_components: self.boundaries[i].len(),
            })
            .collect()
    }
}

pub fn run_family(
    grid: &TorusGrid,
    omega: &BackgroundForm,
    divisor: &DivisorData,
    lambdas: &[f64],
    opts: &FamilyOptions,
) -> Result<HeleShawFamily> {
    if omega.density.min() <= 0.0 {
        return Err(Error::InvalidArgument(
            "Hele-Shaw families need a strictly positive form".into(),
        ));
    }
    if lambdas.is_empty() {
        return Err(Error::InvalidArgument("lambda grid is empty".into()));
    }
    if lambdas[0] < 0.0 || lambdas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "lambda grid must be non-negative and strictly increasing".into(),
        ));
    }
    let last = *lambdas.last().unwrap();
    if omega.volume - last * divisor.multiplicity <= 0.0 {
        return Err(Error::SeshadriViolation {
            lambda: last,
            volume: omega.volume - last * divisor.multiplicity,
        });
    }

    let solutions: Vec<DivisorEnvelope> = if opts.warm_start {
        let mut out: Vec<DivisorEnvelope> = Vec::with_capacity(lambdas.len());
        for &lambda in lambdas {
            let init = out.last().map(|prev| &prev.solution.u);
            let env = envelope_divisor(grid, omega, divisor, lambda, &opts.lcp, init)
                .map_err(Error::at("lambda", lambda))?;
            out.push(env);
        }
        out
    } else {
        lambdas
            .par_iter()
            .map(|&lambda| {
                envelope_divisor(grid, omega, divisor, lambda, &opts.lcp, None)
                    .map_err(Error::at("lambda", lambda))
            })
            .collect::<Result<_>>()?
    };

    let mut family = HeleShawFamily {
        lambdas: lambdas.to_vec(),
        solutions: Vec::new(),
        domains: Vec::new(),
        areas: Vec::new(),
        boundaries: Vec::new(),
        multiplicity: divisor.multiplicity,
        volume: omega.volume,
    };
    for env in solutions {
        let domain = env.solution.free_mask();
        let area = domain
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(k, _)| omega.density[k])
            .sum::<f64>()
            * grid.cell_area();
        let boundary = match free_boundary(grid, &env.solution, opts.lcp.contact_tol) {
            Ok(b) => b,
            Err(Error::EmptyBoundary) => Vec::new(),
            Err(e) => return Err(e),
        };
        family.domains.push(domain);
        family.areas.push(area);
        family.boundaries.push(boundary);
        family.solutions.push(env);
    }
    Ok(family)
}

/// Free nodes with at least one contact neighbour.
pub fn boundary_nodes(grid: &TorusGrid, domain: &[bool]) -> usize {
    let n = grid.n();
    let mut count = 0;
    for i in 0..n {
        for j in 0..n {
            let k = grid.idx(i, j);
            if domain[k] && grid.neighbors(i, j).iter().any(|&nb| !domain[nb]) {
                count += 1;
            }
        }
    }
    count
}

#[derive(Debug, Clone, Serialize)]
pub struct NestingReport {
    /// `|M_lambda \ M_lambda'|` for consecutive pairs.
    pub reclassified: Vec<usize>,
    /// Boundary node count of the larger domain of each pair.
    pub boundary: Vec<usize>,
    pub worst_fraction: f64,
    pub pass: bool,
}

/// Weak nesting `M_lambda ⊆ M_lambda'` up to `max_fraction` of boundary nodes.
pub fn nesting_check(grid: &TorusGrid, family: &HeleShawFamily, max_fraction: f64) -> NestingReport {
    let mut reclassified = Vec::new();
    let mut boundary = Vec::new();
    let mut worst: f64 = 0.0;
    for w in family.domains.windows(2) {
        let lost = w[0].iter().zip(&w[1]).filter(|(a, b)| **a && !**b).count();
        let b = boundary_nodes(grid, &w[1]);
        let frac = if lost == 0 { 0.0 } else { lost as f64 / b.max(1) as f64 };
        worst = worst.max(frac);
        reclassified.push(lost);
        boundary.push(b);
    }
    NestingReport {
        reclassified,
        boundary,
        worst_fraction: worst,
        pass: worst <= max_fraction,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AreaLawReport {
    /// `area_lambda - lambda m`.
    pub deviation: Vec<f64>,
    pub worst: f64,
    pub tol: f64,
    pub pass: bool,
}

pub fn area_law_check(family: &HeleShawFamily, tol: f64) -> AreaLawReport {
    let deviation: Vec<f64> = family
        .lambdas
        .iter()
        .zip(&family.areas)
        .map(|(l, a)| a - l * family.multiplicity)
        .collect();
    let worst = deviation.iter().map(|d| d.abs()).fold(0.0, f64::max);
    AreaLawReport {
        deviation,
        worst,
        tol,
        pass: worst <= tol,
    }
}

/// `integrate over the contact set of MA(u_lambda)` against `V - lambda m`, per lambda.
pub fn mass_identity(grid: &TorusGrid, family: &HeleShawFamily) -> Vec<(f64, f64)> {
    family
        .solutions
        .iter()
        .map(|env| {
            let s: f64 = env
                .solution
                .contact_mask
                .iter()
                .enumerate()
                .filter(|(_, &c)| c)
                .map(|(k, _)| env.solution.ma[k])
                .sum();
            (
                s * grid.cell_area(),
                family.volume - env.lambda * family.multiplicity,
            )
        })
        .collect()
}

/// True when every divisor node lies in `M_lambda` for all `lambda > 0`.
pub fn divisor_inside(family: &HeleShawFamily, divisor: &DivisorData) -> bool {
    family
        .lambdas
        .iter()
        .zip(&family.domains)
        .filter(|(l, _)| **l > 0.0)
        .all(|(_, m)| divisor.nodes.iter().all(|&(k, _)| m[k]))
}

#[derive(Debug, Clone, Serialize)]
pub struct ExhaustionReport {
    /// `(lambda m / V, area / V)` per lambda.
    pub trace: Vec<(f64, f64)>,
    pub final_fraction: f64,
    pub worst_deviation: f64,
    pub pass: bool,
}

/// For `V = m` the domains exhaust the torus: `area_lambda / V` tracks `lambda`
/// within `tol` all the way up the grid.
pub fn exhaustion_check(family: &HeleShawFamily, tol: f64) -> Result<ExhaustionReport> {
    let (v, m) = (family.volume, family.multiplicity);
    if (v - m).abs() > 1e-9 * m {
        return Err(Error::WrongRegime {
            volume: v,
            multiplicity: m,
        });
    }
    let trace: Vec<(f64, f64)> = family
        .lambdas
        .iter()
        .zip(&family.areas)
        .map(|(l, a)| (l * m / v, a / v))
        .collect();
    let worst_deviation = trace.iter().map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    Ok(ExhaustionReport {
        final_fraction: trace.last().map(|t| t.1).unwrap_or(0.0),
        worst_deviation,
        pass: worst_deviation <= tol,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::{make_background, make_divisor, CurvatureChoice};

    fn setup(n: usize, v: f64) -> (TorusGrid, BackgroundForm, DivisorData) {
        let g = TorusGrid::new(n).unwrap();
        let omega = make_background(&g, |_, _| v, true).unwrap();
        let z = make_divisor(&g, &[(g.idx(n / 2, n / 2), 1.0)], CurvatureChoice::Constant).unwrap();
        (g, omega, z)
    }

    #[test]
    fn family_grows_with_area_law() {
        let (g, omega, z) = setup(64, 1.0);
        let lambdas = [0.0, 0.1, 0.2, 0.3];
        let fam = run_family(&g, &omega, &z, &lambdas, &FamilyOptions::default()).unwrap();
        assert_eq!(fam.areas[0], 0.0);
        assert!(fam.boundaries[0].is_empty());
        let law = area_law_check(&fam, 0.02);
        assert!(law.pass, "{law:?}");
        assert!(nesting_check(&g, &fam, 0.005).pass);
        assert!(divisor_inside(&fam, &z));
        for (got, want) in mass_identity(&g, &fam) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
        // single round component
        let b = &fam.boundaries[2];
        assert_eq!(b.len(), 1);
        assert!(b[0].radial_spread().1 < 0.1);
        let ex = exhaustion_check(&fam, 0.02).unwrap();
        assert!(ex.pass);
    }

    #[test]
    fn cold_family_matches_warm() {
        let (g, omega, z) = setup(32, 1.0);
        let lambdas = [0.1, 0.3];
        let warm = run_family(&g, &omega, &z, &lambdas, &FamilyOptions::default()).unwrap();
        let cold_opts = FamilyOptions {
            warm_start: false,
            ..Default::default()
        };
        let cold = run_family(&g, &omega, &z, &lambdas, &cold_opts).unwrap();
        assert_eq!(warm.domains, cold.domains);
        for (a, b) in warm.solutions.iter().zip(&cold.solutions) {
            assert!((&a.phi - &b.phi).sup_norm() < 1e-8);
        }
    }

    #[test]
    fn preconditions() {
        let (g, omega, z) = setup(16, 2.0);
        let fam = run_family(&g, &omega, &z, &[0.0, 0.5], &FamilyOptions::default()).unwrap();
        assert!(matches!(exhaustion_check(&fam, 0.02), Err(Error::WrongRegime { .. })));
        assert!(matches!(
            run_family(&g, &omega, &z, &[0.5, 2.5], &FamilyOptions::default()),
            Err(Error::SeshadriViolation { .. })
        ));
        assert!(run_family(&g, &omega, &z, &[0.3, 0.1], &FamilyOptions::default()).is_err());
    }
}
