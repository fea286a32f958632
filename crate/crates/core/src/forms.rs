//! Background forms, volume densities and divisor data.

use log::warn;

use crate::error::{Error, Result};
use crate::grid::{ScalarField, TorusGrid};
use crate::KAPPA;

/// Tolerance for mass identities of curvature densities.
pub const MASS_TOL: f64 = 1e-10;

/// A smooth closed (1,1)-form, represented by its density against `dA`.
#[derive(Clone, Debug)]
pub struct BackgroundForm {
    pub density: ScalarField,
    /// Class volume, `integrate(density)`.
    pub volume: f64,
}

impl BackgroundForm {
    /// Wraps a sampled density; with `require_kahler` a non-positive volume is rejected.
    pub fn new(grid: &TorusGrid, density: ScalarField, require_kahler: bool) -> Result<Self> {
        grid.check(&density)?;
        if !density.is_finite() {
            return Err(Error::InvalidArgument(
                "background density has non-finite values".into(),
            ));
        }
        let volume = grid.integrate(&density);
        if require_kahler && volume <= 0.0 {
            return Err(Error::NonKahler { volume });
        }
        Ok(Self { density, volume })
    }

    pub fn is_kahler(&self) -> bool {
        self.volume > 0.0
    }

    pub fn is_semipositive(&self) -> bool {
        self.density.min() >= 0.0
    }
}

/// Samples `recipe` at the nodes.
pub fn make_background(
    grid: &TorusGrid,
    recipe: impl Fn(f64, f64) -> f64,
    require_kahler: bool,
) -> Result<BackgroundForm> {
    BackgroundForm::new(grid, grid.from_fn(recipe), require_kahler)
}

/// A positive density normalized to unit mass.
#[derive(Clone, Debug)]
pub struct VolumeDensity {
    pub density: ScalarField,
}

impl VolumeDensity {
    /// Normalizes a strictly positive density to `integrate = 1`.
    pub fn new(grid: &TorusGrid, density: ScalarField) -> Result<Self> {
        grid.check(&density)?;
        if !density.is_finite() || density.min() <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "volume density must be finite and positive (min {})",
                density.min()
            )));
        }
        let mass = grid.integrate(&density);
        Ok(Self {
            density: density.scale(1.0 / mass),
        })
    }

    pub fn uniform(grid: &TorusGrid) -> Self {
        Self {
            density: grid.constant(1.0),
        }
    }

    pub fn from_recipe(grid: &TorusGrid, recipe: impl Fn(f64, f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.from_fn(recipe))
    }
}

/// An effective divisor supported on grid nodes, with a curvature density and
/// the discrete potential `h_s = log |s|^2`.
#[derive(Clone, Debug)]
pub struct DivisorData {
    /// `(node index, multiplicity)`.
    pub nodes: Vec<(usize, f64)>,
    /// Total multiplicity.
    pub multiplicity: f64,
    /// Curvature density of the line bundle metric, integrating to `multiplicity`.
    pub f_l: ScalarField,
    /// `log |s|^2`, normalized so that its maximum is 0.
    pub h_s: ScalarField,
    /// True when `f_l` is constant, in which case `seshadri` is exact.
    pub constant_curvature: bool,
}

/// How the curvature density of the line bundle is chosen.
pub enum CurvatureChoice<'a> {
    /// `f_L = m`.
    Constant,
    /// A caller-supplied density; it must integrate to the total multiplicity.
    Field(&'a ScalarField),
}

/// Builds divisor data from `(node, multiplicity)` pairs.
///
/// The Dirac mass of each node is `m_i / cell_area` on that single node, so the
/// resulting Green potential is finite at the divisor.
pub fn make_divisor(
    grid: &TorusGrid,
    nodes: &[(usize, f64)],
    curvature: CurvatureChoice<'_>,
) -> Result<DivisorData> {
    if nodes.is_empty() {
        return Err(Error::InvalidArgument("divisor has no nodes".into()));
    }
    if let Some((k, m)) = nodes.iter().find(|(k, m)| *k >= grid.len() || *m <= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "invalid divisor node {k} with multiplicity {m}"
        )));
    }
    let multiplicity: f64 = nodes.iter().map(|(_, m)| m).sum();
    let (f_l, constant_curvature) = match curvature {
        CurvatureChoice::Constant => (grid.constant(multiplicity), true),
        CurvatureChoice::Field(f) => {
            grid.check(f)?;
            let mass = grid.integrate(f);
            if (mass - multiplicity).abs() > MASS_TOL * multiplicity.max(1.0) {
                return Err(Error::BadMass {
                    expected: multiplicity,
                    got: mass,
                });
            }
            let constant = f.oscillation() == 0.0;
            (f.clone(), constant)
        }
    };
    let mut rhs = f_l.scale(-1.0 / KAPPA);
    let dirac = 1.0 / (grid.cell_area() * KAPPA);
    for &(k, m) in nodes {
        rhs[k] += m * dirac;
    }
    let h_s = grid.poisson_solve(&rhs)?;
    let top = h_s.max();
    let h_s = h_s.shift(-top);
    Ok(DivisorData {
        nodes: nodes.to_vec(),
        multiplicity,
        f_l,
        h_s,
        constant_curvature,
    })
}

/// Snaps `(x, y, multiplicity)` points to the nearest nodes, logging the snap distance.
pub fn snap_divisor_points(grid: &TorusGrid, points: &[(f64, f64, f64)]) -> Vec<(usize, f64)> {
    points
        .iter()
        .map(|&(x, y, m)| {
            let ((i, j), dist) = grid.snap(x, y);
            if dist > 0.0 {
                warn!("divisor point ({x}, {y}) snapped to node ({i}, {j}), distance {dist:.3e}");
            }
            (grid.idx(i, j), m)
        })
        .collect()
}

impl DivisorData {
    /// `V / m`; exact for constant curvature, otherwise only an upper bound.
    pub fn seshadri(&self, omega: &BackgroundForm) -> f64 {
        if !self.constant_curvature {
            warn!("Seshadri constant from V/m is only an upper bound for non-constant f_L");
        }
        omega.volume / self.multiplicity
    }

    /// Node where `h_s` is smallest.
    pub fn deepest_node(&self) -> usize {
        self.h_s.argmin()
    }

    pub fn contains(&self, k: usize) -> bool {
        self.nodes.iter().any(|&(n, _)| n == k)
    }
}

/// `theta - lambda * theta_L`, with volume `V - lambda m`.
pub fn twist(
    theta: &BackgroundForm,
    divisor: &DivisorData,
    lambda: f64,
    require_kahler: bool,
) -> Result<BackgroundForm> {
    if lambda < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "twist parameter must be non-negative, got {lambda}"
        )));
    }
    let density = theta
        .density
        .zip_map(&divisor.f_l, |f, l| f - lambda * l);
    let volume = theta.volume - lambda * divisor.multiplicity;
    if require_kahler && volume <= 0.0 {
        return Err(Error::NonKahler { volume });
    }
    Ok(BackgroundForm { density, volume })
}
