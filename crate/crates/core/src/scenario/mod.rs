//! Scenario configs and the experiment runner behind the `mazt` binary.
//!
//! A scenario is a TOML file:
//!
//! ```toml
//! n = 64
//! background = "1+2*cos(2*pi*x)"
//! volume = "1"
//! beta = [64]
//!
//! [divisor]                 # hele-shaw and geodesic only
//! points = [[0.5, 0.5, 1.0]]
//!
//! [tolerances]
//! newton_tol = 1e-10
//! ```
//!
//! Unknown keys are rejected.

mod recipe;
mod run;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use recipe::Recipe;
pub use run::{run_scenario, CheckResult, Summary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Solve,
    Envelope,
    SweepBeta,
    HeleShaw,
    Geodesic,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Solve => "solve",
            Kind::Envelope => "envelope",
            Kind::SweepBeta => "sweep-beta",
            Kind::HeleShaw => "hele-shaw",
            Kind::Geodesic => "geodesic",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Kind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "solve" => Ok(Kind::Solve),
            "envelope" => Ok(Kind::Envelope),
            "sweep-beta" => Ok(Kind::SweepBeta),
            "hele-shaw" => Ok(Kind::HeleShaw),
            "geodesic" => Ok(Kind::Geodesic),
            other => Err(format!(
                "unknown kind `{other}` (expected solve, envelope, sweep-beta, hele-shaw or geodesic)"
            )),
        }
    }
}

/// Optional numerical knobs; unset values take the module defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub newton_tol: Option<f64>,
    pub max_newton_iters: Option<usize>,
    pub lcp_tol: Option<f64>,
    pub contact_tol: Option<f64>,
    /// Bound on `|integrate(u_theta MA(u_theta))|`.
    pub orthogonality_tol: Option<f64>,
    /// Additive slack in the refined bound check.
    pub grid_slack: Option<f64>,
    /// `delta` for the decay check as a fraction of `sup |u_theta|`.
    pub delta_fraction: Option<f64>,
    pub area_tol: Option<f64>,
    pub nesting_fraction: Option<f64>,
    pub concavity_tol: Option<f64>,
    pub slope_tol: Option<f64>,
    /// Largest time used for the affine energy fit.
    pub affine_horizon: Option<f64>,
    /// Times from which the subgeodesic deviation must be flat.
    pub tail_start: Option<f64>,
    pub tail_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DivisorSpec {
    /// `[x, y, multiplicity]` triples, snapped to the nearest nodes.
    pub points: Vec<[f64; 3]>,
    /// Curvature density of the line bundle; constant `m` when absent.
    pub curvature: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    kind: Option<Kind>,
    n: usize,
    background: String,
    volume: Option<String>,
    beta: Option<Vec<f64>>,
    lambda: Option<Vec<f64>>,
    times: Option<Vec<f64>>,
    c: Option<f64>,
    continuation: Option<bool>,
    out: Option<PathBuf>,
    divisor: Option<DivisorSpec>,
    #[serde(default)]
    tolerances: Tolerances,
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub kind: Kind,
    pub n: usize,
    pub background: Recipe,
    pub volume: Recipe,
    pub betas: Vec<f64>,
    pub lambdas: Option<Vec<f64>>,
    pub times: Option<Vec<f64>>,
    pub c: Option<f64>,
    pub continuation: bool,
    pub out: Option<PathBuf>,
    pub divisor: Option<DivisorSpec>,
    pub curvature: Option<Recipe>,
    pub tolerances: Tolerances,
}

fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::Validation {
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// 1-based line and column of a byte offset.
fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Parses and validates a scenario.
///
/// `kind` comes from the command line; a `kind` key in the file must agree with it.
pub fn parse_scenario_str(text: &str, kind: Option<Kind>) -> Result<Scenario> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_column(text, s.start));
        Error::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    let kind = match (kind, raw.kind) {
        (Some(a), Some(b)) if a != b => {
            return Err(invalid(
                "kind",
                format!("config says `{b}` but `{a}` was requested"),
            ))
        }
        (Some(a), _) | (None, Some(a)) => a,
        (None, None) => return Err(invalid("kind", "no experiment kind given")),
    };
    if raw.n < 8 {
        return Err(invalid("n", format!("grid needs at least 8 nodes per axis, got {}", raw.n)));
    }
    let background = Recipe::parse("background", &raw.background)?;
    let volume = Recipe::parse("volume", raw.volume.as_deref().unwrap_or("1"))?;

    let betas = match (&raw.beta, kind) {
        (Some(b), _) => b.clone(),
        (None, Kind::SweepBeta) => crate::zero_temp::default_betas(),
        (None, Kind::Solve) => return Err(invalid("beta", "solve needs at least one beta")),
        (None, _) => Vec::new(),
    };
    if let Some(b) = betas.iter().find(|&&b| !(b > 1.0 && b.is_finite())) {
        return Err(invalid("beta", format!("beta must exceed 1, got {b}")));
    }
    if kind == Kind::SweepBeta && betas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("beta", "beta list must be strictly increasing"));
    }
    if matches!(kind, Kind::HeleShaw | Kind::Geodesic) && raw.divisor.is_none() {
        return Err(invalid(
            "divisor",
            format!("{kind} scenarios need a [divisor] section"),
        ));
    }
    let mut curvature = None;
    if let Some(d) = &raw.divisor {
        if d.points.is_empty() {
            return Err(invalid("divisor", "no divisor points"));
        }
        if d.points.iter().any(|p| !(p[2] > 0.0) || !p.iter().all(|v| v.is_finite())) {
            return Err(invalid("divisor", "points need finite coordinates and positive multiplicity"));
        }
        if let Some(src) = &d.curvature {
            curvature = Some(Recipe::parse("divisor.curvature", src)?);
        }
    }
    if let Some(l) = &raw.lambda {
        if l.is_empty() || l[0] < 0.0 || l.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("lambda", "lambda grid must be non-empty, non-negative and strictly increasing"));
        }
    }
    if let Some(t) = &raw.times {
        if t.is_empty() || t[0] < 0.0 || t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("times", "times must be non-empty, non-negative and strictly increasing"));
        }
    }
    if kind == Kind::Geodesic {
        match raw.c {
            Some(c) if c > 0.0 => {}
            Some(c) => return Err(invalid("c", format!("offset must be positive, got {c}"))),
            None => return Err(invalid("c", "geodesic scenarios need the offset c")),
        }
        if betas.is_empty() {
            return Err(invalid("beta", "geodesic scenarios need at least one beta"));
        }
    }
    Ok(Scenario {
        kind,
        n: raw.n,
        background,
        volume,
        betas,
        lambdas: raw.lambda,
        times: raw.times,
        c: raw.c,
        continuation: raw.continuation.unwrap_or(true),
        out: raw.out,
        divisor: raw.divisor,
        curvature,
        tolerances: raw.tolerances,
    })
}

pub fn parse_scenario(path: &Path, kind: Option<Kind>) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario_str(&text, kind)
}
