//! Executes a validated scenario and writes its artifacts.

use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use serde_json::{json, Value};

use super::{Kind, Scenario};
use crate::envelope::{envelope_theta, free_boundary, LcpOptions};
use crate::error::{Error, Result};
use crate::forms::{make_divisor, snap_divisor_points, BackgroundForm, CurvatureChoice, DivisorData, VolumeDensity};
use crate::functionals::{contact_entropy, energy, energy_report, g_beta_stationarity, relative_entropy};
use crate::geodesic::{self, build_psi_family, convergence_row, energy_slope_check, subgeodesic};
use crate::grid::TorusGrid;
use crate::hele_shaw::{self, run_family, FamilyOptions};
use crate::io;
use crate::ma_solver::{laplacian_bound_report, solve_beta, solve_beta_divisor, solve_beta_from, SolveOptions};
use crate::zero_temp::{self, sweep_beta, SweepOptions};

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub check: String,
    pub pass: bool,
    /// Distance to the threshold; non-negative exactly when the check passes.
    pub margin: f64,
    pub details: Value,
}

impl CheckResult {
    /// `value <= limit`.
    fn at_most(check: &str, value: f64, limit: f64, details: Value) -> Self {
        Self {
            check: check.to_string(),
            pass: value <= limit,
            margin: limit - value,
            details,
        }
    }

    fn flag(check: &str, pass: bool, details: Value) -> Self {
        Self {
            check: check.to_string(),
            pass,
            margin: if pass { 0.0 } else { -1.0 },
            details,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub kind: Kind,
    pub n: usize,
    pub threads: usize,
    pub all_pass: bool,
    pub checks: Vec<CheckResult>,
    pub results: Value,
    /// Every file written next to `summary.json`, relative to the output directory.
    pub artifacts: Vec<String>,
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }
}

struct Setup {
    grid: TorusGrid,
    theta: BackgroundForm,
    g: VolumeDensity,
    divisor: Option<DivisorData>,
}

fn setup(s: &Scenario) -> Result<Setup> {
    let grid = TorusGrid::new(s.n)?;
    let theta = BackgroundForm::new(&grid, s.background.sample(&grid)?, true)?;
    let g = VolumeDensity::new(&grid, s.volume.sample(&grid)?)?;
    let divisor = match &s.divisor {
        None => None,
        Some(spec) => {
            let pts: Vec<(f64, f64, f64)> = spec.points.iter().map(|p| (p[0], p[1], p[2])).collect();
            let nodes = snap_divisor_points(&grid, &pts);
            let d = match &s.curvature {
                Some(r) => {
                    let f = r.sample(&grid)?;
                    make_divisor(&grid, &nodes, CurvatureChoice::Field(&f))?
                }
                None => make_divisor(&grid, &nodes, CurvatureChoice::Constant)?,
            };
            Some(d)
        }
    };
    Ok(Setup {
        grid,
        theta,
        g,
        divisor,
    })
}

fn solve_options(s: &Scenario) -> SolveOptions {
    let mut o = SolveOptions::default();
    if let Some(t) = s.tolerances.newton_tol {
        o.newton_tol = t;
    }
    if let Some(m) = s.tolerances.max_newton_iters {
        o.max_iters = m;
    }
    o
}

fn lcp_options(s: &Scenario) -> LcpOptions {
    let mut o = LcpOptions::default();
    if let Some(t) = s.tolerances.lcp_tol {
        o.lcp_tol = t;
    }
    if let Some(t) = s.tolerances.contact_tol {
        o.contact_tol = t;
    }
    o
}

/// Runs `s`, writing artifacts and `summary.json` into `out`.
pub fn run_scenario(s: &Scenario, out: &Path) -> Result<Summary> {
    let mut outputs = Outputs::new(out)?;
    let ctx = setup(s)?;
    info!("running {} scenario on a {}x{} grid", s.kind, s.n, s.n);
    let (checks, results) = match s.kind {
        Kind::Solve => run_solve(s, &ctx, &mut outputs)?,
        Kind::Envelope => run_envelope(s, &ctx, &mut outputs)?,
        Kind::SweepBeta => run_sweep(s, &ctx, &mut outputs)?,
        Kind::HeleShaw => run_hele_shaw(s, &ctx, &mut outputs)?,
        Kind::Geodesic => run_geodesic(s, &ctx, &mut outputs)?,
    };
    let summary = Summary {
        kind: s.kind,
        n: s.n,
        threads: rayon::current_num_threads(),
        all_pass: checks.iter().all(|c| c.pass),
        checks,
        results,
        artifacts: outputs.files,
    };
    let text = serde_json::to_string_pretty(&summary)?;
    std::fs::write(out.join("summary.json"), text + "\n")?;
    Ok(summary)
}

type Outcome = (Vec<CheckResult>, Value);

fn run_solve(s: &Scenario, ctx: &Setup, out: &mut Outputs) -> Result<Outcome> {
    let opts = solve_options(s);
    let grid = &ctx.grid;
    let mut checks = Vec::new();
    let mut rows = Vec::new();
    let mut runs = Vec::new();

    let lambdas = match (&ctx.divisor, &s.lambdas) {
        (Some(_), Some(l)) => l.clone(),
        _ => Vec::new(),
    };
    if lambdas.is_empty() {
        let reference = BackgroundForm::new(grid, grid.constant(ctx.theta.volume), true)?;
        let probes = vec![
            grid.constant(1.0),
            grid.from_fn(|x, _| (2.0 * std::f64::consts::PI * x).cos()),
            grid.from_fn(|_, y| (2.0 * std::f64::consts::PI * y).sin()),
        ];
        let mut prev = None;
        for (i, &beta) in s.betas.iter().enumerate() {
            let sol = match prev.take().filter(|_| s.continuation) {
                Some(init) => solve_beta_from(grid, &ctx.theta, &ctx.g, beta, init, &opts),
                None => solve_beta(grid, &ctx.theta, &ctx.g, beta, &opts),
            }
            .map_err(Error::at("beta", beta))?;
            io::write_field(&out.path(&format!("u_beta_{i}.field")), &sol.u)?;
            std::fs::write(out.path(&format!("telemetry_beta_{i}.jsonl")), sol.telemetry_jsonl())?;
            let lap = laplacian_bound_report(grid, &ctx.theta, &sol, &reference)?;
            checks.push(CheckResult::at_most(
                &format!("laplacian_bound_beta_{i}"),
                lap.max_trace_ratio,
                lap.bound,
                json!({ "beta": beta }),
            ));
            let stat = g_beta_stationarity(grid, &sol, &ctx.g, &ctx.theta, &probes, 1e-4, 1e-6, 1e-9);
            checks.push(CheckResult::at_most(
                &format!("g_beta_stationary_beta_{i}"),
                stat.max_abs_derivative,
                1e-6,
                json!({ "beta": beta, "concave": stat.concave }),
            ));
            let e = energy_report(grid, &sol.u, &ctx.theta, &ctx.g, beta);
            rows.push(vec![
                beta,
                sol.residual_sup,
                sol.iters as f64,
                sol.u.max(),
                sol.u.min(),
                e.energy,
                e.g_beta,
            ]);
            runs.push(json!({
                "beta": beta,
                "residual": sol.residual_sup,
                "iterations": sol.iters,
                "exp_clamped": sol.exp_clamped,
                "exp_floored": sol.exp_floored,
                "field": format!("u_beta_{i}.field"),
            }));
            prev = Some(sol.u);
        }
        io::write_table(
            &out.path("solve.csv"),
            &["beta", "residual", "iterations", "max_u", "min_u", "energy", "g_beta"],
            &rows,
        )?;
    } else {
        let divisor = ctx.divisor.as_ref().expect("checked above");
        for (j, &lambda) in lambdas.iter().enumerate() {
            let mut prev = None;
            for (i, &beta) in s.betas.iter().enumerate() {
                let init = prev.take().filter(|_| s.continuation);
                let sol = solve_beta_divisor(grid, &ctx.theta, divisor, lambda, beta, &ctx.g, init, &opts)
                    .map_err(Error::at("beta", beta))
                    .map_err(Error::at("lambda", lambda))?;
                let phi = sol.u.zip_map(&divisor.h_s, |u, h| u + lambda * h);
                io::write_field(&out.path(&format!("u_lambda_{j}_beta_{i}.field")), &sol.u)?;
                std::fs::write(
                    out.path(&format!("telemetry_lambda_{j}_beta_{i}.jsonl")),
                    sol.telemetry_jsonl(),
                )?;
                rows.push(vec![beta, lambda, sol.residual_sup, sol.iters as f64, phi.max(), phi.min()]);
                runs.push(json!({
                    "beta": beta,
                    "lambda": lambda,
                    "residual": sol.residual_sup,
                    "iterations": sol.iters,
                    "exp_floored": sol.exp_floored,
                }));
                prev = Some(sol.u);
            }
        }
        io::write_table(
            &out.path("solve.csv"),
            &["beta", "lambda", "residual", "iterations", "max_phi", "min_phi"],
            &rows,
        )?;
    }
    Ok((checks, json!({ "solves": runs })))
}

fn run_envelope(s: &Scenario, ctx: &Setup, out: &mut Outputs) -> Result<Outcome> {
    let lcp = lcp_options(s);
    let grid = &ctx.grid;
    let sol = envelope_theta(grid, &ctx.theta, &lcp)?;
    let orth = sol.orthogonality(grid);
    let (above, negative, product) = sol.lcp_violations();
    let mut checks = vec![
        CheckResult::at_most("complementarity", sol.comp_residual, lcp.lcp_tol, json!({
            "above_obstacle": above, "negative_ma": negative, "product": product,
        })),
        CheckResult::at_most(
            "orthogonality",
            orth.abs(),
            s.tolerances.orthogonality_tol.unwrap_or(1e-8),
            json!({ "integral": orth }),
        ),
    ];
    if ctx.theta.is_semipositive() {
        checks.push(CheckResult::at_most(
            "semipositive_envelope_is_zero",
            sol.u.sup_norm(),
            lcp.lcp_tol,
            json!({}),
        ));
    }
    io::write_field(&out.path("u_theta.field"), &sol.u)?;
    io::write_field_csv(&out.path("u_theta.csv"), grid, &sol.u)?;
    io::write_field(&out.path("ma.field"), &sol.ma)?;
    io::write_pbm(&out.path("contact.pbm"), grid, &sol.contact_mask)?;
    let boundary = match free_boundary(grid, &sol, lcp.contact_tol) {
        Ok(b) => b,
        Err(Error::EmptyBoundary) => Vec::new(),
        Err(e) => return Err(e),
    };
    if !boundary.is_empty() {
        io::write_polylines(&out.path("boundary.csv"), &boundary)?;
    }
    let ma_plus = sol.ma.map(|v| v.max(0.0));
    // whether MA(u_theta) = 1_D f_theta or 1_D f_theta^+ on the grid
    let min_on_contact = (0..grid.len())
        .filter(|&k| sol.contact_mask[k])
        .map(|k| ctx.theta.density[k])
        .fold(f64::INFINITY, f64::min);
    let results = json!({
        "contact_nodes": sol.contact_count(),
        "sup_abs_u": sol.u.sup_norm(),
        "comp_residual": sol.comp_residual,
        "orthogonality": orth,
        "active_set_iterations": sol.active_iters,
        "entropy": relative_entropy(grid, &ma_plus, &ctx.g),
        "contact_entropy": contact_entropy(grid, &sol.contact_mask, &ctx.theta, &ctx.g),
        "min_f_theta_on_contact": min_on_contact,
        "off_contact_mass": sol.off_contact_mass(grid),
        "boundary_components": boundary.len(),
        "boundary_length": crate::envelope::total_length(&boundary),
    });
    Ok((checks, results))
}

fn run_sweep(s: &Scenario, ctx: &Setup, out: &mut Outputs) -> Result<Outcome> {
    let grid = &ctx.grid;
    let opts = SweepOptions {
        solve: solve_options(s),
        lcp: lcp_options(s),
        continuation: s.continuation,
    };
    let report = sweep_beta(grid, &ctx.theta, &ctx.g, &s.betas, &opts)?;
    let mut checks = Vec::new();

    let slack = s.tolerances.grid_slack.unwrap_or(0.0);
    let refined = zero_temp::refined_bound_check(&report, slack).ok();
    if let Some(v) = &refined {
        let worst = v.margins.iter().copied().fold(f64::INFINITY, f64::min);
        checks.push(CheckResult {
            check: "refined_bound".into(),
            pass: v.pass,
            margin: worst,
            details: json!({ "c_paper": v.c_paper, "grid_slack": slack }),
        });
    }
    let noise = 2.0 * opts.solve.newton_tol;
    let rise = report
        .sup_err
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(CheckResult::at_most(
        "sup_err_non_increasing",
        rise.max(0.0),
        noise,
        json!({ "largest_increase": rise }),
    ));

    let delta = s.tolerances.delta_fraction.unwrap_or(0.1) * report.envelope.u.sup_norm();
    let decay = zero_temp::ma_decay_check(&report, &ctx.g, delta);
    match &decay {
        Ok(d) => checks.push(CheckResult::flag(
            "ma_decay_bound",
            d.pass,
            json!({ "delta": delta, "fitted_rate": d.fitted_rate, "rate_rel_err": d.rate_rel_err }),
        )),
        Err(Error::EmptyRegion { .. }) => {}
        Err(e) => return Err(Error::InvalidArgument(e.to_string())),
    }
    let expansion = if ctx.theta.density.min() > 0.0 {
        let e = zero_temp::positive_expansion_check(&report, &ctx.theta, &ctx.g)?;
        checks.push(CheckResult::flag(
            "positive_expansion_decreasing",
            e.decreasing,
            json!({ "deviation": e.deviation }),
        ));
        Some(e)
    } else {
        None
    };

    let decay_sup: Vec<f64> = match &decay {
        Ok(d) => d.measured.clone(),
        Err(_) => vec![f64::NAN; report.betas.len()],
    };
    let margins: Vec<f64> = match &refined {
        Some(v) => v.margins.clone(),
        None => vec![f64::NAN; report.betas.len()],
    };
    // energy traces; entropy_gap compares D(MA(u_beta)) with the contact-set value of D(MA(u_theta))
    let limit_entropy = contact_entropy(grid, &report.envelope.contact_mask, &ctx.theta, &ctx.g);
    let rows: Vec<Vec<f64>> = report
        .rows()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let u = &report.solutions[i];
            let e = energy_report(grid, u, &ctx.theta, &ctx.g, r[0]);
            let ma = grid.ma_density(&ctx.theta.density, u);
            let gap = relative_entropy(grid, &ma, &ctx.g) - limit_entropy;
            vec![r[0], r[1], r[2], r[3], margins[i], decay_sup[i], e.energy, e.l_beta, e.g_beta, gap]
        })
        .collect();
    io::write_table(
        &out.path("sweep.csv"),
        &[
            "beta",
            "sup_err",
            "grad_err",
            "energy_gap",
            "refined_margin",
            "decay_sup",
            "E",
            "L_beta",
            "G_beta",
            "entropy_gap",
        ],
        &rows,
    )?;
    io::write_field(&out.path("u_theta.field"), &report.envelope.u)?;
    for (i, u) in report.solutions.iter().enumerate() {
        io::write_field(&out.path(&format!("u_beta_{i}.field")), u)?;
    }
    let results = json!({
        "sweep": report,
        "fitted_rate": report.fitted_rate.map(|(c, p)| json!({ "c_fit": c, "p_fit": p })),
        "refined": refined,
        "decay": decay.ok(),
        "expansion": expansion,
    });
    Ok((checks, results))
}

fn run_hele_shaw(s: &Scenario, ctx: &Setup, out: &mut Outputs) -> Result<Outcome> {
    let grid = &ctx.grid;
    let divisor = ctx.divisor.as_ref().expect("validated");
    let lambdas = s
        .lambdas
        .clone()
        .unwrap_or_else(|| hele_shaw::default_lambdas(&ctx.theta, divisor, 16));
    let lcp = lcp_options(s);
    let opts = FamilyOptions {
        lcp: lcp.clone(),
        warm_start: s.continuation,
    };
    let family = run_family(grid, &ctx.theta, divisor, &lambdas, &opts)?;
    let area = hele_shaw::area_law_check(&family, s.tolerances.area_tol.unwrap_or(0.02));
    let nesting = hele_shaw::nesting_check(grid, &family, s.tolerances.nesting_fraction.unwrap_or(0.005));
    let mass = hele_shaw::mass_identity(grid, &family);
    let mass_err = mass.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let mut checks = vec![
        CheckResult::at_most("area_law", area.worst, area.tol, json!({ "deviation": area.deviation })),
        CheckResult::at_most(
            "nesting",
            nesting.worst_fraction,
            s.tolerances.nesting_fraction.unwrap_or(0.005),
            json!({ "reclassified": nesting.reclassified }),
        ),
        CheckResult::flag("divisor_inside_domains", hele_shaw::divisor_inside(&family, divisor), json!({})),
        CheckResult::at_most(
            "mass_identity",
            mass_err,
            lcp.lcp_tol * grid.len() as f64,
            json!({}),
        ),
    ];
    let exhaustion = match hele_shaw::exhaustion_check(&family, s.tolerances.area_tol.unwrap_or(0.02)) {
        Ok(e) => {
            checks.push(CheckResult::at_most(
                "exhaustion",
                e.worst_deviation,
                s.tolerances.area_tol.unwrap_or(0.02),
                json!({ "final_fraction": e.final_fraction }),
            ));
            Some(e)
        }
        Err(Error::WrongRegime { .. }) => None,
        Err(e) => return Err(e),
    };

    let rows: Vec<Vec<f64>> = family
        .rows()
        .iter()
        .map(|r| vec![r.lambda, r.area, r.boundary_length, r.n_components as f64])
        .collect();
    io::write_table(
        &out.path("family.csv"),
        &["lambda", "area", "boundary_length", "n_components"],
        &rows,
    )?;
    for (k, (domain, lines)) in family.domains.iter().zip(&family.boundaries).enumerate() {
        io::write_pbm(&out.path(&format!("domain_{k}.pbm")), grid, domain)?;
        io::write_polylines(&out.path(&format!("boundary_{k}.csv")), lines)?;
    }
    let results = json!({
        "lambdas": family.lambdas,
        "areas": family.areas,
        "area_law": area,
        "nesting": nesting,
        "exhaustion": exhaustion,
    });
    Ok((checks, results))
}

fn run_geodesic(s: &Scenario, ctx: &Setup, out: &mut Outputs) -> Result<Outcome> {
    let grid = &ctx.grid;
    let divisor = ctx.divisor.as_ref().expect("validated");
    let c = s.c.expect("validated");
    let lambdas = s.lambdas.clone().unwrap_or_else(|| geodesic::uniform_lambdas(c, 17));
    let times = s.times.clone().unwrap_or_else(geodesic::default_times);
    let lcp = lcp_options(s);
    let tol = &s.tolerances;

    let mut family = build_psi_family(
        grid,
        &ctx.theta,
        divisor,
        c,
        &lambdas,
        &lcp,
        tol.concavity_tol.unwrap_or(1e-6),
    )?;
    family.legendre_ray(&times)?;
    let biconj = family.biconjugate_gap();
    let convexity = family.convexity_defect();
    let ray = energy_slope_check(
        grid,
        &family,
        &ctx.theta,
        divisor,
        tol.affine_horizon,
        tol.slope_tol.unwrap_or(0.02),
    )?;
    let mut checks = vec![
        CheckResult::at_most("double_legendre", biconj, 1e-9, json!({})),
        CheckResult::at_most("ray_convex_in_t", convexity, 1e-12, json!({})),
        CheckResult::flag(
            "argmax_monotone",
            family.argmax_decreases() == 0,
            json!({ "decreases": family.argmax_decreases() }),
        ),
        CheckResult::at_most(
            "energy_affine",
            ray.affine_deviation,
            ray.affine_tol,
            json!({ "horizon": ray.horizon }),
        ),
        CheckResult::at_most(
            "energy_slope_vs_paper",
            ray.slope_rel_err,
            tol.slope_tol.unwrap_or(0.02),
            json!({
                "measured": ray.energy_slope_measured,
                "paper": ray.energy_slope_paper,
                "moment": ray.energy_slope_moment,
            }),
        ),
    ];

    let opts = solve_options(s);
    let tail_start = tol.tail_start.unwrap_or(32.0);
    let mut conv = Vec::new();
    let mut rows = Vec::new();
    for &beta in &s.betas {
        let sub = subgeodesic(grid, &ctx.theta, divisor, c, beta, &lambdas, &times, &ctx.g, &opts)?;
        let row = convergence_row(&family, &sub, tail_start);
        let pts: Vec<(f64, f64)> = times
            .iter()
            .zip(&sub.fields)
            .filter(|(t, _)| **t <= ray.horizon)
            .map(|(t, f)| (*t, energy(grid, f, &ctx.theta)))
            .collect();
        let slope = zero_temp::linear_fit(&pts).map_or(f64::NAN, |(s, _)| s);
        rows.push(vec![beta, row.sup_dev, row.tail_spread, slope]);
        conv.push(row);
    }
    let decreasing = conv.windows(2).all(|w| w[1].sup_dev < w[0].sup_dev);
    checks.push(CheckResult::flag(
        "subgeodesic_convergence",
        decreasing,
        json!({ "sup_dev": conv.iter().map(|r| r.sup_dev).collect::<Vec<_>>() }),
    ));
    let spread = conv.iter().map(|r| r.tail_spread).fold(0.0, f64::max);
    checks.push(CheckResult::at_most(
        "flat_tail",
        spread,
        tol.tail_tol.unwrap_or(1e-4),
        json!({ "tail_start": tail_start }),
    ));

    io::write_table(
        &out.path("convergence.csv"),
        &["beta", "sup_dev", "tail_spread", "slope_measured"],
        &rows,
    )?;
    let ray_rows: Vec<Vec<f64>> = times.iter().zip(&ray.energies).map(|(t, e)| vec![*t, *e]).collect();
    io::write_table(&out.path("ray.csv"), &["t", "energy"], &ray_rows)?;
    let mut hist = Vec::new();
    for (t, arg) in times.iter().zip(&family.argmax) {
        let mut counts = vec![0usize; lambdas.len()];
        for &a in arg {
            counts[a as usize] += 1;
        }
        for (i, &count) in counts.iter().enumerate() {
            if count > 0 {
                hist.push(vec![*t, family.mus[i], count as f64]);
            }
        }
    }
    io::write_table(&out.path("argmax_histogram.csv"), &["t", "mu", "count"], &hist)?;
    for (k, phi) in family.ray.iter().enumerate() {
        io::write_field(&out.path(&format!("ray_t_{k}.field")), phi)?;
    }
    let results = json!({
        "c": c,
        "lambdas": lambdas,
        "times": times,
        "concavity_defect": family.concavity_defect,
        "biconjugate_gap": biconj,
        "convexity_defect": convexity,
        "psh_slack": family.psh_slack(grid, &ctx.theta),
        "ray": ray,
        "convergence": conv,
    });
    Ok((checks, results))
}
