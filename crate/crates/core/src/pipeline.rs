//! Subcommand orchestration and output files.
//!
//! Every run writes `summary.txt` (`key=value` lines) plus command-specific
//! CSV tables into the output directory. Numbers are printed in Rust's
//! shortest round-trip form, so identical results give identical bytes.

use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use crate::bifurcate::{analyze, build_h, build_linearization, bifurcation_point, scan_linearity, uniqueness_scan, unit_crossings, Analysis};
use crate::branch::{continue_branch, BranchOptions, NewtonOptions};
use crate::config::RunConfig;
use crate::discretize::{AgeSpaceField, Grid, SpatialProfile};
use crate::error::Error;
use crate::evolve::{renewal_matrix, AgeOps};
use crate::model::{normalize_birth, principal_eigenvalue, validate, ModelSpec, ValidationReport};
use crate::reduced::{base_operator, eta_scan, g2_matrix, solve_reduced, ReducedOptions, ReducedSolution};
use crate::spectral::perron_dense;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Validate,
    Reduced,
    Bifurcation,
    Branch,
    Scan,
    Convergence,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::Validate,
        Command::Reduced,
        Command::Bifurcation,
        Command::Branch,
        Command::Scan,
        Command::Convergence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Reduced => "reduced",
            Command::Bifurcation => "bifurcation",
            Command::Branch => "branch",
            Command::Scan => "scan",
            Command::Convergence => "convergence",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("solver failed: {0}")]
    Solver(Error),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Validation(_) => 2,
            RunError::Solver(_) => 3,
            RunError::Io { .. } => 4,
        }
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        match e {
            Error::Ellipticity(_) | Error::Model(_) | Error::InvalidGrid(_) | Error::NonPositiveDiffusion { .. } => {
                RunError::Validation(e.to_string())
            }
            other => RunError::Solver(other),
        }
    }
}

/// Ordered `key=value` pairs, as written to `summary.txt`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub entries: Vec<(String, String)>,
}

impl RunSummary {
    fn put(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(|v| v.parse().ok())
    }

    fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

struct Outputs {
    summary: RunSummary,
    files: Vec<(&'static str, String)>,
}

impl Outputs {
    fn new(command: Command) -> Self {
        let mut summary = RunSummary::default();
        summary.put("command", command.name());
        Self {
            summary,
            files: Vec::new(),
        }
    }

    fn file(&mut self, name: &'static str, content: String) {
        self.files.retain(|(n, _)| *n != name);
        self.files.push((name, content));
    }

    fn write(&self, dir: &Path) -> Result<(), RunError> {
        let io_err = |path: PathBuf| move |source| RunError::Io { path, source };
        std::fs::create_dir_all(dir).map_err(io_err(dir.to_path_buf()))?;
        let path = dir.join("summary.txt");
        std::fs::write(&path, self.summary.render()).map_err(io_err(path.clone()))?;
        for (name, content) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, content).map_err(io_err(path.clone()))?;
        }
        Ok(())
    }
}

/// Age-major matrix: a header with the node coordinates, then one row per
/// age node led by the age.
pub fn field_csv(field: &AgeSpaceField<f64>, grid: &Grid<f64>) -> String {
    let mut out = String::from("age");
    for x in grid.interior_nodes() {
        let _ = write!(out, ",{x}");
    }
    out.push('\n');
    for i in 0..field.rows() {
        let _ = write!(out, "{}", grid.age(i));
        for v in field.row(i) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

fn profiles_csv(grid: &Grid<f64>, columns: &[(&str, &SpatialProfile<f64>)]) -> String {
    let mut out = String::from("x");
    for (name, _) in columns {
        let _ = write!(out, ",{name}");
    }
    out.push('\n');
    for (j, x) in grid.interior_nodes().iter().enumerate() {
        let _ = write!(out, "{x}");
        for (_, p) in columns {
            let _ = write!(out, ",{}", p[j]);
        }
        out.push('\n');
    }
    out
}

fn grid_of(cfg: &RunConfig, level: usize) -> Result<Grid<f64>, RunError> {
    let base = Grid::new(cfg.model.length, cfg.grid.nx, cfg.model.a_max, cfg.grid.na)?;
    Ok(base.refined(1 << level)?)
}

fn report_lines(out: &mut Outputs, report: &ValidationReport<f64>) {
    out.summary.put("valid", report.is_ok());
    out.summary.put("delta", report.delta);
    for c in &report.checks {
        let key = format!("check.{}", c.name.replace([' ', '(', ')', '='], "_"));
        let verdict = if c.passed { "pass".to_string() } else { format!("fail: {}", c.detail) };
        out.summary.put(&key, verdict);
    }
}

/// Validation and birth normalization on the configured grid.
fn prepare(cfg: &RunConfig, out: &mut Outputs) -> Result<(ModelSpec<f64>, Grid<f64>), RunError> {
    let report = validate(&cfg.model, cfg.solver.z_max, cfg.solver.rho);
    report_lines(out, &report);
    if !report.is_ok() {
        let msg: Vec<String> = report.failures().map(|c| c.detail.clone()).collect();
        return Err(RunError::Validation(msg.join("; ")));
    }
    let grid = grid_of(cfg, 0)?;
    let spec = normalize_birth(&cfg.model, &grid, cfg.grid.scheme)?;
    let (lambda1, _) = principal_eigenvalue(&grid);
    out.summary.put("nx", grid.n_x);
    out.summary.put("na", grid.n_a);
    out.summary.put("scheme", cfg.grid.scheme.name());
    out.summary.put("lambda1", lambda1);
    out.summary.put("birth_scale", birth_scale(&cfg.model, &spec));
    Ok((spec, grid))
}

fn birth_scale(raw: &ModelSpec<f64>, normalized: &ModelSpec<f64>) -> f64 {
    raw.birth
        .points()
        .iter()
        .zip(normalized.birth.points())
        .find(|((_, a), _)| *a != 0.0)
        .map_or(1.0, |((_, a), (_, b))| b / a)
}

fn reduced_opts(cfg: &RunConfig) -> ReducedOptions<f64> {
    ReducedOptions {
        tol: cfg.solver.reduced_tol,
        scheme: cfg.grid.scheme,
        ..ReducedOptions::default()
    }
}

fn solve_u_eta(cfg: &RunConfig, spec: &ModelSpec<f64>, grid: &Grid<f64>, out: &mut Outputs) -> Result<ReducedSolution<f64>, RunError> {
    let sol = solve_reduced(spec, grid, cfg.solver.eta, None, &reduced_opts(cfg))?;
    out.summary.put("eta", cfg.solver.eta);
    out.summary.put("reduced_residual", sol.residual);
    out.summary.put("reduced_newton_iters", sol.newton_iters);
    out.summary.put("u_eta_sup", sol.field.norm_max());
    Ok(sol)
}

fn bifurcation_outputs(cfg: &RunConfig, spec: &ModelSpec<f64>, grid: &Grid<f64>, out: &mut Outputs) -> Result<Analysis<f64>, RunError> {
    let sol = solve_u_eta(cfg, spec, grid, out)?;
    let g2 = g2_matrix(spec, grid, &sol, cfg.grid.scheme)?;
    let a = analyze(spec, grid, &sol, cfg.grid.scheme, cfg.solver.perron_tol)?;
    let d = &a.point.diagnostics;
    out.summary.put("r_H", a.perron.radius);
    out.summary.put("xi0", a.point.xi0);
    out.summary.put("gap", d.gap);
    out.summary.put("overlap", d.overlap);
    out.summary.put("transversal", d.gap > 0.0 && d.overlap > 0.0);
    out.summary.put("r_eta_g1", d.r_eta_g1);
    if !sol.is_trivial() {
        let r_g2 = perron_dense(&g2.scaled(cfg.solver.eta), cfg.solver.perron_tol, 20_000)?.radius;
        out.summary.put("r_eta_g2", r_g2);
    }
    out.summary.put("kernel_residual", d.kernel_residual);
    out.summary.put("psi_star_sup", a.point.psi_star.norm_max());
    out.summary.put("phi_star_sup", a.point.phi_star.norm_max());
    out.file(
        "profiles.csv",
        profiles_csv(
            grid,
            &[
                ("u_eta0", &sol.trace0),
                ("u_hat_eta", &a.lin.u_hat_eta),
                ("psi0", &a.point.psi0),
                ("phi0", &a.point.phi0),
            ],
        ),
    );
    out.file("u_field.csv", field_csv(&sol.field, grid));
    out.file("psi_star.csv", field_csv(&a.point.psi_star, grid));
    out.file("phi_star.csv", field_csv(&a.point.phi_star, grid));
    Ok(a)
}

fn run_reduced(cfg: &RunConfig, spec: &ModelSpec<f64>, grid: &Grid<f64>, out: &mut Outputs) -> Result<(), RunError> {
    let op = base_operator(spec, grid)?;
    let g0 = renewal_matrix(AgeOps::Constant(&op), &grid.sample(&spec.birth), grid, cfg.grid.scheme)?;
    out.summary.put("r_G0", perron_dense(&g0, cfg.solver.perron_tol, 20_000)?.radius);
    let rows = eta_scan(spec, grid, &cfg.solver.eta_scan, &reduced_opts(cfg))?;
    let mut csv = String::from("eta,sup_norm,min_trace0,newton_iters,residual\n");
    for (r, _) in &rows {
        let _ = writeln!(csv, "{},{},{},{},{}", r.eta, r.sup_norm, r.min_trace0, r.newton_iters, r.residual);
    }
    out.summary.put("scan_rows", rows.len());
    if let Some((r, sol)) = rows.last() {
        out.summary.put("eta_last", r.eta);
        out.summary.put("u_sup_last", r.sup_norm);
        out.file("u_field.csv", field_csv(&sol.field, grid));
    }
    out.file("reduced_scan.csv", csv);
    Ok(())
}

fn run_branch(cfg: &RunConfig, spec: &ModelSpec<f64>, grid: &Grid<f64>, out: &mut Outputs) -> Result<(), RunError> {
    let a = bifurcation_outputs(cfg, spec, grid, out)?;
    let opts = BranchOptions {
        eps0: cfg.solver.eps0,
        ds: cfg.solver.ds,
        n_steps: cfg.solver.n_steps,
        newton: NewtonOptions {
            tol: cfg.solver.tol,
            max_iter: cfg.solver.max_iter,
            scheme: cfg.grid.scheme,
        },
    };
    let branch = continue_branch(spec, grid, &a, &opts)?;
    let mut csv = String::from("eps,xi,norm_u,norm_v,min_u,min_v,residual,newton_iters\n");
    for p in &branch.points {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            p.eps,
            p.state.xi,
            p.state.u_field.norm_max(),
            p.state.v_field.norm_max(),
            p.min_u,
            p.min_v,
            p.residual,
            p.newton_iters
        );
    }
    out.file("branch.csv", csv);
    out.summary.put("branch_points", branch.points.len());
    out.summary.put("stop_reason", &branch.stop_reason);
    let max_res = branch.points.iter().fold(0.0f64, |m, p| m.max(p.residual));
    let min_u = branch.points.iter().fold(f64::INFINITY, |m, p| m.min(p.min_u));
    let min_v = branch.points.iter().fold(f64::INFINITY, |m, p| m.min(p.min_v));
    out.summary.put("max_residual", max_res);
    out.summary.put("min_u", min_u);
    out.summary.put("min_v", min_v);
    if let (Some(first), Some(last)) = (branch.points.first(), branch.points.last()) {
        out.summary.put("eps_first", first.eps);
        out.summary.put("xi_first", first.state.xi);
        out.summary.put("eps_last", last.eps);
        out.summary.put("xi_last", last.state.xi);
        let slope = (first.state.xi - branch.xi0) / first.eps;
        out.summary.put("xi_slope_estimate", slope);
        out.file("u_field.csv", field_csv(&last.state.u_field, grid));
        out.file("v_field.csv", field_csv(&last.state.v_field, grid));
    }
    Ok(())
}

const DEFAULT_XI_FACTORS: [f64; 8] = [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 4.0];

fn run_scan(cfg: &RunConfig, spec: &ModelSpec<f64>, grid: &Grid<f64>, out: &mut Outputs) -> Result<(), RunError> {
    let sol = solve_u_eta(cfg, spec, grid, out)?;
    let lin = build_linearization(spec, grid, &sol)?;
    let h = build_h(&lin, spec, grid, cfg.grid.scheme)?;
    let (xi0, _, pair) = bifurcation_point(&h, cfg.solver.perron_tol)?;
    let xis = cfg
        .solver
        .xi_scan
        .clone()
        .unwrap_or_else(|| DEFAULT_XI_FACTORS.iter().map(|f| f * xi0).collect());
    let rows = uniqueness_scan(&h, &xis, cfg.solver.perron_tol)?;
    let mut csv = String::from("xi,r_xi_h,r_minus_one\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{}", r.xi, r.radius, r.radius - 1.0);
    }
    out.file("scan.csv", csv);
    out.summary.put("r_H", pair.radius);
    out.summary.put("xi0", xi0);
    out.summary.put("linearity_deviation", scan_linearity(&rows, pair.radius));
    let crossings = unit_crossings(&rows);
    out.summary.put("unit_crossings", crossings.len());
    Ok(())
}

fn run_convergence(cfg: &RunConfig, out: &mut Outputs) -> Result<(), RunError> {
    let levels = cfg.solver.levels.max(2);
    let mut csv = String::from("level,nx,na,h,da,lambda1,u_sup,xi0\n");
    let mut u_sups = Vec::new();
    let mut xis = Vec::new();
    for level in 0..levels {
        let grid = grid_of(cfg, level)?;
        let spec = normalize_birth(&cfg.model, &grid, cfg.grid.scheme)?;
        let sol = solve_reduced(&spec, &grid, cfg.solver.eta, None, &reduced_opts(cfg))?;
        let lin = build_linearization(&spec, &grid, &sol)?;
        let h = build_h(&lin, &spec, &grid, cfg.grid.scheme)?;
        let (xi0, _, _) = bifurcation_point(&h, cfg.solver.perron_tol)?;
        let (lambda1, _) = principal_eigenvalue(&grid);
        let u_sup = sol.field.norm_max();
        let _ = writeln!(csv, "{level},{},{},{},{},{lambda1},{u_sup},{xi0}", grid.n_x, grid.n_a, grid.h, grid.da);
        u_sups.push(u_sup);
        xis.push(xi0);
    }
    out.file("convergence.csv", csv);
    out.summary.put("levels", levels);
    if let Some(r) = observed_rate(&u_sups) {
        out.summary.put("rate_u_sup", r);
    }
    if let Some(r) = observed_rate(&xis) {
        out.summary.put("rate_xi0", r);
    }
    Ok(())
}

/// `log2(|q_{k-1} - q_{k-2}| / |q_k - q_{k-1}|)` from the last three levels.
pub fn observed_rate(q: &[f64]) -> Option<f64> {
    let n = q.len();
    if n < 3 {
        return None;
    }
    let d1 = (q[n - 2] - q[n - 3]).abs();
    let d2 = (q[n - 1] - q[n - 2]).abs();
    (d1 > 0.0 && d2 > 0.0).then(|| (d1 / d2).log2())
}

/// Runs one subcommand and writes its outputs into `out_dir`. On a failure
/// after validation the partial summary is still written.
pub fn run(command: Command, cfg: &RunConfig, out_dir: &Path) -> Result<RunSummary, RunError> {
    let mut out = Outputs::new(command);
    let result = (|| -> Result<(), RunError> {
        let (spec, grid) = prepare(cfg, &mut out)?;
        match command {
            Command::Validate => Ok(()),
            Command::Reduced => run_reduced(cfg, &spec, &grid, &mut out),
            Command::Bifurcation => bifurcation_outputs(cfg, &spec, &grid, &mut out).map(|_| ()),
            Command::Branch => run_branch(cfg, &spec, &grid, &mut out),
            Command::Scan => run_scan(cfg, &spec, &grid, &mut out),
            Command::Convergence => run_convergence(cfg, &mut out),
        }
    })();
    if let Err(e) = &result {
        out.summary.put("error", e.to_string().replace('\n', " "));
    }
    out.write(out_dir)?;
    result.map(|()| out.summary)
}
