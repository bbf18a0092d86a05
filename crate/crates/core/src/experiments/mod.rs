//! Experiment orchestration behind the `nls-ground` command line: configuration
//! ingestion, the audit gate, ρ- and β-sweeps, refinement studies and the
//! CSV, SVG and text artifacts they emit.

pub mod config;
pub mod plot;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

pub use config::{Axes, ExperimentConfig, GridConfig, Scenario, CONFIG_VERSION};
use plot::{line_plot, Series};

use crate::analysis::{bubble_diagnostics, delta_p, gn_constant, threshold_check, BubbleTable};
use crate::nonlinearity::{audit_assumptions, eta2_with, two_n, AuditReport, Eta2Check, NonlinearitySpec};
use crate::radial_core::make_grid;
use crate::solver::{beta_sweep, minimize, BetaRow, Saturation, SolutionReport, SolveConfig};
use crate::variational::fiber_scan;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_AUDIT: i32 = 3;
pub const EXIT_NOT_CONVERGED: i32 = 4;
pub const EXIT_IO: i32 = 5;

/// Why a run stopped; each kind has its own exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum RunError {
    Parse(String),
    Audit(String),
    NotConverged(String),
    Io(String),
    Failed(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Parse(_) => EXIT_PARSE,
            RunError::Audit(_) => EXIT_AUDIT,
            RunError::NotConverged(_) => EXIT_NOT_CONVERGED,
            RunError::Io(_) => EXIT_IO,
            RunError::Failed(_) => EXIT_FAILED,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Parse(m) => write!(f, "config error: {m}"),
            RunError::Audit(m) => write!(f, "audit failed: {m}"),
            RunError::NotConverged(m) => write!(f, "not converged: {m}"),
            RunError::Io(m) => write!(f, "i/o error: {m}"),
            RunError::Failed(m) => write!(f, "{m}"),
        }
    }
}

impl From<crate::Error> for RunError {
    fn from(e: crate::Error) -> Self {
        match e {
            crate::Error::NotConverged(m) => RunError::NotConverged(m),
            other => RunError::Failed(other.to_string()),
        }
    }
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Skip the assumption audit gate.
    pub force: bool,
}

/// Files produced by a scenario, written only once the scenario has finished.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: String,
    /// Non-convergence messages; a nonempty list yields the non-convergence exit code.
    pub not_converged: Vec<String>,
    /// Set by the `audit` scenario when an assumption fails.
    pub audit_failure: Option<String>,
}

impl Artifacts {
    fn add(&mut self, name: &str, content: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), content.into()));
    }

    fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), RunError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| RunError::Failed(e.to_string()))?;
        self.add(name, text + "\n");
        Ok(())
    }

    fn add_plot(&mut self, name: &str, title: &str, x: &str, y: &str, series: &[Series]) -> Result<(), RunError> {
        let tmp = tempfile_path(name);
        line_plot(&tmp, title, x, y, series).map_err(RunError::Io)?;
        let bytes = std::fs::read(&tmp).map_err(|e| RunError::Io(e.to_string()))?;
        let _ = std::fs::remove_file(&tmp);
        self.add(name, bytes);
        Ok(())
    }

    /// Write every file and `summary.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), RunError> {
        let io = |e: std::io::Error| RunError::Io(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        for (name, bytes) in &self.files {
            std::fs::write(dir.join(name), bytes).map_err(io)?;
        }
        std::fs::write(dir.join("summary.txt"), &self.summary).map_err(io)?;
        Ok(())
    }
}

fn tempfile_path(name: &str) -> PathBuf {
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    std::env::temp_dir().join(format!("nls-ground-{}-{n}-{name}", std::process::id()))
}

fn fmt_f(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.12e}")
    } else {
        String::new()
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f).unwrap_or_default()
}

fn sat_name(s: Saturation) -> &'static str {
    match s {
        Saturation::Saturated => "saturated",
        Saturation::Interior => "interior",
        Saturation::Zero => "zero",
    }
}

// ---------------------------------------------------------------------------
// Ground-energy map

/// One `ρ` row of a ground-energy map.
#[derive(Debug, Clone, Serialize)]
pub struct EnergyRow {
    pub rho: Vec<f64>,
    pub c: f64,
    pub lambda: Vec<Option<f64>>,
    pub saturation: Vec<Saturation>,
    pub converged: bool,
    pub r_max: f64,
    pub error: Option<String>,
}

impl EnergyRow {
    pub fn all_saturated(&self) -> bool {
        !self.saturation.is_empty() && self.saturation.iter().all(|s| *s == Saturation::Saturated)
    }
}

/// `c(ρ)` on a set of mass bounds, one row per distinct `ρ`.
#[derive(Debug, Clone, Serialize)]
pub struct GroundEnergyMap {
    pub k: usize,
    pub rows: Vec<EnergyRow>,
    /// Largest `|Δc|` between repeated `ρ` rows of the input grid.
    pub duplicate_spread: f64,
}

/// A pair `(i, j)` with `ρ_i ≥ ρ_j` componentwise violating the ordering of `c`.
#[derive(Debug, Clone, Serialize)]
pub struct OrderViolation {
    pub larger: usize,
    pub smaller: usize,
    pub c_larger: f64,
    pub c_smaller: f64,
    pub strict: bool,
}

impl GroundEnergyMap {
    /// CSV with columns `rho_1..rho_K, c, lambda_1..lambda_K, sat_1..sat_K`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let cols: Vec<String> = (1..=self.k)
            .map(|i| format!("rho_{i}"))
            .chain(std::iter::once("c".to_string()))
            .chain((1..=self.k).map(|i| format!("lambda_{i}")))
            .chain((1..=self.k).map(|i| format!("sat_{i}")))
            .collect();
        out.push_str(&cols.join(","));
        out.push('\n');
        for r in &self.rows {
            let mut cells: Vec<String> = (0..self.k).map(|i| r.rho.get(i).map(|x| fmt_f(*x)).unwrap_or_default()).collect();
            cells.push(fmt_f(r.c));
            for i in 0..self.k {
                cells.push(fmt_opt(r.lambda.get(i).copied().flatten()));
            }
            for i in 0..self.k {
                cells.push(r.saturation.get(i).map(|s| sat_name(*s)).unwrap_or("").to_string());
            }
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Pairs violating `c(ρ) ≤ c(ρ')` for `ρ ≥ ρ'` beyond the relative `slack`, and,
    /// where both minimizers are saturated, the strict inequality.
    pub fn order_violations(&self, slack: f64) -> Vec<OrderViolation> {
        let mut v = Vec::new();
        for (i, a) in self.rows.iter().enumerate() {
            for (j, b) in self.rows.iter().enumerate() {
                if i == j || a.error.is_some() || b.error.is_some() {
                    continue;
                }
                let dominates = a.rho.iter().zip(&b.rho).all(|(x, y)| x >= y) && a.rho != b.rho;
                if !dominates {
                    continue;
                }
                let tol = slack * a.c.abs().max(b.c.abs()).max(1.0);
                let strict = a.all_saturated() && b.all_saturated();
                let bad = if strict { a.c >= b.c } else { a.c > b.c + tol };
                if bad {
                    v.push(OrderViolation {
                        larger: i,
                        smaller: j,
                        c_larger: a.c,
                        c_smaller: b.c,
                        strict,
                    });
                }
            }
        }
        v
    }

    /// Rows in increasing order of `max ρ`.
    pub fn sorted_by_size(&self) -> Vec<&EnergyRow> {
        let mut rows: Vec<&EnergyRow> = self.rows.iter().collect();
        let size = |r: &EnergyRow| r.rho.iter().cloned().fold(0.0, f64::max);
        rows.sort_by(|a, b| size(a).total_cmp(&size(b)));
        rows
    }
}

fn row_seed(master: u64, rho: &[f64]) -> u64 {
    rho.iter().fold(master ^ 0xcbf2_9ce4_8422_2325, |h, x| {
        (h ^ x.to_bits()).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Solve for every `ρ` in `rho_grid` (rows run concurrently, each on its own scaled
/// grid and with a seed derived from the master seed and `ρ`); repeated `ρ` rows are
/// merged after comparing their energies.
pub fn sweep_rho(spec: &NonlinearitySpec, rho_grid: &[Vec<f64>], grid: &GridConfig, cfg: &SolveConfig) -> GroundEnergyMap {
    let rows: Vec<EnergyRow> = rho_grid
        .par_iter()
        .map(|rho| {
            let r_max = grid.radius_for(rho);
            let row_cfg = SolveConfig {
                rho: rho.clone(),
                seed: row_seed(cfg.seed, rho),
                ..cfg.clone()
            };
            let res = make_grid(spec.dim(), r_max, grid.nodes).and_then(|g| minimize(spec, &g, &row_cfg));
            match res {
                Ok(rep) => EnergyRow {
                    rho: rho.clone(),
                    c: rep.energy,
                    lambda: rep.lambda,
                    saturation: rep.saturation,
                    converged: rep.converged,
                    r_max,
                    error: None,
                },
                Err(e) => EnergyRow {
                    rho: rho.clone(),
                    c: f64::NAN,
                    lambda: vec![None; rho.len()],
                    saturation: Vec::new(),
                    converged: false,
                    r_max,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let mut unique: Vec<EnergyRow> = Vec::new();
    let mut spread = 0.0f64;
    for r in rows {
        if let Some(u) = unique.iter().find(|u| u.rho == r.rho) {
            if u.c.is_finite() && r.c.is_finite() {
                spread = spread.max((u.c - r.c).abs());
            }
        } else {
            unique.push(r);
        }
    }
    GroundEnergyMap {
        k: spec.k(),
        rows: unique,
        duplicate_spread: spread,
    }
}

// ---------------------------------------------------------------------------
// Coupling sweep and refinement

/// Bracket `(β_lo, β*)` where `β*` is the smallest swept `β` from which on every
/// row has both masses saturated, and `β_lo` the largest swept value below it.
pub fn locate_beta_star(rows: &[BetaRow]) -> Option<(Option<f64>, f64)> {
    let mut sorted: Vec<&BetaRow> = rows.iter().filter(|r| r.error.is_none()).collect();
    sorted.sort_by(|a, b| a.beta.total_cmp(&b.beta));
    let mut star = None;
    for r in sorted.iter().rev() {
        if r.both_saturated {
            star = Some(r.beta);
        } else {
            break;
        }
    }
    let star = star?;
    let below = sorted.iter().rev().find(|r| r.beta < star).map(|r| r.beta);
    Some((below, star))
}

/// `max/min` of the diagnostic over rows with `β > 0`.
pub fn diagnostic_variation(rows: &[BetaRow]) -> f64 {
    let d: Vec<f64> = rows
        .iter()
        .filter(|r| r.beta > 0.0 && r.diagnostic.is_finite())
        .map(|r| r.diagnostic)
        .collect();
    let max = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
    max / min
}

/// Energy on successively finer grids of the same radius.
#[derive(Debug, Clone, Serialize)]
pub struct RefineRow {
    pub nodes: usize,
    pub h: f64,
    pub energy: f64,
    pub lambda: Vec<Option<f64>>,
    pub converged: bool,
}

/// Observed convergence order from three `(h, J)` pairs, solving
/// `(J₁−J₂)/(J₂−J₃) = (h₁^q−h₂^q)/(h₂^q−h₃^q)` for `q` by bisection.
pub fn observed_order(h: [f64; 3], j: [f64; 3]) -> Option<f64> {
    let target = (j[0] - j[1]) / (j[1] - j[2]);
    if !(target.is_finite() && target > 0.0) {
        return None;
    }
    let f = |q: f64| (h[0].powf(q) - h[1].powf(q)) / (h[1].powf(q) - h[2].powf(q)) - target;
    let (mut lo, mut hi) = (0.05, 12.0);
    if f(lo).signum() == f(hi).signum() {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid).signum() == f(lo).signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Ground-state energy on grids with the given node counts and radius `r_max`.
pub fn refine_study(spec: &NonlinearitySpec, r_max: f64, nodes: &[usize], cfg: &SolveConfig) -> crate::Result<Vec<RefineRow>> {
    nodes
        .iter()
        .map(|&m| {
            let g = make_grid(spec.dim(), r_max, m)?;
            let rep = minimize(spec, &g, cfg)?;
            Ok(RefineRow {
                nodes: m,
                h: g.spacing(),
                energy: rep.energy,
                lambda: rep.lambda,
                converged: rep.converged,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Audit gate

/// Assumption audit plus the smallness condition on `ρ` for each bound in use.
#[derive(Debug, Clone, Serialize)]
pub struct GateReport {
    pub audit: AuditReport,
    pub eta2: Vec<(Vec<f64>, Eta2Check)>,
}

impl GateReport {
    pub fn passes(&self) -> bool {
        self.audit.passes() && self.eta2.iter().all(|(_, c)| c.holds)
    }

    pub fn reason(&self) -> String {
        let mut parts: Vec<String> = self.audit.failures().iter().map(|s| s.to_string()).collect();
        for (rho, c) in &self.eta2 {
            if !c.holds {
                parts.push(format!("mass smallness fails at rho = {rho:?} (margin {:.3e})", c.margin));
            }
        }
        parts.join("; ")
    }
}

pub fn audit_gate(spec: &NonlinearitySpec, rhos: &[Vec<f64>]) -> Result<GateReport, RunError> {
    let audit = audit_assumptions(spec, (1e-6, 1e6), 32);
    let eta2 = if audit.eta > 0.0 {
        let c = gn_constant(spec.dim(), two_n(spec.dim()))?;
        rhos.iter().map(|r| (r.clone(), eta2_with(spec.dim(), audit.eta, r, c))).collect()
    } else {
        rhos.iter()
            .map(|r| {
                (
                    r.clone(),
                    Eta2Check {
                        holds: true,
                        margin: 1.0,
                        eta: 0.0,
                    },
                )
            })
            .collect()
    };
    Ok(GateReport { audit, eta2 })
}

// ---------------------------------------------------------------------------
// Scenarios

fn spec_of(cfg: &ExperimentConfig) -> Result<&NonlinearitySpec, RunError> {
    cfg.spec.as_ref().ok_or_else(|| RunError::Parse("missing spec".into()))
}

fn report_summary(rep: &SolutionReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "status = {:?} after {} iterations (start {})", rep.status, rep.iterations, rep.best_start);
    let _ = writeln!(s, "energy J = {:.12e}", rep.energy);
    let _ = writeln!(s, "masses = {:?}", rep.masses);
    let _ = writeln!(s, "rho = {:?}", rep.rho);
    let _ = writeln!(s, "saturation = {:?}", rep.saturation);
    let _ = writeln!(s, "lambda = {:?}", rep.lambda);
    let _ = writeln!(s, "sigma = {:.3e}", rep.sigma);
    let _ = writeln!(
        s,
        "nehari residual = {:.3e}, pohozaev residual = {:.3e}, M/|grad u|^2 = {:.3e}",
        rep.residuals.nehari_res, rep.residuals.pohozaev_res, rep.m_relative
    );
    let _ = writeln!(s, "kkt ok = {}", rep.kkt.ok);
    if !rep.tied_starts.is_empty() {
        let _ = writeln!(s, "starts {:?} reach the same energy with different masses", rep.tied_starts);
    }
    s
}

fn run_solve(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<(), RunError> {
    let spec = spec_of(cfg)?;
    let grid = make_grid(spec.dim(), cfg.grid.radius_for(&cfg.solve.rho), cfg.grid.nodes)?;
    let rep = minimize(spec, &grid, &cfg.solve)?;
    art.add_json("report.json", &rep)?;
    let mut state = String::from("r");
    for i in 1..=spec.k() {
        let _ = write!(state, ",u_{i}");
    }
    state.push('\n');
    for (idx, r) in grid.nodes().iter().enumerate() {
        state.push_str(&fmt_f(*r));
        for c in rep.state.components() {
            state.push(',');
            state.push_str(&fmt_f(c.values()[idx]));
        }
        state.push('\n');
    }
    art.add("state.csv", state);
    let mut log = String::from("iter,energy,grad_norm,step\n");
    for r in &rep.log {
        let _ = writeln!(log, "{},{},{},{}", r.iter, fmt_f(r.energy), fmt_f(r.grad_norm), fmt_f(r.step));
    }
    art.add("log.csv", log);
    let scan = fiber_scan(&rep.state, spec, (0.25, 4.0), 201)?;
    art.add("fiber_scan.csv", scan.to_csv());
    art.add_plot(
        "fiber_scan.svg",
        "fiber map of the computed state",
        "s",
        "J(s*u)",
        &[Series {
            name: "phi".into(),
            points: scan.s.iter().cloned().zip(scan.phi.iter().cloned()).collect(),
        }],
    )?;
    art.summary = report_summary(&rep);
    if spec.has_critical() {
        let t = threshold_check(spec, &cfg.solve.rho, rep.energy);
        art.summary.push_str(&t.summary());
    }
    if !rep.converged {
        art.not_converged.push(format!("solve ended with {:?}", rep.status));
    }
    Ok(())
}

fn run_sweep_rho(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<(), RunError> {
    let spec = spec_of(cfg)?;
    let map = sweep_rho(spec, &cfg.axes.rho, &cfg.grid, &cfg.solve);
    art.add("energy_map.csv", map.to_csv());
    art.add_json("energy_map.json", &map)?;
    let sorted = map.sorted_by_size();
    art.add_plot(
        "energy_map.svg",
        "ground-state energy map",
        "ln max rho",
        "ln c",
        &[Series {
            name: "c(rho)".into(),
            points: sorted
                .iter()
                .filter(|r| r.c > 0.0)
                .map(|r| (r.rho.iter().cloned().fold(0.0, f64::max).ln(), r.c.ln()))
                .collect(),
        }],
    )?;
    let viol = map.order_violations(1e-6);
    let mut s = String::new();
    let _ = writeln!(s, "rows = {}", map.rows.len());
    let _ = writeln!(s, "duplicate spread = {:.3e}", map.duplicate_spread);
    let _ = writeln!(s, "ordering violations = {}", viol.len());
    for v in &viol {
        let _ = writeln!(s, "  rows {} >= {}: c = {:.10e} vs {:.10e} (strict {})", v.larger, v.smaller, v.c_larger, v.c_smaller, v.strict);
    }
    if let (Some(first), Some(last)) = (sorted.first(), sorted.last()) {
        let _ = writeln!(s, "c(smallest rho) / c(largest rho) = {:.6e}", first.c / last.c);
        if spec.has_critical() {
            let t = threshold_check(spec, &first.rho, first.c);
            let _ = writeln!(
                s,
                "smallest rho: c / threshold = {:.6e}",
                first.c / t.threshold.unwrap_or(f64::NAN)
            );
        }
    }
    for r in &map.rows {
        if let Some(e) = &r.error {
            let _ = writeln!(s, "row {:?} failed: {e}", r.rho);
        } else if !r.converged {
            art.not_converged.push(format!("row {:?}", r.rho));
        }
    }
    art.summary = s;
    Ok(())
}

fn run_sweep_beta(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<(), RunError> {
    let spec = spec_of(cfg)?;
    let grid = make_grid(spec.dim(), cfg.grid.radius_for(&cfg.solve.rho), cfg.grid.nodes)?;
    let rows = beta_sweep(spec, &cfg.axes.beta, &grid, &cfg.solve)?;
    let mut csv = String::from("beta,energy,mass_1,mass_2,both_saturated,converged,a_beta,diagnostic\n");
    for r in &rows {
        let m = |i: usize| r.masses.get(i).map(|x| fmt_f(*x)).unwrap_or_default();
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            fmt_f(r.beta),
            fmt_f(r.energy),
            m(0),
            m(1),
            r.both_saturated,
            r.converged,
            fmt_f(r.a_beta),
            fmt_f(r.diagnostic)
        );
    }
    art.add("beta_sweep.csv", csv);
    art.add_json("beta_sweep.json", &rows)?;
    let ok: Vec<&BetaRow> = rows.iter().filter(|r| r.error.is_none() && r.beta > 0.0).collect();
    art.add_plot(
        "beta_sweep.svg",
        "coupling sweep",
        "ln beta",
        "value",
        &[
            Series {
                name: "ln energy".into(),
                points: ok.iter().map(|r| (r.beta.ln(), r.energy.ln())).collect(),
            },
            Series {
                name: "diagnostic".into(),
                points: ok.iter().map(|r| (r.beta.ln(), r.diagnostic)).collect(),
            },
        ],
    )?;
    let mut s = String::new();
    match locate_beta_star(&rows) {
        Some((lo, star)) => {
            let _ = writeln!(s, "both masses saturated for every swept beta >= {star} (previous swept value {lo:?})");
        }
        None => {
            let _ = writeln!(s, "no saturated tail found on the sweep");
        }
    }
    let _ = writeln!(s, "diagnostic max/min over beta > 0 = {:.4}", diagnostic_variation(&rows));
    for r in &rows {
        if let Some(e) = &r.error {
            let _ = writeln!(s, "beta {} failed: {e}", r.beta);
        } else if !r.converged {
            art.not_converged.push(format!("beta {}", r.beta));
        }
    }
    art.summary = s;
    Ok(())
}

fn run_audit(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<(), RunError> {
    let spec = spec_of(cfg)?;
    let gate = audit_gate(spec, std::slice::from_ref(&cfg.solve.rho))?;
    art.add_json("audit.json", &gate)?;
    let mut s = String::new();
    for v in &gate.audit.verdicts {
        let _ = writeln!(s, "{}: {:?} (margin {:.3e}) {}", v.name, v.kind, v.margin, v.note);
    }
    let _ = writeln!(s, "eta ~ {:.6e}", gate.audit.eta);
    for (rho, c) in &gate.eta2 {
        let _ = writeln!(s, "mass smallness at rho = {rho:?}: holds = {} (margin {:.3e})", c.holds, c.margin);
    }
    art.summary = s;
    if !gate.passes() {
        art.audit_failure = Some(gate.reason());
    }
    Ok(())
}

fn run_gn(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<(), RunError> {
    let n = cfg.spec.as_ref().map(|s| s.dim()).unwrap_or(3);
    let mut csv = String::from("p,delta_p,C\n");
    let mut pts = Vec::new();
    for &p in &cfg.axes.p {
        let c = gn_constant(n, p)?;
        let _ = writeln!(csv, "{},{},{}", fmt_f(p), fmt_f(delta_p(n, p)), fmt_f(c));
        pts.push((p, c));
    }
    art.add("gn.csv", csv.clone());
    art.add_plot(
        "gn.svg",
        "Gagliardo-Nirenberg constant",
        "p",
        "C_{N,p}",
        &[Series {
            name: format!("N = {n}"),
            points: pts,
        }],
    )?;
    art.summary = format!("N = {n}\n{csv}");
    Ok(())
}

fn bubble_artifacts(table: &BubbleTable, art: &mut Artifacts) -> Result<(), RunError> {
    art.add("bubbles.csv", table.to_csv());
    let mut fits = String::from("quantity,expected,fitted,r_squared,flagged\n");
    for f in &table.fits {
        let _ = writeln!(fits, "{},{},{},{},{}", f.quantity, fmt_f(f.expected), fmt_f(f.fitted), fmt_f(f.r_squared), f.flagged);
    }
    art.add("bubble_fits.csv", fits);
    let xs: Vec<f64> = table.rows.iter().map(|r| r.eps.ln()).collect();
    let s_half = crate::analysis::sobolev_S(table.dim)?.powf(0.5 * table.dim as f64);
    let series = vec![
        Series {
            name: "ln mass".into(),
            points: xs.iter().cloned().zip(table.rows.iter().map(|r| r.integrals.mass.ln())).collect(),
        },
        Series {
            name: "ln |grad - S^(N/2)|".into(),
            points: xs
                .iter()
                .cloned()
                .zip(table.rows.iter().map(|r| (r.integrals.grad - s_half).abs().ln()))
                .collect(),
        },
    ];
    art.add_plot("bubble_fits.svg", "truncated bubble asymptotics", "ln eps", "ln value", &series)
}

fn run_bubbles(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<(), RunError> {
    let spec = spec_of(cfg)?;
    let table = bubble_diagnostics(spec, &cfg.axes.eps, &cfg.solve.rho, cfg.bubble_nodes)?;
    bubble_artifacts(&table, art)?;
    let mut s = format!("threshold = {:.10e}\n", table.threshold);
    for r in &table.rows {
        let _ = writeln!(s, "eps = {:.4e}: J(s*v) = {}", r.eps, fmt_opt(r.energy));
    }
    for f in &table.fits {
        let _ = writeln!(
            s,
            "{}: fitted {:.4} expected {:.4} (R^2 = {:.5}{})",
            f.quantity,
            f.fitted,
            f.expected,
            f.r_squared,
            if f.flagged { ", eps too large" } else { "" }
        );
    }
    art.summary = s;
    Ok(())
}

fn run_threshold(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<(), RunError> {
    let spec = spec_of(cfg)?;
    let grid = make_grid(spec.dim(), cfg.grid.radius_for(&cfg.solve.rho), cfg.grid.nodes)?;
    let rep = minimize(spec, &grid, &cfg.solve)?;
    let mut t = threshold_check(spec, &cfg.solve.rho, rep.energy);
    if t.applicable && cfg.axes.eps.len() >= 2 {
        let table = bubble_diagnostics(spec, &cfg.axes.eps, &cfg.solve.rho, cfg.bubble_nodes)?;
        bubble_artifacts(&table, art)?;
        t.bubbles = Some(table);
    }
    art.add_json("threshold.json", &t)?;
    art.summary = report_summary(&rep) + &t.summary();
    if !rep.converged {
        art.not_converged.push(format!("solve ended with {:?}", rep.status));
    }
    Ok(())
}

fn run_refine(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<(), RunError> {
    let spec = spec_of(cfg)?;
    let rows = refine_study(spec, cfg.grid.radius_for(&cfg.solve.rho), &cfg.axes.nodes, &cfg.solve)?;
    let mut csv = String::from("nodes,h,energy\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{}", r.nodes, fmt_f(r.h), fmt_f(r.energy));
    }
    art.add("refine.csv", csv);
    let mut s = String::new();
    for w in rows.windows(3) {
        let q = observed_order([w[0].h, w[1].h, w[2].h], [w[0].energy, w[1].energy, w[2].energy]);
        let _ = writeln!(s, "order from nodes {}/{}/{}: {}", w[0].nodes, w[1].nodes, w[2].nodes, fmt_opt(q));
    }
    art.add_plot(
        "refine.svg",
        "grid refinement",
        "ln h",
        "ln |J(h) - J(finest)|",
        &[Series {
            name: "energy error".into(),
            points: rows[..rows.len() - 1]
                .iter()
                .map(|r| (r.h.ln(), (r.energy - rows[rows.len() - 1].energy).abs().ln()))
                .collect(),
        }],
    )?;
    for r in &rows {
        if !r.converged {
            art.not_converged.push(format!("nodes {}", r.nodes));
        }
    }
    art.summary = s;
    Ok(())
}

/// Execute a parsed configuration and return its artifacts without writing them.
pub fn execute(cfg: &ExperimentConfig, force: bool) -> Result<Artifacts, RunError> {
    if cfg.scenario.uses_solver() && !force {
        let spec = spec_of(cfg)?;
        let rhos = if cfg.scenario == Scenario::SweepRho {
            cfg.axes.rho.clone()
        } else {
            vec![cfg.solve.rho.clone()]
        };
        let gate = audit_gate(spec, &rhos)?;
        if !gate.passes() {
            return Err(RunError::Audit(gate.reason()));
        }
    }
    let mut art = Artifacts::default();
    match cfg.scenario {
        Scenario::Solve => run_solve(cfg, &mut art)?,
        Scenario::SweepRho => run_sweep_rho(cfg, &mut art)?,
        Scenario::SweepBeta => run_sweep_beta(cfg, &mut art)?,
        Scenario::Audit => run_audit(cfg, &mut art)?,
        Scenario::Gn => run_gn(cfg, &mut art)?,
        Scenario::Threshold => run_threshold(cfg, &mut art)?,
        Scenario::Bubbles => run_bubbles(cfg, &mut art)?,
        Scenario::Refine => run_refine(cfg, &mut art)?,
    }
    Ok(art)
}

/// Read `config_path`, check it names `scenario`, run it and write the artifacts
/// to the output directory. Returns the directory written.
pub fn run(scenario: Scenario, config_path: &Path, opts: &RunOptions) -> Result<PathBuf, RunError> {
    let text = std::fs::read_to_string(config_path).map_err(|e| RunError::Io(format!("{}: {e}", config_path.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text).map_err(RunError::Parse)?;
    if cfg.scenario != scenario {
        return Err(RunError::Parse(format!(
            "config describes scenario {} but {} was requested",
            cfg.scenario, scenario
        )));
    }
    if let Some(seed) = opts.seed {
        cfg.solve.seed = seed;
    }
    let out = opts
        .out
        .clone()
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let art = execute(&cfg, opts.force)?;
    art.write(&out)?;
    if let Some(reason) = &art.audit_failure {
        return Err(RunError::Audit(reason.clone()));
    }
    if !art.not_converged.is_empty() {
        return Err(RunError::NotConverged(art.not_converged.join("; ")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observed_order_recovers_power_law() {
        let h = [0.04, 0.02, 0.01];
        let j = h.map(|x| 3.0 + 5.0 * x * x);
        assert!((observed_order(h, j).unwrap() - 2.0).abs() < 1e-9);
        assert!(observed_order(h, [1.0, 1.0, 1.0]).is_none());
    }

    #[test]
    fn order_violations_detects_increase() {
        let row = |rho: f64, c: f64| EnergyRow {
            rho: vec![rho],
            c,
            lambda: vec![Some(1.0)],
            saturation: vec![Saturation::Saturated],
            converged: true,
            r_max: 1.0,
            error: None,
        };
        let map = GroundEnergyMap {
            k: 1,
            rows: vec![row(0.5, 4.0), row(1.0, 1.0), row(2.0, 1.5)],
            duplicate_spread: 0.0,
        };
        let v = map.order_violations(1e-6);
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].larger, v[0].smaller), (2, 1));
        let csv = map.to_csv();
        assert!(csv.starts_with("rho_1,c,lambda_1,sat_1\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn beta_star_bracket() {
        let row = |beta: f64, sat: bool| BetaRow {
            beta,
            energy: 1.0,
            masses: vec![1.0, 1.0],
            saturation: Vec::new(),
            both_saturated: sat,
            converged: true,
            a_beta: 1.0 / (1.0 + beta),
            diagnostic: beta / (1.0 + beta),
            error: None,
        };
        let rows = vec![row(0.0, false), row(0.1, false), row(0.4, true), row(0.8, true)];
        assert_eq!(locate_beta_star(&rows), Some((Some(0.1), 0.4)));
        assert!((diagnostic_variation(&rows) - (0.8 / 1.8) / (0.1 / 1.1)).abs() < 1e-12);
    }
}
