//! Minimization of `J` over `{M = 0} ∩ {|uᵢ|₂ ≤ ρᵢ}`, multiplier extraction and
//! KKT checks.
//!
//! Each iteration takes a projected Sobolev-gradient step: the gradient of `J` is
//! preconditioned by `(K + κW)⁻¹` (the discrete `−Δ + κ`, with `κ = |∇u|₂²/Σ|uᵢ|₂²`)
//! and made tangent to every active constraint (saturated masses and `M`) through a
//! small Gram system. Mass constraints whose multiplier turns negative are
//! released. The trial point is rescaled into the ball and then dilated back onto
//! `{M = 0}`, which keeps masses fixed, so the ball is never re-violated.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::nonlinearity::{NonlinearitySpec, NonlinearityTerm};
use crate::radial_core::{make_grid, RadialGrid, StateVector};
use crate::rearrange::rearrangement_descent;
use crate::variational::{
    constraint_M, constraint_gradient, energy_J, energy_gradient, fiber_root, integral_g, project_to_M,
    residuals, IdentityResiduals,
};
use crate::{Error, Result};

/// Components with mass below this are frozen at zero.
pub const ZERO_MASS: f64 = 1e-12;
/// After convergence, components with mass below this fraction of `ρᵢ²` are
/// tentatively removed and the descent resumed if the energy does not rise.
pub const VANISHING_MASS: f64 = 1e-6;
/// Relative tolerance for calling a component saturated.
pub const SATURATION_TOL: f64 = 1e-8;

/// Parameters of one minimization.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    /// Mass bounds: `|uᵢ|₂ ≤ ρᵢ`.
    pub rho: Vec<f64>,
    pub max_iters: usize,
    pub initial_step: f64,
    pub backtrack: f64,
    pub armijo_c1: f64,
    /// Stop when the preconditioned gradient norm, relative to `‖u‖` in the same
    /// metric, falls below this.
    pub tolerance: f64,
    /// Apply a rearrangement step every this many iterations (0 = never).
    pub rearrangement_every: usize,
    pub starts: usize,
    /// Gaussian widths of the initial states as fractions of `R_max`, cycled over
    /// the starts.
    pub widths: Vec<f64>,
    /// Add starts with a single nonzero component when `K ≥ 2`.
    pub semitrivial_starts: bool,
    pub seed: u64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            rho: vec![1.0],
            max_iters: 5000,
            initial_step: 1.0,
            backtrack: 0.5,
            armijo_c1: 1e-4,
            tolerance: 1e-7,
            rearrangement_every: 0,
            starts: 8,
            widths: vec![0.08, 0.15, 0.04, 0.25],
            semitrivial_starts: true,
            seed: 0,
        }
    }
}

impl SolveConfig {
    pub fn with_rho(rho: &[f64]) -> Self {
        Self {
            rho: rho.to_vec(),
            ..Self::default()
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.rho.len() != k {
            return bad(format!("{} mass bounds for K = {k}", self.rho.len()));
        }
        if self.rho.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return bad("mass bounds must be positive".into());
        }
        if !(self.tolerance > 0.0) || !(self.initial_step > 0.0) {
            return bad("tolerance and initial step must be positive".into());
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) || !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) {
            return bad("backtracking factor and Armijo constant must lie in (0, 1)".into());
        }
        if self.starts == 0 || self.widths.is_empty() || self.widths.iter().any(|w| !(*w > 0.0)) {
            return bad("need at least one start and positive widths".into());
        }
        Ok(())
    }
}

/// Position of a component relative to its mass bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Saturation {
    Saturated,
    Interior,
    Zero,
}

/// Sign and complementarity checks on the multipliers.
#[derive(Debug, Clone, Serialize)]
pub struct KktVerdict {
    /// Smallest `λᵢ` over nonzero components.
    pub min_lambda: f64,
    /// Largest `|λᵢ(ρᵢ² − |uᵢ|₂²)|`.
    pub max_slackness: f64,
    pub sigma: f64,
    pub lambda_nonneg: bool,
    pub slackness: bool,
    pub sigma_small: bool,
    pub ok: bool,
}

/// Lagrange multipliers of a near-stationary state.
#[derive(Debug, Clone, Serialize)]
pub struct Multipliers {
    /// `λᵢ` from the per-component Nehari identity; `None` for zero components.
    pub lambda: Vec<Option<f64>>,
    /// Coefficient `σ` in `−(1−2σ)Δuᵢ + λᵢuᵢ = ∂ᵢG(u) − σ(N/2)∂ᵢH(u)`.
    pub sigma: f64,
    pub kkt: KktVerdict,
}

/// `λ` with zero components mapped to 0.
pub fn lambda_or_zero(lambda: &[Option<f64>]) -> Vec<f64> {
    lambda.iter().map(|l| l.unwrap_or(0.0)).collect()
}

fn weighted_dot(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>()).sum()
}

/// `λ` from `λᵢ|uᵢ|₂² = ∫∂ᵢG(u)uᵢ − |∇uᵢ|₂²`, `σ` by least squares on the strong
/// residual of the Euler–Lagrange system, and the KKT verdict against `ρ`.
pub fn extract_multipliers(u: &StateVector, spec: &NonlinearitySpec, rho: &[f64]) -> Result<Multipliers> {
    let k = u.k();
    if rho.len() != k || spec.k() != k {
        return Err(Error::InvalidArgument("component counts differ".into()));
    }
    let grid = u.grid();
    let w = grid.weights();
    let m = grid.len();
    let masses = u.masses();
    let mut gu = vec![0.0; k];
    let mut hu = vec![0.0; k];
    let mut buf = vec![0.0; k];
    let mut g_nodes = vec![vec![0.0; m]; k];
    let mut h_nodes = vec![vec![0.0; m]; k];
    for node in 0..m {
        u.gather(node, &mut buf);
        spec.grad_g(&buf, true, &mut gu);
        spec.grad_h(&buf, true, &mut hu);
        for i in 0..k {
            g_nodes[i][node] = gu[i];
            h_nodes[i][node] = hu[i];
        }
    }
    let lambda: Vec<Option<f64>> = (0..k)
        .map(|i| {
            if masses[i] < ZERO_MASS {
                return None;
            }
            let c = u.component(i);
            let gui = grid.integrate_with(|n| g_nodes[i][n] * c.values()[n]);
            Some((gui - c.grad_sq()) / masses[i])
        })
        .collect();
    // residual r(σ) = r0 + σ r1 in the strong form, nodes 1..m-2
    let n_half = 0.5 * spec.dim() as f64;
    let (mut a, mut b) = (0.0, 0.0);
    for i in 0..k {
        let Some(li) = lambda[i] else { continue };
        let ui = u.component(i).values();
        let ku = grid.stiffness_apply(ui);
        for node in 1..m - 1 {
            let wk = w[node];
            let lap = ku[node] / wk;
            let r0 = lap + li * ui[node] - g_nodes[i][node];
            let r1 = -2.0 * lap + n_half * h_nodes[i][node];
            a += wk * r0 * r1;
            b += wk * r1 * r1;
        }
    }
    let scale: f64 = (0..k).map(|i| u.component(i).grad_sq()).sum::<f64>().max(f64::MIN_POSITIVE);
    if !(b > 1e-14 * scale) || !b.is_finite() {
        return Err(Error::IllConditioned);
    }
    let sigma = -a / b;
    let mut min_lambda = f64::INFINITY;
    let mut max_slackness = 0.0f64;
    for i in 0..k {
        if let Some(l) = lambda[i] {
            min_lambda = min_lambda.min(l);
            max_slackness = max_slackness.max((l * (rho[i] * rho[i] - masses[i])).abs());
        }
    }
    let lambda_nonneg = min_lambda >= -1e-6;
    let slackness = max_slackness < 1e-6;
    let sigma_small = sigma.abs() < 1e-4;
    Ok(Multipliers {
        lambda,
        sigma,
        kkt: KktVerdict {
            min_lambda,
            max_slackness,
            sigma,
            lambda_nonneg,
            slackness,
            sigma_small,
            ok: lambda_nonneg && slackness && sigma_small,
        },
    })
}

/// One line of the iteration log.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct IterRecord {
    pub iter: usize,
    pub energy: f64,
    /// Relative preconditioned gradient norm.
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxIterations,
    /// Backtracking could not find a decrease; the gradient norm is at roundoff level.
    Stalled,
}

/// Summary of one start of a multi-start run.
#[derive(Debug, Clone, Serialize)]
pub struct StartSummary {
    pub index: usize,
    pub energy: f64,
    pub masses: Vec<f64>,
    pub status: RunStatus,
    pub iterations: usize,
    pub grad_norm: f64,
}

/// Result of [`minimize`].
#[derive(Debug, Clone, Serialize)]
pub struct SolutionReport {
    #[serde(skip)]
    pub state: StateVector,
    pub energy: f64,
    pub masses: Vec<f64>,
    pub rho: Vec<f64>,
    pub lambda: Vec<Option<f64>>,
    pub sigma: f64,
    pub residuals: IdentityResiduals,
    pub saturation: Vec<Saturation>,
    pub kkt: KktVerdict,
    pub status: RunStatus,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    /// `M(u)/|∇u|₂²`.
    pub m_relative: f64,
    pub best_start: usize,
    /// Other starts whose energy ties the best within 1e−8 relative with different masses.
    pub tied_starts: Vec<usize>,
    pub starts: Vec<StartSummary>,
    pub log: Vec<IterRecord>,
}

impl SolutionReport {
    /// Largest `|uᵢ|₂/ρᵢ`.
    pub fn max_saturation_ratio(&self) -> f64 {
        self.masses
            .iter()
            .zip(&self.rho)
            .map(|(m, r)| m.sqrt() / r)
            .fold(0.0, f64::max)
    }

    /// Properties every accepted report must satisfy.
    pub fn acceptance_violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.m_relative.abs() < 1e-8) {
            v.push(format!("|M|/|grad u|^2 = {:e}", self.m_relative.abs()));
        }
        for (i, (m, r)) in self.masses.iter().zip(&self.rho).enumerate() {
            if *m > r * r + 1e-10 {
                v.push(format!("mass {i} = {m:e} exceeds {:e}", r * r));
            }
        }
        if !(self.energy > 0.0) {
            v.push(format!("J = {:e} not positive", self.energy));
        }
        if !self.kkt.lambda_nonneg {
            v.push(format!("min lambda = {:e}", self.kkt.min_lambda));
        }
        if !self.kkt.slackness {
            v.push(format!("complementary slackness {:e}", self.kkt.max_slackness));
        }
        v
    }
}

fn saturation_of(masses: &[f64], rho: &[f64]) -> Vec<Saturation> {
    masses
        .iter()
        .zip(rho)
        .map(|(m, r)| {
            if *m < ZERO_MASS {
                Saturation::Zero
            } else if (m - r * r).abs() <= SATURATION_TOL * r * r {
                Saturation::Saturated
            } else {
                Saturation::Interior
            }
        })
        .collect()
}

/// Rescale components into the ball. Components listed in `pin` are set to the
/// bound exactly; others only when they exceed it.
fn ball_rescale(u: &mut StateVector, rho: &[f64], pin: &[bool]) {
    let masses = u.masses();
    for i in 0..u.k() {
        let target = rho[i] * rho[i];
        if masses[i] > 0.0 && (masses[i] > target || pin[i]) {
            let c = (target / masses[i]).sqrt();
            u.component_mut(i).values_mut().iter_mut().for_each(|x| *x *= c);
        }
    }
}

struct RunOutcome {
    state: StateVector,
    energy: f64,
    status: RunStatus,
    iterations: usize,
    grad_norm: f64,
    log: Vec<IterRecord>,
}

/// Preconditioned direction tangent to the active constraints. Returns the
/// direction, the slope `∇J·d` and the active mass set used.
fn projected_direction(
    u: &StateVector,
    spec: &NonlinearitySpec,
    rho: &[f64],
    frozen: &[bool],
    kappa: f64,
) -> (Vec<Vec<f64>>, f64, Vec<bool>) {
    let grid = u.grid();
    let k = u.k();
    let masses = u.masses();
    let pinv = |v: &[Vec<f64>]| -> Vec<Vec<f64>> {
        v.iter()
            .enumerate()
            .map(|(i, x)| {
                if frozen[i] {
                    vec![0.0; x.len()]
                } else {
                    grid.solve_shifted(kappa, x)
                }
            })
            .collect()
    };
    let mut gj = energy_gradient(u, spec);
    let mut gm = constraint_gradient(u, spec);
    for i in 0..k {
        if frozen[i] {
            gj[i].iter_mut().for_each(|x| *x = 0.0);
            gm[i].iter_mut().for_each(|x| *x = 0.0);
        }
    }
    let w = grid.weights();
    let mass_grads: Vec<Vec<Vec<f64>>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    if j == i {
                        u.component(i).values().iter().zip(w).map(|(x, wk)| x * wk).collect()
                    } else {
                        vec![0.0; grid.len()]
                    }
                })
                .collect()
        })
        .collect();
    let zg = pinv(&gj);
    let zm = pinv(&gm);
    let zmass: Vec<Vec<Vec<f64>>> = mass_grads.iter().map(|a| pinv(a)).collect();
    let mut active: Vec<bool> = (0..k)
        .map(|i| !frozen[i] && masses[i] >= rho[i] * rho[i] * (1.0 - 1e-9))
        .collect();
    loop {
        // constraint list: M first, then active masses
        let idx: Vec<usize> = (0..k).filter(|i| active[*i]).collect();
        let n = 1 + idx.len();
        let a_of = |c: usize| if c == 0 { &gm } else { &mass_grads[idx[c - 1]] };
        let z_of = |c: usize| if c == 0 { &zm } else { &zmass[idx[c - 1]] };
        let gram = DMatrix::from_fn(n, n, |r, c| weighted_dot(a_of(r), z_of(c)));
        let rhs = DVector::from_fn(n, |r, _| -weighted_dot(a_of(r), &zg));
        let mu = gram
            .clone()
            .lu()
            .solve(&rhs)
            .unwrap_or_else(|| DVector::zeros(n));
        let worst = (1..n)
            .filter(|c| mu[*c] < 0.0)
            .min_by(|a, b| mu[*a].total_cmp(&mu[*b]));
        if let Some(c) = worst {
            active[idx[c - 1]] = false;
            continue;
        }
        let mut d = zg.clone();
        for c in 0..n {
            let z = z_of(c);
            for (di, zi) in d.iter_mut().zip(z) {
                for (x, y) in di.iter_mut().zip(zi) {
                    *x += mu[c] * y;
                }
            }
        }
        let slope = weighted_dot(&gj, &d);
        return (d, slope, active);
    }
}

/// `u` with its vanishing components set to zero and re-projected, when that
/// does not raise the energy beyond roundoff.
fn drop_vanishing(u: &StateVector, j: f64, spec: &NonlinearitySpec, rho: &[f64]) -> Option<(StateVector, f64)> {
    let masses = u.masses();
    let vanishing: Vec<bool> = masses
        .iter()
        .zip(rho)
        .map(|(m, r)| *m > 0.0 && *m < VANISHING_MASS * r * r)
        .collect();
    if !vanishing.contains(&true) || masses.iter().zip(&vanishing).all(|(m, v)| *v || *m == 0.0) {
        return None;
    }
    let values = u
        .components()
        .iter()
        .zip(&vanishing)
        .map(|(c, v)| if *v { vec![0.0; c.values().len()] } else { c.values().to_vec() })
        .collect();
    let v = project_to_M(&StateVector::from_values(u.grid(), values).ok()?, spec).ok()?.state;
    let jv = energy_J(&v, spec);
    (jv <= j + 1e-10 * j.abs()).then_some((v, jv))
}

fn run_single(spec: &NonlinearitySpec, u0: &StateVector, cfg: &SolveConfig) -> Result<RunOutcome> {
    let k = u0.k();
    let mut u = u0.clone();
    ball_rescale(&mut u, &cfg.rho, &vec![false; k]);
    let mut u = project_to_M(&u, spec)?.state;
    let mut j = energy_J(&u, spec);
    let mut t_prev = cfg.initial_step;
    let mut log = Vec::new();
    let mut status = RunStatus::MaxIterations;
    let mut grad_norm = f64::INFINITY;
    let mut iterations = 0;
    let mut it = 0;
    while it < cfg.max_iters {
        iterations = it;
        it += 1;
        let masses = u.masses();
        let frozen: Vec<bool> = masses.iter().map(|m| *m < ZERO_MASS).collect();
        for i in 0..k {
            if frozen[i] && masses[i] > 0.0 {
                u.component_mut(i).values_mut().iter_mut().for_each(|x| *x = 0.0);
            }
        }
        let grad = u.grad_norm_sq();
        let total_mass: f64 = masses.iter().sum();
        let kappa = grad / total_mass;
        let (d, slope, active) = projected_direction(&u, spec, &cfg.rho, &frozen, kappa);
        grad_norm = (slope.max(0.0) / (grad + kappa * total_mass)).sqrt();
        log.push(IterRecord {
            iter: it,
            energy: j,
            grad_norm,
            step: t_prev,
        });
        if grad_norm < cfg.tolerance {
            if let Some((v, jv)) = drop_vanishing(&u, j, spec, &cfg.rho) {
                u = v;
                j = jv;
                continue;
            }
            status = RunStatus::Converged;
            break;
        }
        let mut t = (2.0 * t_prev).min(cfg.initial_step);
        let mut accepted = None;
        while t > 1e-12 {
            let values: Vec<Vec<f64>> = u
                .components()
                .iter()
                .zip(&d)
                .map(|(c, di)| c.values().iter().zip(di).map(|(x, y)| x - t * y).collect())
                .collect();
            let mut trial = StateVector::from_values(u.grid(), values)?;
            ball_rescale(&mut trial, &cfg.rho, &active);
            if let Ok(p) = project_to_M(&trial, spec) {
                let jn = energy_J(&p.state, spec);
                if jn <= j - cfg.armijo_c1 * t * slope {
                    accepted = Some((p.state, jn));
                    break;
                }
            }
            t *= cfg.backtrack;
        }
        let Some((next, jn)) = accepted else {
            status = RunStatus::Stalled;
            break;
        };
        u = next;
        j = jn;
        t_prev = t;
        if cfg.rearrangement_every > 0 && it % cfg.rearrangement_every == 0 {
            if let Ok((v, _)) = rearrangement_descent(&u, spec) {
                let jv = energy_J(&v, spec);
                if jv < j {
                    u = v;
                    j = jv;
                }
            }
        }
    }
    Ok(RunOutcome {
        state: u,
        energy: j,
        status,
        iterations,
        grad_norm,
        log,
    })
}

/// Initial Gaussian states for the multi-start. Start 0 saturates every component;
/// starts `1..=K` (when `K ≥ 2` and enabled) keep a single component; the rest
/// draw mass fractions in `[½, 1]` from the seeded generator.
pub fn initial_states(grid: &Arc<RadialGrid>, k: usize, cfg: &SolveConfig) -> Vec<StateVector> {
    let r_max = grid.r_max();
    (0..cfg.starts)
        .map(|s| {
            let width = cfg.widths[s % cfg.widths.len()] * r_max;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(s as u64));
            let fractions: Vec<f64> = if s == 0 {
                vec![1.0; k]
            } else if cfg.semitrivial_starts && k >= 2 && s <= k {
                (0..k).map(|i| if i == s - 1 { 1.0 } else { 0.0 }).collect()
            } else {
                (0..k).map(|_| rng.gen_range(0.5..=1.0)).collect()
            };
            let values = (0..k)
                .map(|i| {
                    let wi = width * if s == 0 { 1.0 } else { rng.gen_range(0.8..1.25) };
                    let v: Vec<f64> = grid.nodes().iter().map(|r| (-0.5 * (r / wi).powi(2)).exp()).collect();
                    let m = grid.integrate(&v.iter().map(|x| x * x).collect::<Vec<_>>());
                    let target = fractions[i] * cfg.rho[i] * cfg.rho[i];
                    let c = if m > 0.0 { (target / m).sqrt() } else { 0.0 };
                    v.into_iter().map(|x| c * x).collect()
                })
                .collect();
            StateVector::from_values(grid, values).expect("valid state")
        })
        .collect()
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x != y {
            return x < y;
        }
    }
    false
}

fn build_report(
    spec: &NonlinearitySpec,
    cfg: &SolveConfig,
    out: RunOutcome,
    best_start: usize,
    starts: Vec<StartSummary>,
    tied_starts: Vec<usize>,
) -> Result<SolutionReport> {
    let u = out.state;
    let mult = extract_multipliers(&u, spec, &cfg.rho)?;
    let lam = lambda_or_zero(&mult.lambda);
    let res = residuals(&u, &lam, spec);
    let masses = u.masses();
    let m_relative = constraint_M(&u, spec)? / u.grad_norm_sq();
    Ok(SolutionReport {
        energy: energy_J(&u, spec),
        saturation: saturation_of(&masses, &cfg.rho),
        masses,
        rho: cfg.rho.clone(),
        lambda: mult.lambda,
        sigma: mult.sigma,
        residuals: res,
        kkt: mult.kkt,
        converged: out.status == RunStatus::Converged,
        status: out.status,
        iterations: out.iterations,
        grad_norm: out.grad_norm,
        m_relative,
        best_start,
        tied_starts,
        starts,
        log: out.log,
        state: u,
    })
}

/// Descend from a single given state.
pub fn minimize_from(spec: &NonlinearitySpec, u0: &StateVector, cfg: &SolveConfig) -> Result<SolutionReport> {
    cfg.validate(spec.k())?;
    let out = run_single(spec, u0, cfg)?;
    let summary = StartSummary {
        index: 0,
        energy: out.energy,
        masses: out.state.masses(),
        status: out.status,
        iterations: out.iterations,
        grad_norm: out.grad_norm,
    };
    build_report(spec, cfg, out, 0, vec![summary], Vec::new())
}

/// Multi-start minimization on `grid`; starts run in parallel and the lowest
/// energy among converged starts is reported (lowest overall if none converged),
/// ties broken by lexicographically smaller masses.
pub fn minimize(spec: &NonlinearitySpec, grid: &Arc<RadialGrid>, cfg: &SolveConfig) -> Result<SolutionReport> {
    cfg.validate(spec.k())?;
    if grid.dim() != spec.dim() {
        return Err(Error::InvalidArgument(format!(
            "grid dimension {} differs from spec dimension {}",
            grid.dim(),
            spec.dim()
        )));
    }
    let inits = initial_states(grid, spec.k(), cfg);
    let results: Vec<Result<RunOutcome>> = inits.par_iter().map(|u0| run_single(spec, u0, cfg)).collect();
    let mut outcomes = Vec::new();
    let mut first_err = None;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(o) => outcomes.push((i, o)),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    if outcomes.is_empty() {
        return Err(first_err.unwrap_or_else(|| Error::NotConverged("no start produced a state".into())));
    }
    let summaries: Vec<StartSummary> = outcomes
        .iter()
        .map(|(i, o)| StartSummary {
            index: *i,
            energy: o.energy,
            masses: o.state.masses(),
            status: o.status,
            iterations: o.iterations,
            grad_norm: o.grad_norm,
        })
        .collect();
    let any_converged = outcomes.iter().any(|(_, o)| o.status == RunStatus::Converged);
    let mut best: Option<usize> = None;
    for (pos, (_, o)) in outcomes.iter().enumerate() {
        if any_converged && o.status != RunStatus::Converged {
            continue;
        }
        best = match best {
            None => Some(pos),
            Some(b) => {
                let ob = &outcomes[b].1;
                let better = o.energy < ob.energy
                    || (o.energy == ob.energy && lex_less(&o.state.masses(), &ob.state.masses()));
                Some(if better { pos } else { b })
            }
        };
    }
    let best = best.expect("at least one outcome");
    let e_best = outcomes[best].1.energy;
    let m_best = outcomes[best].1.state.masses();
    let tied: Vec<usize> = outcomes
        .iter()
        .enumerate()
        .filter(|(pos, (_, o))| {
            *pos != best
                && (o.energy - e_best).abs() <= 1e-8 * e_best.abs()
                && o.state.masses().iter().zip(&m_best).any(|(a, b)| (a - b).abs() > 1e-6 * b.abs().max(1e-12))
        })
        .map(|(_, (i, _))| *i)
        .collect();
    let (index, out) = outcomes.swap_remove(best);
    build_report(spec, cfg, out, index, summaries, tied)
}

/// Largest relative directional derivative of `J + ½Σλᵢ|uᵢ|₂²` along `n_dirs`
/// random directions tangent to `{M = 0}`, by central differences.
pub fn fd_stationarity(u: &StateVector, spec: &NonlinearitySpec, lambda: &[f64], n_dirs: usize, seed: u64) -> f64 {
    let grid = u.grid();
    let k = u.k();
    let m = grid.len();
    let gm = constraint_gradient(u, spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let parts = |v: &StateVector| -> (f64, f64, f64) {
        let masses = v.masses();
        (
            0.5 * v.grad_norm_sq(),
            integral_g(v, spec),
            0.5 * lambda.iter().zip(&masses).map(|(l, m)| l * m).sum::<f64>(),
        )
    };
    let scale_len = grid.r_max();
    let mut worst = 0.0f64;
    for _ in 0..n_dirs {
        // smooth random direction: a few Gaussian bumps per component, supported where u lives
        let mut dir: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                if u.component(i).mass() < ZERO_MASS {
                    return vec![0.0; m];
                }
                let bumps: Vec<(f64, f64, f64)> = (0..3)
                    .map(|_| {
                        (
                            rng.gen_range(-1.0..1.0),
                            rng.gen_range(0.0..0.3) * scale_len,
                            rng.gen_range(0.03..0.2) * scale_len,
                        )
                    })
                    .collect();
                let mut v: Vec<f64> = grid
                    .nodes()
                    .iter()
                    .map(|r| bumps.iter().map(|(a, c, s)| a * (-((r - c) / s).powi(2)).exp()).sum())
                    .collect();
                v[m - 1] = 0.0;
                v
            })
            .collect();
        // remove the normal component of M in the Euclidean pairing
        let num = weighted_dot(&gm, &dir);
        let den = weighted_dot(&gm, &gm);
        if den > 0.0 {
            for (di, gi) in dir.iter_mut().zip(&gm) {
                for (x, y) in di.iter_mut().zip(gi) {
                    *x -= num / den * y;
                }
            }
        }
        let amp = u.grad_norm_sq().sqrt();
        let dnorm = grid_grad_norm(grid, &dir).max(f64::MIN_POSITIVE);
        let eps = 1e-5 * amp / dnorm;
        let shifted = |sgn: f64| {
            let values = u
                .components()
                .iter()
                .zip(&dir)
                .map(|(c, di)| c.values().iter().zip(di).map(|(x, y)| x + sgn * eps * y).collect())
                .collect();
            StateVector::from_values(grid, values).expect("same grid")
        };
        let (a1, b1, c1) = parts(&shifted(1.0));
        let (a0, b0, c0) = parts(&shifted(-1.0));
        let total = (a1 - b1 + c1) - (a0 - b0 + c0);
        let size = (a1 - a0).abs() + (b1 - b0).abs() + (c1 - c0).abs();
        if size > 0.0 {
            worst = worst.max(total.abs() / size);
        }
    }
    worst
}

fn grid_grad_norm(grid: &RadialGrid, v: &[Vec<f64>]) -> f64 {
    v.iter().map(|x| grid.grad_sq(x)).sum::<f64>().sqrt()
}

/// One row of a coupling sweep.
#[derive(Debug, Clone, Serialize)]
pub struct BetaRow {
    pub beta: f64,
    pub energy: f64,
    pub masses: Vec<f64>,
    pub saturation: Vec<Saturation>,
    pub both_saturated: bool,
    pub converged: bool,
    /// Fiber maximizer of the test state `w = (ρ₁v̄/ρ₂, v̄)` on the exact scaling law.
    pub a_beta: f64,
    /// `β·a_β^{N(r₁+r₂−2)/2−2}`.
    pub diagnostic: f64,
    pub error: Option<String>,
}

/// Index of the single coupling term in `spec`, required for a sweep.
fn coupling_index(spec: &NonlinearitySpec) -> Result<(usize, Vec<f64>)> {
    let idx: Vec<(usize, Vec<f64>)> = spec
        .terms()
        .iter()
        .enumerate()
        .filter_map(|(i, t)| match t {
            NonlinearityTerm::CouplingProduct { r, .. } => Some((i, r.clone())),
            _ => None,
        })
        .collect();
    if spec.k() != 2 || idx.len() != 1 {
        return Err(Error::InvalidArgument("coupling sweep needs K = 2 and exactly one coupling term".into()));
    }
    let (i, r) = idx.into_iter().next().expect("one coupling");
    if r.iter().sum::<f64>() <= spec.two_n() {
        return Err(Error::InvalidArgument("coupling sweep needs r1 + r2 > 2_N".into()));
    }
    Ok((i, r))
}

/// The decoupled single-component spec for component `i` (its separable terms only).
pub fn component_spec(spec: &NonlinearitySpec, i: usize) -> Result<NonlinearitySpec> {
    let terms = spec
        .terms()
        .iter()
        .filter_map(|t| match t {
            NonlinearityTerm::SeparablePower { component, mu, p } if *component == i => {
                Some(NonlinearityTerm::SeparablePower { component: 0, mu: *mu, p: *p })
            }
            NonlinearityTerm::LogPower { component, mu, p } if *component == i => {
                Some(NonlinearityTerm::LogPower { component: 0, mu: *mu, p: *p })
            }
            NonlinearityTerm::SobolevCritical { theta } if theta[i] > 0.0 => {
                Some(NonlinearityTerm::SobolevCritical { theta: vec![theta[i]] })
            }
            _ => None,
        })
        .collect();
    NonlinearitySpec::new(spec.dim(), 1, terms)
}

/// Solve along a ladder of coupling strengths. Each row is independent; a
/// failing row records its error instead of aborting the sweep.
pub fn beta_sweep(
    template: &NonlinearitySpec,
    betas: &[f64],
    grid: &Arc<RadialGrid>,
    cfg: &SolveConfig,
) -> Result<Vec<BetaRow>> {
    let (index, r) = coupling_index(template)?;
    cfg.validate(2)?;
    // v̄: scalar ground state of component 2 with mass ρ₂²
    let spec2 = component_spec(template, 1)?;
    let scalar_cfg = SolveConfig {
        rho: vec![cfg.rho[1]],
        semitrivial_starts: false,
        ..cfg.clone()
    };
    let vbar = minimize(&spec2, grid, &scalar_cfg)?.state;
    let v = vbar.component(0).values();
    let ratio = cfg.rho[0] / cfg.rho[1];
    let w = StateVector::from_values(grid, vec![v.iter().map(|x| ratio * x).collect(), v.to_vec()])?;
    let n = template.dim() as f64;
    let expo = n * (r[0] + r[1] - 2.0) / 2.0 - 2.0;
    let rows = betas
        .par_iter()
        .map(|beta| {
            let spec = template.with_coupling(index, *beta)?;
            let a_beta = fiber_root(&w, &spec)?;
            // The ground state widens roughly like 1/a_β; stretch the row grid to match.
            let row_grid = if a_beta < 1.0 {
                make_grid(grid.dim(), grid.r_max() / a_beta, grid.len())?
            } else {
                grid.clone()
            };
            let rep = minimize(&spec, &row_grid, cfg)?;
            Ok::<_, Error>((a_beta, rep))
        })
        .collect::<Vec<_>>();
    Ok(betas
        .iter()
        .zip(rows)
        .map(|(beta, row)| match row {
            Ok((a_beta, rep)) => BetaRow {
                beta: *beta,
                energy: rep.energy,
                both_saturated: rep.saturation.iter().all(|s| *s == Saturation::Saturated),
                masses: rep.masses,
                saturation: rep.saturation,
                converged: rep.converged,
                a_beta,
                diagnostic: beta * a_beta.powf(expo),
                error: None,
            },
            Err(e) => BetaRow {
                beta: *beta,
                energy: f64::NAN,
                masses: Vec::new(),
                saturation: Vec::new(),
                both_saturated: false,
                converged: false,
                a_beta: f64::NAN,
                diagnostic: f64::NAN,
                error: Some(e.to_string()),
            },
        })
        .collect())
}
