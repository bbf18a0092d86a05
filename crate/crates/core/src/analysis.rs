//! Constants and thresholds: the Gagliardo–Nirenberg constant, the Sobolev
//! constant `S`, the weighted vector constant `S̄`, truncated Aubin–Talenti bubbles
//! and the critical energy threshold `(1/N) S^{N/2} Σ θ_i^{1−N/2}`.

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::nonlinearity::{two_n, two_star, NonlinearitySpec, NonlinearityTerm};
use crate::radial_core::{make_grid, solve_tridiagonal, unit_sphere_area, RadialField, RadialGrid, StateVector};
use crate::roots::brent;
use crate::variational::FiberMap;
use crate::{Error, Result};

/// Five-point Gauss–Legendre nodes and weights on `[−1, 1]`.
const GL_X: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664,
];
const GL_W: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

/// Composite Gauss–Legendre rule for `∫_a^b f` on `panels` equal panels.
pub fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let mut s = 0.0;
    for i in 0..panels {
        let mid = a + (i as f64 + 0.5) * h;
        for (x, w) in GL_X.iter().zip(GL_W) {
            s += w * f(mid + 0.5 * h * x);
        }
    }
    0.5 * h * s
}

/// `δ_p = N(1/2 − 1/p)`.
pub fn delta_p(n: usize, p: f64) -> f64 {
    n as f64 * (0.5 - 1.0 / p)
}

fn check_dim(n: usize) -> Result<()> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!("dimension {n} < 3")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Instanton and Sobolev constant

/// Aubin–Talenti instanton `u_0^ε(r) = (ε√(N(N−2))/(ε² + r²))^{(N−2)/2}`.
pub fn instanton(n: usize, eps: f64, r: f64) -> f64 {
    let nf = n as f64;
    (eps * (nf * (nf - 2.0)).sqrt() / (eps * eps + r * r)).powf(0.5 * (nf - 2.0))
}

/// Radial derivative of [`instanton`].
pub fn instanton_derivative(n: usize, eps: f64, r: f64) -> f64 {
    let nf = n as f64;
    -(nf - 2.0) * r / (eps * eps + r * r) * instanton(n, eps, r)
}

/// `(|∇u_0^1|₂², ∫|u_0^1|^{2*})` over the ball of radius `r_max` (`∞` allowed),
/// integrated in `t = atan r` where both integrands are smooth.
fn instanton_integrals(n: usize, r_max: f64, panels: usize) -> (f64, f64) {
    let area = unit_sphere_area(n);
    let q = two_star(n);
    let pw = (n - 1) as i32;
    let t_max = if r_max.is_finite() { r_max.atan() } else { FRAC_PI_2 };
    let grad = gauss_legendre(
        |t| {
            let r = t.tan();
            let d = instanton_derivative(n, 1.0, r);
            r.powi(pw) * d * d * (1.0 + r * r)
        },
        0.0,
        t_max,
        panels,
    );
    let crit = gauss_legendre(
        |t| {
            let r = t.tan();
            r.powi(pw) * instanton(n, 1.0, r).powf(q) * (1.0 + r * r)
        },
        0.0,
        t_max,
        panels,
    );
    (area * grad, area * crit)
}

/// Best Sobolev constant `S = |∇u_0|₂² / |u_0|_{2*}²` from quadrature of the
/// instanton over all of ℝ^N.
#[allow(non_snake_case)]
pub fn sobolev_S(n: usize) -> Result<f64> {
    check_dim(n)?;
    let (g, c) = instanton_integrals(n, f64::INFINITY, 256);
    Ok(g / c.powf(2.0 / two_star(n)))
}

/// The Sobolev quotient of the instanton restricted to the ball `B_{r_max}`.
#[allow(non_snake_case)]
pub fn sobolev_S_truncated(n: usize, r_max: f64) -> Result<f64> {
    check_dim(n)?;
    if !(r_max > 0.0) {
        return Err(Error::InvalidArgument(format!("radius {r_max} must be positive")));
    }
    let (g, c) = instanton_integrals(n, r_max, 256);
    Ok(g / c.powf(2.0 / two_star(n)))
}

fn check_theta(theta: &[f64]) -> Result<()> {
    if theta.is_empty() || theta.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
        return Err(Error::InvalidArgument(format!("θ = {theta:?} must be componentwise positive")));
    }
    Ok(())
}

/// `S̄ = (Σ_j θ_j^{−(N−2)/2})^{2/N} S`, the vector Sobolev quotient of the
/// synchronized bubble `(θ_j^{−(N−2)/4} u_0)_j`.
#[allow(non_snake_case)]
pub fn bar_S(n: usize, theta: &[f64]) -> Result<f64> {
    check_theta(theta)?;
    let nf = n as f64;
    let sum: f64 = theta.iter().map(|t| t.powf(-(nf - 2.0) / 2.0)).sum();
    Ok(sum.powf(2.0 / nf) * sobolev_S(n)?)
}

/// `S θ_max^{−(N−2)/N}`, the vector quotient of the best single-component bubble.
/// This is the infimum of `|∇u|₂² / (Σ θ_j |u_j|_{2*}^{2*})^{2/2*}` over nonzero K-tuples.
pub fn semitrivial_infimum(n: usize, theta: &[f64]) -> Result<f64> {
    check_theta(theta)?;
    let tmax = theta.iter().cloned().fold(0.0, f64::max);
    Ok(sobolev_S(n)? * tmax.powf(-(n as f64 - 2.0) / n as f64))
}

/// Result of the direct minimization of the vector Sobolev quotient.
#[derive(Debug, Clone, Serialize)]
pub struct VectorQuotientMin {
    pub value: f64,
    /// Share `θ_j |u_j|_{2*}^{2*} / Σ_k θ_k |u_k|_{2*}^{2*}` of each component at the end.
    pub shares: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Emden–Fowler discretization of radial K-tuples: `u(r) = r^{−(N−2)/2} v(ln r)`
/// turns `|∇u|₂²` into `ω∫ v'² + ((N−2)/2)² v² dt` and `∫|u|^{2*}` into `ω∫|v|^{2*} dt`,
/// so dilations become translations and no length scale has to be resolved.
struct EmdenFowler {
    m: usize,
    h: f64,
    a2: f64,
    q: f64,
    area: f64,
}

impl EmdenFowler {
    /// `v ↦ Σ (v_{k+1}−v_k)²/h + a² h Σ v_k²` with `v = 0` at both ends.
    fn quad(&self, v: &[f64]) -> f64 {
        let mut s = 0.0;
        let mut prev = 0.0;
        for x in v.iter().chain(std::iter::once(&0.0)) {
            s += (x - prev).powi(2) / self.h;
            prev = *x;
        }
        s + self.a2 * self.h * v.iter().map(|x| x * x).sum::<f64>()
    }

    fn crit(&self, v: &[f64]) -> f64 {
        self.h * v.iter().map(|x| x.abs().powf(self.q)).sum::<f64>()
    }

    fn quotient(&self, v: &[Vec<f64>], theta: &[f64]) -> f64 {
        let num: f64 = v.iter().map(|c| self.quad(c)).sum();
        let den: f64 = v.iter().zip(theta).map(|(c, t)| t * self.crit(c)).sum();
        self.area.powf(1.0 - 2.0 / self.q) * num / den.powf(2.0 / self.q)
    }

    /// Solve `A x = rhs` for the tridiagonal form of [`EmdenFowler::quad`].
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let off = -1.0 / self.h;
        let diag = 2.0 / self.h + self.a2 * self.h;
        solve_tridiagonal(&vec![off; self.m], &vec![diag; self.m], &vec![off; self.m], rhs)
    }
}

/// Minimize `|∇u|₂² / (Σ_j θ_j |u_j|_{2*}^{2*})^{2/2*}` over radial K-tuples by
/// preconditioned gradient descent with Armijo backtracking, in Emden–Fowler
/// variables on `t ∈ [−30, 30]`. Each of the `4K` starts is a seeded,
/// non-synchronized tuple of shifted bubbles with random amplitudes; the lowest
/// local minimum is returned.
pub fn bar_s_direct(n: usize, theta: &[f64], seed: u64) -> Result<VectorQuotientMin> {
    check_dim(n)?;
    check_theta(theta)?;
    let runs: Vec<VectorQuotientMin> = (0..4 * theta.len() as u64)
        .into_par_iter()
        .map(|i| descend_quotient(n, theta, seed.wrapping_mul(0x9E37_79B9).wrapping_add(i)))
        .collect();
    Ok(runs
        .into_iter()
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .expect("at least one start"))
}

fn descend_quotient(n: usize, theta: &[f64], seed: u64) -> VectorQuotientMin {
    let half = 30.0;
    let m = 6001;
    let h = 2.0 * half / (m + 1) as f64;
    let a = 0.5 * (n as f64 - 2.0);
    let ef = EmdenFowler {
        m,
        h,
        a2: a * a,
        q: two_star(n),
        area: unit_sphere_area(n),
    };
    let ts: Vec<f64> = (1..=m).map(|i| -half + i as f64 * h).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<Vec<f64>> = theta
        .iter()
        .map(|_| {
            let amp = rng.gen_range(0.3..1.0);
            let shift = rng.gen_range(-1.0..1.0);
            let width = rng.gen_range(0.7..1.4);
            ts.iter().map(|t| amp * (((t - shift) / width).cosh()).powf(-a)).collect()
        })
        .collect();
    let normalize = |v: &mut Vec<Vec<f64>>| {
        let den: f64 = v.iter().zip(theta).map(|(c, t)| t * ef.crit(c)).sum();
        let s = den.powf(-1.0 / ef.q);
        for c in v.iter_mut() {
            c.iter_mut().for_each(|x| *x *= s);
        }
    };
    normalize(&mut v);
    let mut q_val = ef.quotient(&v, theta);
    let mut step = 1.0f64;
    let mut converged = false;
    let mut iterations = 0;
    let mut stall = 0;
    for it in 0..20000 {
        iterations = it + 1;
        // With D = 1 the preconditioned negative gradient is A⁻¹(N_A θ_j |v_j|^{q−2} v_j) − v_j.
        let num: f64 = v.iter().map(|c| ef.quad(c)).sum();
        let dir: Vec<Vec<f64>> = v
            .iter()
            .zip(theta)
            .map(|(c, t)| {
                let rhs: Vec<f64> = c.iter().map(|x| num * t * ef.h * x.abs().powf(ef.q - 2.0) * x).collect();
                ef.solve(&rhs).iter().zip(c).map(|(y, x)| y - x).collect()
            })
            .collect();
        let slope: f64 = dir.iter().map(|d| ef.quad(d)).sum::<f64>();
        if slope.sqrt() < 1e-12 * num.sqrt() {
            converged = true;
            break;
        }
        let mut t = (2.0 * step).min(1.0);
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<Vec<f64>> =
                v.iter().zip(&dir).map(|(c, d)| c.iter().zip(d).map(|(x, y)| x + t * y).collect()).collect();
            normalize(&mut trial);
            let qt = ef.quotient(&trial, theta);
            // Armijo on the quotient: the directional derivative is −2·slope·Q/num.
            if qt <= q_val - 1e-4 * t * 2.0 * slope * q_val / num {
                accepted = Some((trial, qt));
                break;
            }
            t *= 0.5;
        }
        let Some((trial, qt)) = accepted else {
            converged = true;
            break;
        };
        let rel = (q_val - qt) / q_val;
        v = trial;
        q_val = qt;
        step = t;
        if rel < 1e-15 {
            stall += 1;
            if stall >= 50 {
                converged = true;
                break;
            }
        } else {
            stall = 0;
        }
    }
    let parts: Vec<f64> = v.iter().zip(theta).map(|(c, t)| t * ef.crit(c)).collect();
    let total: f64 = parts.iter().sum();
    VectorQuotientMin {
        value: q_val,
        shares: parts.iter().map(|p| p / total).collect(),
        iterations,
        converged,
    }
}

// ---------------------------------------------------------------------------
// Gagliardo–Nirenberg constant

fn gn_cache() -> &'static Mutex<HashMap<(usize, u64), f64>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, u64), f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Radial profile solving `−Δw + w = w^{p−1}` by Petviashvili iteration.
pub fn gn_profile(grid: &Arc<RadialGrid>, p: f64) -> Result<RadialField> {
    let gamma = (p - 1.0) / (p - 2.0);
    let w = grid.weights();
    let mut u: Vec<f64> = grid.nodes().iter().map(|r| (-r * r / 4.0).exp()).collect();
    *u.last_mut().unwrap() = 0.0;
    for _ in 0..2000 {
        let f: Vec<f64> = u.iter().zip(w).map(|(x, wk)| wk * x.abs().powf(p - 1.0)).collect();
        let ku = grid.stiffness_apply(&u);
        let lhs: f64 = u.iter().zip(&ku).zip(w).map(|((x, k), wk)| x * (k + wk * x)).sum();
        let rhs: f64 = u.iter().zip(&f).map(|(x, fk)| x * fk).sum();
        if !(rhs > 0.0) {
            return Err(Error::NotConverged("Petviashvili iteration collapsed to zero".into()));
        }
        let factor = (lhs / rhs).powf(gamma);
        let next: Vec<f64> = grid.solve_shifted(1.0, &f).iter().map(|x| factor * x).collect();
        let diff = next.iter().zip(&u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = next.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        u = next;
        if !scale.is_finite() {
            return Err(Error::NonFinite);
        }
        if diff <= 1e-12 * scale && (factor - 1.0).abs() < 1e-10 {
            return RadialField::new(grid.clone(), u);
        }
    }
    Err(Error::NotConverged(format!("Petviashvili iteration for p = {p} did not settle")))
}

/// Weinstein quotient `|u|_p / (|∇u|₂^{δ_p} |u|₂^{1−δ_p})`.
pub fn weinstein_quotient(u: &RadialField, p: f64) -> Result<f64> {
    let d = delta_p(u.grid().dim(), p);
    Ok(u.lp_norm(p)? / (u.grad_sq().powf(0.5 * d) * u.mass().powf(0.5 * (1.0 - d))))
}

/// Optimal constant in `|u|_p ≤ C_{N,p} |∇u|₂^{δ_p} |u|₂^{1−δ_p}`, `2 < p ≤ 2*`.
/// For `p < 2*` it is the Weinstein quotient of the profile solving
/// `−Δw + w = w^{p−1}`; for `p = 2*` it is `S^{−1/2}`. Values are cached.
pub fn gn_constant(n: usize, p: f64) -> Result<f64> {
    check_dim(n)?;
    let ts = two_star(n);
    if !(p > 2.0 && p <= ts) {
        return Err(Error::InvalidArgument(format!("p = {p} outside (2, {ts}]")));
    }
    let key = (n, p.to_bits());
    if let Some(v) = gn_cache().lock().unwrap().get(&key) {
        return Ok(*v);
    }
    let value = if p == ts {
        sobolev_S(n)?.powf(-0.5)
    } else {
        // The profile widens like (p − 2)^{−1/2} as p → 2⁺.
        let r_max = 30.0 + 6.0 / (p - 2.0).sqrt();
        let grid = make_grid(n, r_max, 12001)?;
        weinstein_quotient(&gn_profile(&grid, p)?, p)?
    };
    gn_cache().lock().unwrap().insert(key, value);
    Ok(value)
}

// ---------------------------------------------------------------------------
// Truncated bubbles

/// Cutoff with `φ = 1` on `[0, 1]`, `φ = 0` on `[2, ∞)` and the quintic
/// `1 − (10x³ − 15x⁴ + 6x⁵)`, `x = r − 1`, in between; `φ` is C².
pub fn cutoff(r: f64) -> f64 {
    if r <= 1.0 {
        1.0
    } else if r >= 2.0 {
        0.0
    } else {
        let x = r - 1.0;
        1.0 - x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)
    }
}

/// Derivative of [`cutoff`].
pub fn cutoff_derivative(r: f64) -> f64 {
    if r <= 1.0 || r >= 2.0 {
        0.0
    } else {
        let x = r - 1.0;
        -30.0 * x * x * (1.0 - x) * (1.0 - x)
    }
}

/// A truncated bubble `v^ε = (ρ̄/|u^ε|₂)(θ_j^{(2−N)/4} φ u_0^ε)_j` sampled on a grid,
/// with `ρ̄ = min ρ_j` and `|u^ε|₂² = Σ_j |u_j^ε|₂²`.
#[derive(Debug, Clone)]
pub struct BubbleState {
    pub eps: f64,
    pub dim: usize,
    /// `φ ≡ 1` on `B_{cutoff.0}` and `φ ≡ 0` outside `B_{cutoff.1}`.
    pub cutoff: (f64, f64),
    pub theta: Vec<f64>,
    pub state: StateVector,
}

impl BubbleState {
    pub fn new(grid: &Arc<RadialGrid>, eps: f64, theta: &[f64], rho: &[f64]) -> Result<Self> {
        check_theta(theta)?;
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!("ε = {eps} must be positive")));
        }
        if rho.len() != theta.len() || rho.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::InvalidArgument("ρ must be positive with one entry per component".into()));
        }
        let n = grid.dim();
        let base = RadialField::from_fn(grid.clone(), |r| cutoff(r) * instanton(n, eps, r));
        let weights: Vec<f64> = theta.iter().map(|t| t.powf((2.0 - n as f64) / 4.0)).collect();
        let total = base.mass() * weights.iter().map(|w| w * w).sum::<f64>();
        let rho_bar = rho.iter().cloned().fold(f64::INFINITY, f64::min);
        let scale = rho_bar / total.sqrt();
        let comps = weights.iter().map(|w| base.scaled(scale * w)).collect();
        Ok(Self {
            eps,
            dim: n,
            cutoff: (1.0, 2.0),
            theta: theta.to_vec(),
            state: StateVector::new(comps)?,
        })
    }
}

/// Integrals of the truncated bubble `φu_0^ε`, evaluated by quadrature with
/// analytic derivatives.
#[derive(Debug, Clone, Serialize)]
pub struct BubbleIntegrals {
    pub eps: f64,
    /// `|∇(φu_0^ε)|₂²`.
    pub grad: f64,
    /// `|φu_0^ε|₂²`.
    pub mass: f64,
    /// `∫|φu_0^ε|^{2*}`.
    pub crit: f64,
    /// `(r, ∫|φu_0^ε|^r 1{φu_0^ε ≥ 1})`.
    pub lower: Vec<(f64, f64)>,
}

/// Integrals of the truncated bubble for `ε ∈ (0, 1/4]`.
pub fn bubble_integrals(n: usize, eps: f64, exponents: &[f64]) -> Result<BubbleIntegrals> {
    check_dim(n)?;
    if !(eps > 0.0 && eps <= 0.25) {
        return Err(Error::InvalidArgument(format!("ε = {eps} outside (0, 1/4]")));
    }
    let area = unit_sphere_area(n);
    let pw = (n - 1) as i32;
    let q = two_star(n);
    let nf = n as f64;
    // Inside B₁: [0, ε] in r, then ln r on [ε, r_hi] where the bubble tail is smooth.
    let inner = |f: &dyn Fn(f64) -> f64, r_hi: f64| -> f64 {
        let core_hi = eps.min(r_hi);
        let mut s = gauss_legendre(|r| f(r) * r.powi(pw), 0.0, core_hi, 32);
        if r_hi > eps {
            let (a, b) = (eps.ln(), r_hi.ln());
            let panels = ((b - a) / 0.05).ceil() as usize;
            s += gauss_legendre(
                |x| {
                    let r = x.exp();
                    f(r) * r.powi(pw) * r
                },
                a,
                b,
                panels,
            );
        }
        s
    };
    let outer = |f: &dyn Fn(f64) -> f64| gauss_legendre(|r| f(r) * r.powi(pw), 1.0, 2.0, 64);
    let val = |r: f64| cutoff(r) * instanton(n, eps, r);
    let der = |r: f64| cutoff_derivative(r) * instanton(n, eps, r) + cutoff(r) * instanton_derivative(n, eps, r);
    let both = |f: &dyn Fn(f64) -> f64| area * (inner(f, 1.0) + outer(f));
    let grad = both(&|r| der(r).powi(2));
    let mass = both(&|r| val(r).powi(2));
    let crit = both(&|r| val(r).abs().powf(q));
    // φu_0^ε ≥ 1 exactly on r² ≤ ε√(N(N−2)) − ε², which lies inside B₁ for ε ≤ 1/4.
    let r1 = (eps * (nf * (nf - 2.0)).sqrt() - eps * eps).max(0.0).sqrt();
    let lower = exponents
        .iter()
        .map(|&r| (r, if r1 > 0.0 { area * inner(&|x| val(x).powf(r), r1) } else { 0.0 }))
        .collect();
    Ok(BubbleIntegrals {
        eps,
        grad,
        mass,
        crit,
        lower,
    })
}

/// Least-squares fit `ln y = a + b ln ε`.
#[derive(Debug, Clone, Serialize)]
pub struct ExponentFit {
    pub quantity: String,
    pub expected: f64,
    pub fitted: f64,
    pub r_squared: f64,
    /// `R² < 0.99`: the ε range is too large for the asymptotic regime.
    pub flagged: bool,
}

/// Fit the slope of `ln y` against `ln x`.
pub fn loglog_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.abs().ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = ly.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, my - slope * mx, r2)
}

/// One ε row of [`bubble_diagnostics`].
#[derive(Debug, Clone, Serialize)]
pub struct BubbleRow {
    pub eps: f64,
    pub integrals: BubbleIntegrals,
    /// Dilation `s_ε` with `s_ε⋆v^ε ∈ {M = 0}` on the exact scaling law.
    pub s_eps: Option<f64>,
    /// `J(s_ε⋆v^ε) = max_s J(s⋆v^ε)`.
    pub energy: Option<f64>,
    pub masses: Vec<f64>,
    pub error: Option<String>,
}

/// Bubble table with fitted ε-exponents.
#[derive(Debug, Clone, Serialize)]
pub struct BubbleTable {
    pub dim: usize,
    pub threshold: f64,
    pub rows: Vec<BubbleRow>,
    pub fits: Vec<ExponentFit>,
}

impl BubbleTable {
    /// CSV with one row per ε.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eps,grad,mass,crit,s_eps,energy,threshold");
        if let Some(r) = self.rows.first() {
            for (e, _) in &r.integrals.lower {
                out.push_str(&format!(",lower_{e}"));
            }
        }
        out.push('\n');
        let opt = |x: Option<f64>| x.map(|v| format!("{v:.12e}")).unwrap_or_default();
        for r in &self.rows {
            let i = &r.integrals;
            out.push_str(&format!(
                "{:.6e},{:.12e},{:.12e},{:.12e},{},{},{:.12e}",
                r.eps,
                i.grad,
                i.mass,
                i.crit,
                opt(r.s_eps),
                opt(r.energy),
                self.threshold
            ));
            for (_, v) in &i.lower {
                out.push_str(&format!(",{v:.12e}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn fit(&self, quantity: &str) -> Option<&ExponentFit> {
        self.fits.iter().find(|f| f.quantity == quantity)
    }
}

/// `J(s⋆u)` at the sign change of `s ↦ M(s⋆u)`, on the exact scaling law.
fn ray_maximum(u: &StateVector, spec: &NonlinearitySpec) -> Option<(f64, f64)> {
    let fm = FiberMap::new(u, spec);
    let (mut lo, mut hi) = (1.0, 1.0);
    let (mut mlo, mut mhi) = (fm.m(lo), fm.m(hi));
    for _ in 0..80 {
        if mlo > 0.0 {
            break;
        }
        lo *= 0.5;
        mlo = fm.m(lo);
    }
    for _ in 0..80 {
        if mhi < 0.0 {
            break;
        }
        hi *= 2.0;
        mhi = fm.m(hi);
    }
    if !(mlo > 0.0 && mhi < 0.0) {
        return None;
    }
    let s = brent(|s| fm.m(s), lo, hi, mlo, mhi, 1e-14);
    Some((s, fm.phi(s)))
}

/// Exponents `r` used for the lower-bound integrals: the `(p, q)` pair of the
/// exponent-window route when it exists, else `2_N` and the largest subcritical power.
fn lower_exponents(spec: &NonlinearitySpec) -> Vec<f64> {
    match growth_exponents(spec) {
        Some((p0, q0)) => {
            let (p, q) = window_pair(spec.dim(), p0, q0).unwrap_or((p0, q0));
            if (p - q).abs() < 1e-12 {
                vec![p]
            } else {
                vec![p, q]
            }
        }
        None => vec![spec.two_n()],
    }
}

/// Expected leading exponent of `∫|φu_0^ε|^r 1{φu_0^ε ≥ 1}`.
pub fn lower_bound_exponent(n: usize, r: f64) -> f64 {
    let nf = n as f64;
    if r > nf / (nf - 2.0) {
        nf - (nf / 2.0 - 1.0) * r
    } else {
        nf / 2.0
    }
}

/// Integrals, energies and ε-exponent fits for truncated bubbles built from
/// `spec` (θ taken from its critical term, N ∈ {3, 4}). The energies use a grid
/// on `[0, 2]` with `nodes` nodes.
pub fn bubble_diagnostics(spec: &NonlinearitySpec, eps: &[f64], rho: &[f64], nodes: usize) -> Result<BubbleTable> {
    let n = spec.dim();
    if !(n == 3 || n == 4) {
        return Err(Error::InvalidArgument(format!("bubble asymptotics need N ∈ {{3, 4}}, got {n}")));
    }
    let theta = spec.theta();
    check_theta(&theta)?;
    if eps.len() < 2 {
        return Err(Error::InvalidArgument("need at least two ε values".into()));
    }
    let exps = lower_exponents(spec);
    let grid = make_grid(n, 2.0, nodes)?;
    let rows: Vec<BubbleRow> = eps
        .par_iter()
        .map(|&e| -> Result<BubbleRow> {
            let integrals = bubble_integrals(n, e, &exps)?;
            let b = BubbleState::new(&grid, e, &theta, rho)?;
            let masses = b.state.masses();
            let (s_eps, energy, error) = match ray_maximum(&b.state, spec) {
                Some((s, j)) => (Some(s), Some(j), None),
                None => (None, None, Some("no sign change of M(s*v) on the fiber".to_string())),
            };
            Ok(BubbleRow {
                eps: e,
                integrals,
                s_eps,
                energy,
                masses,
                error,
            })
        })
        .collect::<Result<_>>()?;
    let s_half = sobolev_S(n)?.powf(0.5 * n as f64);
    let xs: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let nf = n as f64;
    let mut fits = Vec::new();
    let mut push = |name: String, expected: f64, ys: Vec<f64>| {
        let (b, _, r2) = loglog_fit(&xs, &ys);
        fits.push(ExponentFit {
            quantity: name,
            expected,
            fitted: b,
            r_squared: r2,
            flagged: r2 < 0.99,
        });
    };
    if n == 3 {
        push("mass".into(), 1.0, rows.iter().map(|r| r.integrals.mass).collect());
    } else {
        push(
            "mass/|ln eps|".into(),
            2.0,
            rows.iter().map(|r| r.integrals.mass / r.eps.ln().abs()).collect(),
        );
    }
    push(
        "grad - S^(N/2)".into(),
        nf - 2.0,
        rows.iter().map(|r| r.integrals.grad - s_half).collect(),
    );
    for (idx, &r) in exps.iter().enumerate() {
        push(
            format!("lower_{r}"),
            lower_bound_exponent(n, r),
            rows.iter().map(|row| row.integrals.lower[idx].1).collect(),
        );
    }
    Ok(BubbleTable {
        dim: n,
        threshold: threshold_value(n, &theta)?,
        rows,
        fits,
    })
}

/// `max_s J(s⋆v)` for the untruncated instanton `v = (ρ̄/|u|₂)(θ_j^{(2−N)/4} u_0^1)_j`
/// with `G = Σ θ_j|u_j|^{2*}/2*`, from quadrature of the closed form; requires
/// `N ≥ 5` so the instanton has finite mass.
pub fn untruncated_ray_maximum(n: usize, theta: &[f64], rho: &[f64]) -> Result<f64> {
    check_theta(theta)?;
    if n < 5 {
        return Err(Error::InvalidArgument(format!("the instanton has infinite mass for N = {n}")));
    }
    let area = unit_sphere_area(n);
    let pw = (n - 1) as i32;
    let mass0 = area
        * gauss_legendre(
            |t| {
                let r = t.tan();
                r.powi(pw) * instanton(n, 1.0, r).powi(2) * (1.0 + r * r)
            },
            0.0,
            FRAC_PI_2,
            256,
        );
    let (grad0, crit0) = instanton_integrals(n, f64::INFINITY, 256);
    let nf = n as f64;
    let q = two_star(n);
    let ws: Vec<f64> = theta.iter().map(|t| t.powf((2.0 - nf) / 4.0)).collect();
    let wsum: f64 = ws.iter().map(|w| w * w).sum();
    let rho_bar = rho.iter().cloned().fold(f64::INFINITY, f64::min);
    let c2 = rho_bar * rho_bar / (mass0 * wsum);
    let a = c2 * wsum * grad0;
    let b: f64 = ws.iter().zip(theta).map(|(w, t)| t * (c2.sqrt() * w).powf(q)).sum::<f64>() * crit0;
    // φ(s) = ½s²A − s^{2*}B/2*; φ'(s) = s(A − s^{2*−2}B).
    let phi = |s: f64| 0.5 * s * s * a - s.powf(q) * b / q;
    let dphi = |s: f64| a - s.powf(q - 2.0) * b;
    let (mut lo, mut hi) = (1.0, 1.0);
    while dphi(lo) <= 0.0 {
        lo *= 0.5;
    }
    while dphi(hi) >= 0.0 {
        hi *= 2.0;
    }
    let s = brent(dphi, lo, hi, dphi(lo), dphi(hi), 1e-15);
    Ok(phi(s))
}

// ---------------------------------------------------------------------------
// Threshold

/// `(1/N) S^{N/2} Σ θ_i^{1−N/2}`.
pub fn threshold_value(n: usize, theta: &[f64]) -> Result<f64> {
    check_theta(theta)?;
    let nf = n as f64;
    let sum: f64 = theta.iter().map(|t| t.powf(1.0 - nf / 2.0)).sum();
    Ok(sobolev_S(n)?.powf(nf / 2.0) * sum / nf)
}

/// Sufficient conditions for the energy to lie strictly below the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// `N ≥ 5`.
    DimensionAtLeastFive,
    /// `G̃ ≳ |u|^p` near 0 and `G̃ ≳ |u|^q` near ∞ with `2_N ≤ p ≤ 2*`,
    /// `2_N ≤ q < 2*`, and `max{p,q}/2 − min{p,q} < −1` when `N = 3`.
    ExponentWindow,
    /// `K = 1`, `η = 0`, `G̃/|u|^{2*} → ∞` at 0: holds for all ρ above an unknown `ρ₀`.
    LargeMass,
    /// `G̃/|u|^{2_N} → ∞` at ∞: holds when some `θ_i` is below an unknown `θ₀`.
    SmallTheta,
}

/// Whether one route applies to the spec.
#[derive(Debug, Clone, Serialize)]
pub struct RouteCheck {
    pub route: Route,
    pub holds: bool,
    /// Unconditional (true) or dependent on an unknown ρ₀ or θ₀ (false).
    pub unconditional: bool,
    pub detail: String,
}

/// Comparison of a computed ground energy with the critical threshold.
#[derive(Debug, Clone, Serialize)]
pub struct ThresholdReport {
    pub c: f64,
    /// `None` when θ is not componentwise positive (the condition does not apply).
    pub threshold: Option<f64>,
    /// `threshold − c`.
    pub margin: Option<f64>,
    pub applicable: bool,
    pub routes: Vec<RouteCheck>,
    pub bubbles: Option<BubbleTable>,
}

impl ThresholdReport {
    /// Some unconditional route guarantees the strict inequality.
    pub fn guaranteed(&self) -> bool {
        self.routes.iter().any(|r| r.holds && r.unconditional)
    }

    pub fn summary(&self) -> String {
        if !self.applicable {
            return format!("c = {:.10e}; threshold not applicable (theta not positive)\n", self.c);
        }
        let mut s = format!(
            "c = {:.10e}\nthreshold = {:.10e}\nmargin = {:.10e}\n",
            self.c,
            self.threshold.unwrap_or(f64::NAN),
            self.margin.unwrap_or(f64::NAN)
        );
        for r in &self.routes {
            s.push_str(&format!("route {:?}: holds = {}, {}\n", r.route, r.holds, r.detail));
        }
        s
    }
}

/// Smallest exponent of `G̃` at 0 and largest at ∞, per component, combined into
/// `(p, q)` with `liminf G̃/|u|^p > 0` as `u → 0` and `liminf G̃/|u|^q > 0` as
/// `|u| → ∞`. `None` if some component has no separable term.
fn growth_exponents(spec: &NonlinearitySpec) -> Option<(f64, f64)> {
    let k = spec.k();
    let mut at_zero = vec![f64::INFINITY; k];
    let mut at_inf = vec![f64::NEG_INFINITY; k];
    for t in spec.terms() {
        match t {
            NonlinearityTerm::SeparablePower { component, mu, p } if *mu > 0.0 => {
                at_zero[*component] = at_zero[*component].min(*p);
                at_inf[*component] = at_inf[*component].max(*p);
            }
            NonlinearityTerm::LogPower { component, mu, p } if *mu > 0.0 => {
                // |u|^p ln(1+|u|) behaves like |u|^{p+1} at 0 and dominates |u|^p at ∞.
                at_zero[*component] = at_zero[*component].min(p + 1.0);
                at_inf[*component] = at_inf[*component].max(*p);
            }
            _ => {}
        }
    }
    if at_zero.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let p = at_zero.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let q = at_inf.iter().cloned().fold(f64::INFINITY, f64::min);
    Some((p.max(two_n(spec.dim())), q))
}

/// Choose `p' ∈ [p, 2*]`, `q' ∈ [2_N, q] ∩ [2_N, 2*)` satisfying the window,
/// preferring `p' = q'`.
fn window_pair(n: usize, p: f64, q: f64) -> Option<(f64, f64)> {
    let (tn, ts) = (two_n(n), two_star(n));
    let q = q.min(ts - 1e-12);
    if p > ts || q < tn {
        return None;
    }
    if p <= q {
        return Some((p, p));
    }
    if n == 3 && p / 2.0 - q >= -1.0 {
        return None;
    }
    Some((p, q))
}

/// Compare `c_computed` with the threshold and list the sufficiency routes.
pub fn threshold_check(spec: &NonlinearitySpec, rho: &[f64], c_computed: f64) -> ThresholdReport {
    let n = spec.dim();
    let theta = spec.theta();
    if !spec.has_critical() {
        return ThresholdReport {
            c: c_computed,
            threshold: None,
            margin: None,
            applicable: false,
            routes: Vec::new(),
            bubbles: None,
        };
    }
    let threshold = threshold_value(n, &theta).ok();
    let mut routes = vec![RouteCheck {
        route: Route::DimensionAtLeastFive,
        holds: n >= 5,
        unconditional: true,
        detail: format!("N = {n}"),
    }];
    let growth = growth_exponents(spec);
    let window = growth.and_then(|(p, q)| window_pair(n, p, q));
    routes.push(RouteCheck {
        route: Route::ExponentWindow,
        holds: window.is_some(),
        unconditional: true,
        detail: match (growth, window) {
            (Some(_), Some((p, q))) => format!("p = {p}, q = {q}"),
            (Some((p, q)), None) => format!("no admissible pair from p >= {p}, q <= {q}"),
            (None, _) => "some component has no separable subcritical term".into(),
        },
    });
    let eta_zero = growth.is_some_and(|(p, _)| p > two_n(n) + 1e-12);
    let sub_critical = growth.is_some_and(|(p, _)| p < two_star(n));
    routes.push(RouteCheck {
        route: Route::LargeMass,
        holds: spec.k() == 1 && eta_zero && sub_critical,
        unconditional: false,
        detail: format!("K = {}, rho = {rho:?}; requires rho above an unknown rho_0", spec.k()),
    });
    routes.push(RouteCheck {
        route: Route::SmallTheta,
        holds: growth.is_some_and(|(_, q)| q > two_n(n) + 1e-12),
        unconditional: false,
        detail: format!("theta = {theta:?}; requires some theta_i below an unknown theta_0"),
    });
    ThresholdReport {
        c: c_computed,
        threshold,
        margin: threshold.map(|t| t - c_computed),
        applicable: true,
        routes,
        bubbles: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// `π N(N−2) (Γ(N/2)/Γ(N))^{2/N}`, used only as an external cross-check.
    fn s_reference(n: usize) -> f64 {
        match n {
            3 => 3.0 * std::f64::consts::PI * (0.5 * std::f64::consts::PI.sqrt() / 2.0f64).powf(2.0 / 3.0),
            4 => 8.0 * std::f64::consts::PI * (1.0f64 / 6.0).powf(0.5),
            _ => unreachable!(),
        }
    }

    #[test]
    fn delta_values() {
        assert_relative_eq!(delta_p(3, 4.0), 0.75, epsilon = 1e-15);
        assert_relative_eq!(delta_p(3, 10.0 / 3.0) * 10.0 / 3.0, 2.0, epsilon = 1e-14);
        for p in [2.5, 3.0, 10.0 / 3.0 - 1e-9, 10.0 / 3.0 + 1e-9, 4.0, 5.5] {
            let s = delta_p(3, p) * p - 2.0;
            assert_eq!(s > 0.0, p > two_n(3), "p = {p}");
        }
    }

    #[test]
    fn sobolev_constant_matches_reference() {
        for n in [3, 4] {
            assert_relative_eq!(sobolev_S(n).unwrap(), s_reference(n), max_relative = 1e-12);
        }
    }

    #[test]
    fn instanton_energy_identity() {
        for n in [3, 4, 5] {
            let (g, c) = instanton_integrals(n, f64::INFINITY, 256);
            let s = sobolev_S(n).unwrap();
            assert_relative_eq!(g, s.powf(n as f64 / 2.0), max_relative = 1e-12);
            assert_relative_eq!(c, g, max_relative = 1e-12);
        }
    }

    #[test]
    fn truncated_s_converges_at_least_first_order() {
        let s = sobolev_S(3).unwrap();
        let radii = [10.0, 20.0, 40.0, 80.0];
        let errs: Vec<f64> = radii.iter().map(|r| (sobolev_S_truncated(3, *r).unwrap() - s).abs()).collect();
        let inv: Vec<f64> = radii.iter().map(|r| 1.0 / r).collect();
        let (order, _, r2) = loglog_fit(&inv, &errs);
        assert!(order >= 1.0 - 1e-2 && r2 > 0.99, "order {order}, R² {r2}");
    }

    #[test]
    fn bar_s_closed_form() {
        let s = sobolev_S(3).unwrap();
        assert_eq!(bar_S(3, &[1.0]).unwrap(), s);
        assert_relative_eq!(bar_S(3, &[1.0, 1.0]).unwrap(), 2f64.powf(2.0 / 3.0) * s, max_relative = 1e-15);
        let th = [0.7, 2.3];
        let t4: Vec<f64> = th.iter().map(|t| 4.0 * t).collect();
        assert_relative_eq!(
            bar_S(3, &t4).unwrap(),
            4f64.powf(-1.0 / 3.0) * bar_S(3, &th).unwrap(),
            max_relative = 1e-14
        );
        assert!(bar_S(3, &[1.0, 0.0]).is_err());
        assert!(bar_S(3, &[-1.0]).is_err());
    }

    #[test]
    fn direct_scalar_quotient_is_s() {
        let m = bar_s_direct(3, &[1.0], 1).unwrap();
        assert!(m.converged);
        assert_relative_eq!(m.value, sobolev_S(3).unwrap(), max_relative = 1e-4);
    }

    #[test]
    fn direct_vector_quotient_reaches_semitrivial_infimum() {
        for (seed, th) in [(3, [1.0, 1.0]), (4, [0.5, 3.0]), (5, [2.0, 0.3])] {
            let m = bar_s_direct(3, &th, seed).unwrap();
            let semi = semitrivial_infimum(3, &th).unwrap();
            assert_relative_eq!(m.value, semi, max_relative = 1e-4);
            assert!(m.shares.iter().cloned().fold(0.0, f64::max) > 1.0 - 1e-6);
            assert!(semi <= bar_S(3, &th).unwrap());
        }
    }

    #[test]
    fn gn_constant_window_and_endpoint() {
        assert!(gn_constant(3, 2.0).is_err());
        assert!(gn_constant(3, 6.5).is_err());
        assert_relative_eq!(gn_constant(3, 6.0).unwrap(), sobolev_S(3).unwrap().powf(-0.5), max_relative = 1e-14);
    }

    #[test]
    fn gn_constant_tends_to_one_near_two() {
        let c: Vec<f64> = [2.4, 2.2, 2.1].iter().map(|p| gn_constant(3, *p).unwrap()).collect();
        let d: Vec<f64> = c.iter().map(|x| (x - 1.0).abs()).collect();
        assert!(d[0] > d[1] && d[1] > d[2], "{c:?}");
    }

    #[test]
    fn gn_profile_satisfies_weinstein_bound_on_other_states() {
        let c = gn_constant(3, 4.0).unwrap();
        let g = make_grid(3, 30.0, 6001).unwrap();
        for w in [0.5, 1.0, 2.5] {
            let u = RadialField::from_fn(g.clone(), |r| (1.0 + r * r / w).powi(-3));
            assert!(weinstein_quotient(&u, 4.0).unwrap() < c);
        }
    }

    #[test]
    fn cutoff_is_c2() {
        for r in [1.0, 2.0] {
            assert!((cutoff(r - 1e-9) - cutoff(r + 1e-9)).abs() < 1e-8);
            assert!(cutoff_derivative(r + 1e-9).abs() < 1e-8);
        }
        let h = 1e-6;
        for r in [1.1, 1.5, 1.9] {
            let fd = (cutoff(r + h) - cutoff(r - h)) / (2.0 * h);
            assert_relative_eq!(fd, cutoff_derivative(r), max_relative = 1e-7);
        }
    }

    #[test]
    fn bubble_masses_within_ball() {
        let g = make_grid(3, 2.0, 4001).unwrap();
        let b = BubbleState::new(&g, 0.05, &[1.0, 4.0], &[1.0, 0.5]).unwrap();
        let m = b.state.masses();
        assert!(m[0] <= 1.0 && m[1] <= 0.25 + 1e-14);
        assert_relative_eq!(m[0] + m[1], 0.25, max_relative = 1e-12);
        assert!(BubbleState::new(&g, 0.0, &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn untruncated_n5_hits_threshold() {
        let theta = [1.0, 2.0];
        let j = untruncated_ray_maximum(5, &theta, &[0.3, 0.7]).unwrap();
        assert_relative_eq!(j, threshold_value(5, &theta).unwrap(), max_relative = 1e-3);
    }

    fn ex2(n: usize, theta: &[f64]) -> NonlinearitySpec {
        let k = theta.len();
        let p = 0.5 * (two_n(n) + two_star(n));
        NonlinearitySpec::l2_critical_plus_power(n, &vec![1.0; k], &vec![1.0; k], &vec![p; k], theta).unwrap()
    }

    #[test]
    fn threshold_not_applicable_without_theta() {
        let spec = NonlinearitySpec::pure_power(3, 1.0, 4.0).unwrap();
        let r = threshold_check(&spec, &[1.0], 1.0);
        assert!(!r.applicable && r.threshold.is_none() && r.margin.is_none());
    }

    #[test]
    fn threshold_routes() {
        let r = threshold_check(&ex2(3, &[1.0, 1.0]), &[1.0, 1.0], 1.0);
        assert!(r.applicable && r.threshold.unwrap() > 0.0);
        let w = r.routes.iter().find(|x| x.route == Route::ExponentWindow).unwrap();
        assert!(w.holds && r.guaranteed());
        // p = q: the N = 3 window condition is automatic.
        let pq = NonlinearitySpec::l2_critical_plus_power(3, &[0.0], &[1.0], &[5.0], &[1.0]).unwrap();
        let r = threshold_check(&pq, &[1.0], 1.0);
        assert!(r.guaranteed());
        assert_eq!(window_pair(3, 5.0, 5.0), Some((5.0, 5.0)));
        // p = 5 at 0 and q = 3.4 at ∞ violate max/2 − min < −1 for N = 3.
        assert_eq!(window_pair(3, 5.0, 3.4), None);
        assert_eq!(window_pair(4, 3.8, 3.2), Some((3.8, 3.2)));
        let r5 = threshold_check(&ex2(5, &[1.0]), &[1.0], 1.0);
        assert!(r5.routes[0].holds);
    }

    #[test]
    fn bubble_exponents_n3() {
        let eps: Vec<f64> = (0..6).map(|i| 0.01 * 10f64.powf(i as f64 / 5.0)).collect();
        let ints: Vec<BubbleIntegrals> = eps.iter().map(|e| bubble_integrals(3, *e, &[10.0 / 3.0, 4.0]).unwrap()).collect();
        let (m, _, _) = loglog_fit(&eps, &ints.iter().map(|i| i.mass).collect::<Vec<_>>());
        assert!((m - 1.0).abs() < 0.1, "mass exponent {m}");
        let s32 = sobolev_S(3).unwrap().powf(1.5);
        let (g, _, _) = loglog_fit(&eps, &ints.iter().map(|i| i.grad - s32).collect::<Vec<_>>());
        assert!((g - 1.0).abs() < 0.15, "gradient exponent {g}");
        let (c, _, _) = loglog_fit(&eps, &ints.iter().map(|i| i.crit - s32).collect::<Vec<_>>());
        assert!((c - 3.0).abs() < 0.15, "critical exponent {c}");
    }
}
