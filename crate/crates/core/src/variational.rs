//! Energy `J`, constraint functional `M`, dilations `s⋆u = s^{N/2}u(s·)`, the fiber
//! map `s ↦ J(s⋆u)`, projection onto `{M = 0}` and identity residuals.

use std::sync::Arc;

use serde::Serialize;

use crate::nonlinearity::estimate_eta;
use crate::nonlinearity::NonlinearitySpec;
use crate::radial_core::{RadialField, RadialGrid, StateVector};
use crate::roots::{bisect_boundary, brent};
use crate::{Error, Result};

/// Relative `|M|/|∇u|₂²` below which a state counts as on the manifold.
pub const MANIFOLD_TOL: f64 = 1e-10;
const S_MIN: f64 = 1e-6;
const S_MAX: f64 = 1e6;
/// Relative band `|M(s⋆u)| ≤ PLATEAU_TOL·s²|∇u|₂²` used to detect a plateau.
const PLATEAU_TOL: f64 = 1e-9;

fn check_k(u: &StateVector, spec: &NonlinearitySpec) {
    assert_eq!(u.k(), spec.k(), "state has {} components, spec expects {}", u.k(), spec.k());
}

/// `Σ_k w_k f(u(r_k))` over the nodes carrying weight.
fn integrate_pointwise(u: &StateVector, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let w = u.grid().weights();
    let mut buf = vec![0.0; u.k()];
    let mut s = 0.0;
    for (k, wk) in w.iter().enumerate() {
        if *wk == 0.0 {
            continue;
        }
        u.gather(k, &mut buf);
        s += wk * f(&buf);
    }
    s
}

/// `∫G(u)dx`.
pub fn integral_g(u: &StateVector, spec: &NonlinearitySpec) -> f64 {
    check_k(u, spec);
    integrate_pointwise(u, |x| spec.g_val(x, true))
}

/// `∫H(u)dx`.
pub fn integral_h(u: &StateVector, spec: &NonlinearitySpec) -> f64 {
    check_k(u, spec);
    integrate_pointwise(u, |x| spec.h_val(x, true))
}

/// `J(u) = ½|∇u|₂² − ∫G(u)dx`.
#[allow(non_snake_case)]
pub fn energy_J(u: &StateVector, spec: &NonlinearitySpec) -> f64 {
    0.5 * u.grad_norm_sq() - integral_g(u, spec)
}

/// `M(u) = |∇u|₂² − (N/2)∫H(u)dx`; undefined at `u = 0`.
#[allow(non_snake_case)]
pub fn constraint_M(u: &StateVector, spec: &NonlinearitySpec) -> Result<f64> {
    if u.is_zero() {
        return Err(Error::ZeroState);
    }
    let n = spec.dim() as f64;
    Ok(u.grad_norm_sq() - 0.5 * n * integral_h(u, spec))
}

/// `∫|u|^{2_N}dx` with `|u|` the Euclidean norm of the K-vector.
pub fn vector_lp_pow(u: &StateVector, p: f64) -> f64 {
    integrate_pointwise(u, |x| x.iter().map(|v| v * v).sum::<f64>().powf(0.5 * p))
}

/// Nodal gradient of the discrete `J`: `K uᵢ − W gᵢ(u)` per component.
pub fn energy_gradient(u: &StateVector, spec: &NonlinearitySpec) -> Vec<Vec<f64>> {
    check_k(u, spec);
    let grid = u.grid();
    let mut out: Vec<Vec<f64>> = u
        .components()
        .iter()
        .map(|c| grid.stiffness_apply(c.values()))
        .collect();
    subtract_weighted(u, &mut out, 1.0, |x, o| spec.grad_g(x, true, o));
    out
}

/// Nodal gradient of the discrete `M`: `2K uᵢ − (N/2) W hᵢ(u)` per component.
pub fn constraint_gradient(u: &StateVector, spec: &NonlinearitySpec) -> Vec<Vec<f64>> {
    check_k(u, spec);
    let grid = u.grid();
    let mut out: Vec<Vec<f64>> = u
        .components()
        .iter()
        .map(|c| grid.stiffness_apply(c.values()).into_iter().map(|v| 2.0 * v).collect())
        .collect();
    let half_n = 0.5 * spec.dim() as f64;
    subtract_weighted(u, &mut out, half_n, |x, o| spec.grad_h(x, true, o));
    out
}

fn subtract_weighted(
    u: &StateVector,
    out: &mut [Vec<f64>],
    factor: f64,
    f: impl Fn(&[f64], &mut [f64]),
) {
    let w = u.grid().weights();
    let k = u.k();
    let mut buf = vec![0.0; k];
    let mut grad = vec![0.0; k];
    let last = w.len() - 1;
    for (node, wk) in w.iter().enumerate().take(last) {
        if *wk == 0.0 {
            continue;
        }
        u.gather(node, &mut buf);
        f(&buf, &mut grad);
        for i in 0..k {
            out[i][node] -= factor * wk * grad[i];
        }
    }
}

/// Monotone piecewise-cubic Hermite interpolant of nodal values on a uniform
/// grid starting at `r = 0`, with zero slope at the origin.
#[derive(Debug, Clone)]
pub(crate) struct Pchip {
    h: f64,
    v: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    pub(crate) fn new(h: f64, v: &[f64]) -> Self {
        let m = v.len();
        let delta: Vec<f64> = v.windows(2).map(|p| (p[1] - p[0]) / h).collect();
        let mut d = vec![0.0; m];
        for j in 1..m - 1 {
            let (a, b) = (delta[j - 1], delta[j]);
            if a * b > 0.0 {
                d[j] = 2.0 / (1.0 / a + 1.0 / b);
            }
        }
        let (a, b) = (delta[m - 2], delta[m - 3]);
        let mut e = 0.5 * (3.0 * a - b);
        if e * a <= 0.0 {
            e = 0.0;
        } else if a * b <= 0.0 && e.abs() > 3.0 * a.abs() {
            e = 3.0 * a;
        }
        d[m - 1] = e;
        Self { h, v: v.to_vec(), d }
    }

    /// Interpolated value at `x ≥ 0`; zero beyond the last node.
    pub(crate) fn eval(&self, x: f64) -> f64 {
        let m = self.v.len();
        let xi = x / self.h;
        if xi >= (m - 1) as f64 {
            return if xi == (m - 1) as f64 { self.v[m - 1] } else { 0.0 };
        }
        let j = xi.floor() as usize;
        let t = xi - j as f64;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.v[j] + h10 * self.h * self.d[j] + h01 * self.v[j + 1] + h11 * self.h * self.d[j + 1]
    }
}

fn dilate_values(grid: &RadialGrid, p: &Pchip, s: f64) -> Vec<f64> {
    let amp = s.powf(0.5 * grid.dim() as f64);
    let mut out: Vec<f64> = grid.nodes().iter().map(|r| amp * p.eval(s * r)).collect();
    let last = out.len() - 1;
    out[last] = 0.0;
    out
}

/// `s⋆u`, sampled by monotone cubic interpolation on the same grid; points mapped
/// beyond `R_max` take the value 0.
pub fn dilate(u: &StateVector, s: f64) -> Result<StateVector> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::InvalidArgument(format!("dilation factor {s} must be positive")));
    }
    if s == 1.0 {
        return Ok(u.clone());
    }
    let grid = u.grid();
    let values = u
        .components()
        .iter()
        .map(|c| dilate_values(grid, &Pchip::new(grid.spacing(), c.values()), s))
        .collect();
    StateVector::from_values(grid, values)
}

/// Dilation along one fiber with each component rescaled back to its original
/// discrete mass.
struct MassExactDilation<'a> {
    u: &'a StateVector,
    interp: Vec<Pchip>,
    masses: Vec<f64>,
}

impl<'a> MassExactDilation<'a> {
    fn new(u: &'a StateVector) -> Self {
        let h = u.grid().spacing();
        Self {
            u,
            interp: u.components().iter().map(|c| Pchip::new(h, c.values())).collect(),
            masses: u.masses(),
        }
    }

    fn at(&self, s: f64) -> StateVector {
        if s == 1.0 {
            return self.u.clone();
        }
        let grid = self.u.grid();
        let comps = self
            .interp
            .iter()
            .zip(&self.masses)
            .map(|(p, m0)| {
                let mut v = dilate_values(grid, p, s);
                let m1 = grid.integrate(&v.iter().map(|x| x * x).collect::<Vec<_>>());
                if m1 > 0.0 && *m0 > 0.0 {
                    let c = (m0 / m1).sqrt();
                    v.iter_mut().for_each(|x| *x *= c);
                }
                RadialField::new(Arc::clone(grid), v).expect("same grid")
            })
            .collect();
        StateVector::new(comps).expect("same grid")
    }
}

/// Exact discrete scaling law along the fiber of `u`: with `A = |∇u|₂²`,
/// `φ(s) = ½s²A − s^{−N}∫G(s^{N/2}u)` and `M(s) = s²A − (N/2)s^{−N}∫H(s^{N/2}u)`,
/// all integrals on the original nodes. Satisfies `s φ'(s) = M(s)`.
pub struct FiberMap<'a> {
    spec: &'a NonlinearitySpec,
    grad: f64,
    /// Node values (row-major, K per node) and weights of the weighted nodes.
    vals: Vec<f64>,
    w: Vec<f64>,
    n: f64,
}

impl<'a> FiberMap<'a> {
    pub fn new(u: &StateVector, spec: &'a NonlinearitySpec) -> Self {
        check_k(u, spec);
        let k = u.k();
        let mut vals = Vec::new();
        let mut w = Vec::new();
        let mut buf = vec![0.0; k];
        for (node, wk) in u.grid().weights().iter().enumerate() {
            u.gather(node, &mut buf);
            if *wk > 0.0 && buf.iter().any(|x| *x != 0.0) {
                vals.extend_from_slice(&buf);
                w.push(*wk);
            }
        }
        Self {
            spec,
            grad: u.grad_norm_sq(),
            vals,
            w,
            n: spec.dim() as f64,
        }
    }

    /// `|∇u|₂²`.
    pub fn grad_norm_sq(&self) -> f64 {
        self.grad
    }

    fn scaled_integral(&self, s: f64, f: impl Fn(&[f64]) -> f64) -> f64 {
        let k = self.spec.k();
        let amp = s.powf(0.5 * self.n);
        let mut buf = vec![0.0; k];
        let mut acc = 0.0;
        for (chunk, wk) in self.vals.chunks_exact(k).zip(&self.w) {
            for (b, x) in buf.iter_mut().zip(chunk) {
                *b = amp * x;
            }
            acc += wk * f(&buf);
        }
        acc * s.powf(-self.n)
    }

    /// `J(s⋆u)`.
    pub fn phi(&self, s: f64) -> f64 {
        0.5 * s * s * self.grad - self.scaled_integral(s, |x| self.spec.g_val(x, true))
    }

    /// `M(s⋆u)`.
    pub fn m(&self, s: f64) -> f64 {
        s * s * self.grad - 0.5 * self.n * self.scaled_integral(s, |x| self.spec.h_val(x, true))
    }
}

/// Outcome of checking `η < |∇u|₂²/(2|u|_{2_N}^{2_N})` with an estimated `η`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EtaPrecondition {
    pub eta: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Evaluate the fiber-map precondition for `u` with a given `η`.
pub fn eta_precondition(u: &StateVector, spec: &NonlinearitySpec, eta: f64) -> EtaPrecondition {
    let bound = u.grad_norm_sq() / (2.0 * vector_lp_pow(u, spec.two_n()));
    EtaPrecondition {
        eta,
        bound,
        holds: eta < bound,
    }
}

/// Bracket `[lo, hi]` with `M(lo) > 0 > M(hi)`, expanding geometrically from `[½, 2]`.
fn bracket(fm: &FiberMap) -> Option<(f64, f64, f64, f64)> {
    let (mut lo, mut hi) = (0.5, 2.0);
    let mut mlo = fm.m(lo);
    while !(mlo > 0.0) && lo > S_MIN {
        lo = (lo * 0.5).max(S_MIN);
        mlo = fm.m(lo);
    }
    let mut mhi = fm.m(hi);
    while !(mhi < 0.0) && hi < S_MAX {
        hi = (hi * 2.0).min(S_MAX);
        mhi = fm.m(hi);
    }
    (mlo > 0.0 && mhi < 0.0).then_some((lo, hi, mlo, mhi))
}

fn no_sign_change(u: &StateVector, spec: &NonlinearitySpec) -> Error {
    let pre = eta_precondition(u, spec, estimate_eta(spec));
    let reason = if pre.holds {
        format!(
            "precondition on eta holds (eta ~ {:.3e} < {:.3e}); superquadratic growth at infinity (mass_supercritical) likely violated",
            pre.eta, pre.bound
        )
    } else {
        format!(
            "precondition on eta violated: eta ~ {:.3e} >= |grad u|^2/(2|u|^(2_N)) = {:.3e}",
            pre.eta, pre.bound
        )
    };
    Error::NoSignChange {
        lo: S_MIN,
        hi: S_MAX,
        reason,
    }
}

/// Maximizer interval `[a, b]` of the fiber map together with its root estimate.
fn maximizer_interval(fm: &FiberMap, lo: f64, hi: f64, root: f64) -> (f64, f64) {
    let band = |s: f64| PLATEAU_TOL * s * s * fm.grad;
    let (l, r) = (root * (1.0 - 1e-7), root * (1.0 + 1e-7));
    if fm.m(l) > band(l) && fm.m(r) < -band(r) {
        return (root, root);
    }
    let a = bisect_boundary(|s| fm.m(s) > band(s), lo, hi, 1e-13);
    let b = bisect_boundary(|s| fm.m(s) < -band(s), hi, lo, 1e-13);
    (a, b.max(a))
}

/// Diagnostic sweep of the fiber map.
#[derive(Debug, Clone, Serialize)]
pub struct FiberScan {
    pub s: Vec<f64>,
    pub phi: Vec<f64>,
    #[serde(rename = "M")]
    pub m: Vec<f64>,
    /// Maximizer interval; `a == b` unless the fiber map has a plateau.
    pub a: f64,
    pub b: f64,
    /// Number of sign changes of `M` on the scan (ignoring values within tolerance of 0).
    pub sign_changes: usize,
    pub precondition: EtaPrecondition,
}

impl FiberScan {
    /// Index of the largest sampled `φ`.
    pub fn argmax(&self) -> usize {
        self.phi
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc })
            .0
    }

    /// CSV with columns `s,phi,M`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,phi,M\n");
        for ((s, p), m) in self.s.iter().zip(&self.phi).zip(&self.m) {
            out.push_str(&format!("{s:.17e},{p:.17e},{m:.17e}\n"));
        }
        out
    }
}

/// Sweep `n` log-spaced values of `s` over `s_range` and locate the maximizer
/// interval `[a, b]`.
pub fn fiber_scan(
    u: &StateVector,
    spec: &NonlinearitySpec,
    s_range: (f64, f64),
    n: usize,
) -> Result<FiberScan> {
    let (s0, s1) = s_range;
    if !(s0 > 0.0 && s1 > s0 && n >= 2) {
        return Err(Error::InvalidArgument(format!("bad scan range [{s0}, {s1}] with {n} points")));
    }
    if u.is_zero() {
        return Err(Error::ZeroState);
    }
    let fm = FiberMap::new(u, spec);
    let (lo, hi, mlo, mhi) = bracket(&fm).ok_or_else(|| no_sign_change(u, spec))?;
    let root = brent(|s| fm.m(s), lo, hi, mlo, mhi, 1e-14);
    let (a, b) = maximizer_interval(&fm, lo, hi, root);
    let ratio = (s1 / s0).ln() / (n - 1) as f64;
    let s: Vec<f64> = (0..n).map(|i| s0 * (ratio * i as f64).exp()).collect();
    let phi = s.iter().map(|x| fm.phi(*x)).collect();
    let m: Vec<f64> = s.iter().map(|x| fm.m(*x)).collect();
    let mut sign_changes = 0;
    let mut prev = 0.0f64;
    for (si, mi) in s.iter().zip(&m) {
        if mi.abs() <= PLATEAU_TOL * si * si * fm.grad {
            continue;
        }
        if prev != 0.0 && prev.signum() != mi.signum() {
            sign_changes += 1;
        }
        prev = *mi;
    }
    Ok(FiberScan {
        s,
        phi,
        m,
        a,
        b,
        sign_changes,
        precondition: eta_precondition(u, spec, estimate_eta(spec)),
    })
}

/// Result of projecting onto `{M = 0}` along the fiber.
#[derive(Debug, Clone)]
pub struct Projection {
    /// The dilated state with each component's discrete mass restored.
    pub state: StateVector,
    /// Dilation factor actually applied.
    pub s_star: f64,
    /// Root of the exact discrete scaling law `s ↦ M(s⋆u)`.
    pub s_fiber: f64,
    pub a: f64,
    pub b: f64,
    /// The fiber map has a maximizer plateau `a < b`; `s_star = a` is returned.
    pub plateau: bool,
    /// `M(state)/|∇state|₂²`.
    pub m_relative: f64,
}

/// Project `u` onto `{M = 0}` by the dilation `s⋆u` at the sign change of
/// `s ↦ M(s⋆u)`. The root is first located on the scaling law, then refined on
/// the interpolated, mass-restored path so the returned state satisfies
/// `|M| < 1e−10·|∇u|₂²`.
#[allow(non_snake_case)]
pub fn project_to_M(u: &StateVector, spec: &NonlinearitySpec) -> Result<Projection> {
    let m0 = constraint_M(u, spec)?;
    let g0 = u.grad_norm_sq();
    if m0.abs() <= 1e-2 * MANIFOLD_TOL * g0 {
        return Ok(Projection {
            state: u.clone(),
            s_star: 1.0,
            s_fiber: 1.0,
            a: 1.0,
            b: 1.0,
            plateau: false,
            m_relative: m0 / g0,
        });
    }
    let fm = FiberMap::new(u, spec);
    let (lo, hi, mlo, mhi) = bracket(&fm).ok_or_else(|| no_sign_change(u, spec))?;
    let s_fiber = brent(|s| fm.m(s), lo, hi, mlo, mhi, 1e-14);
    let (a, b) = maximizer_interval(&fm, lo, hi, s_fiber);
    let plateau = b / a - 1.0 > 1e-6;
    let path = MassExactDilation::new(u);
    let rel_m = |v: &StateVector| -> f64 {
        let g = v.grad_norm_sq();
        (g - 0.5 * spec.dim() as f64 * integral_h(v, spec)) / g
    };
    if plateau {
        let state = path.at(a);
        let m_relative = rel_m(&state);
        return Ok(Projection {
            state,
            s_star: a,
            s_fiber,
            a,
            b,
            plateau,
            m_relative,
        });
    }
    let first = path.at(s_fiber);
    let m_first = rel_m(&first);
    if m_first.abs() < 1e-2 * MANIFOLD_TOL {
        return Ok(Projection {
            state: first,
            s_star: s_fiber,
            s_fiber,
            a,
            b,
            plateau,
            m_relative: m_first,
        });
    }
    let f = |s: f64| rel_m(&path.at(s));
    let mut delta = 1e-4;
    let mut found = None;
    for _ in 0..10 {
        let (l, r) = (s_fiber * (1.0 - delta), s_fiber * (1.0 + delta));
        let (fl, fr) = (f(l), f(r));
        if fl > 0.0 && fr < 0.0 {
            found = Some((l, r, fl, fr));
            break;
        }
        delta = (delta * 4.0).min(0.5);
    }
    let (l, r, fl, fr) = found.ok_or_else(|| {
        Error::NotConverged(format!("interpolated dilation path has no sign change of M near s = {s_fiber:e}"))
    })?;
    let s_star = brent(f, l, r, fl, fr, 1e-15);
    let state = path.at(s_star);
    let m_relative = rel_m(&state);
    if m_relative.abs() >= MANIFOLD_TOL {
        return Err(Error::NotConverged(format!(
            "projection residual |M|/|grad u|^2 = {:e} at s = {s_star:e}",
            m_relative.abs()
        )));
    }
    Ok(Projection {
        state,
        s_star,
        s_fiber,
        a,
        b,
        plateau,
        m_relative,
    })
}

/// Root of the exact discrete scaling law `s ↦ M(s⋆u)`, without realizing the
/// dilation on the grid.
pub fn fiber_root(u: &StateVector, spec: &NonlinearitySpec) -> Result<f64> {
    let fm = FiberMap::new(u, spec);
    let (lo, hi, mlo, mhi) = bracket(&fm).ok_or_else(|| no_sign_change(u, spec))?;
    Ok(brent(|s| fm.m(s), lo, hi, mlo, mhi, 1e-14))
}

/// `R_u = (N∫H(u) / (2|∇u|₂²))^{1/2}`, so that `u(R_u·)` lies on `{M = 0}`;
/// `None` when `∫H(u) ≤ 0`.
pub fn r_u(u: &StateVector, spec: &NonlinearitySpec) -> Option<f64> {
    let h = integral_h(u, spec);
    let g = u.grad_norm_sq();
    (h > 0.0 && g > 0.0).then(|| (spec.dim() as f64 * h / (2.0 * g)).sqrt())
}

/// Nehari and Pohozaev residuals for a candidate pair `(λ, u)`.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct IdentityResiduals {
    /// `(|∇u|₂² + Σλᵢ|uᵢ|₂² − ∫⟨g(u),u⟩) / |∇u|₂²`.
    pub nehari_res: f64,
    /// `(|∇u|₂² − 2*∫(G(u) − ½Σλᵢ|uᵢ|²)) / |∇u|₂²`.
    pub pohozaev_res: f64,
    /// `M(u)` in energy units.
    #[serde(rename = "M_value")]
    pub m_value: f64,
    pub grad_norm_sq: f64,
}

impl IdentityResiduals {
    /// `M(u)/|∇u|₂²`.
    pub fn m_relative(&self) -> f64 {
        if self.grad_norm_sq > 0.0 {
            self.m_value / self.grad_norm_sq
        } else {
            0.0
        }
    }

    /// `(N·nehari − (N−2)·pohozaev)/2`, which equals `M(u)/|∇u|₂²` for every `λ`.
    pub fn combination(&self, dim: usize) -> f64 {
        let n = dim as f64;
        0.5 * (n * self.nehari_res - (n - 2.0) * self.pohozaev_res)
    }
}

/// Evaluate the Nehari and Pohozaev identities at `(λ, u)`.
pub fn residuals(u: &StateVector, lambda: &[f64], spec: &NonlinearitySpec) -> IdentityResiduals {
    check_k(u, spec);
    assert_eq!(lambda.len(), u.k(), "λ has the wrong length");
    if u.is_zero() {
        return IdentityResiduals::default();
    }
    let grad = u.grad_norm_sq();
    let masses = u.masses();
    let lm: f64 = lambda.iter().zip(&masses).map(|(l, m)| l * m).sum();
    let k = u.k();
    let mut gu = vec![0.0; k];
    let (mut ig, mut igu, mut ih) = (0.0, 0.0, 0.0);
    let w = u.grid().weights();
    let mut buf = vec![0.0; k];
    for (node, wk) in w.iter().enumerate() {
        if *wk == 0.0 {
            continue;
        }
        u.gather(node, &mut buf);
        ig += wk * spec.g_val(&buf, true);
        ih += wk * spec.h_val(&buf, true);
        spec.grad_g(&buf, true, &mut gu);
        igu += wk * gu.iter().zip(&buf).map(|(a, b)| a * b).sum::<f64>();
    }
    let ts = spec.two_star();
    IdentityResiduals {
        nehari_res: (grad + lm - igu) / grad,
        pohozaev_res: (grad - ts * ig + 0.5 * ts * lm) / grad,
        m_value: grad - 0.5 * spec.dim() as f64 * ih,
        grad_norm_sq: grad,
    }
}
