//! Independent reference values for the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

/// Area of the unit sphere in `R^N`.
pub fn sphere_area(n: usize) -> f64 {
    let half = 0.5 * n as f64;
    2.0 * PI.powf(half) / gamma(half)
}

fn gamma(x: f64) -> f64 {
    // Integer and half-integer arguments only.
    if (x - x.round()).abs() < 1e-12 {
        (1..x.round() as usize).map(|k| k as f64).product()
    } else {
        let mut v = PI.sqrt();
        let mut t = 0.5;
        while t < x - 1e-12 {
            v *= t;
            t += 1.0;
        }
        v
    }
}

/// Positive radial solution of `w'' + (N−1)w'/r − w + w^{p−1} = 0`, `w'(0) = 0`,
/// `w → 0`, found by shooting on `w(0)`.
#[derive(Debug, Clone)]
pub struct Soliton {
    pub n: usize,
    pub p: f64,
    pub w0: f64,
    /// `∫w²`, `∫|∇w|²` and `∫w^p` over `R^N`.
    pub mass: f64,
    pub grad: f64,
    pub lp: f64,
}

enum Fate {
    Overshoot,
    Undershoot,
}

const H: f64 = 2.5e-4;
const R_END: f64 = 60.0;

fn rhs(n: usize, p: f64, r: f64, w: f64, v: f64) -> (f64, f64) {
    (v, -(n as f64 - 1.0) / r * v + w - w.abs().powf(p - 2.0) * w)
}

/// Integrate from the origin; returns the fate and the trajectory `(r, w, w')`
/// up to the point where it leaves the decaying branch.
fn shoot(n: usize, p: f64, w0: f64) -> (Fate, Vec<(f64, f64, f64)>) {
    let c2 = (w0 - w0.powf(p - 1.0)) / (2.0 * n as f64);
    let mut r = H;
    let mut w = w0 + c2 * H * H;
    let mut v = 2.0 * c2 * H;
    let mut traj = vec![(0.0, w0, 0.0), (r, w, v)];
    while r < R_END {
        let (k1w, k1v) = rhs(n, p, r, w, v);
        let (k2w, k2v) = rhs(n, p, r + 0.5 * H, w + 0.5 * H * k1w, v + 0.5 * H * k1v);
        let (k3w, k3v) = rhs(n, p, r + 0.5 * H, w + 0.5 * H * k2w, v + 0.5 * H * k2v);
        let (k4w, k4v) = rhs(n, p, r + H, w + H * k3w, v + H * k3v);
        w += H / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w);
        v += H / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        r += H;
        if w < 0.0 {
            return (Fate::Overshoot, traj);
        }
        if v > 0.0 {
            return (Fate::Undershoot, traj);
        }
        traj.push((r, w, v));
    }
    (Fate::Undershoot, traj)
}

fn simpson(f: &[f64]) -> f64 {
    let m = if f.len().is_multiple_of(2) { f.len() - 1 } else { f.len() };
    let mut s = f[0] + f[m - 1];
    for (i, x) in f[1..m - 1].iter().enumerate() {
        s += if i % 2 == 0 { 4.0 * x } else { 2.0 * x };
    }
    s * H / 3.0
}

impl Soliton {
    pub fn new(n: usize, p: f64) -> Self {
        // Below this amplitude the potential energy never turns positive.
        let mut lo = (0.5 * p).powf(1.0 / (p - 2.0));
        let mut hi = lo;
        while matches!(shoot(n, p, hi).0, Fate::Undershoot) {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            match shoot(n, p, mid).0 {
                Fate::Undershoot => lo = mid,
                Fate::Overshoot => hi = mid,
            }
        }
        let (_, traj) = shoot(n, p, lo);
        let area = sphere_area(n);
        let weight = |r: f64| r.powi(n as i32 - 1);
        let mass = area * simpson(&traj.iter().map(|(r, w, _)| w * w * weight(*r)).collect::<Vec<_>>());
        let grad = area * simpson(&traj.iter().map(|(r, _, v)| v * v * weight(*r)).collect::<Vec<_>>());
        let lp = area * simpson(&traj.iter().map(|(r, w, _)| w.powf(p) * weight(*r)).collect::<Vec<_>>());
        Soliton { n, p, w0: lo, mass, grad, lp }
    }

    /// `u = λ^{1/(p−2)} w(√λ r)` with `|u|₂ = ρ`: returns `(λ, J(u))` for `G = |t|^p/p`.
    pub fn rescaled(&self, rho: f64) -> (f64, f64) {
        let n = self.n as f64;
        let a = 2.0 / (self.p - 2.0) - 0.5 * n;
        let lambda = (rho * rho / self.mass).powf(1.0 / a);
        let j = lambda.powf(2.0 / (self.p - 2.0) + 1.0 - 0.5 * n) * (0.5 * self.grad - self.lp / self.p);
        (lambda, j)
    }

    /// Weinstein quotient `|w|_p / (|∇w|₂^δ |w|₂^{1−δ})`, `δ = N(p−2)/(2p)`.
    pub fn gn_constant(&self) -> f64 {
        let d = self.n as f64 * (self.p - 2.0) / (2.0 * self.p);
        self.lp.powf(1.0 / self.p) / (self.grad.powf(0.5 * d) * self.mass.powf(0.5 * (1.0 - d)))
    }
}
