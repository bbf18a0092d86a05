//! Nonlinearities `G: ℝ^K → ℝ` built from closed-form terms.
//!
//! Every term provides `G`, `g = ∇G`, `H = ⟨g(u), u⟩ − 2G` and `h = ∇H` analytically.
//! The Sobolev-critical part is kept as its own term so the subcritical part `G̃`
//! can be evaluated separately.

mod audit;

pub use audit::{
    audit_assumptions, check_eta2, estimate_eta, eta2_with, AuditReport, Eta2Check, Verdict,
    VerdictKind,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// L²-critical exponent `2 + 4/N`.
pub fn two_n(n: usize) -> f64 {
    2.0 + 4.0 / n as f64
}

/// Sobolev-critical exponent `2N/(N−2)`.
pub fn two_star(n: usize) -> f64 {
    2.0 * n as f64 / (n as f64 - 2.0)
}

/// One additive piece of `G`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NonlinearityTerm {
    /// `μ|u_i|^p / p` with `2 < p < 2*`.
    SeparablePower { component: usize, mu: f64, p: f64 },
    /// `(μ/p)|u_i|^p ln(1 + |u_i|)` with `2_N ≤ p ≤ 2* − 1`.
    LogPower { component: usize, mu: f64, p: f64 },
    /// `β Π_i |u_i|^{r_i}`.
    CouplingProduct { beta: f64, r: Vec<f64> },
    /// `(1/2*) Σ_j θ_j |u_j|^{2*}`.
    SobolevCritical { theta: Vec<f64> },
}

/// Validated list of terms for a K-component system in dimension N.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct NonlinearitySpec {
    dim: usize,
    k: usize,
    terms: Vec<NonlinearityTerm>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    dimension: usize,
    components: usize,
    terms: Vec<NonlinearityTerm>,
}

impl TryFrom<RawSpec> for NonlinearitySpec {
    type Error = Error;
    fn try_from(raw: RawSpec) -> Result<Self> {
        NonlinearitySpec::new(raw.dimension, raw.components, raw.terms)
    }
}

impl From<NonlinearitySpec> for RawSpec {
    fn from(s: NonlinearitySpec) -> Self {
        RawSpec {
            dimension: s.dim,
            components: s.k,
            terms: s.terms,
        }
    }
}

fn bad(msg: String) -> Error {
    Error::InvalidArgument(msg)
}

impl NonlinearitySpec {
    pub fn new(dim: usize, k: usize, terms: Vec<NonlinearityTerm>) -> Result<Self> {
        if dim < 3 {
            return Err(bad(format!("dimension {dim} < 3")));
        }
        if k == 0 {
            return Err(bad("K must be at least 1".into()));
        }
        let tn = two_n(dim);
        let ts = two_star(dim);
        let mut critical = 0;
        for t in &terms {
            match t {
                NonlinearityTerm::SeparablePower { component, mu, p } => {
                    if *component >= k {
                        return Err(bad(format!("component {component} >= K = {k}")));
                    }
                    if !(*mu >= 0.0) || !mu.is_finite() {
                        return Err(bad(format!("power coefficient {mu} must be >= 0")));
                    }
                    if !(*p > 2.0 && *p < ts) {
                        return Err(bad(format!("power exponent {p} outside (2, {ts})")));
                    }
                }
                NonlinearityTerm::LogPower { component, mu, p } => {
                    if *component >= k {
                        return Err(bad(format!("component {component} >= K = {k}")));
                    }
                    if !(*mu > 0.0) || !mu.is_finite() {
                        return Err(bad(format!("log-power coefficient {mu} must be > 0")));
                    }
                    if !(*p >= tn - 1e-12 && *p <= ts - 1.0 + 1e-12) {
                        return Err(bad(format!(
                            "log-power exponent {p} outside [{tn}, {}]",
                            ts - 1.0
                        )));
                    }
                }
                NonlinearityTerm::CouplingProduct { beta, r } => {
                    if r.len() != k {
                        return Err(bad(format!("coupling has {} exponents, K = {k}", r.len())));
                    }
                    if !(*beta >= 0.0) || !beta.is_finite() {
                        return Err(bad(format!("coupling coefficient {beta} must be >= 0")));
                    }
                    if r.iter().any(|&x| !(x > 1.0 || x == 0.0) || !x.is_finite()) {
                        return Err(bad("coupling exponents must be > 1 or = 0".into()));
                    }
                    if r.iter().filter(|&&x| x > 1.0).count() < 2 {
                        return Err(bad("coupling needs two exponents > 1".into()));
                    }
                    let s: f64 = r.iter().sum();
                    if !(s >= tn - 1e-12 && s < ts) {
                        return Err(bad(format!("coupling degree {s} outside [{tn}, {ts})")));
                    }
                }
                NonlinearityTerm::SobolevCritical { theta } => {
                    critical += 1;
                    if theta.len() != k {
                        return Err(bad(format!("{} weights, K = {k}", theta.len())));
                    }
                    let all_pos = theta.iter().all(|&x| x > 0.0 && x.is_finite());
                    let all_zero = theta.iter().all(|&x| x == 0.0);
                    if !(all_pos || all_zero) {
                        return Err(bad("critical weights must be all > 0 or all = 0".into()));
                    }
                }
            }
        }
        if critical > 1 {
            return Err(bad("at most one Sobolev-critical term".into()));
        }
        Ok(NonlinearitySpec { dim, k, terms })
    }

    /// `G = μ|u|^p/p` for a single component.
    pub fn pure_power(dim: usize, mu: f64, p: f64) -> Result<Self> {
        Self::new(dim, 1, vec![NonlinearityTerm::SeparablePower { component: 0, mu, p }])
    }

    /// Sum of `ν_i|u_i|^{2_N}/2_N + μ_i|u_i|^{p_i}/p_i + θ_i|u_i|^{2*}/2*`.
    pub fn l2_critical_plus_power(
        dim: usize,
        nu: &[f64],
        mu: &[f64],
        p: &[f64],
        theta: &[f64],
    ) -> Result<Self> {
        let k = nu.len();
        let mut terms = Vec::new();
        for i in 0..k {
            if nu[i] > 0.0 {
                terms.push(NonlinearityTerm::SeparablePower {
                    component: i,
                    mu: nu[i],
                    p: two_n(dim),
                });
            }
            if mu[i] > 0.0 {
                terms.push(NonlinearityTerm::SeparablePower {
                    component: i,
                    mu: mu[i],
                    p: p[i],
                });
            }
        }
        if theta.iter().any(|&t| t != 0.0) {
            terms.push(NonlinearityTerm::SobolevCritical {
                theta: theta.to_vec(),
            });
        }
        Self::new(dim, k, terms)
    }

    /// Add a term, re-validating the whole list.
    pub fn with_term(&self, term: NonlinearityTerm) -> Result<Self> {
        let mut terms = self.terms.clone();
        terms.push(term);
        Self::new(self.dim, self.k, terms)
    }

    /// Replace the coefficient of the coupling term at `index` in the term list.
    pub fn with_coupling(&self, index: usize, beta_new: f64) -> Result<Self> {
        let mut terms = self.terms.clone();
        match terms.get_mut(index) {
            Some(NonlinearityTerm::CouplingProduct { beta, .. }) => *beta = beta_new,
            _ => return Err(bad(format!("term {index} is not a coupling product"))),
        }
        Self::new(self.dim, self.k, terms)
    }

    /// Multiply every subcritical coefficient by `a > 0`, keeping the critical part.
    pub fn scaled_subcritical(&self, a: f64) -> Result<Self> {
        let terms = self
            .terms
            .iter()
            .map(|t| match t.clone() {
                NonlinearityTerm::SeparablePower { component, mu, p } => {
                    NonlinearityTerm::SeparablePower { component, mu: a * mu, p }
                }
                NonlinearityTerm::LogPower { component, mu, p } => {
                    NonlinearityTerm::LogPower { component, mu: a * mu, p }
                }
                NonlinearityTerm::CouplingProduct { beta, r } => {
                    NonlinearityTerm::CouplingProduct { beta: a * beta, r }
                }
                c => c,
            })
            .collect();
        Self::new(self.dim, self.k, terms)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn terms(&self) -> &[NonlinearityTerm] {
        &self.terms
    }

    pub fn two_n(&self) -> f64 {
        two_n(self.dim)
    }

    pub fn two_star(&self) -> f64 {
        two_star(self.dim)
    }

    /// Critical weights θ; all zeros when there is no critical term.
    pub fn theta(&self) -> Vec<f64> {
        self.terms
            .iter()
            .find_map(|t| match t {
                NonlinearityTerm::SobolevCritical { theta } => Some(theta.clone()),
                _ => None,
            })
            .unwrap_or_else(|| vec![0.0; self.k])
    }

    /// Whether θ is componentwise positive.
    pub fn has_critical(&self) -> bool {
        self.theta().iter().all(|&t| t > 0.0)
    }

    /// Separable even terms plus coupling products. Every term kind offered here
    /// has that shape; the check is kept explicit for callers that rely on it.
    pub fn is_gsp_form(&self) -> bool {
        self.terms.iter().all(|t| match t {
            NonlinearityTerm::SeparablePower { .. }
            | NonlinearityTerm::LogPower { .. }
            | NonlinearityTerm::SobolevCritical { .. } => true,
            NonlinearityTerm::CouplingProduct { r, .. } => {
                r.iter().filter(|&&x| x > 1.0).count() >= 2
            }
        })
    }

    /// Coupling terms as `(term index, β, r)`.
    pub fn couplings(&self) -> Vec<(usize, f64, Vec<f64>)> {
        self.terms
            .iter()
            .enumerate()
            .filter_map(|(j, t)| match t {
                NonlinearityTerm::CouplingProduct { beta, r } => Some((j, *beta, r.clone())),
                _ => None,
            })
            .collect()
    }

    fn check(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.k {
            return Err(bad(format!("{} values for K = {}", u.len(), self.k)));
        }
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }

    /// `G(u)`.
    #[allow(non_snake_case)]
    pub fn eval_G(&self, u: &[f64]) -> Result<f64> {
        self.check(u)?;
        Ok(self.g_val(u, true))
    }

    /// `H(u)`.
    #[allow(non_snake_case)]
    pub fn eval_H(&self, u: &[f64]) -> Result<f64> {
        self.check(u)?;
        Ok(self.h_val(u, true))
    }

    /// `g(u) = ∇G(u)`.
    pub fn eval_g(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check(u)?;
        let mut out = vec![0.0; self.k];
        self.grad_g(u, true, &mut out);
        Ok(out)
    }

    /// `h(u) = ∇H(u)`.
    pub fn eval_h(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check(u)?;
        let mut out = vec![0.0; self.k];
        self.grad_h(u, true, &mut out);
        Ok(out)
    }

    /// `G` (with or without the critical term); no input checks.
    pub fn g_val(&self, u: &[f64], critical: bool) -> f64 {
        let ts = self.two_star();
        let mut s = 0.0;
        for t in &self.terms {
            s += match t {
                NonlinearityTerm::SeparablePower { component, mu, p } => {
                    mu * u[*component].abs().powf(*p) / p
                }
                NonlinearityTerm::LogPower { component, mu, p } => {
                    let a = u[*component].abs();
                    mu / p * a.powf(*p) * a.ln_1p()
                }
                NonlinearityTerm::CouplingProduct { beta, r } => beta * product(u, r),
                NonlinearityTerm::SobolevCritical { theta } => {
                    if critical {
                        theta
                            .iter()
                            .zip(u)
                            .map(|(th, x)| th * x.abs().powf(ts))
                            .sum::<f64>()
                            / ts
                    } else {
                        0.0
                    }
                }
            };
        }
        s
    }

    /// `H` (with or without the critical term); no input checks.
    pub fn h_val(&self, u: &[f64], critical: bool) -> f64 {
        let ts = self.two_star();
        let mut s = 0.0;
        for t in &self.terms {
            s += match t {
                NonlinearityTerm::SeparablePower { component, mu, p } => {
                    mu * (1.0 - 2.0 / p) * u[*component].abs().powf(*p)
                }
                NonlinearityTerm::LogPower { component, mu, p } => {
                    let a = u[*component].abs();
                    let ap = a.powf(*p);
                    mu * (1.0 - 2.0 / p) * ap * a.ln_1p() + mu / p * ap * a / (1.0 + a)
                }
                NonlinearityTerm::CouplingProduct { beta, r } => {
                    beta * (r.iter().sum::<f64>() - 2.0) * product(u, r)
                }
                NonlinearityTerm::SobolevCritical { theta } => {
                    if critical {
                        (1.0 - 2.0 / ts)
                            * theta
                                .iter()
                                .zip(u)
                                .map(|(th, x)| th * x.abs().powf(ts))
                                .sum::<f64>()
                    } else {
                        0.0
                    }
                }
            };
        }
        s
    }

    /// Write `∇G(u)` into `out`; no input checks.
    pub fn grad_g(&self, u: &[f64], critical: bool, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let ts = self.two_star();
        for t in &self.terms {
            match t {
                NonlinearityTerm::SeparablePower { component, mu, p } => {
                    let x = u[*component];
                    out[*component] += mu * x.abs().powf(p - 1.0) * x.signum() * nz(x);
                }
                NonlinearityTerm::LogPower { component, mu, p } => {
                    let x = u[*component];
                    let a = x.abs();
                    let s = x.signum() * nz(x);
                    out[*component] += mu * a.powf(p - 1.0) * s * (a.ln_1p() + a / (p * (1.0 + a)));
                }
                NonlinearityTerm::CouplingProduct { beta, r } => {
                    for (i, ri) in r.iter().enumerate() {
                        if *ri > 0.0 {
                            out[i] += beta * ri * partial_product(u, r, i);
                        }
                    }
                }
                NonlinearityTerm::SobolevCritical { theta } => {
                    if critical {
                        for (i, th) in theta.iter().enumerate() {
                            let x = u[i];
                            out[i] += th * x.abs().powf(ts - 1.0) * x.signum() * nz(x);
                        }
                    }
                }
            }
        }
    }

    /// Write `∇H(u)` into `out`; no input checks.
    pub fn grad_h(&self, u: &[f64], critical: bool, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let ts = self.two_star();
        for t in &self.terms {
            match t {
                NonlinearityTerm::SeparablePower { component, mu, p } => {
                    let x = u[*component];
                    out[*component] += mu * (p - 2.0) * x.abs().powf(p - 1.0) * x.signum() * nz(x);
                }
                NonlinearityTerm::LogPower { component, mu, p } => {
                    let x = u[*component];
                    let a = x.abs();
                    let s = x.signum() * nz(x);
                    let l = a.ln_1p();
                    let d_main = p * a.powf(p - 1.0) * l + a.powf(*p) / (1.0 + a);
                    let d_tail = a.powf(*p) * (p + 1.0 + p * a) / ((1.0 + a) * (1.0 + a));
                    out[*component] += s * (mu * (1.0 - 2.0 / p) * d_main + mu / p * d_tail);
                }
                NonlinearityTerm::CouplingProduct { beta, r } => {
                    let deg = r.iter().sum::<f64>() - 2.0;
                    for (i, ri) in r.iter().enumerate() {
                        if *ri > 0.0 {
                            out[i] += deg * beta * ri * partial_product(u, r, i);
                        }
                    }
                }
                NonlinearityTerm::SobolevCritical { theta } => {
                    if critical {
                        for (i, th) in theta.iter().enumerate() {
                            let x = u[i];
                            out[i] += (ts - 2.0) * th * x.abs().powf(ts - 1.0) * x.signum() * nz(x);
                        }
                    }
                }
            }
        }
    }
}

/// 0 at the origin, 1 elsewhere; keeps `signum(0) = 1` from leaking into gradients.
#[inline]
fn nz(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        1.0
    }
}

fn product(u: &[f64], r: &[f64]) -> f64 {
    u.iter()
        .zip(r)
        .map(|(x, ri)| if *ri == 0.0 { 1.0 } else { x.abs().powf(*ri) })
        .product()
}

/// `∂_i Π_j |u_j|^{r_j} / r_i`.
fn partial_product(u: &[f64], r: &[f64], i: usize) -> f64 {
    let mut p = u[i].abs().powf(r[i] - 1.0) * u[i].signum() * nz(u[i]);
    for (j, (x, rj)) in u.iter().zip(r).enumerate() {
        if j != i && *rj != 0.0 {
            p *= x.abs().powf(*rj);
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn zoo() -> Vec<NonlinearitySpec> {
        vec![
            NonlinearitySpec::pure_power(3, 1.0, 4.0).unwrap(),
            NonlinearitySpec::l2_critical_plus_power(3, &[1.0, 0.5], &[1.0, 2.0], &[4.0, 5.0], &[1.0, 2.0])
                .unwrap(),
            NonlinearitySpec::new(
                3,
                2,
                vec![
                    NonlinearityTerm::LogPower { component: 0, mu: 1.0, p: 4.0 },
                    NonlinearityTerm::LogPower { component: 1, mu: 2.0, p: 10.0 / 3.0 },
                    NonlinearityTerm::CouplingProduct { beta: 0.7, r: vec![2.0, 2.0] },
                ],
            )
            .unwrap(),
            NonlinearitySpec::new(
                4,
                3,
                vec![
                    NonlinearityTerm::SeparablePower { component: 2, mu: 1.0, p: 3.5 },
                    NonlinearityTerm::CouplingProduct { beta: 1.3, r: vec![1.5, 0.0, 1.6] },
                    NonlinearityTerm::SobolevCritical { theta: vec![1.0, 0.5, 2.0] },
                ],
            )
            .unwrap(),
        ]
    }

    #[test]
    fn power_point_values() {
        let s = NonlinearitySpec::pure_power(3, 1.0, 4.0).unwrap();
        assert!((s.eval_G(&[2.0]).unwrap() - 4.0).abs() < 1e-14);
        assert!((s.eval_g(&[2.0]).unwrap()[0] * 2.0 - 16.0).abs() < 1e-12);
        assert!((s.eval_H(&[2.0]).unwrap() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn critical_point_values() {
        let s = NonlinearitySpec::new(3, 1, vec![NonlinearityTerm::SobolevCritical { theta: vec![1.0] }])
            .unwrap();
        assert!((s.eval_G(&[1.0]).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert!((s.eval_H(&[1.0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_at_origin() {
        for s in zoo() {
            let z = vec![0.0; s.k()];
            assert_eq!(s.eval_G(&z).unwrap(), 0.0);
            assert_eq!(s.eval_H(&z).unwrap(), 0.0);
            assert!(s.eval_g(&z).unwrap().iter().all(|&x| x == 0.0));
            assert!(s.eval_h(&z).unwrap().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn rejects_invalid_terms() {
        assert!(NonlinearitySpec::pure_power(3, 1.0, 6.0).is_err());
        assert!(NonlinearitySpec::pure_power(3, 1.0, 2.0).is_err());
        assert!(NonlinearitySpec::pure_power(3, -1.0, 4.0).is_err());
        assert!(NonlinearitySpec::new(3, 1, vec![NonlinearityTerm::LogPower { component: 0, mu: 1.0, p: 3.0 }])
            .is_err());
        assert!(NonlinearitySpec::new(
            3,
            2,
            vec![NonlinearityTerm::CouplingProduct { beta: 1.0, r: vec![4.0, 0.0] }]
        )
        .is_err());
        assert!(NonlinearitySpec::new(
            3,
            2,
            vec![NonlinearityTerm::CouplingProduct { beta: 1.0, r: vec![0.5, 3.0] }]
        )
        .is_err());
        assert!(NonlinearitySpec::new(
            3,
            2,
            vec![NonlinearityTerm::SobolevCritical { theta: vec![1.0, 0.0] }]
        )
        .is_err());
        assert!(NonlinearitySpec::pure_power(2, 1.0, 4.0).is_err());
        let s = NonlinearitySpec::pure_power(3, 1.0, 4.0).unwrap();
        assert!(matches!(s.eval_G(&[f64::NAN]), Err(Error::NonFinite)));
    }

    #[test]
    fn json_round_trip() {
        for s in zoo() {
            let txt = serde_json::to_string(&s).unwrap();
            let back: NonlinearitySpec = serde_json::from_str(&txt).unwrap();
            assert_eq!(back, s);
        }
        let bad = r#"{"dimension":3,"components":1,"terms":[{"type":"separable_power","component":0,"mu":1.0,"p":7.0}]}"#;
        assert!(serde_json::from_str::<NonlinearitySpec>(bad).is_err());
    }

    fn point(k: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(prop_oneof![-3.0f64..-0.05, 0.05f64..3.0], k)
    }

    proptest! {
        #[test]
        fn h_identity_holds(u2 in point(2), u3 in point(3), u1 in point(1)) {
            for s in zoo() {
                let u = match s.k() { 1 => &u1, 2 => &u2, _ => &u3 };
                let g = s.eval_g(u).unwrap();
                let ip: f64 = g.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
                let big_g = s.eval_G(u).unwrap();
                let h = s.eval_H(u).unwrap();
                prop_assert!((h - (ip - 2.0 * big_g)).abs() <= 1e-12 * (1.0 + ip.abs()));
            }
        }

        #[test]
        fn gradients_match_differences(u2 in point(2), u3 in point(3), u1 in point(1)) {
            for s in zoo() {
                let u = match s.k() { 1 => &u1, 2 => &u2, _ => &u3 };
                let g = s.eval_g(u).unwrap();
                let h = s.eval_h(u).unwrap();
                let scale = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                let gmax = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                let hmax = h.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                for i in 0..s.k() {
                    let e = 1e-5 * scale;
                    let mut up = u.clone();
                    let mut um = u.clone();
                    up[i] += e;
                    um[i] -= e;
                    let fd_g = (s.eval_G(&up).unwrap() - s.eval_G(&um).unwrap()) / (2.0 * e);
                    let fd_h = (s.eval_H(&up).unwrap() - s.eval_H(&um).unwrap()) / (2.0 * e);
                    prop_assert!((fd_g - g[i]).abs() <= 1e-6 * gmax, "g {} {}", fd_g, g[i]);
                    prop_assert!((fd_h - h[i]).abs() <= 1e-6 * hmax, "h {} {}", fd_h, h[i]);
                }
            }
        }

        #[test]
        fn positive_away_from_origin(u2 in point(2)) {
            let s = &zoo()[2];
            prop_assert!(s.eval_G(&u2).unwrap() > 0.0);
            prop_assert!(s.eval_H(&u2).unwrap() > 0.0);
        }
    }
}
