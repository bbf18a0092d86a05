//! Discrete Schwarz (symmetric decreasing) rearrangement and the rearrangement
//! descent step with its certificate.

use std::sync::Arc;

use serde::Serialize;

use crate::nonlinearity::{NonlinearitySpec, NonlinearityTerm};
use crate::radial_core::{RadialField, StateVector};
use crate::variational::{constraint_M, energy_J, project_to_M};
use crate::{Error, Result};

/// Decreasing rearrangement of `|u|` by cumulative-measure matching.
///
/// The values `|u(r_k)|`, each carrying the quadrature weight `w_k`, are sorted in
/// decreasing order and laid out along the measure axis. Node `j` of the output
/// receives the L²-average of that step function over the measure slot
/// `[Σ_{k<j} w_k, Σ_{k≤j} w_k]`, so the discrete mass is preserved exactly and
/// the other `Lᵖ` norms up to the spread of values inside a slot. Zero-measure
/// slots take the value at their position.
pub fn schwarz(u: &RadialField) -> RadialField {
    let grid = u.grid();
    let w = grid.weights();
    let v = u.values();
    let m = v.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));

    let mut out = vec![0.0; m];
    let mut piece = 0usize;
    let mut piece_start = 0.0f64;
    let mut piece_end = w[order[0]];
    let mut slot_start = 0.0f64;
    for (j, wj) in w.iter().enumerate() {
        let slot_end = slot_start + wj;
        if *wj == 0.0 {
            out[j] = v[order[piece]].abs();
            slot_start = slot_end;
            continue;
        }
        let mut acc = 0.0;
        loop {
            let lo = piece_start.max(slot_start);
            let hi = piece_end.min(slot_end);
            if hi > lo {
                let x = v[order[piece]];
                acc += x * x * (hi - lo);
            }
            if piece_end <= slot_end && piece + 1 < m {
                piece += 1;
                piece_start = piece_end;
                piece_end += w[order[piece]];
            } else {
                break;
            }
        }
        let len = slot_end - slot_start;
        out[j] = (acc / len).sqrt();
        slot_start = slot_end;
    }
    // enforce exact monotonicity against rounding
    for j in 1..m {
        if out[j] > out[j - 1] {
            out[j] = out[j - 1];
        }
    }
    RadialField::new(Arc::clone(grid), out).expect("same grid")
}

/// Norms and integrals of one state before and after rearrangement.
#[derive(Debug, Clone, Serialize)]
pub struct RearrangementCertificate {
    pub mass_before: Vec<f64>,
    pub mass_after: Vec<f64>,
    /// `(p, before, after)` of `|uᵢ|_p` for `p ∈ {2, 2_N, 2*}`, per component.
    pub lp_norms: Vec<Vec<(f64, f64, f64)>>,
    pub grad_before: Vec<f64>,
    pub grad_after: Vec<f64>,
    /// `∫Π|uᵢ|^{r_i}` before and after, per coupling term.
    pub coupling_before: Vec<f64>,
    pub coupling_after: Vec<f64>,
    pub m_before: f64,
    pub m_after: f64,
    pub j_before: f64,
    /// `J(a⋆u*)`.
    pub j_after: f64,
    /// Dilation factor that brings `u*` back onto `{M = 0}`.
    pub a: f64,
}

impl RearrangementCertificate {
    /// Violated inequalities, empty when the certificate holds.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, (b, a)) in self.mass_before.iter().zip(&self.mass_after).enumerate() {
            if (a - b).abs() > 1e-10 * b.abs().max(f64::MIN_POSITIVE) {
                out.push(format!("mass of component {i}: {b:e} -> {a:e}"));
            }
        }
        for (i, (b, a)) in self.grad_before.iter().zip(&self.grad_after).enumerate() {
            if *a > b * (1.0 + 1e-3) {
                out.push(format!("gradient of component {i} grew: {b:e} -> {a:e}"));
            }
        }
        for (j, (b, a)) in self.coupling_before.iter().zip(&self.coupling_after).enumerate() {
            if *a < b - 1e-8 {
                out.push(format!("coupling integral {j} decreased: {b:e} -> {a:e}"));
            }
        }
        let scale = self.grad_before.iter().sum::<f64>().max(1.0);
        if self.m_after > self.m_before + 1e-8 * scale {
            out.push(format!("M grew: {:e} -> {:e}", self.m_before, self.m_after));
        }
        if self.j_after > self.j_before + 1e-6 * self.j_before.abs() {
            out.push(format!("J grew: {:e} -> {:e}", self.j_before, self.j_after));
        }
        out
    }

    /// CSV rows `quantity,component,before,after`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("quantity,component,before,after\n");
        let mut row = |q: &str, c: String, b: f64, a: f64| {
            s.push_str(&format!("{q},{c},{b:.17e},{a:.17e}\n"));
        };
        for i in 0..self.mass_before.len() {
            row("mass", i.to_string(), self.mass_before[i], self.mass_after[i]);
            for (p, b, a) in &self.lp_norms[i] {
                row(&format!("lp_norm_{p:.6}"), i.to_string(), *b, *a);
            }
            row("grad_norm_sq", i.to_string(), self.grad_before[i], self.grad_after[i]);
        }
        for (j, (b, a)) in self.coupling_before.iter().zip(&self.coupling_after).enumerate() {
            row("coupling", j.to_string(), *b, *a);
        }
        row("M", "all".into(), self.m_before, self.m_after);
        row("J", "all".into(), self.j_before, self.j_after);
        row("a", "all".into(), 1.0, self.a);
        s
    }
}

fn coupling_integrals(u: &StateVector, spec: &NonlinearitySpec) -> Vec<f64> {
    let w = u.grid().weights();
    let mut buf = vec![0.0; u.k()];
    spec.terms()
        .iter()
        .filter_map(|t| match t {
            NonlinearityTerm::CouplingProduct { r, .. } => Some(r),
            _ => None,
        })
        .map(|r| {
            let mut acc = 0.0;
            for (node, wk) in w.iter().enumerate() {
                u.gather(node, &mut buf);
                acc += wk * buf.iter().zip(r).map(|(x, ri)| x.abs().powf(*ri)).product::<f64>();
            }
            acc
        })
        .collect()
}

/// Rearrange every component, then dilate back onto `{M = 0}`. Returns `a⋆u*`
/// and the certificate comparing it with `u`.
pub fn rearrangement_descent(
    u: &StateVector,
    spec: &NonlinearitySpec,
) -> Result<(StateVector, RearrangementCertificate)> {
    if !spec.is_gsp_form() {
        return Err(Error::NotSeparable);
    }
    let star = StateVector::new(u.components().iter().map(schwarz).collect())?;
    let proj = project_to_M(&star, spec)?;
    let ps = [2.0, spec.two_n(), spec.two_star()];
    let lp_norms = u
        .components()
        .iter()
        .zip(star.components())
        .map(|(b, a)| {
            ps.iter()
                .map(|p| (*p, b.lp_norm(*p).unwrap_or(0.0), a.lp_norm(*p).unwrap_or(0.0)))
                .collect()
        })
        .collect();
    let cert = RearrangementCertificate {
        mass_before: u.masses(),
        mass_after: star.masses(),
        lp_norms,
        grad_before: u.components().iter().map(|c| c.grad_sq()).collect(),
        grad_after: star.components().iter().map(|c| c.grad_sq()).collect(),
        coupling_before: coupling_integrals(u, spec),
        coupling_after: coupling_integrals(&star, spec),
        m_before: constraint_M(u, spec)?,
        m_after: constraint_M(&star, spec)?,
        j_before: energy_J(u, spec),
        j_after: energy_J(&proj.state, spec),
        a: proj.s_star,
    };
    Ok((proj.state, cert))
}
