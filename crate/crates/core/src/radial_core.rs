//! Radial discretization of ℝ^N.
//!
//! Nodes are uniform on `[0, R_max]` with `r_0 = 0`. Integrals use the composite
//! trapezoid rule with the `ω_{N-1} r^{N-1}` volume factor folded into the weights.
//! The gradient energy is evaluated on cell midpoints, so the associated discrete
//! Laplacian is the compact three-point operator used by the preconditioner.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Surface area `ω_{n-1}` of the unit sphere in ℝ^n.
pub fn unit_sphere_area(n: usize) -> f64 {
    2.0 * std::f64::consts::PI.powf(n as f64 / 2.0) / gamma_half(n)
}

/// `Γ(n/2)` for a positive integer `n`.
fn gamma_half(n: usize) -> f64 {
    let (mut g, mut x) = if n.is_multiple_of(2) {
        (1.0, 1.0)
    } else {
        (std::f64::consts::PI.sqrt(), 0.5)
    };
    while x + 0.5 < n as f64 / 2.0 {
        g *= x;
        x += 1.0;
    }
    g
}

/// Uniform radial grid with quadrature weights for ∫_{ℝ^N} · dx.
#[derive(Debug, Clone)]
pub struct RadialGrid {
    dim: usize,
    r_max: f64,
    h: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    cell_weights: Vec<f64>,
}

/// Build a uniform grid of `m` nodes on `[0, r_max]` in dimension `n`.
pub fn make_grid(n: usize, r_max: f64, m: usize) -> Result<Arc<RadialGrid>> {
    if n < 3 {
        return Err(Error::InvalidGrid(format!("dimension {n} < 3")));
    }
    if !(r_max > 0.0) || !r_max.is_finite() {
        return Err(Error::InvalidGrid(format!("R_max = {r_max} must be positive")));
    }
    if m < 16 {
        return Err(Error::InvalidGrid(format!("{m} nodes, need at least 16")));
    }
    let h = r_max / (m - 1) as f64;
    let area = unit_sphere_area(n);
    let pw = (n - 1) as i32;
    let nodes: Vec<f64> = (0..m).map(|k| k as f64 * h).collect();
    let mut weights: Vec<f64> = nodes.iter().map(|r| area * r.powi(pw) * h).collect();
    weights[m - 1] *= 0.5;
    let cell_weights = (0..m - 1)
        .map(|k| area * ((k as f64 + 0.5) * h).powi(pw) * h)
        .collect();
    Ok(Arc::new(RadialGrid {
        dim: n,
        r_max,
        h,
        nodes,
        weights,
        cell_weights,
    }))
}

impl RadialGrid {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Trapezoid weights including the `ω_{N-1} r^{N-1}` factor; `w_0 = 0`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Midpoint weights `ω_{N-1} r_{k+1/2}^{N-1} h` of the `m - 1` cells.
    pub fn cell_weights(&self) -> &[f64] {
        &self.cell_weights
    }

    /// `Σ_k w_k f_k`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.len());
        self.weights.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    /// Integral of a pointwise function of the node index.
    pub fn integrate_with(&self, f: impl Fn(usize) -> f64) -> f64 {
        self.weights.iter().enumerate().map(|(k, w)| w * f(k)).sum()
    }

    /// Discrete `∫|u'|² dx` from midpoint differences.
    pub fn grad_sq(&self, u: &[f64]) -> f64 {
        let h2 = self.h * self.h;
        self.cell_weights
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let d = u[k + 1] - u[k];
                c * d * d
            })
            .sum::<f64>()
            / h2
    }

    /// Stiffness product `K u`, the gradient of `½ grad_sq(u)`. The last row is zero
    /// because the boundary value is fixed.
    pub fn stiffness_apply(&self, u: &[f64]) -> Vec<f64> {
        let m = self.len();
        let h2 = self.h * self.h;
        let mut out = vec![0.0; m];
        for k in 0..m - 1 {
            let c = self.cell_weights[k] / h2;
            let d = c * (u[k] - u[k + 1]);
            out[k] += d;
            if k + 1 < m - 1 {
                out[k + 1] -= d;
            }
        }
        out
    }

    /// Solve `(K + shift·W) x = rhs` with `x_{m-1} = 0`.
    pub fn solve_shifted(&self, shift: f64, rhs: &[f64]) -> Vec<f64> {
        let m = self.len();
        let n = m - 1;
        let h2 = self.h * self.h;
        let mut sub = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut sup = vec![0.0; n];
        for k in 0..n {
            let left = if k > 0 { self.cell_weights[k - 1] / h2 } else { 0.0 };
            let right = self.cell_weights[k] / h2;
            diag[k] = left + right + shift * self.weights[k];
            if k > 0 {
                sub[k] = -left;
            }
            if k + 1 < n {
                sup[k] = -right;
            }
        }
        let mut x = solve_tridiagonal(&sub, &diag, &sup, &rhs[..n]);
        x.push(0.0);
        x
    }

    /// Whether two grids describe the same discretization.
    pub fn same_as(&self, other: &RadialGrid) -> bool {
        self.dim == other.dim && self.len() == other.len() && self.r_max == other.r_max
    }
}

/// Thomas algorithm for a tridiagonal system; `sub[0]` and `sup[n-1]` are ignored.
pub fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let den = diag[i] - sub[i] * c[i - 1];
        c[i] = if i + 1 < n { sup[i] / den } else { 0.0 };
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / den;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// How the node-centered derivative treats `r = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OriginRule {
    /// Forward difference at the origin.
    #[default]
    OneSided,
    /// Impose `u'(0) = 0`, as for smooth radial functions.
    Symmetric,
}

/// Samples of a radial function on a grid; the last value is always 0.
#[derive(Debug, Clone)]
pub struct RadialField {
    grid: Arc<RadialGrid>,
    values: Vec<f64>,
}

impl RadialField {
    /// Wrap samples; the boundary value is set to 0.
    pub fn new(grid: Arc<RadialGrid>, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "{} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(last) = values.last_mut() {
            *last = 0.0;
        }
        Ok(RadialField { grid, values })
    }

    pub fn zeros(grid: Arc<RadialGrid>) -> Self {
        let values = vec![0.0; grid.len()];
        RadialField { grid, values }
    }

    /// Sample `f(r)` at the nodes.
    pub fn from_fn(grid: Arc<RadialGrid>, f: impl Fn(f64) -> f64) -> Self {
        let mut values: Vec<f64> = grid.nodes().iter().map(|&r| f(r)).collect();
        *values.last_mut().unwrap() = 0.0;
        RadialField { grid, values }
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `Σ w_k v_k`.
    pub fn integrate(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    /// Squared L² norm.
    pub fn mass(&self) -> f64 {
        self.grid.integrate_with(|k| self.values[k] * self.values[k])
    }

    /// `(∫|u|^p)^{1/p}` for `p ≥ 1`.
    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        if !(p >= 1.0) || !p.is_finite() {
            return Err(Error::InvalidArgument(format!("L^p exponent {p} < 1")));
        }
        Ok(self.lp_pow(p).powf(1.0 / p))
    }

    /// `∫|u|^p` without the root.
    pub fn lp_pow(&self, p: f64) -> f64 {
        self.grid.integrate_with(|k| self.values[k].abs().powf(p))
    }

    /// `∫|∇u|² dx`.
    pub fn grad_sq(&self) -> f64 {
        self.grid.grad_sq(&self.values)
    }

    /// Node-centered derivative: centered in the interior, one-sided at the ends.
    pub fn derivative(&self, rule: OriginRule) -> Vec<f64> {
        let v = &self.values;
        let m = v.len();
        let h = self.grid.spacing();
        let mut d = vec![0.0; m];
        for k in 1..m - 1 {
            d[k] = (v[k + 1] - v[k - 1]) / (2.0 * h);
        }
        d[0] = match rule {
            OriginRule::OneSided => (v[1] - v[0]) / h,
            OriginRule::Symmetric => 0.0,
        };
        d[m - 1] = (v[m - 1] - v[m - 2]) / h;
        d
    }

    /// Multiply every value by `a`.
    pub fn scaled(&self, a: f64) -> Self {
        RadialField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| a * v).collect(),
        }
    }
}

/// A K-tuple of radial fields on one grid.
#[derive(Debug, Clone)]
pub struct StateVector {
    components: Vec<RadialField>,
}

impl StateVector {
    pub fn new(components: Vec<RadialField>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidArgument("state needs K >= 1".into()))?;
        for c in &components[1..] {
            if !(Arc::ptr_eq(c.grid(), first.grid()) || c.grid().same_as(first.grid())) {
                return Err(Error::GridMismatch);
            }
        }
        Ok(StateVector { components })
    }

    /// Build from raw samples, one vector per component.
    pub fn from_values(grid: &Arc<RadialGrid>, values: Vec<Vec<f64>>) -> Result<Self> {
        let comps = values
            .into_iter()
            .map(|v| RadialField::new(grid.clone(), v))
            .collect::<Result<Vec<_>>>()?;
        StateVector::new(comps)
    }

    pub fn zeros(grid: &Arc<RadialGrid>, k: usize) -> Self {
        StateVector {
            components: (0..k).map(|_| RadialField::zeros(grid.clone())).collect(),
        }
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        self.components[0].grid()
    }

    pub fn components(&self) -> &[RadialField] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &RadialField {
        &self.components[i]
    }

    pub(crate) fn component_mut(&mut self, i: usize) -> &mut RadialField {
        &mut self.components[i]
    }

    /// Squared L² norms of the components.
    pub fn masses(&self) -> Vec<f64> {
        self.components.iter().map(RadialField::mass).collect()
    }

    /// `Σ_i ∫|∇u_i|² dx`.
    pub fn grad_norm_sq(&self) -> f64 {
        self.components.iter().map(RadialField::grad_sq).sum()
    }

    /// Copy the K values at node `k` into `buf`.
    #[inline]
    pub fn gather(&self, k: usize, buf: &mut [f64]) {
        for (b, c) in buf.iter_mut().zip(&self.components) {
            *b = c.values[k];
        }
    }

    pub fn is_zero(&self) -> bool {
        self.components
            .iter()
            .all(|c| c.values.iter().all(|&v| v == 0.0))
    }

    pub fn scaled(&self, a: f64) -> Self {
        StateVector {
            components: self.components.iter().map(|c| c.scaled(a)).collect(),
        }
    }

    pub fn into_components(self) -> Vec<RadialField> {
        self.components
    }
}

/// Free-function form of [`RadialField::mass`].
pub fn mass(u: &RadialField) -> f64 {
    u.mass()
}

/// Free-function form of [`RadialField::lp_norm`].
pub fn lp_norm(u: &RadialField, p: f64) -> Result<f64> {
    u.lp_norm(p)
}

/// Free-function form of [`StateVector::grad_norm_sq`].
pub fn grad_norm_sq(u: &StateVector) -> f64 {
    u.grad_norm_sq()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn sphere_areas() {
        assert!(rel(unit_sphere_area(3), 4.0 * PI) < 1e-14);
        assert!(rel(unit_sphere_area(4), 2.0 * PI * PI) < 1e-14);
        assert!(rel(unit_sphere_area(5), 8.0 * PI * PI / 3.0) < 1e-14);
    }

    #[test]
    fn unit_ball_volume() {
        let g = make_grid(3, 1.0, 10_000).unwrap();
        assert!(rel(g.weights().iter().sum(), 4.0 * PI / 3.0) < 1e-6);
        let g = make_grid(4, 2.0, 10_000).unwrap();
        assert!(rel(g.weights().iter().sum(), PI * PI / 2.0 * 16.0) < 1e-6);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(make_grid(2, 1.0, 100).is_err());
        assert!(make_grid(3, 0.0, 100).is_err());
        assert!(make_grid(3, -1.0, 100).is_err());
        assert!(make_grid(3, 1.0, 8).is_err());
    }

    #[test]
    fn weights_positive_and_nodes_increasing() {
        let g = make_grid(5, 3.0, 200).unwrap();
        assert_eq!(g.weights()[0], 0.0);
        assert!(g.weights()[1..].iter().all(|&w| w > 0.0));
        assert!(g.nodes().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn gaussian_integrals() {
        let g = make_grid(3, 10.0, 4001).unwrap();
        let f = RadialField::from_fn(g.clone(), |r| (-r * r).exp());
        assert!(rel(f.integrate(), PI.powf(1.5)) < 1e-6);
        let u = RadialField::from_fn(g.clone(), |r| (-r * r / 2.0).exp());
        assert!(rel(u.mass(), PI.powf(1.5)) < 1e-6);
        let s = StateVector::new(vec![u]).unwrap();
        assert!(rel(s.grad_norm_sq(), 1.5 * PI.powf(1.5)) < 1e-4);
        assert_eq!(RadialField::zeros(g).integrate(), 0.0);
    }

    #[test]
    fn integrate_converges_at_second_order() {
        let err = |m: usize| {
            let g = make_grid(3, 1.0, m).unwrap();
            (g.weights().iter().sum::<f64>() - 4.0 * PI / 3.0).abs()
        };
        let ratio = err(201) / err(401);
        assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn grad_sq_converges_at_second_order() {
        let exact = 1.5 * PI.powf(1.5);
        let err = |m: usize| {
            let g = make_grid(3, 10.0, m).unwrap();
            let u = RadialField::from_fn(g, |r| (-r * r / 2.0).exp());
            (u.grad_sq() - exact).abs()
        };
        let ratio = err(501) / err(1001);
        assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn stiffness_is_gradient_of_grad_sq() {
        let g = make_grid(3, 5.0, 64).unwrap();
        let u: Vec<f64> = g.nodes().iter().map(|r| (1.0 + r).recip() - 1.0 / 6.0).collect();
        let ku = g.stiffness_apply(&u);
        let e = 1e-6;
        for k in [0, 5, 30, 62] {
            let mut up = u.clone();
            let mut um = u.clone();
            up[k] += e;
            um[k] -= e;
            let fd = (g.grad_sq(&up) - g.grad_sq(&um)) / (4.0 * e);
            assert!((fd - ku[k]).abs() < 1e-6 * (1.0 + fd.abs()), "{k}: {fd} vs {}", ku[k]);
        }
    }

    #[test]
    fn shifted_solve_inverts_operator() {
        let g = make_grid(4, 3.0, 50).unwrap();
        let x: Vec<f64> = (0..50).map(|k| if k == 49 { 0.0 } else { (k as f64).sin() }).collect();
        let kx = g.stiffness_apply(&x);
        let rhs: Vec<f64> = (0..50).map(|k| kx[k] + 2.5 * g.weights()[k] * x[k]).collect();
        let y = g.solve_shifted(2.5, &rhs);
        for k in 0..50 {
            assert!((y[k] - x[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn derivative_rules() {
        let g = make_grid(3, 4.0, 401).unwrap();
        let u = RadialField::from_fn(g.clone(), |r| (-r * r).exp());
        let d = u.derivative(OriginRule::Symmetric);
        assert_eq!(d[0], 0.0);
        let k = 100;
        let r = g.nodes()[k];
        assert!((d[k] + 2.0 * r * (-r * r).exp()).abs() < 1e-4);
        let d1 = u.derivative(OriginRule::OneSided);
        assert!(d1[0] < 0.0);
    }

    #[test]
    fn lp_norm_rejects_small_exponent() {
        let g = make_grid(3, 1.0, 32).unwrap();
        let u = RadialField::zeros(g);
        assert!(u.lp_norm(0.5).is_err());
        assert_eq!(u.lp_norm(2.0).unwrap(), 0.0);
        assert_eq!(u.mass(), 0.0);
    }

    #[test]
    fn last_value_forced_to_zero() {
        let g = make_grid(3, 1.0, 32).unwrap();
        let u = RadialField::new(g, vec![1.0; 32]).unwrap();
        assert_eq!(*u.values().last().unwrap(), 0.0);
    }

    #[test]
    fn mismatched_grids_rejected() {
        let a = make_grid(3, 1.0, 32).unwrap();
        let b = make_grid(3, 2.0, 32).unwrap();
        let s = StateVector::new(vec![RadialField::zeros(a), RadialField::zeros(b)]);
        assert!(matches!(s, Err(Error::GridMismatch)));
    }

    fn field_strategy() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-3.0f64..3.0, 64)
    }

    proptest! {
        #[test]
        fn l2_norm_matches_mass(v in field_strategy()) {
            let g = make_grid(3, 2.0, 64).unwrap();
            let u = RadialField::new(g, v).unwrap();
            let n2 = u.lp_norm(2.0).unwrap();
            prop_assert!((n2 * n2 - u.mass()).abs() <= 1e-12 * (1.0 + u.mass()));
        }

        #[test]
        fn grad_sq_is_two_homogeneous(v in field_strategy(), a in -5.0f64..5.0) {
            let g = make_grid(4, 2.0, 64).unwrap();
            let u = RadialField::new(g, v).unwrap();
            let base = u.grad_sq();
            prop_assert!(base >= 0.0);
            let scaled = u.scaled(a).grad_sq();
            prop_assert!((scaled - a * a * base).abs() <= 1e-10 * (1.0 + a * a * base));
        }
    }
}
