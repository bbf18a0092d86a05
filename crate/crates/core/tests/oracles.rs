mod common;

use common::Soliton;
use nls_ground::analysis::gn_constant;
use nls_ground::nonlinearity::{audit_assumptions, two_n, two_star, NonlinearitySpec};
use nls_ground::radial_core::make_grid;
use nls_ground::solver::{minimize, SolveConfig};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn cubic_soliton_reference_values() {
    let s = Soliton::new(3, 4.0);
    assert!((s.mass - 18.897_251_3).abs() < 1e-6, "{}", s.mass);
    let (lambda, j) = s.rescaled(1.0);
    assert!(rel(lambda, 357.106_107) < 1e-8, "{lambda}");
    assert!(rel(j, 178.553_053) < 1e-8, "{j}");
    // Pohozaev: ∫|∇w|² = N(p−2)/(2p)·∫w^p and Nehari: ∫|∇w|² + ∫w² = ∫w^p.
    assert!(rel(s.grad, 0.75 * s.lp) < 1e-8);
    assert!(rel(s.grad + s.mass, s.lp) < 1e-8);
}

#[test]
fn gn_constants_match_weinstein_quotient_of_shooting_profile() {
    for (n, p) in [(3, 4.0), (3, two_n(3)), (4, 3.0), (5, 3.0)] {
        let oracle = Soliton::new(n, p).gn_constant();
        let computed = gn_constant(n, p).unwrap();
        assert!(rel(computed, oracle) < 3e-6, "N = {n}, p = {p}: {computed} vs {oracle}");
    }
    assert!(rel(gn_constant(3, 4.0).unwrap(), 0.449_257_03) < 1e-7);
    assert!(rel(gn_constant(3, two_n(3)).unwrap(), 0.507_707_4) < 1e-7);
}

#[test]
fn four_dimensional_energy_converges_to_oracle() {
    let (_, j_ref) = Soliton::new(4, 3.5).rescaled(1.0);
    let spec = NonlinearitySpec::pure_power(4, 1.0, 3.5).unwrap();
    let cfg = SolveConfig {
        starts: 1,
        ..SolveConfig::with_rho(&[1.0])
    };
    let energy = |m: usize| minimize(&spec, &make_grid(4, 4.0, m).unwrap(), &cfg).unwrap().energy;
    let (coarse, fine) = (energy(1600), energy(3200));
    assert!(rel(fine, j_ref) < 1e-3);
    assert!(rel(fine, j_ref) < rel(coarse, j_ref) / 3.0);
    let extrapolated = (4.0 * fine - coarse) / 3.0;
    assert!(rel(extrapolated, j_ref) < 1e-4, "{extrapolated} vs {j_ref}");
}

#[test]
fn mixed_example_mass_radius() {
    let spec = NonlinearitySpec::l2_critical_plus_power(3, &[1.0, 1.0], &[1.0, 1.0], &[4.0, 4.0], &[1.0, 1.0]).unwrap();
    let eta = audit_assumptions(&spec, (1e-6, 1e6), 32).eta;
    assert!((eta - 0.3).abs() < 1e-9);
    let c = gn_constant(3, two_n(3)).unwrap();
    let radius = (1.0 / (two_star(3) * c.powf(two_n(3)) * eta)).powf(0.75);
    assert!((radius - 3.503_579).abs() < 1e-5, "{radius}");
}
