use nls_ground::experiments::{sweep_rho, GridConfig};
use nls_ground::nonlinearity::NonlinearitySpec;
use nls_ground::solver::{Saturation, SolveConfig};

fn scaled_grid(nodes: usize) -> GridConfig {
    GridConfig {
        r_max: 1.2,
        nodes,
        rho_scaling: 2.0,
        rho_ref: 1.0,
    }
}

#[test]
fn scalar_energy_decreases_along_the_grid() {
    let spec = NonlinearitySpec::pure_power(3, 1.0, 4.0).unwrap();
    let rhos: Vec<Vec<f64>> = [0.05, 0.1, 0.2, 0.4, 0.8].iter().map(|r| vec![*r]).collect();
    let cfg = SolveConfig {
        starts: 2,
        ..SolveConfig::default()
    };
    let map = sweep_rho(&spec, &rhos, &scaled_grid(1000), &cfg);
    assert_eq!(map.rows.len(), 5);
    assert!(map.rows.iter().all(|r| r.converged && r.all_saturated()));
    assert!(map.rows.windows(2).all(|w| w[1].c < w[0].c));
    assert!(map.order_violations(1e-6).is_empty());
    assert!(map.rows[0].c / map.rows[4].c > 10.0);
    // J scales like ρ^{-2} for the cubic nonlinearity in three dimensions.
    let ratio = map.rows[0].c / map.rows[1].c;
    assert!((ratio - 4.0).abs() < 1e-6, "{ratio}");
}

#[test]
fn duplicate_rows_agree_and_collapse() {
    let spec = NonlinearitySpec::pure_power(3, 1.0, 4.0).unwrap();
    let rhos = vec![vec![0.5], vec![1.0], vec![0.5], vec![0.5]];
    let cfg = SolveConfig {
        starts: 2,
        seed: 5,
        ..SolveConfig::default()
    };
    let map = sweep_rho(&spec, &rhos, &scaled_grid(600), &cfg);
    assert_eq!(map.rows.len(), 2);
    assert!(map.duplicate_spread <= 1e-10 * map.rows[0].c, "{}", map.duplicate_spread);
}

#[test]
fn failing_rows_are_isolated() {
    let spec = NonlinearitySpec::pure_power(3, 1.0, 4.0).unwrap();
    let rhos = vec![vec![1.0], vec![1.0, 2.0]];
    let cfg = SolveConfig {
        starts: 1,
        ..SolveConfig::default()
    };
    let map = sweep_rho(&spec, &rhos, &scaled_grid(400), &cfg);
    assert_eq!(map.rows.len(), 2);
    assert!(map.rows[0].error.is_none() && map.rows[0].saturation == vec![Saturation::Saturated]);
    assert!(map.rows[1].error.is_some() && map.rows[1].c.is_nan());
    let csv = map.to_csv();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().all(|l| l.split(',').count() == 4));
    assert!(map.order_violations(1e-6).is_empty());
}
