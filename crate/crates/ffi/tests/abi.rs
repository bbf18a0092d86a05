use std::ffi::{c_char, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use nls_ground_ffi::*;

const QUARTIC: &str = r#"{"dimension": 3, "components": 1, "terms": [
    {"type": "separable_power", "component": 0, "mu": 1.0, "p": 4.0}]}"#;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { ng_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|c| *c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

fn spec(json: &str) -> Result<*mut NgSpec, NgStatus> {
    let text = CString::new(json).unwrap();
    let mut out = ptr::null_mut();
    match unsafe { ng_spec_from_json(text.as_ptr(), &mut out) } {
        NgStatus::Ok => Ok(out),
        s => Err(s),
    }
}

#[test]
fn solve_round_trip() {
    let s = spec(QUARTIC).unwrap();
    assert_eq!(unsafe { ng_spec_components(s) }, 1);
    let params = NgSolveParams {
        r_max: 1.2,
        nodes: 800,
        starts: 1,
        ..ng_solve_params_default()
    };
    let rho = [1.0];
    let mut sol = ptr::null_mut();
    assert_eq!(unsafe { ng_solve(s, rho.as_ptr(), 1, params, &mut sol) }, NgStatus::Ok);
    unsafe {
        assert!(ng_solution_converged(sol));
        let e = ng_solution_energy(sol);
        assert!((e - 178.553).abs() / 178.553 < 1e-3, "{e}");
        let mut lambda = 0.0;
        assert_eq!(ng_solution_lambda(sol, 0, &mut lambda), NgStatus::Ok);
        assert!((lambda - 357.106).abs() / 357.106 < 1e-3);
        let mut mass = 0.0;
        assert_eq!(ng_solution_mass(sol, 0, &mut mass), NgStatus::Ok);
        assert!((mass - 1.0).abs() < 1e-10);
        assert_eq!(ng_solution_mass(sol, 3, &mut mass), NgStatus::InvalidArgument);
        let n = ng_solution_len(sol);
        assert_eq!(n, 800);
        let mut nodes = vec![0.0; n];
        let mut values = vec![0.0; n];
        assert_eq!(ng_solution_nodes(sol, nodes.as_mut_ptr(), n), NgStatus::Ok);
        assert_eq!(ng_solution_component(sol, 0, values.as_mut_ptr(), n), NgStatus::Ok);
        assert_eq!(nodes[n - 1], 1.2);
        assert!(values[0] > values[n / 2] && values[n - 1] == 0.0);
        assert_eq!(ng_solution_component(sol, 0, values.as_mut_ptr(), n - 1), NgStatus::InvalidArgument);
        ng_solution_free(sol);
        ng_spec_free(s);
    }
}

#[test]
fn errors_are_reported() {
    assert_eq!(spec("{").unwrap_err(), NgStatus::Parse);
    assert!(!last_error().is_empty());
    let bad = QUARTIC.replace("4.0", "9.0");
    assert_eq!(spec(&bad).unwrap_err(), NgStatus::Parse);
    assert!(last_error().contains('9'));
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { ng_spec_from_json(ptr::null(), &mut out) }, NgStatus::NullPointer);
    let s = spec(QUARTIC).unwrap();
    let mut sol = ptr::null_mut();
    let rho = [1.0, 1.0];
    let status = unsafe { ng_solve(s, rho.as_ptr(), 2, ng_solve_params_default(), &mut sol) };
    assert_eq!(status, NgStatus::InvalidArgument);
    assert!(sol.is_null());
    let params = NgSolveParams {
        r_max: 1.2,
        nodes: 400,
        starts: 1,
        max_iters: 2,
        ..ng_solve_params_default()
    };
    assert_eq!(unsafe { ng_solve(s, rho.as_ptr(), 1, params, &mut sol) }, NgStatus::NotConverged);
    assert!(!sol.is_null());
    unsafe {
        assert!(!ng_solution_converged(sol));
        ng_solution_free(sol);
        ng_spec_free(s);
        ng_spec_free(ptr::null_mut());
        ng_solution_free(ptr::null_mut());
        assert!(ng_solution_energy(ptr::null()).is_nan());
    }
}

#[test]
fn constants() {
    let mut v = 0.0;
    unsafe {
        assert_eq!(ng_sobolev_constant(3, &mut v), NgStatus::Ok);
        assert!((v - 3.0 * std::f64::consts::FRAC_PI_2.powf(4.0 / 3.0)).abs() < 1e-10);
        let s = v;
        let theta = [1.0, 1.0];
        assert_eq!(ng_threshold(3, theta.as_ptr(), 2, &mut v), NgStatus::Ok);
        assert!((v - 2.0 * s.powf(1.5) / 3.0).abs() < 1e-10);
        assert_eq!(ng_bar_s(3, theta.as_ptr(), 1, &mut v), NgStatus::Ok);
        assert!((v - s).abs() < 1e-12);
        assert_eq!(ng_gn_constant(3, 4.0, &mut v), NgStatus::Ok);
        assert!((v - 0.449_257).abs() < 1e-5);
        assert_eq!(ng_gn_constant(3, 7.0, &mut v), NgStatus::InvalidArgument);
        assert_eq!(ng_sobolev_constant(2, &mut v), NgStatus::InvalidArgument);
        assert_eq!(ng_threshold(3, ptr::null(), 2, &mut v), NgStatus::NullPointer);
    }
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/nls_ground.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["ng_spec_from_json", "ng_solve", "ng_solution_free", "ng_last_error_message", "NG_STATUS_NO_VALUE"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let Ok(out) = Command::new(compiler).args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang]).arg(&header).output() else {
            continue;
        };
        assert!(out.status.success(), "{compiler}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
