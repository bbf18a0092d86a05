//! C ABI for the nls-ground solver.
//!
//! Specs and solutions are opaque handles created and released by this library.
//! Every fallible call returns an [`NgStatus`]; the message of the last failure
//! on the calling thread is available through [`ng_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nls_ground::analysis::{bar_S, gn_constant, sobolev_S, threshold_value};
use nls_ground::nonlinearity::NonlinearitySpec;
use nls_ground::radial_core::make_grid;
use nls_ground::solver::{minimize, SolutionReport, SolveConfig};
use nls_ground::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    NotConverged = 4,
    /// The requested quantity is undefined (for example the multiplier of a zero component).
    NoValue = 5,
    Internal = 6,
}

/// Opaque validated nonlinearity.
pub struct NgSpec(NonlinearitySpec);

/// Opaque solver result.
pub struct NgSolution {
    report: SolutionReport,
    nodes: Vec<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: NgStatus, msg: impl Into<String>) -> NgStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
    status
}

fn from_error(e: Error) -> NgStatus {
    let status = match &e {
        Error::NotConverged(_) => NgStatus::NotConverged,
        Error::InvalidArgument(_) => NgStatus::InvalidArgument,
        _ => NgStatus::Internal,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> NgStatus) -> NgStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(NgStatus::Internal, "panic inside nls-ground"))
}

/// Copy the last error message of the calling thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ng_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Parse a JSON spec (`{"dimension", "components", "terms"}`).
///
/// # Safety
/// `json` must be a valid NUL-terminated string and `out` a valid pointer.
/// The handle written to `out` must be released with [`ng_spec_free`].
#[no_mangle]
pub unsafe extern "C" fn ng_spec_from_json(json: *const c_char, out: *mut *mut NgSpec) -> NgStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return fail(NgStatus::NullPointer, "null argument");
        }
        let Ok(text) = CStr::from_ptr(json).to_str() else {
            return fail(NgStatus::Parse, "spec is not UTF-8");
        };
        match serde_json::from_str::<NonlinearitySpec>(text) {
            Ok(spec) => {
                *out = Box::into_raw(Box::new(NgSpec(spec)));
                NgStatus::Ok
            }
            Err(e) => fail(NgStatus::Parse, e.to_string()),
        }
    })
}

/// Number of components of a spec, 0 for null.
///
/// # Safety
/// `spec` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ng_spec_components(spec: *const NgSpec) -> usize {
    spec.as_ref().map_or(0, |s| s.0.k())
}

/// Release a spec; null is ignored.
///
/// # Safety
/// `spec` must be null or a handle from [`ng_spec_from_json`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ng_spec_free(spec: *mut NgSpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Solver parameters passed by value.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct NgSolveParams {
    pub r_max: f64,
    pub nodes: usize,
    pub starts: usize,
    pub max_iters: usize,
    pub tolerance: f64,
    pub seed: u64,
}

/// Default solver parameters.
#[no_mangle]
pub extern "C" fn ng_solve_params_default() -> NgSolveParams {
    let d = SolveConfig::default();
    NgSolveParams {
        r_max: 10.0,
        nodes: 2000,
        starts: d.starts,
        max_iters: d.max_iters,
        tolerance: d.tolerance,
        seed: d.seed,
    }
}

/// Minimize under the mass bounds `rho[0..k]`. A run that stops without
/// converging still produces a solution and returns [`NgStatus::NotConverged`].
///
/// # Safety
/// `spec` must be a live handle, `rho` must point to `k` doubles and `out` must be
/// valid. The handle written to `out` must be released with [`ng_solution_free`].
#[no_mangle]
pub unsafe extern "C" fn ng_solve(
    spec: *const NgSpec,
    rho: *const f64,
    k: usize,
    params: NgSolveParams,
    out: *mut *mut NgSolution,
) -> NgStatus {
    guard(|| {
        let (Some(spec), false, false) = (spec.as_ref(), rho.is_null(), out.is_null()) else {
            return fail(NgStatus::NullPointer, "null argument");
        };
        let rho = std::slice::from_raw_parts(rho, k).to_vec();
        let cfg = SolveConfig {
            rho,
            starts: params.starts,
            max_iters: params.max_iters,
            tolerance: params.tolerance,
            seed: params.seed,
            ..SolveConfig::default()
        };
        let grid = match make_grid(spec.0.dim(), params.r_max, params.nodes) {
            Ok(g) => g,
            Err(e) => return from_error(e),
        };
        match minimize(&spec.0, &grid, &cfg) {
            Ok(report) => {
                let converged = report.converged;
                *out = Box::into_raw(Box::new(NgSolution {
                    report,
                    nodes: grid.nodes().to_vec(),
                }));
                if converged {
                    NgStatus::Ok
                } else {
                    fail(NgStatus::NotConverged, "solver stopped before the tolerance was met")
                }
            }
            Err(e) => from_error(e),
        }
    })
}

/// Ground-state energy, NaN for null.
///
/// # Safety
/// `sol` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ng_solution_energy(sol: *const NgSolution) -> f64 {
    sol.as_ref().map_or(f64::NAN, |s| s.report.energy)
}

/// Whether the run met its tolerance.
///
/// # Safety
/// `sol` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ng_solution_converged(sol: *const NgSolution) -> bool {
    sol.as_ref().is_some_and(|s| s.report.converged)
}

/// Number of grid nodes, 0 for null.
///
/// # Safety
/// `sol` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ng_solution_len(sol: *const NgSolution) -> usize {
    sol.as_ref().map_or(0, |s| s.nodes.len())
}

unsafe fn component_value(
    sol: *const NgSolution,
    i: usize,
    out: *mut f64,
    pick: impl Fn(&SolutionReport, usize) -> Option<f64>,
) -> NgStatus {
    let (Some(sol), false) = (sol.as_ref(), out.is_null()) else {
        return fail(NgStatus::NullPointer, "null argument");
    };
    if i >= sol.report.masses.len() {
        return fail(NgStatus::InvalidArgument, format!("component {i} out of range"));
    }
    match pick(&sol.report, i) {
        Some(v) => {
            *out = v;
            NgStatus::Ok
        }
        None => fail(NgStatus::NoValue, format!("component {i} has no value")),
    }
}

/// `|u_i|₂²` of component `i`.
///
/// # Safety
/// `sol` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ng_solution_mass(sol: *const NgSolution, i: usize, out: *mut f64) -> NgStatus {
    component_value(sol, i, out, |r, i| Some(r.masses[i]))
}

/// Lagrange multiplier of component `i`; [`NgStatus::NoValue`] for a zero component.
///
/// # Safety
/// `sol` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ng_solution_lambda(sol: *const NgSolution, i: usize, out: *mut f64) -> NgStatus {
    component_value(sol, i, out, |r, i| r.lambda[i])
}

/// Copy the grid nodes into `buf`, which must hold [`ng_solution_len`] doubles.
///
/// # Safety
/// `sol` must be a live handle and `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ng_solution_nodes(sol: *const NgSolution, buf: *mut f64, len: usize) -> NgStatus {
    let (Some(sol), false) = (sol.as_ref(), buf.is_null()) else {
        return fail(NgStatus::NullPointer, "null argument");
    };
    if len != sol.nodes.len() {
        return fail(NgStatus::InvalidArgument, format!("buffer holds {len}, need {}", sol.nodes.len()));
    }
    ptr::copy_nonoverlapping(sol.nodes.as_ptr(), buf, len);
    NgStatus::Ok
}

/// Copy the nodal values of component `i` into `buf`.
///
/// # Safety
/// `sol` must be a live handle and `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ng_solution_component(sol: *const NgSolution, i: usize, buf: *mut f64, len: usize) -> NgStatus {
    let (Some(sol), false) = (sol.as_ref(), buf.is_null()) else {
        return fail(NgStatus::NullPointer, "null argument");
    };
    let comps = sol.report.state.components();
    let Some(c) = comps.get(i) else {
        return fail(NgStatus::InvalidArgument, format!("component {i} out of range"));
    };
    if len != c.values().len() {
        return fail(NgStatus::InvalidArgument, format!("buffer holds {len}, need {}", c.values().len()));
    }
    ptr::copy_nonoverlapping(c.values().as_ptr(), buf, len);
    NgStatus::Ok
}

/// Release a solution; null is ignored.
///
/// # Safety
/// `sol` must be null or a handle from [`ng_solve`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ng_solution_free(sol: *mut NgSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

unsafe fn scalar(out: *mut f64, f: impl FnOnce() -> nls_ground::Result<f64>) -> NgStatus {
    guard(|| {
        if out.is_null() {
            return fail(NgStatus::NullPointer, "null argument");
        }
        match f() {
            Ok(v) => {
                *out = v;
                NgStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

unsafe fn theta_slice<'a>(theta: *const f64, k: usize) -> Option<&'a [f64]> {
    (!theta.is_null()).then(|| std::slice::from_raw_parts(theta, k))
}

/// Sharp Sobolev constant `S` in dimension `n ≥ 3`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ng_sobolev_constant(n: usize, out: *mut f64) -> NgStatus {
    scalar(out, || sobolev_S(n))
}

/// Gagliardo–Nirenberg constant `C_{N,p}` for `2 < p ≤ 2*`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ng_gn_constant(n: usize, p: f64, out: *mut f64) -> NgStatus {
    scalar(out, || gn_constant(n, p))
}

/// Level `(1/N) S^{N/2} Σ θ_j^{1−N/2}` for positive `theta[0..k]`.
///
/// # Safety
/// `theta` must point to `k` doubles and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ng_threshold(n: usize, theta: *const f64, k: usize, out: *mut f64) -> NgStatus {
    let Some(t) = theta_slice(theta, k) else {
        return fail(NgStatus::NullPointer, "null argument");
    };
    scalar(out, || threshold_value(n, t))
}

/// Closed form `(Σ θ_j^{−(N−2)/2})^{2/N} S`.
///
/// # Safety
/// `theta` must point to `k` doubles and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ng_bar_s(n: usize, theta: *const f64, k: usize, out: *mut f64) -> NgStatus {
    let Some(t) = theta_slice(theta, k) else {
        return fail(NgStatus::NullPointer, "null argument");
    };
    scalar(out, || bar_S(n, t))
}
