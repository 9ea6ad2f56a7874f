//! C ABI over the core library: opaque handles, integer error codes and a
//! thread-local last-error message. The generated header lands in
//! `include/emshape.h`.

use emshape::emfield::EmAssembly;
use emshape::geometry::{build_sphere_grid, ReferenceSurface};
use emshape::harness::{self, Config, Suite};
use emshape::scattering::{self, FieldEvaluator, SolutionBundle};
use libc::{c_char, c_double, c_int, size_t};
use std::cell::RefCell;
use std::ffi::CStr;
use std::panic::{catch_unwind, AssertUnwindSafe};

/// Status codes returned by every fallible entry point.
pub const EMSHAPE_OK: c_int = 0;
/// A check failed or a numerical routine reported an error.
pub const EMSHAPE_ERR_FAILED: c_int = 1;
/// Bad arguments, unknown names or unreadable configuration.
pub const EMSHAPE_ERR_USAGE: c_int = 2;
/// A required pointer was null.
pub const EMSHAPE_ERR_NULL: c_int = 3;

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn code_for(err: &emshape::Error) -> c_int {
    match err {
        emshape::Error::Usage(_) | emshape::Error::Config { .. } => EMSHAPE_ERR_USAGE,
        _ => EMSHAPE_ERR_FAILED,
    }
}

/// Opaque solver context: configuration plus the discretized surface.
pub struct EmshapeContext {
    cfg: Config,
    surface: ReferenceSurface,
}

/// Opaque solved transmission problem.
pub struct EmshapeSolution {
    bundle: SolutionBundle,
}

impl EmshapeContext {
    fn build(cfg: Config) -> Result<Self, emshape::Error> {
        let surface = build_sphere_grid(cfg.n_theta, cfg.n_phi, cfg.band_limit)?;
        Ok(Self { cfg, surface })
    }
}

/// Create a context with the desk-scale defaults.
#[no_mangle]
pub extern "C" fn emshape_context_new_default() -> *mut EmshapeContext {
    match EmshapeContext::build(Config::default()) {
        Ok(ctx) => Box::into_raw(Box::new(ctx)),
        Err(e) => {
            set_error(e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Create a context from a configuration file; null on error (see
/// `emshape_last_error`).
///
/// # Safety
/// `path` must point to a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn emshape_context_from_file(path: *const c_char) -> *mut EmshapeContext {
    if path.is_null() {
        set_error("null path");
        return std::ptr::null_mut();
    }
    let path = match CStr::from_ptr(path).to_str() {
        Ok(p) => p,
        Err(_) => {
            set_error("path is not valid utf-8");
            return std::ptr::null_mut();
        }
    };
    match Config::load(std::path::Path::new(path)).and_then(EmshapeContext::build) {
        Ok(ctx) => Box::into_raw(Box::new(ctx)),
        Err(e) => {
            set_error(e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// # Safety
/// `ctx` must be a pointer previously returned by a context constructor,
/// not yet freed.
#[no_mangle]
pub unsafe extern "C" fn emshape_context_free(ctx: *mut EmshapeContext) {
    if !ctx.is_null() {
        drop(Box::from_raw(ctx));
    }
}

/// Solve the transmission problem at the configured deformation and scale.
/// Returns null on failure.
///
/// # Safety
/// `ctx` must be a live context pointer.
#[no_mangle]
pub unsafe extern "C" fn emshape_solve(ctx: *const EmshapeContext) -> *mut EmshapeSolution {
    if ctx.is_null() {
        set_error("null context");
        return std::ptr::null_mut();
    }
    let ctx = &*ctx;
    let result = catch_unwind(AssertUnwindSafe(|| -> Result<SolutionBundle, emshape::Error> {
        let asm = EmAssembly::new(&ctx.surface);
        let scfg = ctx.cfg.scattering_config()?;
        let inc = ctx.cfg.incident()?;
        let r = ctx.cfg.deformation()?;
        scattering::solve(&asm, &scfg, &inc, &r, ctx.cfg.scale)
    }));
    match result {
        Ok(Ok(bundle)) => Box::into_raw(Box::new(EmshapeSolution { bundle })),
        Ok(Err(e)) => {
            set_error(e.to_string());
            std::ptr::null_mut()
        }
        Err(_) => {
            set_error("internal panic during solve");
            std::ptr::null_mut()
        }
    }
}

/// # Safety
/// `sol` must be a pointer previously returned by `emshape_solve`.
#[no_mangle]
pub unsafe extern "C" fn emshape_solution_free(sol: *mut EmshapeSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Condition estimate of the boundary operator behind a solution.
///
/// # Safety
/// `sol` must be a live solution pointer.
#[no_mangle]
pub unsafe extern "C" fn emshape_solution_condition(sol: *const EmshapeSolution) -> c_double {
    if sol.is_null() {
        set_error("null solution");
        return -1.0;
    }
    (*sol).bundle.condition
}

/// Far-field pattern of a solution at `n_dirs` unit directions. `dirs`
/// holds xyz triples; `out` receives interleaved re/im for the three
/// complex components per direction (6 doubles each).
///
/// # Safety
/// `ctx` and `sol` must be live pointers; `dirs` must hold `3 * n_dirs`
/// doubles and `out` must have room for `6 * n_dirs`.
#[no_mangle]
pub unsafe extern "C" fn emshape_farfield(
    ctx: *const EmshapeContext,
    sol: *const EmshapeSolution,
    dirs: *const c_double,
    n_dirs: size_t,
    out: *mut c_double,
) -> c_int {
    if ctx.is_null() || sol.is_null() || dirs.is_null() || out.is_null() {
        set_error("null argument");
        return EMSHAPE_ERR_NULL;
    }
    let ctx = &*ctx;
    let sol = &*sol;
    let dirs = std::slice::from_raw_parts(dirs, 3 * n_dirs);
    let directions: Vec<nalgebra::Vector3<f64>> = (0..n_dirs)
        .map(|k| nalgebra::Vector3::new(dirs[3 * k], dirs[3 * k + 1], dirs[3 * k + 2]))
        .collect();
    let result = catch_unwind(AssertUnwindSafe(|| -> Result<Vec<f64>, emshape::Error> {
        let scfg = ctx.cfg.scattering_config()?;
        let ev = FieldEvaluator::new(&ctx.surface, &scfg);
        let r = ctx.cfg.deformation()?;
        let ff = ev.farfield(&sol.bundle, &directions, &r, ctx.cfg.scale)?;
        let mut flat = Vec::with_capacity(6 * n_dirs);
        for v in ff {
            for c in 0..3 {
                flat.push(v[c].re);
                flat.push(v[c].im);
            }
        }
        Ok(flat)
    }));
    match result {
        Ok(Ok(flat)) => {
            std::slice::from_raw_parts_mut(out, 6 * n_dirs).copy_from_slice(&flat);
            EMSHAPE_OK
        }
        Ok(Err(e)) => {
            let code = code_for(&e);
            set_error(e.to_string());
            code
        }
        Err(_) => {
            set_error("internal panic during far-field evaluation");
            EMSHAPE_ERR_FAILED
        }
    }
}

/// Run a verification suite; 0 when every check passes, 1 on check
/// failure, 2 on an unknown suite name.
///
/// # Safety
/// `ctx` must be a live context pointer and `suite` a NUL-terminated name.
#[no_mangle]
pub unsafe extern "C" fn emshape_verify(
    ctx: *const EmshapeContext,
    suite: *const c_char,
) -> c_int {
    if ctx.is_null() || suite.is_null() {
        set_error("null argument");
        return EMSHAPE_ERR_NULL;
    }
    let ctx = &*ctx;
    let name = match CStr::from_ptr(suite).to_str() {
        Ok(s) => s,
        Err(_) => {
            set_error("suite name is not valid utf-8");
            return EMSHAPE_ERR_USAGE;
        }
    };
    let suite = match Suite::parse(name) {
        Ok(s) => s,
        Err(e) => {
            set_error(e.to_string());
            return EMSHAPE_ERR_USAGE;
        }
    };
    let result = catch_unwind(AssertUnwindSafe(|| harness::run_suite(suite, &ctx.cfg)));
    match result {
        Ok(Ok(reports)) => {
            if reports.iter().all(|r| r.pass) {
                EMSHAPE_OK
            } else {
                let failed: Vec<&str> = reports
                    .iter()
                    .filter(|r| !r.pass)
                    .map(|r| r.check_id.as_str())
                    .collect();
                set_error(format!("failed checks: {}", failed.join(", ")));
                EMSHAPE_ERR_FAILED
            }
        }
        Ok(Err(e)) => {
            let code = code_for(&e);
            set_error(e.to_string());
            code
        }
        Err(_) => {
            set_error("internal panic during verification");
            EMSHAPE_ERR_FAILED
        }
    }
}

/// Copy the last error message into `buf` (truncated, always
/// NUL-terminated). Returns the full message length.
///
/// # Safety
/// `buf` must have room for `len` bytes when non-null.
#[no_mangle]
pub unsafe extern "C" fn emshape_last_error(buf: *mut c_char, len: size_t) -> size_t {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    #[test]
    fn context_lifecycle_and_verify_usage_codes() {
        let ctx = emshape_context_new_default();
        assert!(!ctx.is_null());
        unsafe {
            let bogus = CString::new("bogus").unwrap();
            assert_eq!(emshape_verify(ctx, bogus.as_ptr()), EMSHAPE_ERR_USAGE);
            let mut buf = [0 as c_char; 128];
            let n = emshape_last_error(buf.as_mut_ptr(), buf.len());
            assert!(n > 0);
            emshape_context_free(ctx);
        }
    }

    #[test]
    fn solve_and_farfield_roundtrip() {
        // small grid keeps the exercise quick
        let text = "[grid]\nn_theta = 9\nn_phi = 19\nband_limit = 8\n";
        let tmp = std::env::temp_dir().join("emshape_ffi_cfg.txt");
        std::fs::write(&tmp, text).unwrap();
        let cpath = CString::new(tmp.to_str().unwrap()).unwrap();
        unsafe {
            let ctx = emshape_context_from_file(cpath.as_ptr());
            assert!(!ctx.is_null());
            let sol = emshape_solve(ctx);
            assert!(!sol.is_null());
            assert!(emshape_solution_condition(sol) > 0.0);
            let dirs = [0.0f64, 0.0, 1.0, 0.6, 0.8, 0.0];
            let mut out = [0.0f64; 12];
            let rc = emshape_farfield(ctx, sol, dirs.as_ptr(), 2, out.as_mut_ptr());
            assert_eq!(rc, EMSHAPE_OK);
            assert!(out.iter().any(|v| v.abs() > 1e-6));
            emshape_solution_free(sol);
            emshape_context_free(ctx);
        }
        let _ = std::fs::remove_file(tmp);
    }

    #[test]
    fn missing_config_reports_usage() {
        let cpath = CString::new("/nonexistent/emshape.cfg").unwrap();
        unsafe {
            let ctx = emshape_context_from_file(cpath.as_ptr());
            assert!(ctx.is_null());
        }
    }
}
