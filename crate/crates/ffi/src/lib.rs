//! C ABI for `wpgsa`.
//!
//! Every fallible function returns a [`WpStatus`] and writes its result through
//! an out-pointer. On failure the message is available from
//! [`wp_last_error_message`] on the same thread. Handles are opaque and must be
//! released with the matching `*_free` function; passing NULL to a free
//! function is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use wpgsa::gsa::{build_report, input_weight, sobol_total_reference, Cell, GsaConfig, GsaReport, Model, WeightKind};
use wpgsa::measures::ProbabilityMeasure;
use wpgsa::models::BuiltinModel;
use wpgsa::spectral::{solve_eigenbasis, SpectralBasis};
use wpgsa::weights::WeightCurve;
use wpgsa::Error;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Bad configuration, parameters or unsupported input.
    Config = 3,
    /// A numerical routine failed or a hypothesis check did not hold.
    Numerical = 4,
    /// Index outside the valid range or a buffer that is too small.
    OutOfRange = 5,
    /// The requested report cell holds an error instead of a value.
    CellError = 6,
    Panic = 7,
}

/// A probability measure on an interval.
pub struct WpMeasure(ProbabilityMeasure);

/// A weight curve together with its Poincaré constant.
pub struct WpWeight {
    curve: WeightCurve,
    c_p: f64,
}

/// Eigenvalues and eigenfunctions of the weighted operator.
pub struct WpBasis(SpectralBasis);

/// A full sensitivity report for a built-in model.
pub struct WpReport(GsaReport);

/// Plain-data mirror of the report configuration.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct WpConfig {
    pub n: usize,
    pub fit_n: usize,
    pub ref_n: usize,
    pub boot: usize,
    pub nodes: usize,
    pub seed: u64,
    pub reference: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(WpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = if e.is_config() { WpStatus::Config } else { WpStatus::Numerical };
        Failure(status, e.to_string())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn guard<F: FnOnce() -> Outcome>(f: F) -> WpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => WpStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            WpStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(WpStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> std::result::Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(WpStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> std::result::Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write<T>(out: *mut T, value: T) -> Outcome {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread, or NULL when none failed.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn wp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn wp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn wp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a measure from its JSON spec, e.g. `{"family":"uniform","params":{"a":0,"b":1}}`.
///
/// # Safety
/// `json` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wp_measure_from_json(json: *const c_char, out: *mut *mut WpMeasure) -> WpStatus {
    guard(|| {
        let m = ProbabilityMeasure::from_json(text(json, "json")?)?;
        write(out, boxed(WpMeasure(m)))
    })
}

/// # Safety
/// `m` must be NULL or a live handle from [`wp_measure_from_json`].
#[no_mangle]
pub unsafe extern "C" fn wp_measure_free(m: *mut WpMeasure) {
    free(m);
}

/// Support endpoints (possibly infinite).
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn wp_measure_support(m: *const WpMeasure, a: *mut f64, b: *mut f64) -> WpStatus {
    guard(|| {
        let s = handle(m, "measure")?.0.support();
        write(a, s.a)?;
        write(b, s.b)
    })
}

/// Normalized density at `x`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn wp_measure_density(m: *const WpMeasure, x: f64, out: *mut f64) -> WpStatus {
    guard(|| write(out, handle(m, "measure")?.0.density(x)?))
}

/// Mean and variance by quadrature.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn wp_measure_moments(m: *const WpMeasure, mean: *mut f64, variance: *mut f64) -> WpStatus {
    guard(|| {
        let m = &handle(m, "measure")?.0;
        write(mean, m.mean()?)?;
        write(variance, m.variance()?)
    })
}

/// Builds a weight of kind `unit`, `lin`, `gauss_ref` or `uniform_ref` on `nodes` nodes.
///
/// # Safety
/// `m` must be a live handle, `kind` NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wp_weight_new(
    m: *const WpMeasure,
    kind: *const c_char,
    nodes: usize,
    out: *mut *mut WpWeight,
) -> WpStatus {
    guard(|| {
        let m = &handle(m, "measure")?.0;
        let kind: WeightKind = text(kind, "kind")?.parse()?;
        if kind == WeightKind::DataDriven {
            return Err(Failure(WpStatus::Config, "data_driven weights need a model; use wp_report_build".into()));
        }
        let w = input_weight(m, kind, nodes, None)?;
        write(out, boxed(WpWeight { curve: w.curve, c_p: w.c_p }))
    })
}

/// # Safety
/// `w` must be NULL or a live handle from [`wp_weight_new`].
#[no_mangle]
pub unsafe extern "C" fn wp_weight_free(w: *mut WpWeight) {
    free(w);
}

/// Weight value at `x`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn wp_weight_eval(w: *const WpWeight, x: f64, out: *mut f64) -> WpStatus {
    guard(|| write(out, handle(w, "weight")?.curve.eval(x)))
}

/// Poincaré constant attached to the weight: the FEM value for `unit`, 1 otherwise.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn wp_weight_poincare_constant(w: *const WpWeight, out: *mut f64) -> WpStatus {
    guard(|| write(out, handle(w, "weight")?.c_p))
}

/// Solves for the first `num_eig` non-trivial eigenpairs on `cells` cells.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wp_basis_solve(
    m: *const WpMeasure,
    w: *const WpWeight,
    num_eig: usize,
    cells: usize,
    out: *mut *mut WpBasis,
) -> WpStatus {
    guard(|| {
        let b = solve_eigenbasis(&handle(m, "measure")?.0, &handle(w, "weight")?.curve, num_eig, cells)?;
        write(out, boxed(WpBasis(b)))
    })
}

/// # Safety
/// `b` must be NULL or a live handle from [`wp_basis_solve`].
#[no_mangle]
pub unsafe extern "C" fn wp_basis_free(b: *mut WpBasis) {
    free(b);
}

/// Number of eigenpairs held by the basis.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn wp_basis_num_eig(b: *const WpBasis, out: *mut usize) -> WpStatus {
    guard(|| write(out, handle(b, "basis")?.0.num_eig()))
}

unsafe fn mode<'a>(b: *const WpBasis, n: usize) -> std::result::Result<&'a SpectralBasis, Failure> {
    let b = &handle(b, "basis")?.0;
    if n == 0 || n > b.num_eig() {
        return Err(Failure(WpStatus::OutOfRange, format!("eigenpair {n} outside 1..={}", b.num_eig())));
    }
    Ok(b)
}

/// Eigenvalue `λ_n`, `n ≥ 1`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn wp_basis_eigenvalue(b: *const WpBasis, n: usize, out: *mut f64) -> WpStatus {
    guard(|| write(out, mode(b, n)?.eigenvalue(n)?))
}

/// Eigenfunction `e_n(x)` and its derivative.
///
/// # Safety
/// Pointers must be valid; `derivative` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn wp_basis_eval(
    b: *const WpBasis,
    n: usize,
    x: f64,
    value: *mut f64,
    derivative: *mut f64,
) -> WpStatus {
    guard(|| {
        let b = mode(b, n)?;
        write(value, b.eval(n, x))?;
        if !derivative.is_null() {
            derivative.write(b.eval_derivative(n, x));
        }
        Ok(())
    })
}

/// Library defaults for [`wp_report_build`].
#[no_mangle]
pub extern "C" fn wp_config_default() -> WpConfig {
    let c = GsaConfig::default();
    WpConfig {
        n: c.n,
        fit_n: c.fit_n,
        ref_n: c.ref_n,
        boot: c.boot,
        nodes: c.nodes,
        seed: c.seed,
        reference: c.reference,
    }
}

unsafe fn kinds(p: *const c_char, what: &str) -> std::result::Result<Vec<WeightKind>, Failure> {
    if p.is_null() {
        return Ok(Vec::new());
    }
    Ok(WeightKind::parse_list(text(p, what)?)?)
}

/// Runs bounds and PoinCE approximations on a built-in model (`toy1`, `toy2`,
/// `flood_s`, `flood_c`). `weights` and `poince` are comma-separated kind
/// lists; NULL means none. Per-cell failures are recorded in the report.
///
/// # Safety
/// Strings must be NUL-terminated or NULL, `config` readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wp_report_build(
    model: *const c_char,
    config: *const WpConfig,
    weights: *const c_char,
    poince: *const c_char,
    out: *mut *mut WpReport,
) -> WpStatus {
    guard(|| {
        let model = BuiltinModel::by_name(text(model, "model")?)?;
        let c = handle(config, "config")?;
        let config = GsaConfig {
            n: c.n,
            fit_n: c.fit_n,
            ref_n: c.ref_n,
            boot: c.boot,
            nodes: c.nodes,
            seed: c.seed,
            reference: c.reference,
            weights: kinds(weights, "weights")?,
            poince: kinds(poince, "poince")?,
        };
        let oracle = model.sobol_oracle();
        write(out, boxed(WpReport(build_report(&model, &config, oracle))))
    })
}

/// # Safety
/// `r` must be NULL or a live handle from [`wp_report_build`].
#[no_mangle]
pub unsafe extern "C" fn wp_report_free(r: *mut WpReport) {
    free(r);
}

/// Number of inputs and number of failed cells.
///
/// # Safety
/// Pointers must be valid; either output may be NULL.
#[no_mangle]
pub unsafe extern "C" fn wp_report_summary(r: *const WpReport, inputs: *mut usize, failures: *mut usize) -> WpStatus {
    guard(|| {
        let r = &handle(r, "report")?.0;
        if !inputs.is_null() {
            inputs.write(r.per_input.len());
        }
        if !failures.is_null() {
            failures.write(r.failures());
        }
        Ok(())
    })
}

unsafe fn input<'a>(r: *const WpReport, i: usize) -> std::result::Result<&'a wpgsa::gsa::InputReport, Failure> {
    let r = &handle(r, "report")?.0;
    r.per_input
        .get(i)
        .ok_or_else(|| Failure(WpStatus::OutOfRange, format!("input {i} outside 0..{}", r.per_input.len())))
}

fn cell<'a, T>(c: Option<&'a Cell<T>>, what: &str) -> std::result::Result<&'a T, Failure> {
    match c {
        Some(Cell::Value(v)) => Ok(v),
        Some(Cell::Error { error, .. }) => Err(Failure(WpStatus::CellError, error.clone())),
        None => Err(Failure(WpStatus::OutOfRange, format!("{what} was not requested"))),
    }
}

/// Reference (Jansen) total index of input `i`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn wp_report_reference(r: *const WpReport, i: usize, out: *mut f64) -> WpStatus {
    guard(|| {
        let v = input(r, i)?.s_tot_ref.ok_or_else(|| Failure(WpStatus::CellError, "no reference run".into()))?;
        write(out, v)
    })
}

/// Upper bound on the total index of input `i` for weight kind `kind`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn wp_report_bound(r: *const WpReport, i: usize, kind: *const c_char, out: *mut f64) -> WpStatus {
    guard(|| {
        let kind: WeightKind = text(kind, "kind")?.parse()?;
        write(out, cell(input(r, i)?.bounds.get(&kind), &format!("bound '{kind}'"))?.value)
    })
}

/// PoinCE approximations of the total index of input `i`. `der_based` is NaN
/// when the sample carries no gradients.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn wp_report_poince(
    r: *const WpReport,
    i: usize,
    kind: *const c_char,
    der_free: *mut f64,
    der_based: *mut f64,
) -> WpStatus {
    guard(|| {
        let kind: WeightKind = text(kind, "kind")?.parse()?;
        let a = cell(input(r, i)?.poince.get(&kind), &format!("PoinCE '{kind}'"))?;
        write(der_free, a.der_free)?;
        write(der_based, a.der_based.unwrap_or(f64::NAN))
    })
}

/// Report as a JSON string; release it with [`wp_string_free`].
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn wp_report_to_json(r: *const WpReport, out: *mut *mut c_char) -> WpStatus {
    guard(|| {
        let json = handle(r, "report")?.0.to_json()?;
        let c = CString::new(json).map_err(|e| Failure(WpStatus::Numerical, e.to_string()))?;
        write(out, c.into_raw())
    })
}

/// Jansen total indices of a built-in model written into `values[0..len]`.
/// `len` must be at least the model dimension, which is stored in `dim`.
///
/// # Safety
/// `values` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn wp_sobol_total(
    model: *const c_char,
    n: usize,
    seed: u64,
    values: *mut f64,
    len: usize,
    dim: *mut usize,
) -> WpStatus {
    guard(|| {
        let model = BuiltinModel::by_name(text(model, "model")?)?;
        write(dim, model.dim())?;
        if values.is_null() {
            return Err(null("values"));
        }
        if len < model.dim() {
            return Err(Failure(WpStatus::OutOfRange, format!("buffer holds {len} values, need {}", model.dim())));
        }
        let est = sobol_total_reference(&model, n, seed)?;
        std::slice::from_raw_parts_mut(values, len)[..model.dim()].copy_from_slice(&est.values());
        Ok(())
    })
}
