//! C ABI over the comvol library.
//!
//! Conventions:
//!
//! * Handles (`ComvolModel`, `ComvolEngine`) are opaque pointers created and
//!   released by the paired `_free` functions. They are immutable after
//!   construction and safe to share across threads for reads.
//! * Every fallible call returns a [`ComvolStatus`]; outputs go through
//!   `out` pointers that are written only on `Ok`.
//! * `comvol_last_error_message` copies the thread-local message of the most
//!   recent failure on the calling thread.
//!
//! The matching header is generated into `include/comvol.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use comvol::error::Error;
use comvol::pricing::PricingEngine;
use comvol::spot::CalibratedSpotModel;

/// Status codes of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComvolStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    InvalidInput = 5,
    Domain = 6,
    Numerical = 7,
    NotConverged = 8,
    SchemaMismatch = 9,
    Panic = 10,
}

/// Opaque calibrated model handle.
pub struct ComvolModel(CalibratedSpotModel);

/// Opaque pricing-engine handle (model plus solved call surface).
pub struct ComvolEngine(PricingEngine);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap_or_default());
}

fn status_of(err: &Error) -> ComvolStatus {
    match err {
        Error::Io(_) => ComvolStatus::Io,
        Error::Parse { .. } | Error::Json(_) => ComvolStatus::Parse,
        Error::InvalidInput { .. } => ComvolStatus::InvalidInput,
        Error::Domain { .. } => ComvolStatus::Domain,
        Error::Numerical { .. } => ComvolStatus::Numerical,
        Error::NotConverged { .. } => ComvolStatus::NotConverged,
        Error::SchemaMismatch { .. } => ComvolStatus::SchemaMismatch,
    }
}

fn guarded<F: FnOnce() -> ComvolStatus>(f: F) -> ComvolStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            ComvolStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, ComvolStatus> {
    if ptr.is_null() {
        set_error("null string pointer");
        return Err(ComvolStatus::NullPointer);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string is not valid UTF-8");
        ComvolStatus::InvalidUtf8
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn comvol_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copy the last error message of this thread into `buf` (truncated to
/// `len − 1` bytes, always NUL-terminated). Returns the full message length.
#[no_mangle]
pub unsafe extern "C" fn comvol_last_error_message(buf: *mut c_char, len: usize) -> usize {
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

/// Load a calibrated model from a JSON file.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn comvol_model_load(path: *const c_char, out: *mut *mut ComvolModel) -> ComvolStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output pointer");
            return ComvolStatus::NullPointer;
        }
        let path = match read_str(path) {
            Ok(s) => s,
            Err(status) => return status,
        };
        match CalibratedSpotModel::load(Path::new(path)) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(ComvolModel(model)));
                ComvolStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Parse a calibrated model from a JSON string.
///
/// # Safety
/// `json` must be a valid NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn comvol_model_from_json(json: *const c_char, out: *mut *mut ComvolModel) -> ComvolStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output pointer");
            return ComvolStatus::NullPointer;
        }
        let text = match read_str(json) {
            Ok(s) => s,
            Err(status) => return status,
        };
        match CalibratedSpotModel::from_json(text) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(ComvolModel(model)));
                ComvolStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Release a model handle. Passing NULL is a no-op.
///
/// # Safety
/// `model` must come from a `comvol_model_*` constructor and not be reused.
#[no_mangle]
pub unsafe extern "C" fn comvol_model_free(model: *mut ComvolModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Solve the pricing PDE out to `horizon` years and return an engine handle.
///
/// # Safety
/// `model` must be a live model handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn comvol_engine_build(
    model: *const ComvolModel,
    horizon: f64,
    out: *mut *mut ComvolEngine,
) -> ComvolStatus {
    guarded(|| {
        if model.is_null() || out.is_null() {
            set_error("null handle");
            return ComvolStatus::NullPointer;
        }
        match PricingEngine::build((*model).0.clone(), horizon, &[], &[]) {
            Ok(engine) => {
                *out = Box::into_raw(Box::new(ComvolEngine(engine)));
                ComvolStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Release an engine handle. Passing NULL is a no-op.
///
/// # Safety
/// `engine` must come from `comvol_engine_build` and not be reused.
#[no_mangle]
pub unsafe extern "C" fn comvol_engine_free(engine: *mut ComvolEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Future-style vanilla price at (expiry `t`, futures maturity, strike).
///
/// # Safety
/// `engine` must be a live engine handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn comvol_price_vanilla_future_style(
    engine: *const ComvolEngine,
    t: f64,
    maturity: f64,
    strike: f64,
    out: *mut f64,
) -> ComvolStatus {
    guarded(|| {
        if engine.is_null() || out.is_null() {
            set_error("null handle");
            return ComvolStatus::NullPointer;
        }
        match (*engine).0.price_vanilla_future_style(t, maturity, strike) {
            Ok(v) => {
                *out = v;
                ComvolStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Black-76 implied vol of the future-style price at a strike.
///
/// # Safety
/// `engine` must be a live engine handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn comvol_implied_futures_vol(
    engine: *const ComvolEngine,
    t: f64,
    maturity: f64,
    strike: f64,
    out: *mut f64,
) -> ComvolStatus {
    guarded(|| {
        if engine.is_null() || out.is_null() {
            set_error("null handle");
            return ComvolStatus::NullPointer;
        }
        match (*engine).0.implied_futures_vol(t, maturity, strike) {
            Ok(v) => {
                *out = v;
                ComvolStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Closed-form future-style calendar-spread option price.
///
/// # Safety
/// `engine` must be a live engine handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn comvol_price_cso(
    engine: *const ComvolEngine,
    t_exercise: f64,
    t1: f64,
    t2: f64,
    strike: f64,
    out: *mut f64,
) -> ComvolStatus {
    guarded(|| {
        if engine.is_null() || out.is_null() {
            set_error("null handle");
            return ComvolStatus::NullPointer;
        }
        match comvol::exotics::price_cso_closed_form(&(*engine).0, t_exercise, t1, t2, strike) {
            Ok(v) => {
                *out = v;
                ComvolStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Normalized Black call price (total function, no failure path).
#[no_mangle]
pub extern "C" fn comvol_black_call(t: f64, k: f64, sigma: f64) -> f64 {
    comvol::black::black_call(t, k, sigma)
}

/// Invert a normalized Black call price for its implied volatility.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn comvol_implied_vol(price: f64, t: f64, k: f64, out: *mut f64) -> ComvolStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output pointer");
            return ComvolStatus::NullPointer;
        }
        match comvol::black::implied_vol(price, t, k) {
            Ok(v) => {
                *out = v;
                ComvolStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use comvol::calib::LocalVolSurface;
    use comvol::market::FuturesCurve;
    use comvol::spot::MeanReversion;

    fn model_json() -> CString {
        let curve = FuturesCurve::new(vec![(0.0, 100.0), (2.0, 100.0)]).unwrap();
        let lv = LocalVolSurface::from_nodes(vec![(1.0, vec![(1.0, 0.2)])], 1e-4, 5.0).unwrap();
        let model = CalibratedSpotModel::new(
            curve,
            MeanReversion::constant(0.5),
            lv,
            comvol::pde::GridSpec::default(),
            None,
        );
        CString::new(model.to_json().unwrap()).unwrap()
    }

    #[test]
    fn version_is_a_c_string() {
        let v = unsafe { CStr::from_ptr(comvol_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn end_to_end_pricing_through_the_abi() {
        let json = model_json();
        let mut model: *mut ComvolModel = std::ptr::null_mut();
        let status = unsafe { comvol_model_from_json(json.as_ptr(), &mut model) };
        assert_eq!(status, ComvolStatus::Ok);
        assert!(!model.is_null());

        let mut engine: *mut ComvolEngine = std::ptr::null_mut();
        assert_eq!(unsafe { comvol_engine_build(model, 1.0, &mut engine) }, ComvolStatus::Ok);

        let mut price = 0.0;
        assert_eq!(
            unsafe { comvol_price_vanilla_future_style(engine, 0.5, 1.0, 0.0, &mut price) },
            ComvolStatus::Ok
        );
        assert!((price - 100.0).abs() < 1e-6, "zero-strike call should return the forward, got {price}");

        let mut vol = 0.0;
        assert_eq!(
            unsafe { comvol_implied_futures_vol(engine, 0.5, 1.0, 100.0, &mut vol) },
            ComvolStatus::Ok
        );
        assert!(vol > 0.1 && vol < 0.3, "vol={vol}");

        let mut cso = 0.0;
        assert_eq!(unsafe { comvol_price_cso(engine, 0.4, 0.5, 0.75, 0.0, &mut cso) }, ComvolStatus::Ok);
        assert!(cso >= 0.0);

        unsafe {
            comvol_engine_free(engine);
            comvol_model_free(model);
        }
    }

    #[test]
    fn schema_mismatch_maps_to_its_code_and_message() {
        let bad = CString::new(
            model_json().to_str().unwrap().replace("\"schema_version\": 1", "\"schema_version\": 3"),
        )
        .unwrap();
        let mut model: *mut ComvolModel = std::ptr::null_mut();
        let status = unsafe { comvol_model_from_json(bad.as_ptr(), &mut model) };
        assert_eq!(status, ComvolStatus::SchemaMismatch);
        let mut buf = [0 as c_char; 256];
        let n = unsafe { comvol_last_error_message(buf.as_mut_ptr(), buf.len()) };
        assert!(n > 0);
        let msg = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap();
        assert!(msg.contains("schema"), "{msg}");
    }

    #[test]
    fn null_pointers_are_rejected() {
        let mut out = 0.0;
        assert_eq!(
            unsafe { comvol_price_vanilla_future_style(std::ptr::null(), 0.5, 1.0, 1.0, &mut out) },
            ComvolStatus::NullPointer
        );
        let mut model: *mut ComvolModel = std::ptr::null_mut();
        assert_eq!(
            unsafe { comvol_model_load(std::ptr::null(), &mut model) },
            ComvolStatus::NullPointer
        );
        unsafe { comvol_model_free(std::ptr::null_mut()) }; // no-op
    }

    #[test]
    fn domain_errors_cross_the_boundary() {
        let json = model_json();
        let mut model: *mut ComvolModel = std::ptr::null_mut();
        unsafe { comvol_model_from_json(json.as_ptr(), &mut model) };
        let mut engine: *mut ComvolEngine = std::ptr::null_mut();
        unsafe { comvol_engine_build(model, 1.0, &mut engine) };
        let mut out = 0.0;
        // expiry beyond the solved horizon
        let status = unsafe { comvol_price_vanilla_future_style(engine, 1.5, 2.0, 100.0, &mut out) };
        assert_eq!(status, ComvolStatus::Domain);
        unsafe {
            comvol_engine_free(engine);
            comvol_model_free(model);
        }
    }

    #[test]
    fn model_load_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        std::fs::write(&path, model_json().to_str().unwrap()).unwrap();
        let c_path = CString::new(path.to_str().unwrap()).unwrap();
        let mut model: *mut ComvolModel = std::ptr::null_mut();
        assert_eq!(unsafe { comvol_model_load(c_path.as_ptr(), &mut model) }, ComvolStatus::Ok);
        unsafe { comvol_model_free(model) };

        let missing = CString::new("/nonexistent/model.json").unwrap();
        let mut model2: *mut ComvolModel = std::ptr::null_mut();
        assert_eq!(unsafe { comvol_model_load(missing.as_ptr(), &mut model2) }, ComvolStatus::Io);
    }
}
