//! C interface to the certifier and the SVL design.
//!
//! Every function returns a [`DcStatus`]. Objects cross the boundary as opaque
//! handles that the caller releases with the matching `*_free` function. After a
//! failure, `dc_last_error` describes it until the next call on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use distcert::algolib::{catalog, AlgorithmName, CatalogParams, Realization};
use distcert::certifier::{certify_rate, Certificate, CertificateFile, ProblemClass};
use distcert::svl::{design, SvlDesign};
use distcert::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    UnknownAlgorithm = 4,
    Uncertifiable = 5,
    Infeasible = 6,
    SolverFailure = 7,
    Json = 8,
    Panic = 9,
    Other = 10,
}

pub struct DcRealization(Realization);

pub struct DcCertificate(Certificate);

pub struct DcSvlDesign(SvlDesign);

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct DcSvlParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub rho: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let text = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

fn status_of(e: &Error) -> DcStatus {
    match e {
        Error::UnknownAlgorithm(_) => DcStatus::UnknownAlgorithm,
        Error::Uncertifiable { .. } => DcStatus::Uncertifiable,
        Error::DesignInfeasible(_) | Error::Infeasible(_) | Error::NoLaplacian(_) => DcStatus::Infeasible,
        Error::Solver(_) | Error::Singular(_) | Error::Numeric(_) => DcStatus::SolverFailure,
        Error::Json(_) => DcStatus::Json,
        Error::InvalidParameter(_)
        | Error::MissingParameter { .. }
        | Error::InvalidAlgorithm(_)
        | Error::Dimension(_) => DcStatus::InvalidArgument,
        _ => DcStatus::Other,
    }
}

fn guard(f: impl FnOnce() -> Result<(), DcStatus>) -> DcStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DcStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            DcStatus::Panic
        }
    }
}

fn fail(e: Error) -> DcStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, DcStatus> {
    if p.is_null() {
        set_error("null string argument".into());
        return Err(DcStatus::NullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8".into());
        DcStatus::InvalidUtf8
    })
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), DcStatus> {
    if out.is_null() {
        set_error("null output pointer".into());
        return Err(DcStatus::NullPointer);
    }
    out.write(value);
    Ok(())
}

unsafe fn borrow<'a, T>(h: *const T) -> Result<&'a T, DcStatus> {
    h.as_ref().ok_or_else(|| {
        set_error("null handle".into());
        DcStatus::NullPointer
    })
}

fn to_c_string(s: String) -> Result<*mut c_char, DcStatus> {
    CString::new(s).map(CString::into_raw).map_err(|_| {
        set_error("string contains an interior nul".into());
        DcStatus::Other
    })
}

/// Message for the most recent failure on this thread, or null. Owned by the library.
#[no_mangle]
pub extern "C" fn dc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a catalog algorithm by name (`"EXTRA"`, `"NIDS"`, ...). SVL uses `dc_svl_design_realization`.
///
/// # Safety
/// `name` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dc_realization_catalog(
    name: *const c_char,
    alpha: f64,
    mu: f64,
    m: f64,
    l: f64,
    out: *mut *mut DcRealization,
) -> DcStatus {
    guard(|| {
        let name: AlgorithmName = read_str(name)?.parse().map_err(fail)?;
        let r = catalog(name, &CatalogParams::new(alpha, mu).with_class(m, l)).map_err(fail)?;
        write_out(out, Box::into_raw(Box::new(DcRealization(r))))
    })
}

/// Parses a realization from its JSON form.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dc_realization_from_json(json: *const c_char, out: *mut *mut DcRealization) -> DcStatus {
    guard(|| {
        let r = Realization::from_json(read_str(json)?).map_err(fail)?;
        write_out(out, Box::into_raw(Box::new(DcRealization(r))))
    })
}

/// # Safety
/// `h` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dc_realization_free(h: *mut DcRealization) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Smallest certified rate for `r` on the class with strong convexity `m`,
/// smoothness `l` and spectral gap bound `sigma`, up to bisection tolerance `tol`.
///
/// # Safety
/// `r` must be a live handle; `out_rho` a valid pointer; `out_cert` null or valid.
#[no_mangle]
pub unsafe extern "C" fn dc_certify(
    r: *const DcRealization,
    m: f64,
    l: f64,
    sigma: f64,
    tol: f64,
    out_rho: *mut f64,
    out_cert: *mut *mut DcCertificate,
) -> DcStatus {
    guard(|| {
        let r = borrow(r)?;
        if out_rho.is_null() {
            set_error("null output pointer".into());
            return Err(DcStatus::NullPointer);
        }
        let pc = ProblemClass::new(m, l, sigma).map_err(fail)?;
        let (rho, cert) = certify_rate(&r.0, &pc, tol).map_err(fail)?;
        out_rho.write(rho);
        if !out_cert.is_null() {
            out_cert.write(Box::into_raw(Box::new(DcCertificate(cert))));
        }
        Ok(())
    })
}

/// # Safety
/// `c` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dc_certificate_rho(c: *const DcCertificate) -> f64 {
    c.as_ref().map_or(f64::NAN, |c| c.0.rho)
}

/// Serializes the certificate matrices. Release the result with `dc_string_free`.
///
/// # Safety
/// `c` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dc_certificate_to_json(c: *const DcCertificate, out: *mut *mut c_char) -> DcStatus {
    guard(|| {
        let c = borrow(c)?;
        let text = serde_json::to_string(&CertificateFile::new(&c.0, None)).map_err(|e| fail(e.into()))?;
        write_out(out, to_c_string(text)?)
    })
}

/// # Safety
/// `h` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dc_certificate_free(h: *mut DcCertificate) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Designs SVL parameters for condition number `kappa` and gap bound `sigma`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dc_svl_design(kappa: f64, sigma: f64, eps: f64, out: *mut *mut DcSvlDesign) -> DcStatus {
    guard(|| {
        let pc = ProblemClass::from_kappa(kappa, sigma).map_err(fail)?;
        let d = design(&pc, eps).map_err(fail)?;
        write_out(out, Box::into_raw(Box::new(DcSvlDesign(d))))
    })
}

/// # Safety
/// `d` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dc_svl_design_params(d: *const DcSvlDesign, out: *mut DcSvlParams) -> DcStatus {
    guard(|| {
        let d = &borrow(d)?.0;
        write_out(
            out,
            DcSvlParams {
                alpha: d.alpha,
                beta: d.beta,
                gamma: d.gamma,
                delta: d.delta,
                rho: d.rho,
            },
        )
    })
}

/// Realization of a designed SVL instance, for use with `dc_certify`.
///
/// # Safety
/// `d` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dc_svl_design_realization(d: *const DcSvlDesign, out: *mut *mut DcRealization) -> DcStatus {
    guard(|| {
        let r = borrow(d)?.0.realization().map_err(fail)?;
        write_out(out, Box::into_raw(Box::new(DcRealization(r))))
    })
}

/// # Safety
/// `h` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dc_svl_design_free(h: *mut DcSvlDesign) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}
