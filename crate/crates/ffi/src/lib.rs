//! C ABI over the `mtoo` core: schemas, the KPI oracle, the decoded-vector
//! transform and trained VAE bundles.
//!
//! Every function returns an [`MtooStatus`]. On failure a message is kept per
//! thread and can be read with [`mtoo_last_error_message`]. Handles are opaque
//! and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use mtoo::dataset::{encode_combined, CombinedVector};
use mtoo::machine_models::{
    evaluate_kpis, validate_geometry, GeometryRule, MachineDesign, Profile, SchemaSet,
    SystemParameters,
};
use mtoo::moo::{latent_objective, transform_decoded};
use mtoo::vae::VaeBundle;
use mtoo::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MtooStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    UnknownProfile = 4,
    UnknownTechnology = 5,
    InvalidGeometry = 6,
    NonFinite = 7,
    Format = 8,
    Io = 9,
    Panic = 10,
    Other = 11,
}

/// Bit set in the rule mask of [`mtoo_validate_geometry`].
pub const MTOO_RULE_G1: u32 = 1;
pub const MTOO_RULE_G2: u32 = 2;
pub const MTOO_RULE_G3: u32 = 4;

/// The two technology schemas of one profile.
pub struct MtooSchemas {
    inner: SchemaSet,
}

/// A trained VAE bundle together with the schemas it was checked against.
pub struct MtooBundle {
    bundle: VaeBundle,
    schemas: SchemaSet,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MtooStatus {
    match e {
        Error::UnknownProfile(_) => MtooStatus::UnknownProfile,
        Error::UnknownTechnology(_) => MtooStatus::UnknownTechnology,
        Error::InvalidGeometry(_) => MtooStatus::InvalidGeometry,
        Error::NonFinite(_) | Error::NanLoss { .. } => MtooStatus::NonFinite,
        Error::DimensionMismatch { .. } | Error::SchemaMismatch(_) => MtooStatus::DimensionMismatch,
        Error::InvalidArgument(_) | Error::Config { .. } => MtooStatus::InvalidArgument,
        Error::Format(_) | Error::Json(_) | Error::Csv(_) => MtooStatus::Format,
        Error::Io { .. } => MtooStatus::Io,
        _ => MtooStatus::Other,
    }
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MtooStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MtooStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            MtooStatus::NullPointer
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            MtooStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    unsafe { p.as_ref() }.ok_or(Fail::Null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

unsafe fn write_out(src: &[f64], out: *mut f64, out_len: usize, what: &'static str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null(what));
    }
    if out_len != src.len() {
        return Err(Error::DimensionMismatch {
            expected: src.len(),
            actual: out_len,
            context: what.to_string(),
        }
        .into());
    }
    unsafe { ptr::copy_nonoverlapping(src.as_ptr(), out, src.len()) };
    Ok(())
}

unsafe fn c_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Error::InvalidArgument(format!("{what} is not UTF-8")).into())
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mtoo_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Schemas for `"desk"` or `"paper_shape"`.
///
/// # Safety
/// `profile` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mtoo_schemas_new(profile: *const c_char, out: *mut *mut MtooSchemas) -> MtooStatus {
    guard(|| {
        let name = unsafe { c_str(profile, "profile") }?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let p: Profile = name.parse()?;
        let h = Box::new(MtooSchemas {
            inner: SchemaSet::for_profile(p),
        });
        unsafe { *out = Box::into_raw(h) };
        Ok(())
    })
}

/// # Safety
/// `schemas` must come from [`mtoo_schemas_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mtoo_schemas_free(schemas: *mut MtooSchemas) {
    if !schemas.is_null() {
        drop(unsafe { Box::from_raw(schemas) });
    }
}

/// Length of the combined vector (tag plus both blocks).
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mtoo_schemas_combined_dim(schemas: *const MtooSchemas, out: *mut usize) -> MtooStatus {
    guard(|| {
        let s = unsafe { as_ref(schemas, "schemas") }?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        unsafe { *out = s.inner.combined_dim() };
        Ok(())
    })
}

/// Native parameter count of one technology (1 = ASM, 2 = PMSM).
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mtoo_schemas_native_dim(
    schemas: *const MtooSchemas,
    technology_id: i64,
    out: *mut usize,
) -> MtooStatus {
    guard(|| {
        let s = unsafe { as_ref(schemas, "schemas") }?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let d = s.inner.get(technology_id)?.native_dim();
        unsafe { *out = d };
        Ok(())
    })
}

fn design_from_native(s: &SchemaSet, technology_id: i64, native: &[f64]) -> Result<MachineDesign, Fail> {
    let schema = s.get(technology_id)?;
    if native.len() != schema.native_dim() {
        return Err(Error::DimensionMismatch {
            expected: schema.native_dim(),
            actual: native.len(),
            context: "native design vector".into(),
        }
        .into());
    }
    if native.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("native design vector".into()).into());
    }
    let n_cont = schema.continuous.len();
    let mut discrete = Vec::with_capacity(schema.discrete.len());
    for &v in &native[n_cont..] {
        if v.fract() != 0.0 {
            return Err(Error::InvalidArgument(format!("discrete value {v} is not an integer")).into());
        }
        discrete.push(v as i64);
    }
    Ok(MachineDesign::new(technology_id, native[..n_cont].to_vec(), discrete))
}

/// Geometry check of a native design. `out_valid` receives 1 or 0 and
/// `out_mask` the violated rules as `MTOO_RULE_*` bits.
///
/// # Safety
/// `native` must hold `len` values; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn mtoo_validate_geometry(
    schemas: *const MtooSchemas,
    technology_id: i64,
    native: *const f64,
    len: usize,
    out_valid: *mut i32,
    out_mask: *mut u32,
) -> MtooStatus {
    guard(|| {
        let s = unsafe { as_ref(schemas, "schemas") }?;
        let x = unsafe { slice(native, len, "native") }?;
        if out_valid.is_null() || out_mask.is_null() {
            return Err(Fail::Null("out"));
        }
        let design = design_from_native(&s.inner, technology_id, x)?;
        let report = validate_geometry(&design, &s.inner)?;
        let mask = report.violated.iter().fold(0, |m, r| {
            m | match r {
                GeometryRule::G1 => MTOO_RULE_G1,
                GeometryRule::G2 => MTOO_RULE_G2,
                GeometryRule::G3 => MTOO_RULE_G3,
            }
        });
        unsafe {
            *out_valid = i32::from(report.valid);
            *out_mask = mask;
        }
        Ok(())
    })
}

/// Oracle KPIs (cost, power in kW, torque in Nm) of a valid native design under
/// the default system parameters. `out_kpis` must hold 3 values.
///
/// # Safety
/// `native` must hold `len` values and `out_kpis` three.
#[no_mangle]
pub unsafe extern "C" fn mtoo_evaluate_kpis(
    schemas: *const MtooSchemas,
    technology_id: i64,
    native: *const f64,
    len: usize,
    out_kpis: *mut f64,
) -> MtooStatus {
    guard(|| {
        let s = unsafe { as_ref(schemas, "schemas") }?;
        let x = unsafe { slice(native, len, "native") }?;
        let design = design_from_native(&s.inner, technology_id, x)?;
        let k = evaluate_kpis(&design, &s.inner, &SystemParameters::default())?;
        unsafe { write_out(&k.to_array(), out_kpis, 3, "kpis") }
    })
}

/// Snaps a raw decoder output onto the combined design space.
///
/// # Safety
/// `raw` holds `len` values, `out` holds `out_len`; both equal the combined dim.
#[no_mangle]
pub unsafe extern "C" fn mtoo_transform_decoded(
    schemas: *const MtooSchemas,
    raw: *const f64,
    len: usize,
    out: *mut f64,
    out_len: usize,
) -> MtooStatus {
    guard(|| {
        let s = unsafe { as_ref(schemas, "schemas") }?;
        let x = unsafe { slice(raw, len, "raw") }?;
        let v = transform_decoded(x, &s.inner)?;
        unsafe { write_out(&v.0, out, out_len, "transformed") }
    })
}

/// Combined vector of a native design: tag, active block, zeros elsewhere.
///
/// # Safety
/// `native` holds `len` values, `out` holds `out_len`.
#[no_mangle]
pub unsafe extern "C" fn mtoo_encode_combined(
    schemas: *const MtooSchemas,
    technology_id: i64,
    native: *const f64,
    len: usize,
    out: *mut f64,
    out_len: usize,
) -> MtooStatus {
    guard(|| {
        let s = unsafe { as_ref(schemas, "schemas") }?;
        let x = unsafe { slice(native, len, "native") }?;
        let design = design_from_native(&s.inner, technology_id, x)?;
        let v = encode_combined(&design, &s.inner)?;
        unsafe { write_out(&v.0, out, out_len, "combined") }
    })
}

/// Loads a VAE bundle file and checks it against `schemas`.
///
/// # Safety
/// `path` is a nul-terminated path; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mtoo_bundle_load(
    path: *const c_char,
    schemas: *const MtooSchemas,
    out: *mut *mut MtooBundle,
) -> MtooStatus {
    guard(|| {
        let p = unsafe { c_str(path, "path") }?;
        let s = unsafe { as_ref(schemas, "schemas") }?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let bundle = VaeBundle::load(Path::new(p), &s.inner)?;
        let h = Box::new(MtooBundle {
            bundle,
            schemas: s.inner.clone(),
        });
        unsafe { *out = Box::into_raw(h) };
        Ok(())
    })
}

/// # Safety
/// `bundle` must come from [`mtoo_bundle_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mtoo_bundle_free(bundle: *mut MtooBundle) {
    if !bundle.is_null() {
        drop(unsafe { Box::from_raw(bundle) });
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mtoo_bundle_latent_dim(bundle: *const MtooBundle, out: *mut usize) -> MtooStatus {
    guard(|| {
        let b = unsafe { as_ref(bundle, "bundle") }?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        unsafe { *out = b.bundle.latent_dim() };
        Ok(())
    })
}

/// Posterior mean and standard deviation of a combined vector.
///
/// # Safety
/// `x` holds `len` values; `out_mean` and `out_sigma` hold `latent_len` each.
#[no_mangle]
pub unsafe extern "C" fn mtoo_bundle_encode(
    bundle: *const MtooBundle,
    x: *const f64,
    len: usize,
    out_mean: *mut f64,
    out_sigma: *mut f64,
    latent_len: usize,
) -> MtooStatus {
    guard(|| {
        let b = unsafe { as_ref(bundle, "bundle") }?;
        let x = unsafe { slice(x, len, "x") }?;
        let d = b.bundle.encode(&CombinedVector(x.to_vec()))?;
        unsafe {
            write_out(&d.mean, out_mean, latent_len, "mean")?;
            write_out(&d.sigma, out_sigma, latent_len, "sigma")
        }
    })
}

/// Raw (untransformed) decoder output in native units.
///
/// # Safety
/// `z` holds `len` values, `out` holds `out_len`.
#[no_mangle]
pub unsafe extern "C" fn mtoo_bundle_decode(
    bundle: *const MtooBundle,
    z: *const f64,
    len: usize,
    out: *mut f64,
    out_len: usize,
) -> MtooStatus {
    guard(|| {
        let b = unsafe { as_ref(bundle, "bundle") }?;
        let z = unsafe { slice(z, len, "z") }?;
        let v = b.bundle.decode(z)?;
        unsafe { write_out(&v.0, out, out_len, "decoded") }
    })
}

/// Predicted KPIs at a latent point. `out_kpis` holds 3 values.
///
/// # Safety
/// `z` holds `len` values.
#[no_mangle]
pub unsafe extern "C" fn mtoo_bundle_predict_kpis(
    bundle: *const MtooBundle,
    z: *const f64,
    len: usize,
    out_kpis: *mut f64,
) -> MtooStatus {
    guard(|| {
        let b = unsafe { as_ref(bundle, "bundle") }?;
        let z = unsafe { slice(z, len, "z") }?;
        let k = b.bundle.predict_kpis(z)?;
        unsafe { write_out(&k.to_array(), out_kpis, 3, "kpis") }
    })
}

/// The optimizer's objective path: decode, transform, re-encode, predict.
/// Writes the KPIs (3 values) and the transformed combined design.
///
/// # Safety
/// `z` holds `len` values, `out_kpis` three, `out_design` `design_len`.
#[no_mangle]
pub unsafe extern "C" fn mtoo_bundle_latent_objective(
    bundle: *const MtooBundle,
    z: *const f64,
    len: usize,
    out_kpis: *mut f64,
    out_design: *mut f64,
    design_len: usize,
) -> MtooStatus {
    guard(|| {
        let b = unsafe { as_ref(bundle, "bundle") }?;
        let z = unsafe { slice(z, len, "z") }?;
        let (k, v) = latent_objective(&b.bundle, &b.schemas, z)?;
        unsafe {
            write_out(&k.to_array(), out_kpis, 3, "kpis")?;
            write_out(&v.0, out_design, design_len, "design")
        }
    })
}
