//! C ABI over the capa library.
//!
//! Objects are opaque handles created by `capa_*_new` and released by the
//! matching `capa_*_free`. Every fallible call returns a [`CapaStatus`];
//! the message of the last failure on the calling thread is available from
//! [`capa_last_error`]. Panics never cross the boundary.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use capa::em_core::{orientation_from_euler, Carrier, PlanarAperture};
use capa::limits::{self, DofMethod, ModalDecomposition};
use capa::{Error, Vec3};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapaStatus {
    Ok = 0,
    NullPointer = 1,
    Domain = 2,
    Config = 3,
    RankDeficient = 4,
    Numerical = 5,
    Resonance = 6,
    Panic = 7,
}

/// Carrier frequency and derived constants.
pub struct CapaCarrier(Carrier);

/// A rectangular planar aperture in 3-D space.
pub struct CapaAperture(PlanarAperture);

/// Singular spectrum of a line-of-sight link.
pub struct CapaModes(ModalDecomposition);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
    Ok(s) => s,
    Err(_) => panic!("version string has an interior nul"),
};

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CapaStatus {
    match e {
        Error::Domain(_) => CapaStatus::Domain,
        Error::Config(_) | Error::Validation(_) | Error::Io(_) => CapaStatus::Config,
        Error::RankDeficient { .. } | Error::Refit { .. } => CapaStatus::RankDeficient,
        Error::Numerical(_) => CapaStatus::Numerical,
        Error::Resonance(_) => CapaStatus::Resonance,
        Error::Section { source, .. } => status_of(source),
    }
}

// Runs `f`, recording the error message and mapping panics.
fn guard(f: impl FnOnce() -> Result<(), CapaStatus>) -> CapaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CapaStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            CapaStatus::Panic
        }
    }
}

fn lib<T>(r: capa::Result<T>) -> Result<T, CapaStatus> {
    r.map_err(|e| {
        set_error(e.to_string());
        status_of(&e)
    })
}

fn null(what: &str) -> CapaStatus {
    set_error(format!("{what} is null"));
    CapaStatus::NullPointer
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, CapaStatus> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write<T>(out: *mut T, v: T, what: &str) -> Result<(), CapaStatus> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn capa_version() -> *const c_char {
    VERSION.as_ptr()
}

/// Message of the last failed call on this thread, or null if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn capa_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub unsafe extern "C" fn capa_carrier_new(frequency_hz: f64, out: *mut *mut CapaCarrier) -> CapaStatus {
    guard(|| {
        let c = lib(Carrier::new(frequency_hz))?;
        write(out, Box::into_raw(Box::new(CapaCarrier(c))), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn capa_carrier_free(carrier: *mut CapaCarrier) {
    if !carrier.is_null() {
        drop(Box::from_raw(carrier));
    }
}

/// Free-space wavelength in metres.
#[no_mangle]
pub unsafe extern "C" fn capa_carrier_wavelength(carrier: *const CapaCarrier, out: *mut f64) -> CapaStatus {
    guard(|| {
        let c = deref(carrier, "carrier")?;
        write(out, c.0.lambda(), "out")
    })
}

/// Aperture centred at `center_m[3]`, rotated by z-y-x Euler angles in
/// radians, with side lengths `len_x_m` and `len_z_m`.
#[no_mangle]
pub unsafe extern "C" fn capa_aperture_new(
    center_m: *const f64,
    euler_rad: *const f64,
    len_x_m: f64,
    len_z_m: f64,
    out: *mut *mut CapaAperture,
) -> CapaStatus {
    guard(|| {
        if center_m.is_null() {
            return Err(null("center_m"));
        }
        let c = std::slice::from_raw_parts(center_m, 3);
        let orientation = if euler_rad.is_null() {
            capa::em_core::Orientation::identity()
        } else {
            let e = std::slice::from_raw_parts(euler_rad, 3);
            orientation_from_euler(e[0], e[1], e[2])
        };
        let ap = lib(PlanarAperture::new(Vec3::new(c[0], c[1], c[2]), orientation, len_x_m, len_z_m))?;
        write(out, Box::into_raw(Box::new(CapaAperture(ap))), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn capa_aperture_free(aperture: *mut CapaAperture) {
    if !aperture.is_null() {
        drop(Box::from_raw(aperture));
    }
}

#[no_mangle]
pub unsafe extern "C" fn capa_aperture_area(aperture: *const CapaAperture, out: *mut f64) -> CapaStatus {
    guard(|| {
        let a = deref(aperture, "aperture")?;
        write(out, a.0.area(), "out")
    })
}

/// Landau degrees-of-freedom estimate at link distance `distance_m`,
/// using the receiver's orientation for the projection factor.
#[no_mangle]
pub unsafe extern "C" fn capa_landau_dof(
    tx: *const CapaAperture,
    rx: *const CapaAperture,
    distance_m: f64,
    carrier: *const CapaCarrier,
    out: *mut f64,
) -> CapaStatus {
    guard(|| {
        let (t, r, c) = (deref(tx, "tx")?, deref(rx, "rx")?, deref(carrier, "carrier")?);
        if !(distance_m > 0.0 && distance_m.is_finite()) {
            set_error(format!("distance must be positive, got {distance_m}"));
            return Err(CapaStatus::Domain);
        }
        write(out, limits::landau_dof(&t.0, &r.0, distance_m, &c.0, &r.0.orientation), "out")
    })
}

/// Leading singular spectrum of the LoS link with the automatically chosen
/// discretization; modes down to `threshold`·σ₁² are resolved.
#[no_mangle]
pub unsafe extern "C" fn capa_los_modes_new(
    tx: *const CapaAperture,
    rx: *const CapaAperture,
    carrier: *const CapaCarrier,
    threshold: f64,
    seed: u64,
    out: *mut *mut CapaModes,
) -> CapaStatus {
    guard(|| {
        let (t, r, c) = (deref(tx, "tx")?, deref(rx, "rx")?, deref(carrier, "carrier")?);
        let method: DofMethod = lib(limits::auto_dof_method(&t.0, &r.0, &c.0))?;
        let modes = lib(limits::los_spectrum(&t.0, &r.0, &c.0, method, threshold, seed))?;
        write(out, Box::into_raw(Box::new(CapaModes(modes))), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn capa_modes_free(modes: *mut CapaModes) {
    if !modes.is_null() {
        drop(Box::from_raw(modes));
    }
}

#[no_mangle]
pub unsafe extern "C" fn capa_modes_len(modes: *const CapaModes, out: *mut usize) -> CapaStatus {
    guard(|| {
        let m = deref(modes, "modes")?;
        write(out, m.0.singular_values.len(), "out")
    })
}

/// Copies up to `capacity` singular values (descending) into `values` and
/// stores the number copied in `written`.
#[no_mangle]
pub unsafe extern "C" fn capa_modes_singular_values(
    modes: *const CapaModes,
    values: *mut f64,
    capacity: usize,
    written: *mut usize,
) -> CapaStatus {
    guard(|| {
        let m = deref(modes, "modes")?;
        if values.is_null() && capacity > 0 {
            return Err(null("values"));
        }
        let n = capacity.min(m.0.singular_values.len());
        if n > 0 {
            ptr::copy_nonoverlapping(m.0.singular_values.as_ptr(), values, n);
        }
        write(written, n, "written")
    })
}

/// Modes with σ_n²/σ_1² at or above `threshold`.
#[no_mangle]
pub unsafe extern "C" fn capa_modes_dof(modes: *const CapaModes, threshold: f64, out: *mut usize) -> CapaStatus {
    guard(|| {
        let m = deref(modes, "modes")?;
        write(out, lib(limits::dof_count(&m.0, threshold))?, "out")
    })
}

/// Water-filling capacity in bits per channel use.
#[no_mangle]
pub unsafe extern "C" fn capa_modes_waterfill_capacity(modes: *const CapaModes, power: f64, noise: f64, out: *mut f64) -> CapaStatus {
    guard(|| {
        let m = deref(modes, "modes")?;
        write(out, lib(limits::waterfill(&m.0, power, noise))?.capacity_bits, "out")
    })
}

/// Kolmogorov information capacity in bits at resolution `epsilon`.
#[no_mangle]
pub unsafe extern "C" fn capa_kolmogorov_capacity(modes: *const CapaModes, power: f64, epsilon: f64, out: *mut f64) -> CapaStatus {
    guard(|| {
        let m = deref(modes, "modes")?;
        write(out, lib(limits::kolmogorov_capacity(&m.0, power, epsilon))?, "out")
    })
}

/// Kolmogorov capacity of an explicit descending singular spectrum.
#[no_mangle]
pub unsafe extern "C" fn capa_kolmogorov_capacity_sigmas(sigmas: *const f64, len: usize, power: f64, epsilon: f64, out: *mut f64) -> CapaStatus {
    guard(|| {
        if sigmas.is_null() && len > 0 {
            return Err(null("sigmas"));
        }
        let s = if len == 0 { &[][..] } else { std::slice::from_raw_parts(sigmas, len) };
        write(out, lib(limits::kolmogorov_sigmas(s, power, epsilon))?, "out")
    })
}

/// Gauss-Legendre nodes and weights on [-1, 1]; both buffers hold `order` values.
#[no_mangle]
pub unsafe extern "C" fn capa_gl_rule(order: usize, nodes: *mut f64, weights: *mut f64) -> CapaStatus {
    guard(|| {
        if nodes.is_null() {
            return Err(null("nodes"));
        }
        if weights.is_null() {
            return Err(null("weights"));
        }
        let rule = lib(capa::quadrature::gl_rule(order))?;
        ptr::copy_nonoverlapping(rule.nodes.as_ptr(), nodes, rule.order);
        ptr::copy_nonoverlapping(rule.weights.as_ptr(), weights, rule.order);
        Ok(())
    })
}
