//! C ABI over the topoguard engine.
//!
//! Operators and spectra are opaque handles returned through out-pointers
//! and released with the matching `*_free`. Every fallible call returns a
//! [`TgStatus`]; on failure a human-readable message is kept per thread and
//! can be read with [`tg_last_error_message`]. Panics never cross the
//! boundary and are reported as `TG_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use topoguard::eigensolver::{ground_doublet, sector_scan, Model, ScanOptions, SpectrumResult, DEGENERACY_REL_TOL};
use topoguard::hamiltonians::{Boundary, CouplingParams};
use topoguard::noise::{decoherence_rate, doublet_splitting, ProtectionParams};
use topoguard::pauli::{Lattice, OperatorSum};
use topoguard::phonons::chain_modes;
use topoguard::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidLattice = 2,
    InvalidParameter = 3,
    InvalidOperator = 4,
    DimensionExceeded = 5,
    NotConverged = 6,
    UnexpectedDegeneracy = 7,
    UnstableConfiguration = 8,
    IntegrationFailure = 9,
    OutOfRange = 10,
    Other = 11,
    Panic = 12,
}

impl From<&Error> for TgStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidLattice(_) => TgStatus::InvalidLattice,
            Error::InvalidParameter(_) | Error::Config(_) => TgStatus::InvalidParameter,
            Error::InvalidOperator(_) | Error::SymmetryMismatch(_) | Error::BasisMismatch(_) => TgStatus::InvalidOperator,
            Error::DimensionExceeded { .. } => TgStatus::DimensionExceeded,
            Error::NotConverged { .. } => TgStatus::NotConverged,
            Error::UnexpectedDegeneracy { .. } => TgStatus::UnexpectedDegeneracy,
            Error::UnstableConfiguration(_) => TgStatus::UnstableConfiguration,
            Error::IntegrationFailure { .. } => TgStatus::IntegrationFailure,
            Error::Trial { source, .. } => TgStatus::from(source.as_ref()),
            Error::AlgebraViolation { .. } | Error::Io(_) => TgStatus::Other,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (TgStatus, String)>) -> TgStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TgStatus::Ok,
        Ok(Err((status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("internal panic: {msg}"));
            TgStatus::Panic
        }
    }
}

fn lib<T>(r: topoguard::Result<T>) -> Result<T, (TgStatus, String)> {
    r.map_err(|e| (TgStatus::from(&e), e.to_string()))
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), (TgStatus, String)> {
    if p.is_null() {
        Err((TgStatus::NullPointer, format!("{name} is NULL")))
    } else {
        Ok(())
    }
}

/// A lattice Hamiltonian together with the model it was built from.
pub struct TgOperator {
    lattice: Lattice,
    params: CouplingParams,
    model: Model,
    op: OperatorSum,
}

/// Low-lying levels of an operator.
pub struct TgSpectrum {
    inner: SpectrumResult,
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn tg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tg_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version string"),
    };
    VERSION.as_ptr()
}

fn build_operator(n: usize, jx: f64, jy: f64, model: Model, out: *mut *mut TgOperator) -> TgStatus {
    guard(|| {
        non_null(out, "out")?;
        let lattice = lib(Lattice::new(n))?;
        let params = lib(CouplingParams::new(jx, jy))?;
        let op = lib(model.build(lattice, params))?;
        let handle = Box::new(TgOperator { lattice, params, model, op });
        // SAFETY: `out` was checked non-null and points to caller storage.
        unsafe { *out = Box::into_raw(handle) };
        Ok(())
    })
}

/// Builds the long-range (row/column all-to-all) Hamiltonian on an n×n lattice.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn tg_operator_lri(n: usize, jx: f64, jy: f64, out: *mut *mut TgOperator) -> TgStatus {
    build_operator(n, jx, jy, Model::Lri, out)
}

/// Builds the nearest-neighbour comparison Hamiltonian with prefactor
/// `normalization`; `periodic` selects wrapped boundaries.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn tg_operator_sri(
    n: usize,
    jx: f64,
    jy: f64,
    periodic: bool,
    normalization: f64,
    out: *mut *mut TgOperator,
) -> TgStatus {
    let boundary = if periodic { Boundary::Periodic } else { Boundary::Open };
    build_operator(n, jx, jy, Model::Sri { boundary, normalization }, out)
}

/// Number of Pauli terms in the operator, or 0 for NULL.
///
/// # Safety
/// `op` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn tg_operator_num_terms(op: *const TgOperator) -> usize {
    // SAFETY: caller guarantees `op` is NULL or live.
    unsafe { op.as_ref() }.map_or(0, |o| o.op.len())
}

/// Releases an operator. NULL is ignored.
///
/// # Safety
/// `op` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tg_operator_free(op: *mut TgOperator) {
    if !op.is_null() {
        // SAFETY: the handle came from Box::into_raw and is freed once.
        drop(unsafe { Box::from_raw(op) });
    }
}

fn store_spectrum(inner: SpectrumResult, out: *mut *mut TgSpectrum) {
    // SAFETY: callers check `out` before computing.
    unsafe { *out = Box::into_raw(Box::new(TgSpectrum { inner })) };
}

/// Lowest level of every symmetry sector plus the first excited level.
///
/// # Safety
/// `op` must be a live operator handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tg_spectrum_compute(op: *const TgOperator, out: *mut *mut TgSpectrum) -> TgStatus {
    guard(|| {
        non_null(op, "op")?;
        non_null(out, "out")?;
        // SAFETY: checked non-null; caller guarantees liveness.
        let o = unsafe { &*op };
        let opts = ScanOptions { deg_tol: Some(DEGENERACY_REL_TOL * o.params.max()), ..ScanOptions::default() };
        let scan = lib(sector_scan(&o.op, &opts))?;
        store_spectrum(scan.spectrum, out);
        Ok(())
    })
}

/// As `tg_spectrum_compute`, but fails with
/// `TG_STATUS_UNEXPECTED_DEGENERACY` unless the ground level is two-fold.
///
/// # Safety
/// `op` must be a live operator handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tg_ground_doublet(op: *const TgOperator, out: *mut *mut TgSpectrum) -> TgStatus {
    guard(|| {
        non_null(op, "op")?;
        non_null(out, "out")?;
        // SAFETY: checked non-null; caller guarantees liveness.
        let o = unsafe { &*op };
        let d = lib(ground_doublet(o.lattice, o.params, o.model))?;
        store_spectrum(d.spectrum, out);
        Ok(())
    })
}

/// Releases a spectrum. NULL is ignored.
///
/// # Safety
/// `s` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tg_spectrum_free(s: *mut TgSpectrum) {
    if !s.is_null() {
        // SAFETY: the handle came from Box::into_raw and is freed once.
        drop(unsafe { Box::from_raw(s) });
    }
}

fn with_spectrum(s: *const TgSpectrum, f: impl FnOnce(&SpectrumResult) -> Result<(), (TgStatus, String)>) -> TgStatus {
    guard(|| {
        non_null(s, "spectrum")?;
        // SAFETY: checked non-null; caller guarantees liveness.
        f(unsafe { &(*s).inner })
    })
}

/// Number of stored levels, or 0 for NULL.
///
/// # Safety
/// `s` must be NULL or a live spectrum handle.
#[no_mangle]
pub unsafe extern "C" fn tg_spectrum_len(s: *const TgSpectrum) -> usize {
    // SAFETY: caller guarantees `s` is NULL or live.
    unsafe { s.as_ref() }.map_or(0, |s| s.inner.eigenvalues.len())
}

/// Level `index` in ascending order.
///
/// # Safety
/// `s` must be a live spectrum handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tg_spectrum_eigenvalue(s: *const TgSpectrum, index: usize, out: *mut f64) -> TgStatus {
    with_spectrum(s, |sp| {
        non_null(out, "out")?;
        let v = *sp
            .eigenvalues
            .get(index)
            .ok_or_else(|| (TgStatus::OutOfRange, format!("level {index} of {}", sp.eigenvalues.len())))?;
        // SAFETY: checked non-null.
        unsafe { *out = v };
        Ok(())
    })
}

/// Gap between the ground level and the next level.
///
/// # Safety
/// `s` must be a live spectrum handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tg_spectrum_gap(s: *const TgSpectrum, out: *mut f64) -> TgStatus {
    with_spectrum(s, |sp| {
        non_null(out, "out")?;
        // SAFETY: checked non-null.
        unsafe { *out = sp.gap };
        Ok(())
    })
}

/// Multiplicity of the ground level.
///
/// # Safety
/// `s` must be a live spectrum handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tg_spectrum_ground_degeneracy(s: *const TgSpectrum, out: *mut usize) -> TgStatus {
    with_spectrum(s, |sp| {
        non_null(out, "out")?;
        // SAFETY: checked non-null.
        unsafe { *out = sp.ground_degeneracy };
        Ok(())
    })
}

/// `Γ = α_N·Γ₀·(b_max/Δ)^(N−1)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tg_decoherence_rate(
    gamma0: f64,
    alpha_n: f64,
    b_max: f64,
    delta_gap: f64,
    n: u32,
    out: *mut f64,
) -> TgStatus {
    guard(|| {
        non_null(out, "out")?;
        let rate = lib(decoherence_rate(&ProtectionParams { gamma0, alpha_n, b_max, delta_gap, n }))?;
        // SAFETY: checked non-null.
        unsafe { *out = rate };
        Ok(())
    })
}

/// Axial mode frequencies of an `n_ions` chain in units of the trap
/// frequency, ascending. Writes `min(len, n_ions)` values.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn tg_chain_modes(n_ions: usize, out: *mut f64, len: usize) -> TgStatus {
    guard(|| {
        non_null(out, "out")?;
        let m = lib(chain_modes(n_ions))?;
        // SAFETY: caller provides `len` writable doubles.
        let dst = unsafe { std::slice::from_raw_parts_mut(out, len) };
        for (d, f) in dst.iter_mut().zip(&m.mode_frequencies) {
            *d = *f;
        }
        Ok(())
    })
}

/// Median ground-doublet splitting of the long-range model under `trials`
/// random local fields of amplitude `b_max` (units of J).
///
/// # Safety
/// `out_median` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tg_doublet_splitting(
    n: usize,
    jx: f64,
    jy: f64,
    b_max: f64,
    trials: usize,
    seed: u64,
    out_median: *mut f64,
) -> TgStatus {
    guard(|| {
        non_null(out_median, "out_median")?;
        let lattice = lib(Lattice::new(n))?;
        let params = lib(CouplingParams::new(jx, jy))?;
        let stats = lib(doublet_splitting(lattice, params, b_max, trials, seed))?;
        // SAFETY: checked non-null.
        unsafe { *out_median = stats.median };
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_mapping() {
        assert_eq!(TgStatus::from(&Error::NotConverged { iterations: 1, best_residual: 1.0 }), TgStatus::NotConverged);
        let nested = Error::Trial { trial: 3, source: Box::new(Error::InvalidLattice("x".into())) };
        assert_eq!(TgStatus::from(&nested), TgStatus::InvalidLattice);
    }

    #[test]
    fn panics_become_status() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, TgStatus::Panic);
        let msg = unsafe { CStr::from_ptr(tg_last_error_message()) }.to_str().unwrap();
        assert!(msg.contains("boom"));
    }
}
