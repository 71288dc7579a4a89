use std::ffi::CStr;
use std::ptr;

use topoguard_ffi::*;

fn last_error() -> String {
    let p = tg_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn lri_doublet_through_handles() {
    let mut op = ptr::null_mut();
    assert_eq!(unsafe { tg_operator_lri(2, 1.0, 1.0, &mut op) }, TgStatus::Ok);
    assert!(tg_last_error_message().is_null());
    assert!(unsafe { tg_operator_num_terms(op) } > 0);

    let mut spec = ptr::null_mut();
    assert_eq!(unsafe { tg_ground_doublet(op, &mut spec) }, TgStatus::Ok);
    let mut deg = 0usize;
    let mut gap = 0.0;
    let mut e0 = 0.0;
    unsafe {
        assert_eq!(tg_spectrum_ground_degeneracy(spec, &mut deg), TgStatus::Ok);
        assert_eq!(tg_spectrum_gap(spec, &mut gap), TgStatus::Ok);
        assert_eq!(tg_spectrum_eigenvalue(spec, 0, &mut e0), TgStatus::Ok);
    }
    assert_eq!(deg, 2);
    // 4(√2 − 1) and −8 − 4√2 from the 2×2 closed form
    assert!((gap - 4.0 * (2f64.sqrt() - 1.0)).abs() < 1e-10);
    assert!((e0 + 8.0 + 4.0 * 2f64.sqrt()).abs() < 1e-10);

    let len = unsafe { tg_spectrum_len(spec) };
    assert_eq!(unsafe { tg_spectrum_eigenvalue(spec, len, &mut e0) }, TgStatus::OutOfRange);
    assert!(last_error().contains("level"));
    unsafe {
        tg_spectrum_free(spec);
        tg_operator_free(op);
    }
}

#[test]
fn sri_spectrum_matches_lri_on_two_by_two() {
    let (mut lri, mut sri) = (ptr::null_mut(), ptr::null_mut());
    let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
    let (mut ga, mut gb) = (0.0, 0.0);
    unsafe {
        assert_eq!(tg_operator_lri(2, 1.0, 1.0, &mut lri), TgStatus::Ok);
        assert_eq!(tg_operator_sri(2, 1.0, 1.0, false, 2.0, &mut sri), TgStatus::Ok);
        assert_eq!(tg_spectrum_compute(lri, &mut a), TgStatus::Ok);
        assert_eq!(tg_spectrum_compute(sri, &mut b), TgStatus::Ok);
        tg_spectrum_gap(a, &mut ga);
        tg_spectrum_gap(b, &mut gb);
        tg_spectrum_free(a);
        tg_spectrum_free(b);
        tg_operator_free(lri);
        tg_operator_free(sri);
    }
    assert!((ga - gb).abs() < 1e-12);
}

#[test]
fn error_codes() {
    let mut op = ptr::null_mut();
    assert_eq!(unsafe { tg_operator_lri(9, 1.0, 1.0, &mut op) }, TgStatus::InvalidLattice);
    assert!(op.is_null());
    assert!(last_error().contains("lattice"));
    assert_eq!(unsafe { tg_operator_lri(2, -1.0, 1.0, &mut op) }, TgStatus::InvalidParameter);
    assert_eq!(unsafe { tg_operator_lri(2, 1.0, 1.0, ptr::null_mut()) }, TgStatus::NullPointer);
    let mut spec = ptr::null_mut();
    assert_eq!(unsafe { tg_spectrum_compute(ptr::null(), &mut spec) }, TgStatus::NullPointer);
    let mut g = 0.0;
    assert_eq!(unsafe { tg_spectrum_gap(ptr::null(), &mut g) }, TgStatus::NullPointer);
    assert_eq!(unsafe { tg_spectrum_len(ptr::null()) }, 0);
    unsafe {
        tg_operator_free(ptr::null_mut());
        tg_spectrum_free(ptr::null_mut());
    }
}

#[test]
fn degenerate_ground_space_is_rejected() {
    // Jy = 0 leaves decoupled rows with a 2^N-fold ground space
    let mut op = ptr::null_mut();
    let mut spec = ptr::null_mut();
    unsafe {
        assert_eq!(tg_operator_lri(2, 1.0, 0.0, &mut op), TgStatus::Ok);
        assert_eq!(tg_ground_doublet(op, &mut spec), TgStatus::UnexpectedDegeneracy);
        assert!(spec.is_null());
        tg_operator_free(op);
    }
}

#[test]
fn rate_modes_and_splitting() {
    let mut rate = 0.0;
    assert_eq!(unsafe { tg_decoherence_rate(2.0, 3.0, 1.0, 4.0, 3, &mut rate) }, TgStatus::Ok);
    assert!((rate - 6.0 / 16.0).abs() < 1e-15);
    assert_eq!(unsafe { tg_decoherence_rate(2.0, 3.0, 1.0, 0.0, 3, &mut rate) }, TgStatus::InvalidParameter);

    let mut modes = [0.0; 2];
    assert_eq!(unsafe { tg_chain_modes(5, modes.as_mut_ptr(), modes.len()) }, TgStatus::Ok);
    assert!((modes[0] - 1.0).abs() < 1e-9 && (modes[1] - 3f64.sqrt()).abs() < 1e-9);

    let mut median = 1.0;
    assert_eq!(unsafe { tg_doublet_splitting(2, 1.0, 1.0, 0.0, 4, 7, &mut median) }, TgStatus::Ok);
    assert!(median.abs() < 1e-10);
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(tg_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
