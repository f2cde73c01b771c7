//! C ABI over the monitoring primitives: STL formula parsing and robustness,
//! non-conformity score sets, conformal thresholds, and the adaptive
//! conformal significance-level state.
//!
//! Conventions: every constructor writes an opaque handle through an out
//! pointer and returns a status code; handles are freed with the matching
//! `*_free` function (null is accepted); threshold out-values use IEEE
//! infinities for the unbounded cases.

use safemon::conformal::{acp_threshold, icp_threshold, rcp_threshold, AcpState, NcsSet};
use safemon::stl::{self, parse_formula, StlFormula};
use safemon::trace::Trace;
use std::ffi::{c_char, CStr};

/// Status code returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SafemonStatus {
    Ok = 0,
    NullArgument = 1,
    Utf8 = 2,
    ParseError = 3,
    EvalError = 4,
    InvalidArgument = 5,
    CalibrationTooSmall = 6,
}

/// Opaque parsed STL formula.
pub struct SafemonFormula(StlFormula);

/// Opaque sorted non-conformity score set.
pub struct SafemonNcsSet(NcsSet);

/// Opaque adaptive conformal significance-level state.
pub struct SafemonAcp(AcpState);

fn threshold_error(e: safemon::conformal::ConformalError) -> SafemonStatus {
    use safemon::conformal::ConformalError::*;
    match e {
        EmptySet | CalibrationTooSmall { .. } => SafemonStatus::CalibrationTooSmall,
        _ => SafemonStatus::InvalidArgument,
    }
}

unsafe fn write_out<T>(out: *mut T, value: T) -> SafemonStatus {
    if out.is_null() {
        return SafemonStatus::NullArgument;
    }
    unsafe { out.write(value) };
    SafemonStatus::Ok
}

/// Parses an STL formula over `state_dim`-dimensional states.
///
/// # Safety
/// `text` must be a valid NUL-terminated string; `out` must be a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn safemon_formula_parse(
    text: *const c_char,
    state_dim: usize,
    out: *mut *mut SafemonFormula,
) -> SafemonStatus {
    if text.is_null() || out.is_null() {
        return SafemonStatus::NullArgument;
    }
    let s = match unsafe { CStr::from_ptr(text) }.to_str() {
        Ok(s) => s,
        Err(_) => return SafemonStatus::Utf8,
    };
    match parse_formula(s, state_dim) {
        Ok(f) => unsafe { write_out(out, Box::into_raw(Box::new(SafemonFormula(f)))) },
        Err(_) => SafemonStatus::ParseError,
    }
}

/// Frees a formula handle; null is a no-op.
///
/// # Safety
/// `f` must be null or a pointer from `safemon_formula_parse`.
#[no_mangle]
pub unsafe extern "C" fn safemon_formula_free(f: *mut SafemonFormula) {
    if !f.is_null() {
        drop(unsafe { Box::from_raw(f) });
    }
}

/// Number of future steps the formula needs beyond the evaluation instant.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn safemon_formula_horizon(
    f: *const SafemonFormula,
    out: *mut usize,
) -> SafemonStatus {
    if f.is_null() {
        return SafemonStatus::NullArgument;
    }
    unsafe { write_out(out, (*f).0.required_horizon()) }
}

/// Quantitative robustness of the formula at time `t` of a row-major
/// `steps x dim` signal sampled every `dt` seconds.
///
/// # Safety
/// `data` must point to `steps * dim` doubles; other pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn safemon_formula_robustness(
    f: *const SafemonFormula,
    data: *const f64,
    steps: usize,
    dim: usize,
    dt: f64,
    t: usize,
    out: *mut f64,
) -> SafemonStatus {
    if f.is_null() || data.is_null() {
        return SafemonStatus::NullArgument;
    }
    if steps == 0 || dim == 0 {
        return SafemonStatus::InvalidArgument;
    }
    let flat = unsafe { std::slice::from_raw_parts(data, steps * dim) };
    let states: Vec<Vec<f64>> = flat.chunks(dim).map(|c| c.to_vec()).collect();
    let trace = match Trace::new(states, dt) {
        Ok(tr) => tr,
        Err(_) => return SafemonStatus::InvalidArgument,
    };
    match stl::robustness(&unsafe { &*f }.0, &trace, t) {
        Ok(r) => unsafe { write_out(out, r) },
        Err(_) => SafemonStatus::EvalError,
    }
}

/// Builds a score set from `n` doubles (`n = 0` gives an empty set).
///
/// # Safety
/// `scores` must point to `n` doubles (or be null when `n = 0`); `out` must
/// be valid.
#[no_mangle]
pub unsafe extern "C" fn safemon_ncs_new(
    scores: *const f64,
    n: usize,
    out: *mut *mut SafemonNcsSet,
) -> SafemonStatus {
    if out.is_null() || (scores.is_null() && n > 0) {
        return SafemonStatus::NullArgument;
    }
    let v = if n == 0 {
        Vec::new()
    } else {
        unsafe { std::slice::from_raw_parts(scores, n) }.to_vec()
    };
    if v.iter().any(|x| x.is_nan()) {
        return SafemonStatus::InvalidArgument;
    }
    unsafe { write_out(out, Box::into_raw(Box::new(SafemonNcsSet(NcsSet::from_scores(v))))) }
}

/// Frees a score-set handle; null is a no-op.
///
/// # Safety
/// `s` must be null or a pointer from `safemon_ncs_new`.
#[no_mangle]
pub unsafe extern "C" fn safemon_ncs_free(s: *mut SafemonNcsSet) {
    if !s.is_null() {
        drop(unsafe { Box::from_raw(s) });
    }
}

/// Inserts one score, keeping the set sorted.
///
/// # Safety
/// `s` must be a valid score-set handle.
#[no_mangle]
pub unsafe extern "C" fn safemon_ncs_insert(s: *mut SafemonNcsSet, score: f64) -> SafemonStatus {
    if s.is_null() {
        return SafemonStatus::NullArgument;
    }
    if score.is_nan() {
        return SafemonStatus::InvalidArgument;
    }
    unsafe { &mut *s }.0.insert(score);
    SafemonStatus::Ok
}

/// Number of scores in the set.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn safemon_ncs_len(s: *const SafemonNcsSet, out: *mut usize) -> SafemonStatus {
    if s.is_null() {
        return SafemonStatus::NullArgument;
    }
    unsafe { write_out(out, (*s).0.len()) }
}

/// Inductive conformal threshold at miscoverage `delta`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn safemon_icp_threshold(
    s: *const SafemonNcsSet,
    delta: f64,
    out: *mut f64,
) -> SafemonStatus {
    if s.is_null() {
        return SafemonStatus::NullArgument;
    }
    match icp_threshold(&unsafe { &*s }.0, delta) {
        Ok(t) => unsafe { write_out(out, t.value()) },
        Err(e) => threshold_error(e),
    }
}

/// Robust conformal threshold under a total-variation shift bound `epsilon`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn safemon_rcp_threshold(
    s: *const SafemonNcsSet,
    delta: f64,
    epsilon: f64,
    out: *mut f64,
) -> SafemonStatus {
    if s.is_null() {
        return SafemonStatus::NullArgument;
    }
    match rcp_threshold(&unsafe { &*s }.0, delta, epsilon) {
        Ok(t) => unsafe { write_out(out, t.value()) },
        Err(e) => threshold_error(e),
    }
}

/// New adaptive conformal state targeting miscoverage `delta` with learning
/// rate `gamma`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn safemon_acp_new(
    delta: f64,
    gamma: f64,
    out: *mut *mut SafemonAcp,
) -> SafemonStatus {
    if out.is_null() {
        return SafemonStatus::NullArgument;
    }
    if !(0.0 < delta && delta < 1.0) || gamma <= 0.0 {
        return SafemonStatus::InvalidArgument;
    }
    unsafe { write_out(out, Box::into_raw(Box::new(SafemonAcp(AcpState::new(delta, gamma))))) }
}

/// Frees an adaptive conformal state handle; null is a no-op.
///
/// # Safety
/// `a` must be null or a pointer from `safemon_acp_new`.
#[no_mangle]
pub unsafe extern "C" fn safemon_acp_free(a: *mut SafemonAcp) {
    if !a.is_null() {
        drop(unsafe { Box::from_raw(a) });
    }
}

/// Current (adapted) significance level.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn safemon_acp_delta(a: *const SafemonAcp, out: *mut f64) -> SafemonStatus {
    if a.is_null() {
        return SafemonStatus::NullArgument;
    }
    unsafe { write_out(out, (*a).0.delta_t()) }
}

/// One online step: computes the threshold from the score set at the current
/// significance level, appends the new score, scores the coverage error, and
/// updates the significance level. Writes the threshold used for the
/// decision; alarm handling (comparing a predicted robustness against it) is
/// the caller's.
///
/// # Safety
/// Pointers must be valid; `set` is mutated.
#[no_mangle]
pub unsafe extern "C" fn safemon_acp_step(
    a: *mut SafemonAcp,
    set: *mut SafemonNcsSet,
    score: f64,
    out_threshold: *mut f64,
) -> SafemonStatus {
    if a.is_null() || set.is_null() {
        return SafemonStatus::NullArgument;
    }
    if score.is_nan() {
        return SafemonStatus::InvalidArgument;
    }
    let acp = unsafe { &mut *a };
    let ncs = unsafe { &mut *set };
    ncs.0.insert(score);
    let thr = match acp_threshold(&acp.0, &ncs.0) {
        Ok(t) => t.value(),
        Err(_) => return SafemonStatus::InvalidArgument,
    };
    let e_t = if thr == f64::NEG_INFINITY {
        1
    } else if thr == f64::INFINITY {
        0
    } else {
        u8::from(score > thr)
    };
    acp.0.update(e_t);
    unsafe { write_out(out_threshold, thr) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;
    use std::ptr;

    #[test]
    fn formula_round_trip() {
        let text = CString::new("G[0,3] (s[0] - 1 > 0)").unwrap();
        let mut f: *mut SafemonFormula = ptr::null_mut();
        unsafe {
            assert_eq!(safemon_formula_parse(text.as_ptr(), 1, &mut f), SafemonStatus::Ok);
            let mut horizon = 0usize;
            assert_eq!(safemon_formula_horizon(f, &mut horizon), SafemonStatus::Ok);
            assert_eq!(horizon, 3);
            let data = [2.0, 3.0, 1.5, 4.0];
            let mut rho = 0.0;
            assert_eq!(
                safemon_formula_robustness(f, data.as_ptr(), 4, 1, 1.0, 0, &mut rho),
                SafemonStatus::Ok
            );
            assert_eq!(rho, 0.5);
            safemon_formula_free(f);
        }
    }

    #[test]
    fn parse_rejects_garbage_and_nulls() {
        let bad = CString::new("G[0,") .unwrap();
        let mut f: *mut SafemonFormula = ptr::null_mut();
        unsafe {
            assert_eq!(
                safemon_formula_parse(bad.as_ptr(), 1, &mut f),
                SafemonStatus::ParseError
            );
            assert_eq!(
                safemon_formula_parse(ptr::null(), 1, &mut f),
                SafemonStatus::NullArgument
            );
            assert_eq!(safemon_formula_horizon(ptr::null(), &mut 0), SafemonStatus::NullArgument);
        }
    }

    #[test]
    fn thresholds_match_library() {
        let scores: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let mut s: *mut SafemonNcsSet = ptr::null_mut();
        unsafe {
            assert_eq!(safemon_ncs_new(scores.as_ptr(), 100, &mut s), SafemonStatus::Ok);
            let mut n = 0usize;
            safemon_ncs_len(s, &mut n);
            assert_eq!(n, 100);
            let mut icp = 0.0;
            assert_eq!(safemon_icp_threshold(s, 0.1, &mut icp), SafemonStatus::Ok);
            // ceil(101 * 0.9) = 91
            assert_eq!(icp, 91.0);
            let mut rcp = 0.0;
            assert_eq!(safemon_rcp_threshold(s, 0.1, 0.05, &mut rcp), SafemonStatus::Ok);
            // ceil(101 * 0.95) = 96
            assert_eq!(rcp, 96.0);
            assert_eq!(
                safemon_rcp_threshold(s, 0.1, 0.099, &mut rcp),
                SafemonStatus::CalibrationTooSmall
            );
            assert_eq!(
                safemon_rcp_threshold(s, 0.1, 0.2, &mut rcp),
                SafemonStatus::InvalidArgument
            );
            safemon_ncs_free(s);
        }
    }

    #[test]
    fn empty_set_is_calibration_too_small() {
        let mut s: *mut SafemonNcsSet = ptr::null_mut();
        unsafe {
            assert_eq!(safemon_ncs_new(ptr::null(), 0, &mut s), SafemonStatus::Ok);
            let mut thr = 0.0;
            assert_eq!(
                safemon_icp_threshold(s, 0.1, &mut thr),
                SafemonStatus::CalibrationTooSmall
            );
            safemon_ncs_free(s);
        }
    }

    #[test]
    fn acp_stream_adapts_and_matches_state_math() {
        let mut a: *mut SafemonAcp = ptr::null_mut();
        let mut s: *mut SafemonNcsSet = ptr::null_mut();
        unsafe {
            assert_eq!(safemon_acp_new(0.1, 0.005, &mut a), SafemonStatus::Ok);
            assert_eq!(safemon_ncs_new(ptr::null(), 0, &mut s), SafemonStatus::Ok);
            let mut delta = 0.0;
            safemon_acp_delta(a, &mut delta);
            assert_eq!(delta, 0.1);
            let mut thr = 0.0;
            // first step: only one score in the set, index clips to +inf side
            assert_eq!(safemon_acp_step(a, s, 1.0, &mut thr), SafemonStatus::Ok);
            let mut oracle = AcpState::new(0.1, 0.005);
            let mut ncs = NcsSet::new();
            ncs.insert(1.0);
            let t0 = acp_threshold(&oracle, &ncs).unwrap().value();
            assert_eq!(thr, t0);
            let e = if t0 == f64::INFINITY { 0 } else { u8::from(1.0 > t0) };
            oracle.update(e);
            for i in 0..200 {
                let score = (i % 7) as f64 / 7.0;
                assert_eq!(safemon_acp_step(a, s, score, &mut thr), SafemonStatus::Ok);
                ncs.insert(score);
                let t = acp_threshold(&oracle, &ncs).unwrap().value();
                assert_eq!(thr, t);
                let e = if t == f64::NEG_INFINITY {
                    1
                } else if t == f64::INFINITY {
                    0
                } else {
                    u8::from(score > t)
                };
                oracle.update(e);
                safemon_acp_delta(a, &mut delta);
                assert_eq!(delta, oracle.delta_t());
            }
            safemon_acp_free(a);
            safemon_ncs_free(s);
        }
    }

    #[test]
    fn acp_rejects_bad_parameters() {
        let mut a: *mut SafemonAcp = ptr::null_mut();
        unsafe {
            assert_eq!(safemon_acp_new(0.0, 0.005, &mut a), SafemonStatus::InvalidArgument);
            assert_eq!(safemon_acp_new(0.1, 0.0, &mut a), SafemonStatus::InvalidArgument);
            assert_eq!(safemon_acp_new(0.1, 0.005, std::ptr::null_mut()), SafemonStatus::NullArgument);
        }
    }
}
