//! C interface to `anonsched`.
//!
//! Every fallible function returns an [`AnonschedStatus`] and writes its
//! result through an out pointer. On failure a message is kept per thread
//! and can be read with [`anonsched_last_error`]. Objects cross the boundary
//! as opaque handles that the caller releases with the matching `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::io::Cursor;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use anonsched::anonymity::{anonymity_of, entropy};
use anonsched::network::{builtin, CovertSet, Network};
use anonsched::relay::{bgm_epochs, MatchResult};
use anonsched::{analytic, Error};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnonschedStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Infeasible = 4,
    NotConverged = 5,
    Io = 6,
    Panic = 7,
}

/// Result of a bounded greedy match.
pub struct AnonschedMatch(MatchResult);

/// Topology plus session prior.
pub struct AnonschedNetwork(Network);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> AnonschedStatus {
    match e {
        Error::Parse { .. } | Error::InvalidSpec(_) | Error::Config(_) | Error::Json(_) => {
            AnonschedStatus::Parse
        }
        Error::Infeasible { .. } | Error::RateTooLow { .. } | Error::Lp(_) => {
            AnonschedStatus::Infeasible
        }
        Error::NotConverged { .. } => AnonschedStatus::NotConverged,
        Error::Io(_) => AnonschedStatus::Io,
        _ => AnonschedStatus::InvalidArgument,
    }
}

type Outcome = Result<(), (AnonschedStatus, String)>;

fn invalid(msg: impl Into<String>) -> (AnonschedStatus, String) {
    (AnonschedStatus::InvalidArgument, msg.into())
}

fn from_error(e: Error) -> (AnonschedStatus, String) {
    (status_of(&e), e.to_string())
}

/// Runs `f`, records any error and converts panics into a status.
fn guard(f: impl FnOnce() -> Outcome) -> AnonschedStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            AnonschedStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(msg);
            AnonschedStatus::Panic
        }
    }
}

fn out<T>(p: *mut T, v: T) -> Outcome {
    if p.is_null() {
        return Err((AnonschedStatus::NullPointer, "null output pointer".into()));
    }
    // SAFETY: non-null and, per the contract, valid for writes.
    unsafe { p.write(v) };
    Ok(())
}

fn positive(name: &str, v: f64) -> Outcome {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

/// # Safety
/// `p` must be null or point to `n` readable values.
unsafe fn input<'a, T>(p: *const T, n: usize) -> Result<&'a [T], (AnonschedStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err((AnonschedStatus::NullPointer, "null input array".into()));
    }
    Ok(slice::from_raw_parts(p, n))
}

/// # Safety
/// `s` must be null or a NUL-terminated string.
unsafe fn string<'a>(s: *const c_char) -> Result<&'a str, (AnonschedStatus, String)> {
    if s.is_null() {
        return Err((AnonschedStatus::NullPointer, "null string".into()));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| invalid("string is not UTF-8"))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn anonsched_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn anonsched_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Loss fraction of bounded greedy matching between Poisson input of rate
/// `c_s` and Poisson output of rate `c_b` with delay bound `delta`.
///
/// # Safety
/// `out_loss` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn anonsched_loss_fraction(
    c_s: f64,
    c_b: f64,
    delta: f64,
    out_loss: *mut f64,
) -> AnonschedStatus {
    guard(|| {
        positive("c_s", c_s)?;
        positive("c_b", c_b)?;
        if !(delta >= 0.0) {
            return Err(invalid(format!("delta must be >= 0, got {delta}")));
        }
        out(out_loss, analytic::loss_fraction(c_s, c_b, delta))
    })
}

/// Mean delay of relayed packets under strict delay `delta_star`.
///
/// # Safety
/// `out_delay` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn anonsched_mean_delay(
    delta_star: f64,
    c_s: f64,
    c_b: f64,
    out_delay: *mut f64,
) -> AnonschedStatus {
    guard(|| {
        positive("c_s", c_s)?;
        positive("c_b", c_b)?;
        if !(delta_star >= 0.0) {
            return Err(invalid(format!(
                "delta_star must be >= 0, got {delta_star}"
            )));
        }
        out(out_delay, analytic::mean_delay(delta_star, c_s, c_b))
    })
}

/// Strict delay whose mean delay equals `mean_target`; writes infinity when
/// FIFO relaying already meets the target.
///
/// # Safety
/// `out_delta` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn anonsched_delta_star(
    mean_target: f64,
    c_s: f64,
    c_b: f64,
    out_delta: *mut f64,
) -> AnonschedStatus {
    guard(|| {
        positive("mean_target", mean_target)?;
        positive("c_s", c_s)?;
        positive("c_b", c_b)?;
        out(out_delta, analytic::solve_delta_star(mean_target, c_s, c_b))
    })
}

/// Bounded greedy match of sorted arrival epochs onto sorted departure
/// epochs. The handle is released with [`anonsched_match_free`].
///
/// # Safety
/// `arrivals` and `departures` must hold `n_arrivals` and `n_departures`
/// values; `out_match` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn anonsched_bgm(
    arrivals: *const f64,
    n_arrivals: usize,
    departures: *const f64,
    n_departures: usize,
    delta: f64,
    out_match: *mut *mut AnonschedMatch,
) -> AnonschedStatus {
    guard(|| {
        let a = input(arrivals, n_arrivals)?;
        let d = input(departures, n_departures)?;
        if !(delta >= 0.0) {
            return Err(invalid(format!("delta must be >= 0, got {delta}")));
        }
        for (name, xs) in [("arrivals", a), ("departures", d)] {
            if xs.iter().any(|x| !x.is_finite() || *x < 0.0) || xs.windows(2).any(|w| w[0] >= w[1])
            {
                return Err(invalid(format!(
                    "{name} must be finite, non-negative and strictly increasing"
                )));
            }
        }
        let m = Box::new(AnonschedMatch(bgm_epochs(a, d, delta)));
        if out_match.is_null() {
            return Err((AnonschedStatus::NullPointer, "null output pointer".into()));
        }
        out(out_match, Box::into_raw(m))
    })
}

/// Number of relayed pairs, dropped arrivals and dummy departures.
///
/// # Safety
/// `m` must come from [`anonsched_bgm`]; out pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn anonsched_match_counts(
    m: *const AnonschedMatch,
    out_pairs: *mut usize,
    out_dropped: *mut usize,
    out_dummies: *mut usize,
) -> AnonschedStatus {
    guard(|| {
        let m = &m
            .as_ref()
            .ok_or((AnonschedStatus::NullPointer, "null match".to_string()))?
            .0;
        for (p, v) in [
            (out_pairs, m.pairs.len()),
            (out_dropped, m.dropped.len()),
            (out_dummies, m.dummies.len()),
        ] {
            if !p.is_null() {
                p.write(v);
            }
        }
        Ok(())
    })
}

/// Copies up to `capacity` relayed pairs as interleaved
/// `(arrival, departure)` epochs into `buf` (length `2 * capacity`).
///
/// # Safety
/// `m` must come from [`anonsched_bgm`]; `buf` must hold `2 * capacity`
/// values.
#[no_mangle]
pub unsafe extern "C" fn anonsched_match_pairs(
    m: *const AnonschedMatch,
    buf: *mut f64,
    capacity: usize,
    out_written: *mut usize,
) -> AnonschedStatus {
    guard(|| {
        let m = &m
            .as_ref()
            .ok_or((AnonschedStatus::NullPointer, "null match".to_string()))?
            .0;
        let n = m.pairs.len().min(capacity);
        if n > 0 {
            if buf.is_null() {
                return Err((AnonschedStatus::NullPointer, "null buffer".into()));
            }
            let dst = slice::from_raw_parts_mut(buf, 2 * n);
            for (k, &(a, d)) in m.pairs.iter().take(n).enumerate() {
                dst[2 * k] = a;
                dst[2 * k + 1] = d;
            }
        }
        out(out_written, n)
    })
}

/// Fraction of arrivals dropped and mean delay of relayed packets (NaN when
/// nothing was relayed).
///
/// # Safety
/// `m` must come from [`anonsched_bgm`]; out pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn anonsched_match_stats(
    m: *const AnonschedMatch,
    out_drop_fraction: *mut f64,
    out_mean_delay: *mut f64,
) -> AnonschedStatus {
    guard(|| {
        let m = &m
            .as_ref()
            .ok_or((AnonschedStatus::NullPointer, "null match".to_string()))?
            .0;
        if !out_drop_fraction.is_null() {
            out_drop_fraction.write(if m.arrivals() == 0 {
                0.0
            } else {
                m.drop_fraction()
            });
        }
        if !out_mean_delay.is_null() {
            out_mean_delay.write(if m.pairs.is_empty() {
                f64::NAN
            } else {
                m.mean_delay()
            });
        }
        Ok(())
    })
}

/// # Safety
/// `m` must be null or come from [`anonsched_bgm`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn anonsched_match_free(m: *mut AnonschedMatch) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// One of the built-in networks (`switching`, `single`) with every
/// node at capacity `capacity`.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out_network` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn anonsched_network_builtin(
    name: *const c_char,
    capacity: f64,
    out_network: *mut *mut AnonschedNetwork,
) -> AnonschedStatus {
    guard(|| {
        let name = string(name)?;
        positive("capacity", capacity)?;
        let net = builtin(name, capacity).map_err(from_error)?;
        if out_network.is_null() {
            return Err((AnonschedStatus::NullPointer, "null output pointer".into()));
        }
        out(out_network, Box::into_raw(Box::new(AnonschedNetwork(net))))
    })
}

/// Network parsed from the text config format.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out_network` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn anonsched_network_parse(
    text: *const c_char,
    out_network: *mut *mut AnonschedNetwork,
) -> AnonschedStatus {
    guard(|| {
        let text = string(text)?;
        let net = Network::read(Cursor::new(text)).map_err(from_error)?;
        if out_network.is_null() {
            return Err((AnonschedStatus::NullPointer, "null output pointer".into()));
        }
        out(out_network, Box::into_raw(Box::new(AnonschedNetwork(net))))
    })
}

/// Number of sessions with a prior entry.
///
/// # Safety
/// `net` must come from this library; `out_count` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn anonsched_network_session_count(
    net: *const AnonschedNetwork,
    out_count: *mut usize,
) -> AnonschedStatus {
    guard(|| {
        let net = &net
            .as_ref()
            .ok_or((AnonschedStatus::NullPointer, "null network".to_string()))?
            .0;
        out(out_count, net.prior.len())
    })
}

/// Entropy of the session prior in bits.
///
/// # Safety
/// `net` must come from this library; `out_bits` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn anonsched_network_entropy(
    net: *const AnonschedNetwork,
    out_bits: *mut f64,
) -> AnonschedStatus {
    guard(|| {
        let net = &net
            .as_ref()
            .ok_or((AnonschedStatus::NullPointer, "null network".to_string()))?
            .0;
        out(out_bits, entropy(&net.prior))
    })
}

/// Anonymity when every session keeps the relays named in `covert` covert.
///
/// # Safety
/// `net` must come from this library; `covert` must hold `n_covert`
/// NUL-terminated strings; `out_alpha` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn anonsched_network_anonymity(
    net: *const AnonschedNetwork,
    covert: *const *const c_char,
    n_covert: usize,
    out_alpha: *mut f64,
) -> AnonschedStatus {
    guard(|| {
        let net = &net
            .as_ref()
            .ok_or((AnonschedStatus::NullPointer, "null network".to_string()))?
            .0;
        let mut set = CovertSet::new();
        for &name in input(covert, n_covert)? {
            let name = string(name)?;
            if net.topology.capacity(&name.into()).is_none() {
                return Err(invalid(format!("unknown node {name}")));
            }
            set.insert(name.into());
        }
        out(out_alpha, anonymity_of(&net.prior, &set))
    })
}

/// # Safety
/// `net` must be null or come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn anonsched_network_free(net: *mut AnonschedNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}
