//! C ABI for the auction library: opaque handles, status codes, and a
//! thread-local last-error message. The generated header lands in
//! `include/fmore.h` at build time.
//!
//! Ownership rules: every `*_new` constructor hands the caller an owned
//! handle that must be released with the matching `*_free`; all other
//! pointer arguments are borrowed for the duration of the call. Output
//! buffers are written only when the call returns `FM_STATUS_OK`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::slice;

use fmore_core::equilibrium::{EquilibriumTable, Problem, QualityBox, SFunc};
use fmore_core::mechanism::determine_winners;
use fmore_core::{
    AuctionConfig, Bid, CostFn, NormalizationSpec, QualityVector, ScoreKind, ScoringRule,
    ThetaDist, WinningProbMode,
};

/// Call outcome. Anything other than `Ok` leaves the outputs untouched;
/// `fm_last_error` then describes the failure.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NumericalError = 3,
    BufferTooSmall = 4,
}

/// Quality aggregation families for the scoring rule.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FmScoreKind {
    /// `s = sum_i alpha_i q_i`; needs coefficients.
    Additive = 0,
    /// `s = min_i alpha_i q_i`; needs coefficients.
    MinWeighted = 1,
    /// `s = prod_i q_i^(alpha_i)`; needs coefficients.
    CobbDouglas = 2,
    /// `s = alpha prod_i q_i`; needs the scalar `alpha` only.
    ScaledProduct = 3,
}

/// Winning-probability formula used by the equilibrium solver.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FmWinningProbMode {
    /// Top-K order statistics with binomial rank multiplicities (default).
    OrderStatistics = 0,
    /// The plain geometric sum without multiplicities; kept for
    /// comparison, known to undercount for K >= 2.
    Verbatim = 1,
}

impl From<FmWinningProbMode> for WinningProbMode {
    fn from(mode: FmWinningProbMode) -> Self {
        match mode {
            FmWinningProbMode::OrderStatistics => WinningProbMode::OrderStatistics,
            FmWinningProbMode::Verbatim => WinningProbMode::Verbatim,
        }
    }
}

/// Opaque quasi-linear scoring rule handle.
pub struct FmScoringRule {
    inner: ScoringRule,
}

/// Opaque auction round configuration handle.
pub struct FmAuction {
    inner: AuctionConfig,
}

/// Opaque tabulated symmetric equilibrium handle.
pub struct FmEquilibrium {
    table: EquilibriumTable,
    dim: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: FmStatus, message: impl Into<String>) -> FmStatus {
    let message = message.into().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(message).unwrap_or_default();
    });
    status
}

fn fail_core(err: fmore_core::Error) -> FmStatus {
    let status = match &err {
        fmore_core::Error::Numerical(_) | fmore_core::Error::Infeasible(_) => {
            FmStatus::NumericalError
        }
        _ => FmStatus::InvalidArgument,
    };
    fail(status, err.to_string())
}

/// Returns the library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Returns the message of the most recent failure on this thread. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fm_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

unsafe fn borrow_slice<'a>(ptr: *const f64, len: usize) -> Option<&'a [f64]> {
    if len == 0 {
        Some(&[])
    } else if ptr.is_null() {
        None
    } else {
        Some(slice::from_raw_parts(ptr, len))
    }
}

/// Creates a scoring rule.
///
/// `coeffs`/`n_coeffs` supply the per-dimension coefficients for the
/// additive, min-weighted, and Cobb-Douglas kinds and are ignored for
/// the scaled product, which reads `alpha` instead. Optional min-max
/// normalization is enabled by passing `n_bounds > 0` with per-dimension
/// lower bounds in `bounds_lo` and upper bounds in `bounds_hi`;
/// `normalize_payment` selects whether the payment is mapped through the
/// same transform (the walkthrough convention is `false`).
///
/// # Safety
/// Array arguments must point to at least the stated number of doubles;
/// `out` must be a valid pointer. On success the caller owns the handle
/// and must release it with `fm_scoring_rule_free`.
#[no_mangle]
pub unsafe extern "C" fn fm_scoring_rule_new(
    kind: FmScoreKind,
    coeffs: *const f64,
    n_coeffs: usize,
    alpha: f64,
    bounds_lo: *const f64,
    bounds_hi: *const f64,
    n_bounds: usize,
    normalize_payment: bool,
    out: *mut *mut FmScoringRule,
) -> FmStatus {
    if out.is_null() {
        return fail(FmStatus::NullPointer, "out is null");
    }
    let coeffs = match borrow_slice(coeffs, n_coeffs) {
        Some(c) => c.to_vec(),
        None => return fail(FmStatus::NullPointer, "coeffs is null with n_coeffs > 0"),
    };
    let kind = match kind {
        FmScoreKind::Additive => ScoreKind::Additive { coeffs },
        FmScoreKind::MinWeighted => ScoreKind::MinWeighted { coeffs },
        FmScoreKind::CobbDouglas => ScoreKind::CobbDouglas { coeffs },
        FmScoreKind::ScaledProduct => ScoreKind::ScaledProduct { alpha },
    };
    let normalization = if n_bounds == 0 {
        None
    } else {
        let lo = match borrow_slice(bounds_lo, n_bounds) {
            Some(v) => v,
            None => return fail(FmStatus::NullPointer, "bounds_lo is null with n_bounds > 0"),
        };
        let hi = match borrow_slice(bounds_hi, n_bounds) {
            Some(v) => v,
            None => return fail(FmStatus::NullPointer, "bounds_hi is null with n_bounds > 0"),
        };
        let bounds: Vec<(f64, f64)> = lo.iter().copied().zip(hi.iter().copied()).collect();
        match NormalizationSpec::new(bounds, normalize_payment) {
            Ok(spec) => Some(spec),
            Err(e) => return fail_core(e),
        }
    };
    match ScoringRule::new(kind, normalization) {
        Ok(rule) => {
            *out = Box::into_raw(Box::new(FmScoringRule { inner: rule }));
            FmStatus::Ok
        }
        Err(e) => fail_core(e),
    }
}

/// Releases a scoring rule handle. A null pointer is a no-op.
///
/// # Safety
/// `rule` must come from `fm_scoring_rule_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn fm_scoring_rule_free(rule: *mut FmScoringRule) {
    if !rule.is_null() {
        drop(Box::from_raw(rule));
    }
}

/// Evaluates `S(q, p) = s(q) - p` (after normalization when configured).
///
/// # Safety
/// `rule` must be a live handle, `q` must point to `dim` doubles, and
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fm_scoring_rule_score(
    rule: *const FmScoringRule,
    q: *const f64,
    dim: usize,
    payment: f64,
    out: *mut f64,
) -> FmStatus {
    if rule.is_null() || out.is_null() {
        return fail(FmStatus::NullPointer, "rule or out is null");
    }
    let q = match borrow_slice(q, dim) {
        Some(v) => v,
        None => return fail(FmStatus::NullPointer, "q is null with dim > 0"),
    };
    let quality = match QualityVector::new(q.to_vec()) {
        Ok(v) => v,
        Err(e) => return fail_core(e),
    };
    let bid = match Bid::new("ffi", quality, payment) {
        Ok(b) => b,
        Err(e) => return fail_core(e),
    };
    match (*rule).inner.score(&bid) {
        Ok(s) => {
            *out = s;
            FmStatus::Ok
        }
        Err(e) => fail_core(e),
    }
}

/// Probability that a score at quantile `h` of the score distribution
/// places in the top `k` of `n` bidders.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fm_winning_probability(
    h: f64,
    n: usize,
    k: usize,
    mode: FmWinningProbMode,
    out: *mut f64,
) -> FmStatus {
    if out.is_null() {
        return fail(FmStatus::NullPointer, "out is null");
    }
    match fmore_core::equilibrium::winning_probability_g(h, n, k, mode.into()) {
        Ok(g) => {
            *out = g;
            FmStatus::Ok
        }
        Err(e) => fail_core(e),
    }
}

/// Creates an auction round configuration. The rule is copied; the
/// caller keeps ownership of `rule`.
///
/// # Safety
/// `rule` must be a live handle and `out` a valid pointer. On success
/// the caller owns the handle and must release it with `fm_auction_free`.
#[no_mangle]
pub unsafe extern "C" fn fm_auction_new(
    n_nodes: usize,
    n_winners: usize,
    psi: f64,
    mode: FmWinningProbMode,
    rule: *const FmScoringRule,
    out: *mut *mut FmAuction,
) -> FmStatus {
    if rule.is_null() || out.is_null() {
        return fail(FmStatus::NullPointer, "rule or out is null");
    }
    match AuctionConfig::new(n_nodes, n_winners, psi, (*rule).inner.clone(), mode.into()) {
        Ok(cfg) => {
            *out = Box::into_raw(Box::new(FmAuction { inner: cfg }));
            FmStatus::Ok
        }
        Err(e) => fail_core(e),
    }
}

/// Releases an auction handle. A null pointer is a no-op.
///
/// # Safety
/// `auction` must come from `fm_auction_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn fm_auction_free(auction: *mut FmAuction) {
    if !auction.is_null() {
        drop(Box::from_raw(auction));
    }
}

/// Runs one selection round over `n_bids` sealed bids and reports the
/// winners as indices into the input arrays, in descending score order.
///
/// `qualities` is row-major `n_bids x dim`; `payments` holds one asked
/// payment per bid. `out_n` carries the capacity of `out_indices` and
/// `out_payments` on input (at least the configured winner count) and
/// the number of winners written on output.
///
/// # Safety
/// `auction` must be a live handle; the arrays must match the stated
/// sizes; `out_indices`, `out_payments`, and `out_n` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fm_auction_run(
    auction: *const FmAuction,
    qualities: *const f64,
    payments: *const f64,
    n_bids: usize,
    dim: usize,
    seed: u64,
    out_indices: *mut usize,
    out_payments: *mut f64,
    out_n: *mut usize,
) -> FmStatus {
    if auction.is_null() || out_indices.is_null() || out_payments.is_null() || out_n.is_null() {
        return fail(FmStatus::NullPointer, "auction or an output pointer is null");
    }
    let qualities = match borrow_slice(qualities, n_bids * dim) {
        Some(v) => v,
        None => return fail(FmStatus::NullPointer, "qualities is null"),
    };
    let payments = match borrow_slice(payments, n_bids) {
        Some(v) => v,
        None => return fail(FmStatus::NullPointer, "payments is null"),
    };
    let capacity = *out_n;
    let k = (*auction).inner.n_winners;
    if capacity < k.min(n_bids) {
        return fail(
            FmStatus::BufferTooSmall,
            format!("need room for {} winners, capacity {capacity}", k.min(n_bids)),
        );
    }
    let mut bids = Vec::with_capacity(n_bids);
    for i in 0..n_bids {
        let quality = match QualityVector::new(qualities[i * dim..(i + 1) * dim].to_vec()) {
            Ok(v) => v,
            Err(e) => return fail_core(e),
        };
        match Bid::new(i.to_string(), quality, payments[i]) {
            Ok(b) => bids.push(b),
            Err(e) => return fail_core(e),
        }
    }
    let ws = match determine_winners(&bids, &(*auction).inner, seed) {
        Ok(ws) => ws,
        Err(e) => return fail_core(e),
    };
    for (slot, w) in ws.winners.iter().enumerate() {
        let index: usize = w.node_id.parse().expect("ids are indices by construction");
        *out_indices.add(slot) = index;
        *out_payments.add(slot) = w.payment;
    }
    *out_n = ws.winners.len();
    FmStatus::Ok
}

/// Tabulates the symmetric equilibrium for the bidding game where the
/// quality value is the rule's `s(.)`, the cost is
/// `theta * sum_i beta_i q_i`, and types are uniform on
/// `[theta_lo, theta_hi]`. Qualities range over the box
/// `[q_lo_i, q_hi_i]` per dimension.
///
/// # Safety
/// `rule` must be a live handle; `cost_betas`, `q_lo`, and `q_hi` must
/// point to `dim` doubles; `out` must be valid. On success the caller
/// owns the handle and must release it with `fm_equilibrium_free`.
#[no_mangle]
pub unsafe extern "C" fn fm_equilibrium_new(
    rule: *const FmScoringRule,
    cost_betas: *const f64,
    dim: usize,
    theta_lo: f64,
    theta_hi: f64,
    q_lo: *const f64,
    q_hi: *const f64,
    n_nodes: usize,
    n_winners: usize,
    mode: FmWinningProbMode,
    out: *mut *mut FmEquilibrium,
) -> FmStatus {
    if rule.is_null() || out.is_null() {
        return fail(FmStatus::NullPointer, "rule or out is null");
    }
    if dim == 0 {
        return fail(FmStatus::InvalidArgument, "dim must be >= 1");
    }
    let betas = match borrow_slice(cost_betas, dim) {
        Some(v) => v.to_vec(),
        None => return fail(FmStatus::NullPointer, "cost_betas is null"),
    };
    let lo = match borrow_slice(q_lo, dim) {
        Some(v) => v.to_vec(),
        None => return fail(FmStatus::NullPointer, "q_lo is null"),
    };
    let hi = match borrow_slice(q_hi, dim) {
        Some(v) => v.to_vec(),
        None => return fail(FmStatus::NullPointer, "q_hi is null"),
    };
    let bounds = match QualityBox::new(lo, hi) {
        Ok(b) => b,
        Err(e) => return fail_core(e),
    };
    let rule_copy = (*rule).inner.clone();
    let problem = match Problem::new(
        SFunc::custom(move |q| rule_copy.s_normalized(q)),
        CostFn::AdditiveLinear { betas },
        ThetaDist::Uniform {
            lo: theta_lo,
            hi: theta_hi,
        },
        bounds,
    ) {
        Ok(p) => p,
        Err(e) => return fail_core(e),
    };
    match EquilibriumTable::build(
        &problem,
        n_nodes,
        n_winners,
        mode.into(),
        fmore_core::equilibrium::DEFAULT_THETA_GRID,
        fmore_core::equilibrium::DEFAULT_EULER_DIVISIONS,
    ) {
        Ok(table) => {
            *out = Box::into_raw(Box::new(FmEquilibrium { table, dim }));
            FmStatus::Ok
        }
        Err(e) => fail_core(e),
    }
}

/// Releases an equilibrium handle. A null pointer is a no-op.
///
/// # Safety
/// `eq` must come from `fm_equilibrium_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn fm_equilibrium_free(eq: *mut FmEquilibrium) {
    if !eq.is_null() {
        drop(Box::from_raw(eq));
    }
}

unsafe fn eq_scalar(
    eq: *const FmEquilibrium,
    theta: f64,
    out: *mut f64,
    f: impl Fn(&EquilibriumTable, f64) -> f64,
) -> FmStatus {
    if eq.is_null() || out.is_null() {
        return fail(FmStatus::NullPointer, "equilibrium or out is null");
    }
    if !theta.is_finite() {
        return fail(FmStatus::InvalidArgument, "theta must be finite");
    }
    *out = f(&(*eq).table, theta);
    FmStatus::Ok
}

/// Equilibrium asked payment for type `theta` (clamped to the support).
///
/// # Safety
/// `eq` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fm_equilibrium_payment_at(
    eq: *const FmEquilibrium,
    theta: f64,
    out: *mut f64,
) -> FmStatus {
    eq_scalar(eq, theta, out, |t, th| t.payment_at(th))
}

/// Equilibrium markup (payment minus cost) for type `theta`.
///
/// # Safety
/// `eq` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fm_equilibrium_markup_at(
    eq: *const FmEquilibrium,
    theta: f64,
    out: *mut f64,
) -> FmStatus {
    eq_scalar(eq, theta, out, |t, th| t.markup_at(th))
}

/// The type's maximal attainable score `u(theta) = max_q s(q) - c(q, theta)`.
///
/// # Safety
/// `eq` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fm_equilibrium_max_score_at(
    eq: *const FmEquilibrium,
    theta: f64,
    out: *mut f64,
) -> FmStatus {
    eq_scalar(eq, theta, out, |t, th| t.u_at(th))
}

/// Returns the quality dimension of an equilibrium handle, or 0 for null.
///
/// # Safety
/// `eq` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fm_equilibrium_dim(eq: *const FmEquilibrium) -> usize {
    if eq.is_null() {
        0
    } else {
        (*eq).dim
    }
}
