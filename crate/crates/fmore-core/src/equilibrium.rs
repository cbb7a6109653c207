//! Nash equilibrium bidding for the K-winner first-score auction.
//!
//! The strategy has two independent parts: the quality choice
//! `q_s(theta) = argmax s(q) - c(q, theta)` over a bounded quality box, and
//! the payment
//!
//! ```text
//! p_s(theta) = c(q_s, theta) + int_0^u g(x)/g(u) dx,
//! u(theta)   = s(q_s) - c(q_s, theta),
//! ```
//!
//! where `g` is the probability of placing in the top K of N i.i.d. scores
//! and `H` is the CDF of the type-induced max score `X(theta) = u(theta)`.
//! The markup integral is evaluated by fixed-step Euler (forward rectangle),
//! with a trapezoid cross-check available for tests.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::auction::{CostFn, QualityVector, ScoringRule, ThetaDist, WinningProbMode};
use crate::error::{Error, Result};

/// Per-dimension bounds of the feasible quality region. Mandatory: without
/// a box the argmax can be unbounded for linear `s` and small `theta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl QualityBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::Config(format!(
                "quality box needs matching non-empty bounds, got {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        for i in 0..lo.len() {
            if !lo[i].is_finite() || !hi[i].is_finite() || lo[i] < 0.0 || lo[i] >= hi[i] {
                return Err(Error::Config(format!(
                    "quality box dimension {i}: need finite 0 <= lo < hi, got ({}, {})",
                    lo[i], hi[i]
                )));
            }
        }
        Ok(QualityBox { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }
}

/// The quality part of the scoring rule, as seen by a bidder.
#[derive(Clone)]
pub enum SFunc {
    Rule(ScoringRule),
    Custom(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl SFunc {
    pub fn custom(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        SFunc::Custom(Arc::new(f))
    }

    pub fn eval(&self, q: &[f64]) -> f64 {
        match self {
            SFunc::Rule(rule) => rule.s_normalized(q),
            SFunc::Custom(f) => f(q),
        }
    }
}

impl std::fmt::Debug for SFunc {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SFunc::Rule(r) => write!(f, "SFunc::Rule({r:?})"),
            SFunc::Custom(_) => write!(f, "SFunc::Custom(..)"),
        }
    }
}

/// A bidder's decision problem: scoring rule quality part, cost family,
/// common type distribution, and the feasible quality box.
#[derive(Debug, Clone)]
pub struct Problem {
    pub s: SFunc,
    pub cost_fn: CostFn,
    pub dist: ThetaDist,
    pub bounds: QualityBox,
}

impl Problem {
    pub fn new(s: SFunc, cost_fn: CostFn, dist: ThetaDist, bounds: QualityBox) -> Result<Self> {
        dist.validate()?;
        cost_fn.validate()?;
        if cost_fn.dim() != bounds.dim() {
            return Err(Error::DimensionMismatch {
                expected: cost_fn.dim(),
                got: bounds.dim(),
            });
        }
        Ok(Problem {
            s,
            cost_fn,
            dist,
            bounds,
        })
    }

    fn objective(&self, q: &[f64], theta: f64) -> f64 {
        self.s.eval(q) - self.cost_fn.eval_raw(q, theta)
    }
}

const GRID_POINTS_1D: usize = 65;
const REFINE_TOL: f64 = 1e-11;

/// Golden-section maximization on [lo, hi], assuming the grid scan already
/// bracketed the maximizer.
fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let phi = 0.618_033_988_749_894_8_f64;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while (hi - lo) > REFINE_TOL * (1.0 + hi.abs()) {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = f(x1);
        }
    }
    0.5 * (lo + hi)
}

fn argmax_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let n = GRID_POINTS_1D;
    let mut best_i = 0;
    let mut best_v = f64::NEG_INFINITY;
    for i in 0..n {
        let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        let v = f(x);
        if v > best_v {
            best_v = v;
            best_i = i;
        }
    }
    let step = (hi - lo) / (n - 1) as f64;
    let a = (lo + step * best_i.saturating_sub(1) as f64).max(lo);
    let b = (lo + step * (best_i + 1) as f64).min(hi);
    let x = golden_max(&f, a, b);
    // Keep the better of the refined point and the grid best.
    let grid_x = lo + step * best_i as f64;
    if f(x) >= f(grid_x) {
        x
    } else {
        grid_x
    }
}

/// `q_s(theta) = argmax over the box of s(q) - c(q, theta)`.
///
/// Coordinate ascent with a dense 1-D grid plus golden-section refinement
/// per coordinate; exact for separable objectives and a sound local search
/// otherwise. Multi-start from the box corners and center.
pub fn optimal_quality(problem: &Problem, theta: f64) -> Result<QualityVector> {
    let m = problem.bounds.dim();
    let lo = &problem.bounds.lo;
    let hi = &problem.bounds.hi;

    let starts: Vec<Vec<f64>> = vec![
        (0..m).map(|i| 0.5 * (lo[i] + hi[i])).collect(),
        lo.clone(),
        hi.clone(),
    ];

    let mut best_q: Option<Vec<f64>> = None;
    let mut best_v = f64::NEG_INFINITY;
    for start in starts {
        let mut q = start;
        let mut val = problem.objective(&q, theta);
        for _ in 0..60 {
            let before = val;
            for d in 0..m {
                let qd = argmax_1d(
                    |x| {
                        let mut probe = q.clone();
                        probe[d] = x;
                        problem.objective(&probe, theta)
                    },
                    lo[d],
                    hi[d],
                );
                q[d] = qd;
            }
            val = problem.objective(&q, theta);
            if val - before <= 1e-13 * (1.0 + val.abs()) {
                break;
            }
        }
        if val > best_v {
            best_v = val;
            best_q = Some(q);
        }
    }
    if !best_v.is_finite() {
        return Err(Error::Config(
            "objective s(q) - c(q, theta) is not finite on the quality box".into(),
        ));
    }
    QualityVector::new(best_q.unwrap())
}

/// The type's maximum achievable score `u(theta) = s(q_s) - c(q_s, theta)`.
pub fn max_score_u(problem: &Problem, theta: f64) -> Result<(f64, QualityVector)> {
    let q = optimal_quality(problem, theta)?;
    let u = problem.objective(q.values(), theta);
    Ok((u, q))
}

fn pow_conv(x: f64, e: u32) -> f64 {
    // 0^0 = 1 by convention.
    if e == 0 {
        1.0
    } else {
        x.powi(e as i32)
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Probability of winning given `H(u) = h`, the CDF value of the bidder's
/// score among N i.i.d. scores with K winners.
///
/// `Verbatim` evaluates `sum_{i=1}^{K} (1-h)^{i-1} h^{N-i}` verbatim;
/// `OrderStatistics` inserts the binomial coefficient `C(N-1, i-1)` so the
/// sum is the probability of ranking in the top K. The two disagree for
/// K >= 2 (e.g. N=3, K=3, h=0.5 gives 0.75 vs 1.0); the Monte Carlo oracle
/// in the verification suite documents which matches empirical win rates.
pub fn winning_probability_g(h: f64, n: usize, k: usize, mode: WinningProbMode) -> Result<f64> {
    if !(0.0..=1.0).contains(&h) {
        return Err(Error::invalid("H value", format!("{h} not in [0, 1]")));
    }
    if k == 0 || k > n {
        return Err(Error::Config(format!("need 1 <= K <= N, got K={k}, N={n}")));
    }
    let mut total = 0.0;
    for i in 1..=k {
        let term = pow_conv(1.0 - h, (i - 1) as u32) * pow_conv(h, (n - i) as u32);
        total += match mode {
            WinningProbMode::Verbatim => term,
            WinningProbMode::OrderStatistics => binomial(n - 1, i - 1) * term,
        };
    }
    Ok(total.clamp(0.0, 1.0))
}

/// Tabulated map `theta -> u(theta)` and the induced score CDF
/// `H(x) = 1 - F(X^{-1}(x))`, with monotone piecewise-linear interpolation
/// and inversion by bisection.
#[derive(Debug, Clone)]
pub struct ScoreDistribution {
    thetas: Vec<f64>,
    u: Vec<f64>,
    dist: ThetaDist,
}

pub const DEFAULT_THETA_GRID: usize = 1024;

impl ScoreDistribution {
    pub fn build(problem: &Problem, grid_points: usize) -> Result<Self> {
        if grid_points < 2 {
            return Err(Error::Config("theta grid needs >= 2 points".into()));
        }
        let (lo, hi) = problem.dist.support();
        let mut thetas = Vec::with_capacity(grid_points);
        let mut u = Vec::with_capacity(grid_points);
        for i in 0..grid_points {
            let t = lo + (hi - lo) * i as f64 / (grid_points - 1) as f64;
            thetas.push(t);
            u.push(max_score_u(problem, t)?.0);
        }
        // u must be nonincreasing in theta; iron out interpolation noise.
        for i in 1..grid_points {
            if u[i] > u[i - 1] {
                if u[i] - u[i - 1] > 1e-6 * (1.0 + u[i].abs()) {
                    return Err(Error::Numerical(format!(
                        "max score increased with theta at grid point {i} ({} -> {})",
                        u[i - 1],
                        u[i]
                    )));
                }
                u[i] = u[i - 1];
            }
        }
        Ok(ScoreDistribution {
            thetas,
            u,
            dist: problem.dist,
        })
    }

    /// `(u(theta_max), u(theta_min))`: the support of the score CDF.
    pub fn support(&self) -> (f64, f64) {
        (*self.u.last().unwrap(), self.u[0])
    }

    pub fn theta_grid(&self) -> &[f64] {
        &self.thetas
    }

    pub fn u_grid(&self) -> &[f64] {
        &self.u
    }

    /// Interpolated `u(theta)`.
    pub fn u_of_theta(&self, theta: f64) -> f64 {
        interp_increasing(&self.thetas, &self.u, theta)
    }

    /// `X^{-1}(x)`: the type achieving max score `x`, by bisection on the
    /// tabulated nonincreasing map.
    pub fn theta_of_u(&self, x: f64) -> f64 {
        let (u_min, u_max) = self.support();
        if x <= u_min {
            return *self.thetas.last().unwrap();
        }
        if x >= u_max {
            return self.thetas[0];
        }
        // u is nonincreasing over thetas; binary search for the segment.
        let mut lo = 0usize;
        let mut hi = self.u.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.u[mid] >= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (u0, u1) = (self.u[lo], self.u[hi]);
        let (t0, t1) = (self.thetas[lo], self.thetas[hi]);
        if (u0 - u1).abs() < f64::EPSILON {
            0.5 * (t0 + t1)
        } else {
            t0 + (u0 - x) / (u0 - u1) * (t1 - t0)
        }
    }

    /// `H(x) = 1 - F(X^{-1}(x))`, a valid CDF on the score support.
    pub fn h(&self, x: f64) -> f64 {
        let (u_min, u_max) = self.support();
        if x <= u_min {
            return 0.0;
        }
        if x >= u_max {
            return 1.0;
        }
        (1.0 - self.dist.cdf(self.theta_of_u(x))).clamp(0.0, 1.0)
    }

    /// Draw one opponent max score `u(theta)`, `theta ~ F`.
    pub fn sample_u<R: Rng>(&self, rng: &mut R) -> f64 {
        self.u_of_theta(self.dist.sample(rng))
    }
}

fn interp_increasing(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= *xs.last().unwrap() {
        return *ys.last().unwrap();
    }
    let i = match xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
        Ok(i) => return ys[i],
        Err(i) => i,
    };
    let (x0, x1) = (xs[i - 1], xs[i]);
    let (y0, y1) = (ys[i - 1], ys[i]);
    y0 + (x - x0) / (x1 - x0) * (y1 - y0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerDiagnostics {
    pub step: f64,
    pub n_steps: usize,
}

/// One type's equilibrium bid, with the integration diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumStrategy {
    pub quality: QualityVector,
    pub payment: f64,
    pub max_score: f64,
    /// Set when `g(u) = 0` (a type that never wins); the payment is then
    /// the IR-boundary convention `c + u` rather than the undefined limit.
    pub degenerate: bool,
    pub diagnostics: EulerDiagnostics,
}

pub const DEFAULT_EULER_DIVISIONS: usize = 10_000;

fn euler_markup(
    score_dist: &ScoreDistribution,
    u: f64,
    g_u: f64,
    n: usize,
    k: usize,
    mode: WinningProbMode,
    step_h: f64,
) -> (f64, EulerDiagnostics) {
    let n_steps = (u / step_h).ceil().max(1.0) as usize;
    let step = u / n_steps as f64;
    let mut acc = 0.0;
    for j in 0..n_steps {
        let x = j as f64 * step;
        let g = winning_probability_g(score_dist.h(x), n, k, mode).unwrap();
        acc += g * step;
    }
    (
        acc / g_u,
        EulerDiagnostics {
            step,
            n_steps,
        },
    )
}

/// Trapezoid evaluation of the same markup integral, used as the
/// discretization-error cross-check.
pub fn trapezoid_markup(
    score_dist: &ScoreDistribution,
    u: f64,
    n: usize,
    k: usize,
    mode: WinningProbMode,
    n_steps: usize,
) -> Result<f64> {
    let g_u = winning_probability_g(score_dist.h(u), n, k, mode)?;
    if g_u <= 0.0 {
        return Err(Error::Numerical("g(u) = 0: markup undefined".into()));
    }
    let step = u / n_steps as f64;
    let mut acc = 0.0;
    for j in 0..=n_steps {
        let x = j as f64 * step;
        let g = winning_probability_g(score_dist.h(x), n, k, mode)?;
        let w = if j == 0 || j == n_steps { 0.5 } else { 1.0 };
        acc += w * g * step;
    }
    Ok(acc / g_u)
}

/// Full equilibrium strategy for one type: optimal quality, max score, and
/// the first-score payment `c + int_0^u g(x)/g(u) dx` via fixed-step Euler.
pub fn equilibrium_payment(
    problem: &Problem,
    theta: f64,
    n: usize,
    k: usize,
    mode: WinningProbMode,
    step_h: Option<f64>,
    score_dist: &ScoreDistribution,
) -> Result<EquilibriumStrategy> {
    if let Some(h) = step_h {
        if !(h > 0.0) {
            return Err(Error::Config(format!("step_h must be > 0, got {h}")));
        }
    }
    let (u, q) = max_score_u(problem, theta)?;
    if u < -1e-12 {
        return Err(Error::Infeasible(format!(
            "max score u({theta}) = {u} < 0: participation is irrational"
        )));
    }
    let u = u.max(0.0);
    let cost = problem.cost_fn.eval_raw(q.values(), theta);
    let g_u = winning_probability_g(score_dist.h(u), n, k, mode)?;
    if g_u <= 0.0 || u == 0.0 {
        return Ok(EquilibriumStrategy {
            quality: q,
            payment: cost + u,
            max_score: u,
            degenerate: g_u <= 0.0,
            diagnostics: EulerDiagnostics { step: 0.0, n_steps: 0 },
        });
    }
    let h = step_h.unwrap_or(u / DEFAULT_EULER_DIVISIONS as f64);
    let (markup, diag) = euler_markup(score_dist, u, g_u, n, k, mode, h);
    Ok(EquilibriumStrategy {
        quality: q,
        payment: cost + markup,
        max_score: u,
        degenerate: false,
        diagnostics: diag,
    })
}

/// Precomputed equilibrium strategies over the theta grid, for use as the
/// opponent pool in Monte Carlo verification and in the round simulator.
///
/// The markup is computed from one shared cumulative Euler integral of `g`
/// over the score support, so the whole table costs a single pass.
#[derive(Debug, Clone)]
pub struct EquilibriumTable {
    score_dist: ScoreDistribution,
    markup: Vec<f64>,
    payment: Vec<f64>,
    cost: Vec<f64>,
    pub n: usize,
    pub k: usize,
    pub mode: WinningProbMode,
}

impl EquilibriumTable {
    pub fn build(
        problem: &Problem,
        n: usize,
        k: usize,
        mode: WinningProbMode,
        theta_grid: usize,
        euler_divisions: usize,
    ) -> Result<Self> {
        let score_dist = ScoreDistribution::build(problem, theta_grid)?;
        let (u_min, u_max) = score_dist.support();
        if u_max < 0.0 {
            return Err(Error::Infeasible(
                "every type has negative max score; nobody participates".into(),
            ));
        }
        // Cumulative forward-Euler integral of g over [0, u_max].
        let upper = u_max.max(0.0);
        let n_steps = euler_divisions.max(1);
        let step = upper / n_steps as f64;
        let mut cum = Vec::with_capacity(n_steps + 1);
        cum.push(0.0);
        let mut acc = 0.0;
        for j in 0..n_steps {
            let x = j as f64 * step;
            acc += winning_probability_g(score_dist.h(x), n, k, mode)? * step;
            cum.push(acc);
        }
        let cum_at = |x: f64| -> f64 {
            if step == 0.0 {
                return 0.0;
            }
            let pos = (x / step).clamp(0.0, n_steps as f64);
            let i = pos.floor() as usize;
            if i >= n_steps {
                return cum[n_steps];
            }
            cum[i] + (pos - i as f64) * (cum[i + 1] - cum[i])
        };

        let thetas = score_dist.theta_grid().to_vec();
        let us = score_dist.u_grid().to_vec();
        let mut markup = Vec::with_capacity(thetas.len());
        let mut payment = Vec::with_capacity(thetas.len());
        let mut cost = Vec::with_capacity(thetas.len());
        for (i, &t) in thetas.iter().enumerate() {
            let q = optimal_quality(problem, t)?;
            let c = problem.cost_fn.eval_raw(q.values(), t);
            let u = us[i].max(0.0);
            let g_u = winning_probability_g(score_dist.h(u), n, k, mode)?;
            // g(u) -> 0 at the worst type; the markup limit there is 0.
            let m = if g_u > 0.0 { cum_at(u) / g_u } else { 0.0 };
            markup.push(m);
            payment.push(c + m);
            cost.push(c);
        }
        let _ = u_min;
        Ok(EquilibriumTable {
            score_dist,
            markup,
            payment,
            cost,
            n,
            k,
            mode,
        })
    }

    pub fn score_distribution(&self) -> &ScoreDistribution {
        &self.score_dist
    }

    pub fn payment_at(&self, theta: f64) -> f64 {
        interp_increasing(self.score_dist.theta_grid(), &self.payment, theta)
    }

    pub fn markup_at(&self, theta: f64) -> f64 {
        interp_increasing(self.score_dist.theta_grid(), &self.markup, theta)
    }

    pub fn cost_at(&self, theta: f64) -> f64 {
        interp_increasing(self.score_dist.theta_grid(), &self.cost, theta)
    }

    pub fn u_at(&self, theta: f64) -> f64 {
        self.score_dist.u_of_theta(theta)
    }

    /// The equilibrium bid score `b(u(theta)) = u(theta) - markup(theta)`.
    pub fn bid_score_at(&self, theta: f64) -> f64 {
        self.u_at(theta).max(0.0) - self.markup_at(theta)
    }

    /// Draw one opponent type and return its equilibrium bid score.
    pub fn sample_opponent_score<R: Rng>(&self, rng: &mut R) -> f64 {
        self.bid_score_at(self.score_dist.dist.sample(rng))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestResponsePoint {
    pub payment: f64,
    pub expected_profit: f64,
    pub se: f64,
    pub win_rate: f64,
    /// Paired-sample profit difference against the reference payment, and
    /// its standard error (common random numbers across the grid).
    pub delta_vs_reference: f64,
    pub delta_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestResponseReport {
    pub theta: f64,
    pub reference_payment: f64,
    pub reference_profit: f64,
    pub reference_se: f64,
    pub points: Vec<BestResponsePoint>,
    pub best_index: usize,
    pub mc_samples: usize,
    pub seed: u64,
}

impl BestResponseReport {
    /// Largest paired improvement over the reference across the grid.
    pub fn max_improvement(&self) -> (f64, f64) {
        let p = &self.points[self.best_index];
        (p.delta_vs_reference, p.delta_se)
    }
}

/// Monte Carlo best-response check: opponents bid their equilibrium scores,
/// the tested node keeps `q_s(theta)` and scans a payment grid. Uses common
/// opponent draws across the grid so the deviation comparison is paired.
#[allow(clippy::too_many_arguments)]
pub fn best_response_oracle(
    problem: &Problem,
    theta: f64,
    n: usize,
    k: usize,
    opponents: &EquilibriumTable,
    payment_grid: &[f64],
    reference_payment: f64,
    mc_samples: usize,
    seed: u64,
) -> Result<BestResponseReport> {
    if mc_samples < 100 {
        return Err(Error::Config(format!(
            "mc_samples = {mc_samples} is statistically meaningless; need >= 100"
        )));
    }
    if payment_grid.is_empty() {
        return Err(Error::Config("payment grid is empty".into()));
    }
    if n < 2 || k == 0 || k > n {
        return Err(Error::Config(format!("bad (N, K) = ({n}, {k})")));
    }
    let (u, q) = max_score_u(problem, theta)?;
    let s_val = problem.s.eval(q.values());
    let cost = problem.cost_fn.eval_raw(q.values(), theta);
    let _ = u;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // K-th largest opponent score per sample: the score we must beat.
    let mut thresholds = Vec::with_capacity(mc_samples);
    let mut buf = vec![0.0f64; n - 1];
    for _ in 0..mc_samples {
        for slot in buf.iter_mut() {
            *slot = opponents.sample_opponent_score(&mut rng);
        }
        let threshold = if n - 1 < k {
            f64::NEG_INFINITY
        } else {
            let idx = k - 1;
            *order_stat_desc(&mut buf, idx)
        };
        thresholds.push(threshold);
    }

    let eval = |p: f64| -> (f64, f64, f64, Vec<f64>) {
        let score = s_val - p;
        let margin = p - cost;
        let mut profits = Vec::with_capacity(mc_samples);
        let mut wins = 0usize;
        for &t in &thresholds {
            let win = score > t;
            if win {
                wins += 1;
            }
            profits.push(if win { margin } else { 0.0 });
        }
        let mean = profits.iter().sum::<f64>() / mc_samples as f64;
        let var = profits
            .iter()
            .map(|x| (x - mean) * (x - mean))
            .sum::<f64>()
            / (mc_samples as f64 - 1.0);
        let se = (var / mc_samples as f64).sqrt();
        (mean, se, wins as f64 / mc_samples as f64, profits)
    };

    let (ref_profit, ref_se, _, ref_profits) = eval(reference_payment);

    let mut points = Vec::with_capacity(payment_grid.len());
    let mut best_index = 0;
    let mut best_delta = f64::NEG_INFINITY;
    for (i, &p) in payment_grid.iter().enumerate() {
        let (mean, se, win_rate, profits) = eval(p);
        let diffs: Vec<f64> = profits
            .iter()
            .zip(&ref_profits)
            .map(|(a, b)| a - b)
            .collect();
        let dmean = diffs.iter().sum::<f64>() / mc_samples as f64;
        let dvar = diffs
            .iter()
            .map(|x| (x - dmean) * (x - dmean))
            .sum::<f64>()
            / (mc_samples as f64 - 1.0);
        let dse = (dvar / mc_samples as f64).sqrt();
        if dmean > best_delta {
            best_delta = dmean;
            best_index = i;
        }
        points.push(BestResponsePoint {
            payment: p,
            expected_profit: mean,
            se,
            win_rate,
            delta_vs_reference: dmean,
            delta_se: dse,
        });
    }

    Ok(BestResponseReport {
        theta,
        reference_payment,
        reference_profit: ref_profit,
        reference_se: ref_se,
        points,
        best_index,
        mc_samples,
        seed,
    })
}

/// The `idx`-th largest element (0-based) of `buf`, reordering it in place.
fn order_stat_desc(buf: &mut [f64], idx: usize) -> &f64 {
    let (_, v, _) = buf.select_nth_unstable_by(idx, |a, b| b.partial_cmp(a).unwrap());
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sqrt_problem() -> Problem {
        // s(q) = 2 sqrt(q), c = theta q, theta ~ U[1, 2].
        Problem::new(
            SFunc::custom(|q| 2.0 * q[0].sqrt()),
            CostFn::AdditiveLinear { betas: vec![1.0] },
            ThetaDist::Uniform { lo: 1.0, hi: 2.0 },
            QualityBox::new(vec![0.0], vec![10.0]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn optimal_quality_closed_form() {
        let p = sqrt_problem();
        // argmax 2 sqrt(q) - theta q = (1/theta)^2
        let q = optimal_quality(&p, 1.0).unwrap();
        assert!((q.values()[0] - 1.0).abs() < 1e-6);
        let q = optimal_quality(&p, 2.0).unwrap();
        assert!((q.values()[0] - 0.25).abs() < 1e-6);
    }

    #[test]
    fn optimal_quality_cost_dominates_at_large_theta() {
        let p = Problem::new(
            SFunc::custom(|q| 2.0 * q[0].sqrt()),
            CostFn::AdditiveLinear { betas: vec![1.0] },
            ThetaDist::Uniform { lo: 1.0, hi: 200.0 },
            QualityBox::new(vec![0.0], vec![10.0]).unwrap(),
        )
        .unwrap();
        let q = optimal_quality(&p, 200.0).unwrap();
        assert!(q.values()[0] < 1e-3);
    }

    #[test]
    fn optimal_quality_linear_corner() {
        // s additive(1,1), c = theta(0.5 q1 + 0.5 q2), theta = 1: slope
        // 1 - 0.5 > 0 in both coordinates, maximizer is the corner (1,1).
        let p = Problem::new(
            SFunc::custom(|q| q[0] + q[1]),
            CostFn::AdditiveLinear {
                betas: vec![0.5, 0.5],
            },
            ThetaDist::Uniform { lo: 0.5, hi: 1.5 },
            QualityBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(),
        )
        .unwrap();
        let q = optimal_quality(&p, 1.0).unwrap();
        assert!((q.values()[0] - 1.0).abs() < 1e-9);
        assert!((q.values()[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn max_score_examples() {
        let p = sqrt_problem();
        let (u, _) = max_score_u(&p, 1.0).unwrap();
        assert!((u - 1.0).abs() < 1e-6);
        // theta = 0.5 would give u = 2 (q_s = 4), but 0.5 is outside the
        // distribution support; the objective itself still evaluates.
        let p05 = Problem::new(
            SFunc::custom(|q| 2.0 * q[0].sqrt()),
            CostFn::AdditiveLinear { betas: vec![1.0] },
            ThetaDist::Uniform { lo: 0.4, hi: 2.0 },
            QualityBox::new(vec![0.0], vec![10.0]).unwrap(),
        )
        .unwrap();
        let (u, q) = max_score_u(&p05, 0.5).unwrap();
        assert!((q.values()[0] - 4.0).abs() < 1e-5);
        assert!((u - 2.0).abs() < 1e-6);
    }

    #[test]
    fn winning_probability_edges() {
        for mode in [WinningProbMode::Verbatim, WinningProbMode::OrderStatistics] {
            assert_eq!(winning_probability_g(1.0, 7, 3, mode).unwrap(), 1.0);
            assert_eq!(winning_probability_g(0.0, 7, 3, mode).unwrap(), 0.0);
        }
    }

    #[test]
    fn winning_probability_n3_k3_discrepancy() {
        let verbatim =
            winning_probability_g(0.5, 3, 3, WinningProbMode::Verbatim).unwrap();
        assert!((verbatim - 0.75).abs() < 1e-12);
        let order =
            winning_probability_g(0.5, 3, 3, WinningProbMode::OrderStatistics).unwrap();
        assert!((order - 1.0).abs() < 1e-12);
    }

    #[test]
    fn verbatim_mode_collapses_to_single_power_at_k2() {
        // sum_{i=1}^{2} (1-h)^{i-1} h^{N-i} = h^{N-2}
        for n in [3usize, 5, 20] {
            for h in [0.1, 0.5, 0.9] {
                let g = winning_probability_g(h, n, 2, WinningProbMode::Verbatim).unwrap();
                assert!((g - h.powi(n as i32 - 2)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn score_distribution_is_valid_cdf() {
        let p = sqrt_problem();
        let sd = ScoreDistribution::build(&p, 257).unwrap();
        // u(theta) = 1/theta on [1,2] => support [0.5, 1].
        let (lo, hi) = sd.support();
        assert!((lo - 0.5).abs() < 1e-6);
        assert!((hi - 1.0).abs() < 1e-6);
        assert_eq!(sd.h(lo), 0.0);
        assert_eq!(sd.h(hi), 1.0);
        // H(x) = 2 - 1/x on the support.
        let mut prev = 0.0;
        for i in 0..=100 {
            let x = lo + (hi - lo) * i as f64 / 100.0;
            let h = sd.h(x);
            assert!(h >= prev - 1e-12, "H must be nondecreasing");
            assert!((h - (2.0 - 1.0 / x)).abs() < 1e-3);
            prev = h;
        }
    }

    #[test]
    fn equilibrium_matches_k1_closed_form() {
        // Closed form: p = c + int_theta^2 (1/t^2) ((2-t)/(2-theta))^{N-1} dt.
        let p = sqrt_problem();
        let sd = ScoreDistribution::build(&p, DEFAULT_THETA_GRID).unwrap();
        let n = 5;
        for &theta in &[1.1, 1.4, 1.7] {
            let strat = equilibrium_payment(
                &p,
                theta,
                n,
                1,
                WinningProbMode::OrderStatistics,
                None,
                &sd,
            )
            .unwrap();
            let closed = k1_closed_form_payment(theta, n);
            let rel = (strat.payment - closed).abs() / closed.abs();
            assert!(
                rel < 1e-2,
                "theta={theta}: euler {} vs closed {closed} (rel {rel})",
                strat.payment
            );
        }
    }

    // Independent quadrature of the classic single-winner closed form for the
    // s = 2 sqrt(q), c = theta q, theta ~ U[1,2] family.
    fn k1_closed_form_payment(theta: f64, n: usize) -> f64 {
        let c = 1.0 / theta; // c(q_s, theta) = theta (1/theta)^2
        let f = |t: f64| (1.0 / (t * t)) * ((2.0 - t) / (2.0 - theta)).powi(n as i32 - 1);
        c + simpson(f, theta, 2.0, 4000)
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let n = if n % 2 == 0 { n } else { n + 1 };
        let h = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(a + i as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn worst_type_has_zero_markup() {
        let p = sqrt_problem();
        let sd = ScoreDistribution::build(&p, 512).unwrap();
        let strat =
            equilibrium_payment(&p, 2.0, 5, 1, WinningProbMode::OrderStatistics, None, &sd)
                .unwrap();
        // u(2) = 0.5 > 0 but H(0.5) = 0 so g = 0: degenerate per contract.
        assert!(strat.degenerate);
        let cost = 0.5; // theta q_s = 2 * 0.25
        assert!((strat.payment - (cost + strat.max_score)).abs() < 1e-6);
    }

    #[test]
    fn euler_and_trapezoid_agree() {
        let p = sqrt_problem();
        let sd = ScoreDistribution::build(&p, 512).unwrap();
        let theta = 1.3;
        let strat =
            equilibrium_payment(&p, theta, 10, 3, WinningProbMode::OrderStatistics, None, &sd)
                .unwrap();
        let u = strat.max_score;
        let trap = trapezoid_markup(&sd, u, 10, 3, WinningProbMode::OrderStatistics, 10_000)
            .unwrap();
        let euler = strat.payment - 1.0 / theta;
        assert!(
            (euler - trap).abs() < 5.0 * u / 10_000.0,
            "euler {euler} vs trapezoid {trap}"
        );
    }

    #[test]
    fn markup_nonincreasing_in_theta() {
        let p = sqrt_problem();
        let table =
            EquilibriumTable::build(&p, 10, 3, WinningProbMode::OrderStatistics, 257, 4000)
                .unwrap();
        let mut prev = f64::INFINITY;
        for i in 0..=20 {
            let theta = 1.0 + i as f64 / 20.0;
            let m = table.markup_at(theta);
            assert!(
                m <= prev + 1e-6,
                "markup must be nonincreasing: {m} after {prev} at theta {theta}"
            );
            prev = m;
        }
    }

    #[test]
    fn table_matches_pointwise_payment() {
        let p = sqrt_problem();
        let sd = ScoreDistribution::build(&p, DEFAULT_THETA_GRID).unwrap();
        let table = EquilibriumTable::build(
            &p,
            10,
            3,
            WinningProbMode::OrderStatistics,
            DEFAULT_THETA_GRID,
            DEFAULT_EULER_DIVISIONS,
        )
        .unwrap();
        for &theta in &[1.1, 1.5, 1.8] {
            let pointwise = equilibrium_payment(
                &p,
                theta,
                10,
                3,
                WinningProbMode::OrderStatistics,
                None,
                &sd,
            )
            .unwrap()
            .payment;
            let tab = table.payment_at(theta);
            assert!(
                (pointwise - tab).abs() / pointwise < 5e-3,
                "theta={theta}: {pointwise} vs {tab}"
            );
        }
    }

    #[test]
    fn oracle_refuses_tiny_sample_counts() {
        let p = sqrt_problem();
        let table =
            EquilibriumTable::build(&p, 5, 1, WinningProbMode::OrderStatistics, 128, 1000)
                .unwrap();
        let err = best_response_oracle(&p, 1.3, 5, 1, &table, &[0.5], 0.5, 50, 7);
        assert!(err.is_err());
    }

    #[test]
    fn oracle_zero_margin_gives_zero_profit() {
        let p = sqrt_problem();
        let table =
            EquilibriumTable::build(&p, 5, 1, WinningProbMode::OrderStatistics, 128, 1000)
                .unwrap();
        let theta = 1.3;
        // Use the oracle's own numeric quality so the margin is exactly 0.
        let (_, q) = max_score_u(&p, theta).unwrap();
        let cost = p.cost_fn.eval_raw(q.values(), theta);
        assert!((cost - 1.0 / theta).abs() < 1e-4);
        let rep =
            best_response_oracle(&p, theta, 5, 1, &table, &[cost], cost, 1000, 7).unwrap();
        assert!(rep.points[0].expected_profit.abs() < 1e-12);
    }

    #[test]
    fn oracle_overpriced_bid_never_wins() {
        let p = sqrt_problem();
        let table =
            EquilibriumTable::build(&p, 5, 1, WinningProbMode::OrderStatistics, 128, 1000)
                .unwrap();
        // Payment above s(q_s) makes the score negative while every
        // opponent score is >= 0.
        let theta = 1.3;
        let (_, q) = max_score_u(&p, theta).unwrap();
        let s_val = 2.0 * q.values()[0].sqrt();
        let rep = best_response_oracle(
            &p,
            theta,
            5,
            1,
            &table,
            &[s_val + 1.0],
            s_val + 1.0,
            1000,
            7,
        )
        .unwrap();
        assert_eq!(rep.points[0].win_rate, 0.0);
        assert_eq!(rep.points[0].expected_profit, 0.0);
    }
}
