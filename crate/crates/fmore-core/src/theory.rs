//! Executable checks of the mechanism's claimed properties: Monte Carlo
//! game oracles, closed-form comparisons, and selection-frequency tests.
//! Every check carries its seed and tolerance so a failure replays exactly,
//! and each family has a negative control proving the test can fail.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::auction::{
    AuctionConfig, Bid, CostFn, QualityVector, ScoreKind, ScoringRule, ThetaDist,
    WinningProbMode,
};
use crate::equilibrium::{
    best_response_oracle, max_score_u, optimal_quality, winning_probability_g,
    EquilibriumTable, Problem, QualityBox, SFunc,
};
use crate::error::{Error, Result};
use crate::mechanism::determine_winners;

/// Outcome of one verification check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    /// A known, expected divergence or degenerate regime; never counts as
    /// a verification failure.
    pub documented: bool,
    pub seed: u64,
    pub tolerance: f64,
    pub metrics: serde_json::Value,
    pub details: String,
}

impl CheckReport {
    /// True when this report should fail the suite.
    pub fn failing(&self) -> bool {
        !self.passed && !self.documented
    }
}

/// Sampling effort knobs shared by the checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckSettings {
    pub mc_samples: usize,
    pub trials: usize,
    pub payment_grid: usize,
    pub theta_samples: Vec<f64>,
    pub seed: u64,
}

impl CheckSettings {
    /// Fast settings for unit tests.
    pub fn quick(seed: u64) -> Self {
        CheckSettings {
            mc_samples: 20_000,
            trials: 20_000,
            payment_grid: 21,
            theta_samples: vec![1.2, 1.5, 1.8],
            seed,
        }
    }

    /// Full effort used by the verification subcommand.
    pub fn full(seed: u64) -> Self {
        CheckSettings {
            mc_samples: 100_000,
            trials: 100_000,
            payment_grid: 41,
            theta_samples: vec![1.1, 1.3, 1.5, 1.7, 1.9],
            seed,
        }
    }
}

/// The 1-dimensional reference bidding game: `s = 2 sqrt(q)`, `c = theta q`,
/// `theta ~ U[1, 2]`. Closed forms exist for every quantity, which makes it
/// the standard fixture across the checks.
pub fn reference_problem() -> Problem {
    Problem::new(
        SFunc::custom(|q| 2.0 * q[0].sqrt()),
        CostFn::AdditiveLinear { betas: vec![1.0] },
        ThetaDist::Uniform { lo: 1.0, hi: 2.0 },
        QualityBox::new(vec![0.0], vec![10.0]).unwrap(),
    )
    .expect("reference problem is well formed")
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// No payment deviation beats the equilibrium payment by more than two
/// combined standard errors plus a quadrature allowance.
pub fn check_nash(n: usize, k: usize, settings: &CheckSettings) -> Result<CheckReport> {
    let problem = reference_problem();
    let table = EquilibriumTable::build(
        &problem,
        n,
        k,
        WinningProbMode::OrderStatistics,
        512,
        10_000,
    )?;
    let mut worst: Option<serde_json::Value> = None;
    let mut passed = true;
    let mut per_theta = Vec::new();
    for (i, &theta) in settings.theta_samples.iter().enumerate() {
        let (_, q) = max_score_u(&problem, theta)?;
        let s_val = problem.s.eval(q.values());
        let cost = problem.cost_fn.eval_raw(q.values(), theta);
        let p_ne = table.payment_at(theta);
        let mut grid = linspace(cost, s_val * 0.999, settings.payment_grid);
        grid.push(p_ne);
        let rep = best_response_oracle(
            &problem,
            theta,
            n,
            k,
            &table,
            &grid,
            p_ne,
            settings.mc_samples,
            settings.seed.wrapping_add(i as u64),
        )?;
        let (delta, delta_se) = rep.max_improvement();
        // Allowance for Euler discretization and table interpolation.
        let quad_tol = 0.01 * table.markup_at(theta).abs() + 1e-4;
        let tol = 2.0 * delta_se + quad_tol;
        let ok = delta <= tol;
        passed &= ok;
        let entry = json!({
            "theta": theta,
            "equilibrium_payment": p_ne,
            "reference_profit": rep.reference_profit,
            "reference_se": rep.reference_se,
            "best_improvement": delta,
            "improvement_se": delta_se,
            "tolerance": tol,
            "ok": ok,
        });
        if !ok {
            worst = Some(entry.clone());
        }
        per_theta.push(entry);
    }
    Ok(CheckReport {
        name: format!("nash_no_profitable_deviation_n{n}_k{k}"),
        passed,
        documented: false,
        seed: settings.seed,
        tolerance: 2.0,
        metrics: json!({ "per_theta": per_theta, "worst": worst }),
        details: "equilibrium payment survives a payment-grid best-response scan".into(),
    })
}

/// Negative control: a 1.5x inflated "equilibrium" payment must be beaten
/// by the grid. The control passes when the oracle detects the deviation.
pub fn check_nash_negative_control(
    n: usize,
    k: usize,
    settings: &CheckSettings,
) -> Result<CheckReport> {
    let problem = reference_problem();
    let table = EquilibriumTable::build(
        &problem,
        n,
        k,
        WinningProbMode::OrderStatistics,
        512,
        10_000,
    )?;
    let theta = settings.theta_samples[settings.theta_samples.len() / 2];
    let (_, q) = max_score_u(&problem, theta)?;
    let s_val = problem.s.eval(q.values());
    let cost = problem.cost_fn.eval_raw(q.values(), theta);
    let p_bad = (1.5 * table.payment_at(theta)).min(s_val * 0.999);
    let grid = linspace(cost, s_val * 0.999, settings.payment_grid);
    let rep = best_response_oracle(
        &problem,
        theta,
        n,
        k,
        &table,
        &grid,
        p_bad,
        settings.mc_samples,
        settings.seed,
    )?;
    let (delta, delta_se) = rep.max_improvement();
    let detected = delta > 2.0 * delta_se;
    Ok(CheckReport {
        name: format!("nash_negative_control_n{n}_k{k}"),
        passed: detected,
        documented: false,
        seed: settings.seed,
        tolerance: 2.0,
        metrics: json!({
            "theta": theta,
            "perturbed_payment": p_bad,
            "best_improvement": delta,
            "improvement_se": delta_se,
        }),
        details: "inflated payment is beaten by the grid, so the oracle can fail".into(),
    })
}

/// N = K: everyone wins surely, so profit is maximized at the score cap.
/// Reported as a documented degenerate regime, not a failure.
pub fn check_nash_degenerate_all_win(settings: &CheckSettings) -> Result<CheckReport> {
    let problem = reference_problem();
    let (n, k) = (2, 2);
    let table = EquilibriumTable::build(
        &problem,
        n,
        k,
        WinningProbMode::OrderStatistics,
        256,
        4_000,
    )?;
    let theta = 1.5;
    let (_, q) = max_score_u(&problem, theta)?;
    let s_val = problem.s.eval(q.values());
    let cost = problem.cost_fn.eval_raw(q.values(), theta);
    let grid = linspace(cost, s_val * 0.999, settings.payment_grid);
    let rep = best_response_oracle(
        &problem,
        theta,
        n,
        k,
        &table,
        &grid,
        table.payment_at(theta),
        settings.mc_samples.max(100),
        settings.seed,
    )?;
    let best = &rep.points[rep.best_index];
    let boundary = (best.payment - grid.last().unwrap()).abs() < 1e-12;
    Ok(CheckReport {
        name: "nash_degenerate_n2_k2_all_win".into(),
        passed: boundary,
        documented: true,
        seed: settings.seed,
        tolerance: 0.0,
        metrics: json!({
            "best_payment": best.payment,
            "grid_cap": grid.last(),
            "win_rate": best.win_rate,
        }),
        details: "with N = K every bid wins, so the best response sits at the payment cap; \
                  the interior equilibrium analysis does not apply"
            .into(),
    })
}

fn equilibrium_profit(
    problem: &Problem,
    n: usize,
    k: usize,
    theta: f64,
    mc_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let table = EquilibriumTable::build(
        problem,
        n,
        k,
        WinningProbMode::OrderStatistics,
        512,
        10_000,
    )?;
    let p_ne = table.payment_at(theta);
    let rep = best_response_oracle(problem, theta, n, k, &table, &[p_ne], p_ne, mc_samples, seed)?;
    Ok((rep.reference_profit, rep.reference_se))
}

/// Expected equilibrium profit is strictly decreasing in the node count,
/// beyond two combined standard errors, for an interior type.
pub fn check_profit_decreasing_in_n(
    ns: &[usize],
    k: usize,
    theta: f64,
    settings: &CheckSettings,
) -> Result<CheckReport> {
    let problem = reference_problem();
    let mut profits = Vec::new();
    for (i, &n) in ns.iter().enumerate() {
        let (p, se) = equilibrium_profit(
            &problem,
            n,
            k,
            theta,
            settings.mc_samples,
            settings.seed.wrapping_add(i as u64),
        )?;
        profits.push((n, p, se));
    }
    let mut passed = true;
    for w in profits.windows(2) {
        let (_, p1, se1) = w[0];
        let (_, p2, se2) = w[1];
        let gap = p1 - p2;
        let need = 2.0 * (se1 * se1 + se2 * se2).sqrt();
        passed &= gap > need;
    }
    Ok(CheckReport {
        name: format!("profit_decreasing_in_n_k{k}"),
        passed,
        documented: false,
        seed: settings.seed,
        tolerance: 2.0,
        metrics: json!({
            "theta": theta,
            "profits": profits
                .iter()
                .map(|(n, p, se)| json!({ "n": n, "profit": p, "se": se }))
                .collect::<Vec<_>>(),
        }),
        details: "expected profit falls as competition grows".into(),
    })
}

/// Expected equilibrium profit is strictly increasing in the winner count.
pub fn check_profit_increasing_in_k(
    ks: &[usize],
    n: usize,
    theta: f64,
    settings: &CheckSettings,
) -> Result<CheckReport> {
    let problem = reference_problem();
    let mut profits = Vec::new();
    for (i, &k) in ks.iter().enumerate() {
        let (p, se) = equilibrium_profit(
            &problem,
            n,
            k,
            theta,
            settings.mc_samples,
            settings.seed.wrapping_add(100 + i as u64),
        )?;
        profits.push((k, p, se));
    }
    let mut passed = true;
    for w in profits.windows(2) {
        let (_, p1, se1) = w[0];
        let (_, p2, se2) = w[1];
        let gap = p2 - p1;
        let need = 2.0 * (se1 * se1 + se2 * se2).sqrt();
        passed &= gap > need;
    }
    Ok(CheckReport {
        name: format!("profit_increasing_in_k_n{n}"),
        passed,
        documented: false,
        seed: settings.seed,
        tolerance: 2.0,
        metrics: json!({
            "theta": theta,
            "profits": profits
                .iter()
                .map(|(k, p, se)| json!({ "k": k, "profit": p, "se": se }))
                .collect::<Vec<_>>(),
        }),
        details: "expected profit rises with the number of winners".into(),
    })
}

fn identical_bids(n: usize) -> Vec<Bid> {
    (0..n)
        .map(|i| {
            Bid::new(
                format!("node{i:02}"),
                QualityVector::new(vec![1.0]).unwrap(),
                0.5,
            )
            .unwrap()
        })
        .collect()
}

fn plain_rule() -> ScoringRule {
    ScoringRule::new(ScoreKind::Additive { coeffs: vec![1.0] }, None).unwrap()
}

/// With identical types (hence identical scores and coin-flip ties) every
/// node is selected with frequency K/N, within a 3-sigma binomial band,
/// for each acceptance probability psi. Exercises the shortfall-fill path.
pub fn check_uniform_selection(
    n: usize,
    k: usize,
    psis: &[f64],
    trials: usize,
    seed: u64,
) -> Result<CheckReport> {
    let bids = identical_bids(n);
    let p = k as f64 / n as f64;
    let band = 3.0 * (p * (1.0 - p) / trials as f64).sqrt();
    let mut passed = true;
    let mut per_psi = Vec::new();
    for &psi in psis {
        let cfg = AuctionConfig::new(n, k, psi, plain_rule(), WinningProbMode::OrderStatistics)?;
        let mut wins = vec![0usize; n];
        for t in 0..trials {
            let ws = determine_winners(&bids, &cfg, seed ^ (t as u64).wrapping_mul(0x9e37))?;
            for w in &ws.winners {
                let idx: usize = w.node_id[4..].parse().expect("fixture id");
                wins[idx] += 1;
            }
        }
        let freqs: Vec<f64> = wins.iter().map(|&w| w as f64 / trials as f64).collect();
        let max_dev = freqs.iter().map(|f| (f - p).abs()).fold(0.0, f64::max);
        let ok = max_dev <= band;
        passed &= ok;
        per_psi.push(json!({
            "psi": psi,
            "frequencies": freqs,
            "max_deviation": max_dev,
            "band": band,
            "ok": ok,
        }));
    }
    Ok(CheckReport {
        name: format!("uniform_selection_n{n}_k{k}"),
        passed,
        documented: false,
        seed,
        tolerance: band,
        metrics: json!({ "expected": p, "per_psi": per_psi }),
        details: "identical scores are selected uniformly at rate K/N under every psi".into(),
    })
}

/// K = N boundary: every node wins every trial.
pub fn check_uniform_selection_all_win(n: usize, trials: usize, seed: u64) -> Result<CheckReport> {
    let bids = identical_bids(n);
    let cfg = AuctionConfig::new(n, n, 0.5, plain_rule(), WinningProbMode::OrderStatistics)?;
    let mut ok = true;
    for t in 0..trials.min(1000) {
        let ws = determine_winners(&bids, &cfg, seed ^ t as u64)?;
        ok &= ws.winners.len() == n;
    }
    Ok(CheckReport {
        name: format!("uniform_selection_k_equals_n_{n}"),
        passed: ok,
        documented: false,
        seed,
        tolerance: 0.0,
        metrics: json!({ "n": n }),
        details: "with K = N the selection frequency is exactly 1".into(),
    })
}

/// Negative control: distinct scores must break uniformity at psi = 1.
/// Passes when a deviation beyond the band is detected.
pub fn check_uniform_selection_negative_control(
    n: usize,
    k: usize,
    trials: usize,
    seed: u64,
) -> Result<CheckReport> {
    let bids: Vec<Bid> = (0..n)
        .map(|i| {
            Bid::new(
                format!("node{i:02}"),
                QualityVector::new(vec![1.0 + i as f64]).unwrap(),
                0.5,
            )
            .unwrap()
        })
        .collect();
    let cfg = AuctionConfig::new(n, k, 1.0, plain_rule(), WinningProbMode::OrderStatistics)?;
    let p = k as f64 / n as f64;
    let band = 3.0 * (p * (1.0 - p) / trials as f64).sqrt();
    let mut wins = vec![0usize; n];
    for t in 0..trials {
        let ws = determine_winners(&bids, &cfg, seed ^ (t as u64).wrapping_mul(0x51_7c))?;
        for w in &ws.winners {
            let idx: usize = w.node_id[4..].parse().expect("fixture id");
            wins[idx] += 1;
        }
    }
    let freqs: Vec<f64> = wins.iter().map(|&w| w as f64 / trials as f64).collect();
    let max_dev = freqs.iter().map(|f| (f - p).abs()).fold(0.0, f64::max);
    Ok(CheckReport {
        name: format!("uniform_selection_negative_control_n{n}_k{k}"),
        passed: max_dev > band,
        documented: false,
        seed,
        tolerance: band,
        metrics: json!({ "frequencies": freqs, "max_deviation": max_dev, "band": band }),
        details: "heterogeneous scores deviate from K/N, so the band test can fail".into(),
    })
}

/// Quality choice separates from the payment: replacing any (q, p) by
/// (q_s, p + s(q_s) - s(q)) keeps the score identical and weakly raises
/// the profit margin.
pub fn check_separability(theta_samples: &[f64], seed: u64) -> Result<CheckReport> {
    let problems = vec![
        ("sqrt_1d", reference_problem()),
        (
            "additive_2d",
            Problem::new(
                SFunc::custom(|q| q[0].sqrt() + 2.0 * q[1].sqrt()),
                CostFn::AdditiveLinear {
                    betas: vec![0.5, 0.8],
                },
                ThetaDist::Uniform { lo: 1.0, hi: 2.0 },
                QualityBox::new(vec![0.0, 0.0], vec![8.0, 8.0]).unwrap(),
            )?,
        ),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut passed = true;
    let mut cases = Vec::new();
    for (label, problem) in &problems {
        for &theta in theta_samples {
            let q_s = optimal_quality(problem, theta)?;
            let s_star = problem.s.eval(q_s.values());
            let margin_star = s_star - problem.cost_fn.eval_raw(q_s.values(), theta);
            for _ in 0..20 {
                let q: Vec<f64> = problem
                    .bounds
                    .lo
                    .iter()
                    .zip(&problem.bounds.hi)
                    .map(|(&lo, &hi)| rng.gen_range(lo..=hi))
                    .collect();
                let p: f64 = rng.gen_range(0.0..=s_star.max(1.0));
                let s_q = problem.s.eval(&q);
                let margin = s_q - problem.cost_fn.eval_raw(&q, theta);
                // Adjusted bid (q_s, p + s(q_s) - s(q)).
                let p_adj = p + s_star - s_q;
                let score_before = s_q - p;
                let score_after = s_star - p_adj;
                let score_equal = (score_before - score_after).abs() < 1e-12;
                // q_s is numeric, allow the refinement tolerance.
                let margin_ok = margin_star - margin >= -1e-9;
                passed &= score_equal && margin_ok;
                if !(score_equal && margin_ok) {
                    cases.push(json!({
                        "family": label,
                        "theta": theta,
                        "q": q,
                        "margin_gap": margin_star - margin,
                        "score_gap": score_before - score_after,
                    }));
                }
            }
        }
    }
    Ok(CheckReport {
        name: "quality_payment_separability".into(),
        passed,
        documented: false,
        seed,
        tolerance: 1e-9,
        metrics: json!({ "failures": cases }),
        details: "moving any bid to the surplus-maximizing quality at equal score \
                  weakly raises the margin"
            .into(),
    })
}

/// Independent numeric maximizer of `prod q_i^{alpha_i}` on the budget
/// plane `theta sum beta_i q_i = c0`: pairwise golden-section mass
/// transfers on the simplex, never using the closed form.
pub fn maximize_product_on_budget(
    alpha: &[f64],
    beta: &[f64],
    theta: f64,
    c0: f64,
) -> Result<Vec<f64>> {
    let m = alpha.len();
    if m < 2 || beta.len() != m {
        return Err(Error::Config("need matching alpha/beta with >= 2 dims".into()));
    }
    if alpha.iter().chain(beta).any(|x| *x <= 0.0) || theta <= 0.0 || c0 <= 0.0 {
        return Err(Error::Config("ratio check needs positive parameters".into()));
    }
    let mut w = vec![1.0 / m as f64; m];
    let pair_obj = |ai: f64, aj: f64, t: f64, total: f64| ai * t.ln() + aj * (total - t).ln();
    for _ in 0..200 {
        let mut shift = 0.0f64;
        for i in 0..m {
            for j in (i + 1)..m {
                let total = w[i] + w[j];
                let (mut lo, mut hi) = (total * 1e-9, total * (1.0 - 1e-9));
                // Golden-section maximization of the pair objective.
                let phi = 0.618_033_988_749_894_8_f64;
                let mut x1 = hi - phi * (hi - lo);
                let mut x2 = lo + phi * (hi - lo);
                let mut f1 = pair_obj(alpha[i], alpha[j], x1, total);
                let mut f2 = pair_obj(alpha[i], alpha[j], x2, total);
                while hi - lo > 1e-14 * total {
                    if f1 < f2 {
                        lo = x1;
                        x1 = x2;
                        f1 = f2;
                        x2 = lo + phi * (hi - lo);
                        f2 = pair_obj(alpha[i], alpha[j], x2, total);
                    } else {
                        hi = x2;
                        x2 = x1;
                        f2 = f1;
                        x1 = hi - phi * (hi - lo);
                        f1 = pair_obj(alpha[i], alpha[j], x1, total);
                    }
                }
                let t = 0.5 * (lo + hi);
                shift = shift.max((w[i] - t).abs());
                w[j] = total - t;
                w[i] = t;
            }
        }
        if shift < 1e-13 {
            break;
        }
    }
    Ok(w
        .iter()
        .zip(beta)
        .map(|(wi, bi)| c0 * wi / (theta * bi))
        .collect())
}

/// The budget-constrained product maximizer splits resources in the ratio
/// `q_i / q_j = (alpha_i / alpha_j)(beta_j / beta_i)`, matching the
/// closed form `q_i = alpha_i c0 / (theta beta_i)` when alphas sum to 1.
pub fn check_resource_ratio() -> Result<CheckReport> {
    let cases: Vec<(Vec<f64>, Vec<f64>, f64, f64)> = vec![
        (vec![0.5, 0.5], vec![0.5, 0.5], 1.0, 1.0),
        (vec![0.75, 0.25], vec![0.5, 0.5], 1.0, 1.0),
        (vec![0.5, 0.3, 0.2], vec![0.4, 0.8, 0.2], 1.3, 2.0),
    ];
    let tol = 1e-4;
    let mut passed = true;
    let mut out = Vec::new();
    for (alpha, beta, theta, c0) in &cases {
        let q = maximize_product_on_budget(alpha, beta, *theta, *c0)?;
        let alpha_sum: f64 = alpha.iter().sum();
        let mut worst = 0.0f64;
        for i in 0..q.len() {
            for j in 0..q.len() {
                if i == j {
                    continue;
                }
                let expect = (alpha[i] / alpha[j]) * (beta[j] / beta[i]);
                let rel = (q[i] / q[j] - expect).abs() / expect;
                worst = worst.max(rel);
            }
            // Closed form for unit alpha mass.
            if (alpha_sum - 1.0).abs() < 1e-12 {
                let closed = alpha[i] * c0 / (theta * beta[i]);
                worst = worst.max((q[i] - closed).abs() / closed);
            }
        }
        passed &= worst <= tol;
        out.push(json!({
            "alpha": alpha,
            "beta": beta,
            "q": q,
            "worst_relative_error": worst,
        }));
    }
    Ok(CheckReport {
        name: "resource_ratio_closed_form".into(),
        passed,
        documented: false,
        seed: 0,
        tolerance: tol,
        metrics: json!({ "cases": out }),
        details: "numeric budget-constrained optimum matches the multiplier closed form".into(),
    })
}

/// Understating any quality component under a strictly increasing rule
/// strictly lowers the score, hence the win probability. Corroborated by
/// a Monte Carlo win-rate comparison against random opponent scores.
pub fn check_understatement_ic(trials: usize, seed: u64) -> Result<CheckReport> {
    let rule = ScoringRule::new(
        ScoreKind::Additive {
            coeffs: vec![1.0, 1.0],
        },
        None,
    )?;
    let q = QualityVector::new(vec![2.0, 3.0])?;
    let payment = 1.0;
    let honest = rule.score(&Bid::new("a", q.clone(), payment)?)?;
    let shaved = rule.score(&Bid::new(
        "a",
        QualityVector::new(vec![1.8, 2.7])?,
        payment,
    )?)?;
    // Additive rule: a 10% understatement removes exactly 10% of s(q).
    let exact_drop = (honest - shaved - 0.1 * 5.0).abs() < 1e-12;
    let score_strict = shaved < honest;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut wins_honest, mut wins_shaved) = (0usize, 0usize);
    for _ in 0..trials {
        let threshold: f64 = rng.gen_range(0.0..6.0);
        if honest > threshold {
            wins_honest += 1;
        }
        if shaved > threshold {
            wins_shaved += 1;
        }
    }
    let mc_ok = wins_shaved <= wins_honest;
    Ok(CheckReport {
        name: "understatement_lowers_score".into(),
        passed: score_strict && exact_drop && mc_ok,
        documented: false,
        seed,
        tolerance: 0.0,
        metrics: json!({
            "honest_score": honest,
            "shaved_score": shaved,
            "honest_win_rate": wins_honest as f64 / trials as f64,
            "shaved_win_rate": wins_shaved as f64 / trials as f64,
        }),
        details: "declared understatement can only reduce the score and win rate".into(),
    })
}

/// Documented edge: under a min-weighted rule an understatement of a
/// non-binding dimension leaves the score unchanged, because min is not
/// strictly increasing. Recorded, never failing.
pub fn check_understatement_min_rule_edge() -> Result<CheckReport> {
    let rule = ScoringRule::new(
        ScoreKind::MinWeighted {
            coeffs: vec![0.5, 0.5],
        },
        None,
    )?;
    let payment = 0.2;
    let honest = rule.score(&Bid::new(
        "a",
        QualityVector::new(vec![2.0, 10.0])?,
        payment,
    )?)?;
    let shaved = rule.score(&Bid::new(
        "a",
        QualityVector::new(vec![2.0, 9.0])?,
        payment,
    )?)?;
    Ok(CheckReport {
        name: "understatement_min_rule_nonbinding_edge".into(),
        passed: (honest - shaved).abs() < 1e-15,
        documented: true,
        seed: 0,
        tolerance: 0.0,
        metrics: json!({ "honest_score": honest, "shaved_score": shaved }),
        details: "min-weighted rules are not strictly increasing: shaving a slack \
                  dimension leaves the score (and win probability) unchanged"
            .into(),
    })
}

fn grid_max_surplus(problem: &Problem, theta: f64, points: usize) -> f64 {
    // Dense 1-D grid, independent of the coordinate-ascent optimizer.
    let (lo, hi) = (problem.bounds.lo[0], problem.bounds.hi[0]);
    let mut best = f64::NEG_INFINITY;
    for i in 0..points {
        let q = lo + (hi - lo) * i as f64 / (points - 1) as f64;
        let v = problem.s.eval(&[q]) - problem.cost_fn.eval_raw(&[q], theta);
        best = best.max(v);
    }
    best
}

/// Winners at equilibrium qualities attain the maximum social surplus
/// `sum s(q_i) - c(q_i, theta_i)` over the quality box, within tolerance
/// of an independent dense-grid maximization.
pub fn check_pareto(theta_samples: &[f64], seed: u64) -> Result<CheckReport> {
    let problem = reference_problem();
    let tol = 1e-6;
    let mut surplus = 0.0;
    let mut grid_best = 0.0;
    for &theta in theta_samples {
        let q = optimal_quality(&problem, theta)?;
        surplus += problem.s.eval(q.values()) - problem.cost_fn.eval_raw(q.values(), theta);
        grid_best += grid_max_surplus(&problem, theta, 200_001);
    }
    let gap = grid_best - surplus;
    Ok(CheckReport {
        name: "pareto_winner_surplus_maximal".into(),
        passed: gap.abs() <= tol * (1.0 + grid_best.abs()),
        documented: false,
        seed,
        tolerance: tol,
        metrics: json!({ "winner_surplus": surplus, "grid_max_surplus": grid_best, "gap": gap }),
        details: "each winner's quality maximizes s - c, so total surplus is maximal".into(),
    })
}

/// Negative control: one winner forced to a random suboptimal quality
/// leaves measurable surplus on the table. Passes when detected.
pub fn check_pareto_negative_control(seed: u64) -> Result<CheckReport> {
    let problem = reference_problem();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let thetas = [1.2, 1.5, 1.8];
    let mut surplus = 0.0;
    let mut grid_best = 0.0;
    for (i, &theta) in thetas.iter().enumerate() {
        let q = if i == 0 {
            // Forced far from the optimum.
            vec![rng.gen_range(4.0..10.0)]
        } else {
            optimal_quality(&problem, theta)?.values().to_vec()
        };
        surplus += problem.s.eval(&q) - problem.cost_fn.eval_raw(&q, theta);
        grid_best += grid_max_surplus(&problem, theta, 200_001);
    }
    let gap = grid_best - surplus;
    Ok(CheckReport {
        name: "pareto_negative_control".into(),
        passed: gap > 1e-3,
        documented: false,
        seed,
        tolerance: 1e-3,
        metrics: json!({ "winner_surplus": surplus, "grid_max_surplus": grid_best, "gap": gap }),
        details: "a forced suboptimal winner strictly lowers surplus, so the check can fail".into(),
    })
}

/// Documented divergence of the two winning-probability forms: at
/// N = 3, K = 3, H = 0.5 the verbatim sum gives 0.75 while the
/// order-statistics form and the Monte Carlo win frequency give 1.
pub fn check_win_probability_divergence(trials: usize, seed: u64) -> Result<CheckReport> {
    let (n, k, h) = (3usize, 3usize, 0.5f64);
    let verbatim = winning_probability_g(h, n, k, WinningProbMode::Verbatim)?;
    let order = winning_probability_g(h, n, k, WinningProbMode::OrderStatistics)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wins = 0usize;
    for _ in 0..trials {
        // K = N: the node ranks in the top K regardless of the two
        // opponents' draws.
        let _ = (rng.gen::<f64>() < h, rng.gen::<f64>() < h);
        wins += 1;
    }
    let mc = wins as f64 / trials as f64;
    let order_matches_mc = (order - mc).abs() <= 0.005;
    let verbatim_diverges = (verbatim - 0.75).abs() < 1e-12;
    Ok(CheckReport {
        name: "win_probability_verbatim_divergence_n3_k3".into(),
        passed: order_matches_mc && verbatim_diverges,
        documented: true,
        seed,
        tolerance: 0.005,
        metrics: json!({
            "verbatim": verbatim,
            "order_statistics": order,
            "monte_carlo": mc,
        }),
        details: "the verbatim sum omits the binomial rank multiplicities and returns 0.75 \
                  where the event is certain; the order-statistics form matches Monte Carlo \
                  and is the default"
            .into(),
    })
}

/// The full suite. Reports with `documented = true` never fail the run.
pub fn run_all(settings: &CheckSettings) -> Result<Vec<CheckReport>> {
    let s = settings;
    Ok(vec![
        check_nash(5, 1, s)?,
        check_nash(10, 3, s)?,
        check_nash_negative_control(10, 3, s)?,
        check_nash_degenerate_all_win(s)?,
        check_profit_decreasing_in_n(&[10, 20, 40], 5, 1.3, s)?,
        check_profit_increasing_in_k(&[1, 2, 5], 20, 1.3, s)?,
        check_uniform_selection(10, 3, &[0.2, 0.5, 1.0], s.trials, s.seed)?,
        check_uniform_selection_all_win(6, s.trials, s.seed)?,
        check_uniform_selection_negative_control(10, 3, s.trials, s.seed)?,
        check_separability(&s.theta_samples, s.seed)?,
        check_resource_ratio()?,
        check_understatement_ic(s.trials, s.seed)?,
        check_understatement_min_rule_edge()?,
        check_pareto(&s.theta_samples, s.seed)?,
        check_pareto_negative_control(s.seed)?,
        check_win_probability_divergence(s.trials, s.seed)?,
    ])
}
