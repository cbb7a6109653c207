//! Acceptance suite: one test per criterion, each printing a single
//! pass/fail line with its pinned tolerance. Run with
//! `cargo test --test acceptance -- --nocapture` to see the lines.

use std::process::Command;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use fmore_core::config::ExperimentConfig;
use fmore_core::equilibrium::{
    equilibrium_payment, ScoreDistribution, DEFAULT_THETA_GRID,
};
use fmore_core::flsim::experiment::{rounds_to_threshold, run_experiment, FlConfig, Policy};
use fmore_core::mechanism::{demo, determine_winners};
use fmore_core::theory::{self, CheckSettings};
use fmore_core::WinningProbMode;

const SEED: u64 = 20260823;

/// Prints the one-line verdict and panics on failure.
fn report(criterion: usize, label: &str, tolerance: &str, outcome: Result<String, String>) {
    match outcome {
        Ok(detail) => {
            println!("criterion {criterion:02} [{label}] tolerance {tolerance}: PASS ({detail})")
        }
        Err(why) => {
            println!("criterion {criterion:02} [{label}] tolerance {tolerance}: FAIL ({why})");
            panic!("criterion {criterion} failed: {why}");
        }
    }
}

fn within_budget(started: Instant, budget: Duration, what: &str) -> Result<(), String> {
    let took = started.elapsed();
    if took <= budget {
        Ok(())
    } else {
        Err(format!("{what} took {took:?}, budget {budget:?}"))
    }
}

fn check(cond: bool, why: impl Fn() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(why())
    }
}

#[test]
fn criterion_01_walkthrough_fidelity() {
    let run = || -> Result<String, String> {
        let cfg = demo::config(3, 1.0);
        let r1 = determine_winners(&demo::round1_bids(), &cfg, SEED).map_err(|e| e.to_string())?;
        let mut ids = r1.ids();
        ids.sort();
        check(ids == ["A", "D", "E"], || format!("round-1 winners {ids:?}"))?;
        // 0.221 is the three-decimal rendering of 8/19 - 1/5.
        let expected = [("A", 0.175f64), ("D", 8.0 / 19.0 - 0.2), ("E", 0.3)];
        for (id, want) in expected {
            let got = r1
                .winners
                .iter()
                .find(|w| w.node_id == id)
                .map(|w| w.score)
                .ok_or_else(|| format!("round-1 missing {id}"))?;
            check((got - want).abs() < 1e-9, || {
                format!("round-1 score {id}: {got} vs {want}")
            })?;
        }
        let r2 = determine_winners(&demo::round2_bids(), &cfg, SEED).map_err(|e| e.to_string())?;
        let mut ids = r2.ids();
        ids.sort();
        check(ids == ["A", "C", "E"], || format!("round-2 winners {ids:?}"))?;
        for (id, want) in [("A", 0.16f64), ("C", 0.15), ("E", 0.30)] {
            let got = r2
                .winners
                .iter()
                .find(|w| w.node_id == id)
                .map(|w| w.payment)
                .ok_or_else(|| format!("round-2 missing {id}"))?;
            check((got - want).abs() < 1e-12, || {
                format!("round-2 payment {id}: {got} vs {want}")
            })?;
        }
        Ok("both demo rounds reproduced exactly".into())
    };
    report(1, "walkthrough fidelity", "1e-9 scores, first-price payments exact", run());
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = if n % 2 == 0 { n } else { n + 1 };
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

#[test]
fn criterion_02_equilibrium_closed_forms() {
    let run = || -> Result<String, String> {
        let started = Instant::now();
        let problem = theory::reference_problem();
        let sd = ScoreDistribution::build(&problem, DEFAULT_THETA_GRID)
            .map_err(|e| e.to_string())?;
        let thetas = [1.1f64, 1.4, 1.7];
        let mut worst = 0.0f64;
        for n in [5usize, 20] {
            for &theta in &thetas {
                // Single winner: p = c + int_theta^2 t^-2 ((2-t)/(2-theta))^(n-1) dt.
                let got = equilibrium_payment(
                    &problem,
                    theta,
                    n,
                    1,
                    WinningProbMode::OrderStatistics,
                    None,
                    &sd,
                )
                .map_err(|e| e.to_string())?
                .payment;
                let closed = 1.0 / theta
                    + simpson(
                        |t| (1.0 / (t * t)) * ((2.0 - t) / (2.0 - theta)).powi(n as i32 - 1),
                        theta,
                        2.0,
                        4000,
                    );
                let rel = (got - closed).abs() / closed.abs();
                worst = worst.max(rel);
                check(rel < 1e-2, || {
                    format!("k=1 n={n} theta={theta}: {got} vs closed {closed} (rel {rel:.2e})")
                })?;
                // Two winners, verbatim mode: the winning probability
                // collapses to H^(n-2) with H(x) = 2 - 1/x on [1/2, 1], so
                // the markup integral has a one-dimensional closed form.
                let got = equilibrium_payment(
                    &problem,
                    theta,
                    n,
                    2,
                    WinningProbMode::Verbatim,
                    None,
                    &sd,
                )
                .map_err(|e| e.to_string())?
                .payment;
                let u = 1.0 / theta;
                let g_u = (2.0 - 1.0 / u).powi(n as i32 - 2);
                let closed = 1.0 / theta
                    + simpson(|x| (2.0 - 1.0 / x).powi(n as i32 - 2), 0.5, u, 4000) / g_u;
                let rel = (got - closed).abs() / closed.abs();
                worst = worst.max(rel);
                check(rel < 1e-2, || {
                    format!("k=2 n={n} theta={theta}: {got} vs closed {closed} (rel {rel:.2e})")
                })?;
            }
        }
        within_budget(started, Duration::from_secs(10), "equilibrium comparison")?;
        Ok(format!("worst relative error {worst:.2e} over n in {{5,20}}"))
    };
    report(2, "equilibrium closed forms", "rel err < 1e-2", run());
}

#[test]
fn criterion_03_nash_best_response() {
    let run = || -> Result<String, String> {
        let started = Instant::now();
        let settings = CheckSettings::full(SEED);
        check(settings.mc_samples == 100_000, || "need 1e5 samples".into())?;
        check(settings.theta_samples.len() == 5, || "need 5 theta values".into())?;
        for k in [1usize, 3] {
            let rep = theory::check_nash(10, k, &settings).map_err(|e| e.to_string())?;
            check(rep.passed, || format!("nash n=10 k={k}: {}", rep.metrics))?;
        }
        let control =
            theory::check_nash_negative_control(10, 3, &settings).map_err(|e| e.to_string())?;
        check(control.passed, || {
            format!("perturbed control was not beaten: {}", control.metrics)
        })?;
        within_budget(started, Duration::from_secs(120), "nash checks")?;
        Ok("no deviation beyond 2 SE at equilibrium; 1.5x control beaten".into())
    };
    report(3, "nash best response", "2 SE at 1e5 samples", run());
}

#[test]
fn criterion_04_profit_monotonicity() {
    let run = || -> Result<String, String> {
        let started = Instant::now();
        let settings = CheckSettings::full(SEED);
        let dec = theory::check_profit_decreasing_in_n(&[10, 20, 40], 5, 1.3, &settings)
            .map_err(|e| e.to_string())?;
        check(dec.passed, || format!("profit not decreasing in n: {}", dec.metrics))?;
        let inc = theory::check_profit_increasing_in_k(&[1, 2, 5], 20, 1.3, &settings)
            .map_err(|e| e.to_string())?;
        check(inc.passed, || format!("profit not increasing in k: {}", inc.metrics))?;
        within_budget(started, Duration::from_secs(120), "profit monotonicity")?;
        Ok("strict orderings beyond 2 SE on both axes".into())
    };
    report(4, "expected profit monotone in n and k", "2 SE", run());
}

#[test]
fn criterion_05_uniform_selection() {
    let run = || -> Result<String, String> {
        let started = Instant::now();
        let rep = theory::check_uniform_selection(10, 3, &[0.2, 0.5, 1.0], 100_000, SEED)
            .map_err(|e| e.to_string())?;
        check(rep.passed, || format!("selection band violated: {}", rep.metrics))?;
        let control = theory::check_uniform_selection_negative_control(10, 3, 100_000, SEED)
            .map_err(|e| e.to_string())?;
        check(control.passed, || {
            format!("heterogeneous control stayed uniform: {}", control.metrics)
        })?;
        within_budget(started, Duration::from_secs(30), "selection frequency")?;
        Ok("k/n band holds for psi in {0.2, 0.5, 1.0}; control deviates".into())
    };
    report(5, "identical-type selection frequency", "k/n +- 3 sigma", run());
}

#[test]
fn criterion_06_resource_ratio() {
    let run = || -> Result<String, String> {
        let rep = theory::check_resource_ratio().map_err(|e| e.to_string())?;
        check(rep.passed, || format!("ratio mismatch: {}", rep.metrics))?;
        Ok("optimizer ratios match the closed form in all listed cases".into())
    };
    report(6, "optimal resource ratios", "rel err < 1e-4", run());
}

#[test]
fn criterion_07_win_probability_divergence_documented() {
    let run = || -> Result<String, String> {
        let rep = theory::check_win_probability_divergence(100_000, SEED)
            .map_err(|e| e.to_string())?;
        check(rep.documented, || "divergence not marked documented".into())?;
        check(rep.passed, || format!("unexpected values: {}", rep.metrics))?;
        check(!rep.failing(), || "documented divergence counted as failure".into())?;
        let verbatim = rep.metrics["verbatim"].as_f64().unwrap_or(f64::NAN);
        let order = rep.metrics["order_statistics"].as_f64().unwrap_or(f64::NAN);
        let mc = rep.metrics["monte_carlo"].as_f64().unwrap_or(f64::NAN);
        check((verbatim - 0.75).abs() < 1e-12, || format!("verbatim {verbatim}"))?;
        check((order - 1.0).abs() < 1e-12, || format!("order-statistics {order}"))?;
        check((mc - 1.0).abs() <= 0.005, || format!("monte carlo {mc}"))?;
        // The full verification report must carry the same record.
        let all = theory::run_all(&CheckSettings::quick(SEED)).map_err(|e| e.to_string())?;
        let in_report = all
            .iter()
            .any(|r| r.name == rep.name && r.documented && !r.failing());
        check(in_report, || "record missing from the verification suite".into())?;
        Ok(format!("verbatim {verbatim} vs order-statistics {order}, mc {mc}"))
    };
    report(7, "n=3 k=3 winning-probability divergence", "0.005 on mc, documented", run());
}

#[test]
fn criterion_08_fl_trend() {
    let run = || -> Result<String, String> {
        let started = Instant::now();
        let cfg = ExperimentConfig::default();
        check(cfg.auction.n_nodes == 100 && cfg.auction.n_winners == 20, || {
            "default profile must be n=100, k=20".into()
        })?;
        check(cfg.fl.rounds == 30, || "default profile must run 30 rounds".into())?;
        let fl = FlConfig::default();
        let seeds: Vec<u64> = (1..=20).collect();
        let cells: Vec<(u64, Policy)> = seeds
            .iter()
            .flat_map(|&s| {
                [Policy::FMore, Policy::RandFL, Policy::FixedFL]
                    .into_iter()
                    .map(move |p| (s, p))
            })
            .collect();
        let runs: Result<Vec<_>, String> = cells
            .par_iter()
            .map(|&(seed, policy)| {
                let results = run_experiment(policy, &fl, &cfg.auction, seed)
                    .map_err(|e| e.to_string())?;
                let rtt = rounds_to_threshold(&results, fl.accuracy_threshold);
                let final_acc = results.last().map(|r| r.accuracy).unwrap_or(0.0);
                Ok((seed, policy, rtt, final_acc))
            })
            .collect();
        let runs = runs?;
        let get = |seed: u64, policy: Policy| {
            runs.iter()
                .find(|(s, p, _, _)| *s == seed && *p == policy)
                .map(|&(_, _, rtt, acc)| (rtt, acc))
                .unwrap()
        };
        let censored = fl.rounds + 1;
        let mut faster = 0usize;
        let mut fixed_ok = 0usize;
        for &seed in &seeds {
            let (fmore_rtt, fmore_acc) = get(seed, Policy::FMore);
            let (rand_rtt, _) = get(seed, Policy::RandFL);
            let (_, fixed_acc) = get(seed, Policy::FixedFL);
            if fmore_rtt.unwrap_or(censored) < rand_rtt.unwrap_or(censored) {
                faster += 1;
            }
            if fixed_acc <= fmore_acc {
                fixed_ok += 1;
            }
        }
        let n = seeds.len();
        check(faster * 5 >= n * 4, || {
            format!("fmore faster than randfl in only {faster}/{n} seeds")
        })?;
        check(fixed_ok * 5 >= n * 4, || {
            format!("fixedfl final <= fmore final in only {fixed_ok}/{n} seeds")
        })?;
        within_budget(started, Duration::from_secs(300), "fl experiment matrix")?;
        Ok(format!(
            "fmore strictly faster in {faster}/{n} seeds; fixedfl final below in {fixed_ok}/{n}"
        ))
    };
    report(8, "fl rounds-to-threshold trend", ">= 80% of seeds", run());
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fmore"))
}

fn run_ok(cmd: &mut Command) -> Result<(), String> {
    let out = cmd.output().map_err(|e| e.to_string())?;
    if out.status.code() == Some(0) {
        Ok(())
    } else {
        Err(format!(
            "exit {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn read_summary_column(path: &std::path::Path) -> Result<Vec<f64>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .skip(1)
        .map(|l| {
            l.split(',')
                .nth(1)
                .ok_or_else(|| format!("bad row '{l}'"))?
                .parse::<f64>()
                .map_err(|e| format!("bad row '{l}': {e}"))
        })
        .collect()
}

#[test]
fn criterion_09_sweep_trends() {
    let run = || -> Result<String, String> {
        let started = Instant::now();
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        run_ok(bin().arg("sweep").arg("--out").arg(dir.path()))?;
        let k = read_summary_column(&dir.path().join("sweep_k_summary.csv"))?;
        check(k.len() == 3 && k[0] >= k[1] && k[1] >= k[2], || {
            format!("median rounds not nonincreasing in k: {k:?}")
        })?;
        let n = read_summary_column(&dir.path().join("sweep_n_summary.csv"))?;
        check(n.len() == 2 && n[0] >= n[1], || {
            format!("median rounds not nonincreasing in n: {n:?}")
        })?;
        let psi = read_summary_column(&dir.path().join("sweep_psi_summary.csv"))?;
        check(psi.len() == 2 && psi[0] > psi[1], || {
            format!("psi=0.2 not more dispersed than psi=0.9: {psi:?}")
        })?;
        within_budget(started, Duration::from_secs(600), "sweep")?;
        Ok(format!("k medians {k:?}, n medians {n:?}, psi variances {psi:?}"))
    };
    report(9, "sweep trends in k, n, psi", "median/variance orderings", run());
}

fn dir_bytes(dir: &std::path::Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let entry = entry.map_err(|e| e.to_string())?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let bytes = std::fs::read(entry.path()).map_err(|e| e.to_string())?;
        files.push((name, bytes));
    }
    files.sort();
    Ok(files)
}

#[test]
fn criterion_10_determinism() {
    let run = || -> Result<String, String> {
        let root = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut counted = 0usize;
        for (label, args) in [
            ("simulate", vec!["simulate", "--set", "seeds=[1, 2]", "--set", "fl.rounds=6"]),
            ("verify", vec!["verify", "--quick"]),
            ("equilibrium", vec!["equilibrium"]),
        ] {
            let a = root.path().join(format!("{label}_a"));
            let b = root.path().join(format!("{label}_b"));
            for out in [&a, &b] {
                run_ok(bin().args(&args).arg("--out").arg(out))?;
            }
            let fa = dir_bytes(&a)?;
            let fb = dir_bytes(&b)?;
            check(!fa.is_empty(), || format!("{label} wrote no artifacts"))?;
            check(fa == fb, || format!("{label} artifacts differ between reruns"))?;
            counted += fa.len();
        }
        Ok(format!("{counted} artifacts byte-identical across reruns"))
    };
    report(10, "determinism", "byte-identical artifacts", run());
}
