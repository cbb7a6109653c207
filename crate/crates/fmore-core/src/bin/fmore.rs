//! Batch experiment runner: worked walkthrough, equilibrium tables, the
//! federated simulation matrix, the verification suite, and parameter
//! sweeps. Exit codes: 0 ok, 1 verification failure, 2 config error.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use fmore_core::auction::{AuctionConfig, Bid, CostFn, QualityVector};
use fmore_core::config::{parse_set_args, ExperimentConfig};
use fmore_core::equilibrium::{EquilibriumTable, Problem, QualityBox, SFunc};
use fmore_core::error::Error;
use fmore_core::flsim::experiment::{
    rounds_to_threshold, run_experiment, write_rounds_csv, FlConfig, Policy, RoundResult,
};
use fmore_core::mechanism::{demo, determine_winners};
use fmore_core::theory::{run_all, CheckSettings};

#[derive(Parser)]
#[command(name = "fmore", about = "procurement-auction participant selection toolkit")]
struct Cli {
    /// TOML experiment configuration; defaults to the built-in profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; replaces the configured seed list with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (or file, for single-artifact subcommands).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dotted-path config overrides, e.g. --set auction.n_winners=10.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Worker threads for the experiment matrix (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the worked five-node, two-round selection example.
    Walkthrough,
    /// Tabulate equilibrium quality, payment, and max score over a type grid.
    Equilibrium {
        /// Number of type-grid rows in the CSV.
        #[arg(long, default_value_t = 101)]
        grid: usize,
    },
    /// Run the policy-by-seed federated simulation matrix.
    Simulate,
    /// Run the verification suite and write a JSON report.
    Verify {
        /// Reduced sampling effort (for smoke runs).
        #[arg(long)]
        quick: bool,
    },
    /// Sweep winner count, node count, and acceptance probability.
    Sweep,
}

fn main() {
    let cli = Cli::parse();
    std::process::exit(match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => 2,
                _ => 2,
            }
        }
    });
}

fn run(cli: Cli) -> Result<i32, Error> {
    if let Some(w) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    }
    let overrides = parse_set_args(&cli.sets)?;
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path, &overrides)?,
        None => {
            let base = ExperimentConfig::default().to_toml()?;
            ExperimentConfig::parse(&base, &overrides)?
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.to_string_lossy().into_owned();
    }

    match cli.cmd {
        Cmd::Walkthrough => walkthrough(),
        Cmd::Equilibrium { grid } => equilibrium_table(&cfg, grid),
        Cmd::Simulate => simulate(&cfg),
        Cmd::Verify { quick } => verify(&cfg, quick, cli.seed.unwrap_or(7)),
        Cmd::Sweep => sweep(&cfg),
    }
}

fn walkthrough() -> Result<i32, Error> {
    let rule = demo::rule();
    let cfg = demo::config(3, 1.0);
    for (round, bids) in [(1, demo::round1_bids()), (2, demo::round2_bids())] {
        println!("round {round}");
        println!("  {:<4} {:>8} {:>6} {:>8} {:>10}", "node", "q1", "q2", "payment", "score");
        for b in &bids {
            let score = rule.score(b)?;
            println!(
                "  {:<4} {:>8} {:>6} {:>8.2} {:>10.4}",
                b.node_id,
                b.quality.values()[0],
                b.quality.values()[1],
                b.payment,
                score
            );
        }
        let ws = determine_winners(&bids, &cfg, 42)?;
        let winners: Vec<String> = ws
            .winners
            .iter()
            .map(|w| format!("{} (score {:.4}, paid {:.2})", w.node_id, w.score, w.payment))
            .collect();
        println!("  winners: {}", winners.join(", "));
        println!();
    }
    Ok(0)
}

/// The bidding game implied by the config: the rule's quality score over
/// the normalized box, linear cost in the normalized qualities.
fn config_problem(cfg: &ExperimentConfig) -> Result<Problem, Error> {
    let (b1, b2) = cfg.fl.cost_betas;
    Problem::new(
        SFunc::Rule(fmore_core::auction::ScoringRule::new(
            cfg.auction.rule.kind.clone(),
            None,
        )?),
        CostFn::AdditiveLinear {
            betas: vec![b1, b2],
        },
        cfg.fl.theta_dist,
        QualityBox::new(vec![0.0, 0.0], vec![1.0, 1.0])?,
    )
}

fn out_path(cfg: &ExperimentConfig, name: &str) -> Result<PathBuf, Error> {
    let dir = Path::new(&cfg.output_dir);
    std::fs::create_dir_all(dir)?;
    Ok(dir.join(name))
}

fn equilibrium_table(cfg: &ExperimentConfig, grid: usize) -> Result<i32, Error> {
    if grid < 2 {
        return Err(Error::Config("equilibrium grid needs >= 2 rows".into()));
    }
    let problem = config_problem(cfg)?;
    let table = EquilibriumTable::build(
        &problem,
        cfg.auction.n_nodes,
        cfg.auction.n_winners,
        cfg.auction.winning_prob_mode,
        1024,
        10_000,
    )?;
    let (lo, hi) = cfg.fl.theta_dist.support();
    let path = out_path(cfg, "equilibrium.csv")?;
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["theta", "q1", "q2", "u", "cost", "markup", "payment"])?;
    for i in 0..grid {
        let theta = lo + (hi - lo) * i as f64 / (grid - 1) as f64;
        let q = fmore_core::equilibrium::optimal_quality(&problem, theta)?;
        w.write_record([
            format!("{theta:.6}"),
            format!("{:.6}", q.values()[0]),
            format!("{:.6}", q.values()[1]),
            format!("{:.6}", table.u_at(theta)),
            format!("{:.6}", table.cost_at(theta)),
            format!("{:.6}", table.markup_at(theta)),
            format!("{:.6}", table.payment_at(theta)),
        ])?;
    }
    w.flush()?;
    println!("wrote {}", path.display());
    Ok(0)
}

struct CellResult {
    policy: Policy,
    seed: u64,
    results: Vec<RoundResult>,
}

fn run_matrix(
    policies: &[Policy],
    seeds: &[u64],
    fl: &FlConfig,
    auction: &AuctionConfig,
) -> Result<Vec<CellResult>, Error> {
    let cells: Vec<(Policy, u64)> = policies
        .iter()
        .flat_map(|p| seeds.iter().map(move |s| (*p, *s)))
        .collect();
    cells
        .into_par_iter()
        .map(|(policy, seed)| {
            let results = run_experiment(policy, fl, auction, seed)?;
            Ok(CellResult {
                policy,
                seed,
                results,
            })
        })
        .collect()
}

fn simulate(cfg: &ExperimentConfig) -> Result<i32, Error> {
    let cells = run_matrix(&cfg.policies, &cfg.seeds, &cfg.fl, &cfg.auction)?;
    for cell in &cells {
        let name = format!("run_{}_{}.csv", cell.policy.name(), cell.seed);
        let path = out_path(cfg, &name)?;
        let file = std::fs::File::create(&path)?;
        write_rounds_csv(file, &cell.results)?;
    }
    let path = out_path(cfg, "summary.csv")?;
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "policy",
        "seed",
        "rounds_to_threshold",
        "final_accuracy",
        "final_loss",
        "total_payment",
    ])?;
    for cell in &cells {
        let rtt = rounds_to_threshold(&cell.results, cfg.fl.accuracy_threshold);
        let last = cell.results.last();
        w.write_record([
            cell.policy.name(),
            cell.seed.to_string(),
            rtt.map(|r| r.to_string()).unwrap_or_default(),
            last.map(|r| format!("{:.6}", r.accuracy)).unwrap_or_default(),
            last.map(|r| format!("{:.6}", r.loss)).unwrap_or_default(),
            last.map(|r| format!("{:.6}", r.cum_payment)).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    println!("wrote {} run files and {}", cells.len(), path.display());
    Ok(0)
}

fn verify(cfg: &ExperimentConfig, quick: bool, seed: u64) -> Result<i32, Error> {
    let settings = if quick {
        CheckSettings::quick(seed)
    } else {
        CheckSettings::full(seed)
    };
    let reports = run_all(&settings)?;
    let path = out_path(cfg, "verify.json")?;
    let mut file = std::fs::File::create(&path)?;
    serde_json::to_writer_pretty(&mut file, &reports)
        .map_err(|e| Error::Config(format!("report serialization: {e}")))?;
    file.write_all(b"\n")?;
    let mut failures = 0;
    for r in &reports {
        let tag = if r.failing() {
            failures += 1;
            "FAIL"
        } else if r.documented {
            "DOC "
        } else {
            "PASS"
        };
        println!("{tag} {}", r.name);
    }
    println!("report: {}", path.display());
    Ok(if failures > 0 { 1 } else { 0 })
}

fn median_censored(mut xs: Vec<Option<usize>>, cap: usize) -> f64 {
    // Runs that never reach the threshold are censored at cap + 1.
    let mut v: Vec<usize> = xs.drain(..).map(|x| x.unwrap_or(cap + 1)).collect();
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

fn sweep(cfg: &ExperimentConfig) -> Result<i32, Error> {
    // Winner-count axis.
    {
        let ks = [5usize, 15, 25];
        let path = out_path(cfg, "sweep_k.csv")?;
        let summary_path = out_path(cfg, "sweep_k_summary.csv")?;
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["k", "seed", "rounds_to_threshold", "final_accuracy"])?;
        let mut sw = csv::Writer::from_path(&summary_path)?;
        sw.write_record(["k", "median_rounds_to_threshold"])?;
        for &k in &ks {
            let auction = AuctionConfig {
                n_winners: k,
                ..cfg.auction.clone()
            };
            let cells = run_matrix(&[Policy::FMore], &cfg.seeds, &cfg.fl, &auction)?;
            let mut rtts = Vec::new();
            for cell in &cells {
                let rtt = rounds_to_threshold(&cell.results, cfg.fl.accuracy_threshold);
                rtts.push(rtt);
                w.write_record([
                    k.to_string(),
                    cell.seed.to_string(),
                    rtt.map(|r| r.to_string()).unwrap_or_default(),
                    cell.results
                        .last()
                        .map(|r| format!("{:.6}", r.accuracy))
                        .unwrap_or_default(),
                ])?;
            }
            sw.write_record([
                k.to_string(),
                format!("{:.1}", median_censored(rtts, cfg.fl.rounds)),
            ])?;
        }
        w.flush()?;
        sw.flush()?;
        println!("wrote {} and {}", path.display(), summary_path.display());
    }

    // Node-count axis.
    {
        let ns = [50usize, 100];
        let path = out_path(cfg, "sweep_n.csv")?;
        let summary_path = out_path(cfg, "sweep_n_summary.csv")?;
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["n", "seed", "rounds_to_threshold", "final_accuracy"])?;
        let mut sw = csv::Writer::from_path(&summary_path)?;
        sw.write_record(["n", "median_rounds_to_threshold"])?;
        for &n in &ns {
            let auction = AuctionConfig {
                n_nodes: n,
                ..cfg.auction.clone()
            };
            // Hold per-node data volume fixed as the population grows, so
            // the axis measures the value of a larger candidate pool.
            let fl = FlConfig {
                total_samples: cfg.fl.total_samples * n / cfg.auction.n_nodes,
                ..cfg.fl.clone()
            };
            let cells = run_matrix(&[Policy::FMore], &cfg.seeds, &fl, &auction)?;
            let mut rtts = Vec::new();
            for cell in &cells {
                let rtt = rounds_to_threshold(&cell.results, cfg.fl.accuracy_threshold);
                rtts.push(rtt);
                w.write_record([
                    n.to_string(),
                    cell.seed.to_string(),
                    rtt.map(|r| r.to_string()).unwrap_or_default(),
                    cell.results
                        .last()
                        .map(|r| format!("{:.6}", r.accuracy))
                        .unwrap_or_default(),
                ])?;
            }
            sw.write_record([
                n.to_string(),
                format!("{:.1}", median_censored(rtts, cfg.fl.rounds)),
            ])?;
        }
        w.flush()?;
        sw.flush()?;
        println!("wrote {} and {}", path.display(), summary_path.display());
    }

    // Acceptance-probability axis: dispersion of winning scores in the
    // bidding game, without the training loop.
    {
        let psis = [0.2f64, 0.9];
        let trials = 200usize;
        let problem = config_problem(cfg)?;
        let table = EquilibriumTable::build(
            &problem,
            cfg.auction.n_nodes,
            cfg.auction.n_winners,
            cfg.auction.winning_prob_mode,
            512,
            10_000,
        )?;
        let path = out_path(cfg, "sweep_psi.csv")?;
        let summary_path = out_path(cfg, "sweep_psi_summary.csv")?;
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["psi", "trial", "winner_score_variance"])?;
        let mut sw = csv::Writer::from_path(&summary_path)?;
        sw.write_record(["psi", "mean_winner_score_variance"])?;
        let base_seed = cfg.seeds.first().copied().unwrap_or(1);
        let score_rule = fmore_core::auction::ScoringRule::new(
            fmore_core::auction::ScoreKind::Additive { coeffs: vec![1.0] },
            None,
        )?;
        for &psi in &psis {
            let auction = AuctionConfig::new(
                cfg.auction.n_nodes,
                cfg.auction.n_winners,
                psi,
                score_rule.clone(),
                cfg.auction.winning_prob_mode,
            )?;
            let mut mean_var = 0.0;
            for t in 0..trials {
                use rand::SeedableRng;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
                    base_seed ^ (t as u64).wrapping_mul(0x2545_f491),
                );
                // Equilibrium bid scores: quality carries u, payment the
                // markup, so score = u - markup.
                let bids: Vec<Bid> = (0..cfg.auction.n_nodes)
                    .map(|i| {
                        let theta = cfg.fl.theta_dist.sample(&mut rng);
                        Bid::new(
                            format!("node{i:03}"),
                            QualityVector::new(vec![table.u_at(theta).max(0.0)])?,
                            table.markup_at(theta).max(0.0),
                        )
                    })
                    .collect::<Result<_, _>>()?;
                let ws = determine_winners(&bids, &auction, base_seed.wrapping_add(t as u64))?;
                let scores: Vec<f64> = ws.winners.iter().map(|x| x.score).collect();
                let mean = scores.iter().sum::<f64>() / scores.len() as f64;
                let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>()
                    / scores.len() as f64;
                mean_var += var / trials as f64;
                w.write_record([
                    format!("{psi}"),
                    t.to_string(),
                    format!("{var:.8}"),
                ])?;
            }
            sw.write_record([format!("{psi}"), format!("{mean_var:.8}")])?;
        }
        w.flush()?;
        sw.flush()?;
        println!("wrote {} and {}", path.display(), summary_path.display());
    }
    Ok(0)
}
