//! The per-round experiment loop: select participants, train locally,
//! aggregate, evaluate.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::auction::{
    AuctionConfig, Bid, CostFn, NormalizationSpec, QualityVector, ScoringRule, ThetaDist,
};
use crate::equilibrium::{EquilibriumTable, Problem, QualityBox, SFunc};
use crate::error::{Error, Result};
use crate::flsim::data::{
    category_proportion, make_non_iid_partition, synth_gaussian_mixture, PartitionConfig,
};
use crate::flsim::learner::{aggregate, evaluate, local_train, LearnerSpec};
use crate::mechanism::determine_winners;

/// Participant-selection policy for one experiment run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    FMore,
    PsiFMore { psi: f64 },
    RandFL,
    FixedFL,
}

impl Policy {
    pub fn name(&self) -> String {
        match self {
            Policy::FMore => "fmore".into(),
            Policy::PsiFMore { psi } => format!("psi_fmore_{psi}"),
            Policy::RandFL => "randfl".into(),
            Policy::FixedFL => "fixedfl".into(),
        }
    }
}

/// How nodes price their bids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BidStrategy {
    /// Equilibrium informational rent: `p = c(q, theta) + markup(theta)`
    /// with the markup from the equilibrium pipeline over the normalized
    /// quality box.
    Equilibrium,
    /// Flat relative markup `p = (1 + mu) c`, flagged as non-equilibrium.
    Markup { mu: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlConfig {
    pub n_classes: usize,
    pub n_features: usize,
    pub total_samples: usize,
    pub shards_per_node: usize,
    pub shard_weight_range: (f64, f64),
    /// Cluster-center spread and within-class noise of the synthetic task.
    pub separation: f64,
    pub noise: f64,
    pub learner: LearnerSpec,
    pub step_size: f64,
    pub epochs: usize,
    pub rounds: usize,
    pub holdout_frac: f64,
    /// Offered data size per round: a uniform fraction of the node's data.
    pub offer_frac_range: (f64, f64),
    /// Private types are redrawn each round (re-estimation).
    pub redraw_theta: bool,
    pub theta_dist: ThetaDist,
    /// Cost over normalized (q1, q2): `c = theta (b1 q1n + b2 q2)`.
    pub cost_betas: (f64, f64),
    pub bidding: BidStrategy,
    pub accuracy_threshold: f64,
}

impl FlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 || self.n_features == 0 || self.total_samples == 0 {
            return Err(Error::Config("degenerate synthetic task".into()));
        }
        if !(self.holdout_frac > 0.0 && self.holdout_frac < 1.0) {
            return Err(Error::Config("holdout_frac must be in (0, 1)".into()));
        }
        let (lo, hi) = self.offer_frac_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::Config("offer_frac_range must satisfy 0 < lo <= hi <= 1".into()));
        }
        self.theta_dist.validate()?;
        Ok(())
    }
}

impl Default for FlConfig {
    fn default() -> Self {
        FlConfig {
            n_classes: 20,
            n_features: 128,
            total_samples: 4_000,
            shards_per_node: 2,
            shard_weight_range: (0.01, 8.0),
            separation: 0.6,
            noise: 2.0,
            learner: LearnerSpec::Softmax {
                n_features: 128,
                n_classes: 20,
            },
            step_size: 0.05,
            epochs: 2,
            rounds: 30,
            holdout_frac: 0.2,
            offer_frac_range: (0.05, 1.0),
            redraw_theta: true,
            theta_dist: ThetaDist::Uniform { lo: 1.0, hi: 2.0 },
            cost_betas: (0.2, 0.1),
            bidding: BidStrategy::Equilibrium,
            accuracy_threshold: 0.65,
        }
    }
}

/// One node's static state for a run.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub node_id: String,
    pub data_indices: Vec<usize>,
    pub category_mix: Vec<usize>,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundResult {
    pub round: usize,
    pub policy: String,
    pub winners: Vec<String>,
    pub payments: Vec<f64>,
    pub accuracy: f64,
    pub loss: f64,
    pub cum_payment: f64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Deterministic sub-seed: same inputs give the same stream regardless of
/// scheduling.
pub fn derive_seed(run_seed: u64, stream: u64, item: u64) -> u64 {
    splitmix64(splitmix64(run_seed ^ stream.wrapping_mul(0x9e3779b97f4a7c15)) ^ item)
}

const STREAM_DATA: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_PARTITION: u64 = 3;
const STREAM_THETA: u64 = 4;
const STREAM_NODE: u64 = 5;
const STREAM_SELECT: u64 = 6;
const STREAM_BASELINE: u64 = 7;

/// Run one (policy, seed) cell: returns the per-round transcript.
pub fn run_experiment(
    policy: Policy,
    fl: &FlConfig,
    auction: &AuctionConfig,
    seed: u64,
) -> Result<Vec<RoundResult>> {
    fl.validate()?;
    let dataset = synth_gaussian_mixture(
        fl.total_samples,
        fl.n_classes,
        fl.n_features,
        fl.separation,
        fl.noise,
        derive_seed(seed, STREAM_DATA, 0),
    );

    // Fixed 20% (configurable) global holdout per seed.
    let mut split_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SPLIT, 0));
    let mut all: Vec<usize> = (0..dataset.len()).collect();
    all.shuffle(&mut split_rng);
    let n_holdout = ((dataset.len() as f64) * fl.holdout_frac).round() as usize;
    let holdout: Vec<usize> = all[..n_holdout].to_vec();
    let train: Vec<usize> = all[n_holdout..].to_vec();

    let parts = make_non_iid_partition(
        &dataset,
        &train,
        &PartitionConfig {
            n_nodes: auction.n_nodes,
            shards_per_node: fl.shards_per_node,
            shard_weight_range: fl.shard_weight_range,
        },
        derive_seed(seed, STREAM_PARTITION, 0),
    )?;

    let mut theta_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_THETA, 0));
    let mut nodes: Vec<NodeState> = parts
        .into_iter()
        .enumerate()
        .map(|(i, data_indices)| {
            let mut category_mix = vec![0usize; dataset.n_classes];
            for &j in &data_indices {
                category_mix[dataset.labels[j]] += 1;
            }
            NodeState {
                node_id: format!("node{i:03}"),
                data_indices,
                category_mix,
                theta: fl.theta_dist.sample(&mut theta_rng),
            }
        })
        .collect();

    // Quality normalization: q1 against the largest node, q2 already in
    // (0, 1]. Supplied normalization on the auction rule wins if present.
    let q1_hi = nodes
        .iter()
        .map(|n| n.data_indices.len())
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let rule = match &auction.rule.normalization {
        Some(_) => auction.rule.clone(),
        None => ScoringRule::new(
            auction.rule.kind.clone(),
            Some(NormalizationSpec::new(vec![(0.0, q1_hi), (0.0, 1.0)], false)?),
        )?,
    };
    let sim_auction = AuctionConfig {
        rule: rule.clone(),
        ..auction.clone()
    };

    let cost_fn = CostFn::AdditiveLinear {
        betas: vec![fl.cost_betas.0, fl.cost_betas.1],
    };
    let eq_table = match fl.bidding {
        BidStrategy::Equilibrium => {
            let problem = Problem::new(
                SFunc::Rule(ScoringRule::new(rule.kind.clone(), None)?),
                cost_fn.clone(),
                fl.theta_dist,
                QualityBox::new(vec![0.0, 0.0], vec![1.0, 1.0])?,
            )?;
            Some(EquilibriumTable::build(
                &problem,
                auction.n_nodes,
                auction.n_winners,
                auction.winning_prob_mode,
                512,
                4000,
            )?)
        }
        BidStrategy::Markup { .. } => None,
    };

    let spec = fl.learner;
    let mut params = spec.init_params();
    let mut results = Vec::with_capacity(fl.rounds);
    let mut cum_payment = 0.0;
    let mut fixed_set: Option<Vec<usize>> = None;

    for round in 0..fl.rounds {
        // Per-node round draws: offered subset and (optionally) new theta.
        let mut offers: Vec<Vec<usize>> = Vec::with_capacity(nodes.len());
        for (i, node) in nodes.iter_mut().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                seed,
                STREAM_NODE,
                (round as u64) << 32 | i as u64,
            ));
            if fl.redraw_theta {
                node.theta = fl.theta_dist.sample(&mut rng);
            }
            let (f_lo, f_hi) = fl.offer_frac_range;
            let frac = rng.gen_range(f_lo..=f_hi);
            let mut idx = node.data_indices.clone();
            idx.shuffle(&mut rng);
            let take = ((idx.len() as f64 * frac).floor() as usize).max(1).min(idx.len());
            idx.truncate(take);
            offers.push(idx);
        }

        let (winner_idx, payments): (Vec<usize>, Vec<f64>) = match policy {
            Policy::FMore | Policy::PsiFMore { .. } => {
                let psi = match policy {
                    Policy::PsiFMore { psi } => psi,
                    _ => 1.0,
                };
                let cfg = AuctionConfig {
                    psi,
                    ..sim_auction.clone()
                };
                let bids: Vec<Bid> = nodes
                    .iter()
                    .zip(&offers)
                    .map(|(node, offer)| {
                        let q1 = offer.len() as f64;
                        let q2 = category_proportion(&dataset, offer);
                        let q1n = (q1 / q1_hi).min(1.0);
                        let cost = cost_fn.eval_raw(&[q1n, q2], node.theta);
                        let payment = match (&fl.bidding, &eq_table) {
                            (BidStrategy::Markup { mu }, _) => (1.0 + mu) * cost,
                            (BidStrategy::Equilibrium, Some(table)) => {
                                cost + table.markup_at(node.theta).max(0.0)
                            }
                            _ => unreachable!(),
                        };
                        Bid::new(
                            node.node_id.clone(),
                            QualityVector::new(vec![q1, q2])?,
                            payment,
                        )
                    })
                    .collect::<Result<_>>()?;
                let ws = determine_winners(
                    &bids,
                    &cfg,
                    derive_seed(seed, STREAM_SELECT, round as u64),
                )?;
                let ids: Vec<usize> = ws
                    .winners
                    .iter()
                    .map(|w| {
                        nodes
                            .iter()
                            .position(|n| n.node_id == w.node_id)
                            .expect("winner id maps to a node")
                    })
                    .collect();
                let pays = ws.winners.iter().map(|w| w.payment).collect();
                (ids, pays)
            }
            Policy::RandFL => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    seed,
                    STREAM_BASELINE,
                    round as u64,
                ));
                let mut ids: Vec<usize> = (0..nodes.len()).collect();
                ids.shuffle(&mut rng);
                ids.truncate(auction.n_winners);
                (ids, vec![])
            }
            Policy::FixedFL => {
                let set = fixed_set
                    .get_or_insert_with(|| {
                        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                            seed,
                            STREAM_BASELINE,
                            0,
                        ));
                        let mut ids: Vec<usize> = (0..nodes.len()).collect();
                        ids.shuffle(&mut rng);
                        ids.truncate(auction.n_winners);
                        ids
                    })
                    .clone();
                (set, vec![])
            }
        };

        // Winners train on their offered subset; aggregation weights are
        // the data sizes actually trained with.
        let mut updates = Vec::with_capacity(winner_idx.len());
        for &i in &winner_idx {
            let offer = &offers[i];
            let (w, _) = local_train(&spec, &params, &dataset, offer, fl.step_size, fl.epochs)?;
            updates.push((nodes[i].node_id.clone(), w, offer.len().max(1)));
        }
        if !updates.is_empty() {
            params = aggregate(&updates)?;
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numerical(format!(
                "global model diverged at round {round}"
            )));
        }
        let (loss, accuracy) = evaluate(&spec, &params, &dataset, &holdout)?;
        cum_payment += payments.iter().sum::<f64>();
        results.push(RoundResult {
            round,
            policy: policy.name(),
            winners: winner_idx
                .iter()
                .map(|&i| nodes[i].node_id.clone())
                .collect(),
            payments,
            accuracy,
            loss,
            cum_payment,
        });
    }
    Ok(results)
}

/// First round (1-based) whose held-out accuracy reaches `threshold`.
pub fn rounds_to_threshold(results: &[RoundResult], threshold: f64) -> Option<usize> {
    results
        .iter()
        .position(|r| r.accuracy >= threshold)
        .map(|i| i + 1)
}

/// CSV stream of round results: one file per (policy, seed).
pub fn write_rounds_csv<W: std::io::Write>(out: W, results: &[RoundResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["round", "policy", "accuracy", "loss", "cum_payment", "winners"])
        .map_err(csv_err)?;
    for r in results {
        w.write_record([
            r.round.to_string(),
            r.policy.clone(),
            format!("{:.6}", r.accuracy),
            format!("{:.6}", r.loss),
            format!("{:.6}", r.cum_payment),
            r.winners.join(";"),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Numerical(format!("csv write failed: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::{ScoreKind, WinningProbMode};

    fn small_fl() -> FlConfig {
        FlConfig {
            total_samples: 1200,
            n_features: 8,
            n_classes: 10,
            separation: 2.0,
            noise: 1.6,
            step_size: 0.4,
            learner: LearnerSpec::Softmax {
                n_features: 8,
                n_classes: 10,
            },
            rounds: 3,
            bidding: BidStrategy::Markup { mu: 0.1 },
            ..FlConfig::default()
        }
    }

    fn small_auction(n: usize, k: usize) -> AuctionConfig {
        AuctionConfig::new(
            n,
            k,
            1.0,
            ScoringRule::new(ScoreKind::ScaledProduct { alpha: 25.0 }, None).unwrap(),
            WinningProbMode::OrderStatistics,
        )
        .unwrap()
    }

    #[test]
    fn zero_rounds_gives_empty_results() {
        let fl = FlConfig {
            rounds: 0,
            ..small_fl()
        };
        let out = run_experiment(Policy::RandFL, &fl, &small_auction(10, 3), 1).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn fixedfl_reuses_the_same_winner_set() {
        let out =
            run_experiment(Policy::FixedFL, &small_fl(), &small_auction(10, 3), 2).unwrap();
        let first: Vec<_> = out[0].winners.clone();
        for r in &out {
            assert_eq!(r.winners, first);
        }
    }

    #[test]
    fn runs_are_deterministic_per_seed() {
        let fl = small_fl();
        let a = run_experiment(Policy::FMore, &fl, &small_auction(10, 3), 5).unwrap();
        let b = run_experiment(Policy::FMore, &fl, &small_auction(10, 3), 5).unwrap();
        assert_eq!(a, b);
        let c = run_experiment(Policy::FMore, &fl, &small_auction(10, 3), 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn fmore_pays_winners_their_bids() {
        let out = run_experiment(Policy::FMore, &small_fl(), &small_auction(10, 3), 3).unwrap();
        for r in &out {
            assert_eq!(r.winners.len(), 3);
            assert_eq!(r.payments.len(), 3);
            assert!(r.payments.iter().all(|p| *p > 0.0));
        }
        assert!(out.last().unwrap().cum_payment > 0.0);
    }

    #[test]
    fn equilibrium_bidding_runs() {
        let fl = FlConfig {
            bidding: BidStrategy::Equilibrium,
            ..small_fl()
        };
        let out = run_experiment(Policy::FMore, &fl, &small_auction(10, 3), 4).unwrap();
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn iid_like_loss_mostly_decreases() {
        // Near-IID: many shards per node.
        let fl = FlConfig {
            shards_per_node: 10,
            rounds: 10,
            step_size: 0.2,
            ..small_fl()
        };
        let out = run_experiment(Policy::RandFL, &fl, &small_auction(10, 5), 7).unwrap();
        let mut drops = 0;
        for w in out.windows(2) {
            if w[1].loss <= w[0].loss + 1e-9 {
                drops += 1;
            }
        }
        assert!(
            drops as f64 >= 0.9 * (out.len() - 1) as f64,
            "loss decreased in only {drops}/{} consecutive pairs",
            out.len() - 1
        );
    }

    #[test]
    fn csv_has_expected_columns() {
        let out = run_experiment(Policy::RandFL, &small_fl(), &small_auction(10, 3), 1).unwrap();
        let mut buf = Vec::new();
        write_rounds_csv(&mut buf, &out).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("round,policy,accuracy,loss,cum_payment,winners"));
        assert_eq!(text.lines().count(), out.len() + 1);
    }
}
