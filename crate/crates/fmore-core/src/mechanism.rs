//! The six-step auction round engine: bid ask, sealed bid collection,
//! winner determination (plain top-K and the psi-probabilistic scan),
//! first-price payment allocation, delivery settlement and the blacklist.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::auction::{AuctionConfig, Bid, QualityVector};
use crate::error::{Error, Result};

/// The aggregator's broadcast opening a round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BidAsk {
    pub round: u64,
    pub rule: crate::auction::ScoringRule,
    /// Free-form requirements: resource labels, box bounds, deadlines.
    pub requirements: BTreeMap<String, String>,
}

/// Nodes excluded from bid collection, with offense counts.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Blacklist {
    counts: BTreeMap<String, u32>,
}

impl Blacklist {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, node_id: &str) -> bool {
        self.counts.contains_key(node_id)
    }

    pub fn record_offense(&mut self, node_id: &str) {
        *self.counts.entry(node_id.to_string()).or_insert(0) += 1;
    }

    pub fn offenses(&self, node_id: &str) -> u32 {
        self.counts.get(node_id).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// A bidding participant. Returning `None` means the node abstains
/// (individual rationality: it sees no nonnegative expected profit).
pub trait NodeAgent {
    fn node_id(&self) -> &str;
    fn bid(&self, ask: &BidAsk) -> Option<Bid>;
}

/// Sealed-bid collection: blacklisted nodes are skipped, abstaining nodes
/// submit nothing, and no node's bid is ever shown to another node.
pub fn collect_bids(
    ask: &BidAsk,
    nodes: &[&dyn NodeAgent],
    blacklist: &Blacklist,
) -> Result<Vec<Bid>> {
    let mut bids = Vec::new();
    for node in nodes {
        if blacklist.contains(node.node_id()) {
            continue;
        }
        if let Some(bid) = node.bid(ask) {
            bids.push(bid);
        }
    }
    if bids.is_empty() {
        return Err(Error::RoundAborted(
            "no bids collected (all nodes blacklisted or abstaining)".into(),
        ));
    }
    Ok(bids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Winner {
    pub node_id: String,
    pub score: f64,
    /// First-price: the winner's own asked payment.
    pub payment: f64,
}

/// One decision of the descending-score scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub node_id: String,
    pub score: f64,
    pub accepted: bool,
    /// Set on entries added by the deterministic shortfall fill after a
    /// single psi-pass accepted fewer than K nodes.
    pub by_fill: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinnerSet {
    /// In descending score order.
    pub winners: Vec<Winner>,
    pub trace: Vec<SelectionStep>,
    /// Nodes short of K when fewer than K bids arrived.
    pub shortfall: usize,
}

impl WinnerSet {
    pub fn ids(&self) -> Vec<&str> {
        self.winners.iter().map(|w| w.node_id.as_str()).collect()
    }

    pub fn total_payment(&self) -> f64 {
        self.winners.iter().map(|w| w.payment).sum()
    }
}

/// Score, sort descending (seeded coin flip on ties), then select.
///
/// psi = 1 takes the top K directly. psi < 1 scans in descending order,
/// accepting each node with probability psi and stopping at K accepted;
/// if one pass ends short, remaining slots are filled with the
/// highest-scored skipped nodes (recorded in the trace).
pub fn determine_winners(bids: &[Bid], config: &AuctionConfig, seed: u64) -> Result<WinnerSet> {
    if bids.is_empty() {
        return Err(Error::RoundAborted("no bids to rank".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = config.n_winners;

    let mut scored: Vec<(usize, f64, u64)> = bids
        .iter()
        .enumerate()
        .map(|(i, b)| Ok((i, config.rule.score(b)?, rng.gen::<u64>())))
        .collect::<Result<_>>()?;
    // Descending score; exact ties resolved by the recorded coin flips.
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| a.2.cmp(&b.2))
    });

    let shortfall = k.saturating_sub(bids.len());
    let mut trace = Vec::with_capacity(scored.len());
    let mut accepted: Vec<(usize, f64)> = Vec::with_capacity(k);
    let mut skipped: Vec<(usize, f64)> = Vec::new();

    for &(idx, score, _) in &scored {
        if accepted.len() == k {
            break;
        }
        let take = config.psi >= 1.0 || rng.gen::<f64>() < config.psi;
        trace.push(SelectionStep {
            node_id: bids[idx].node_id.clone(),
            score,
            accepted: take,
            by_fill: false,
        });
        if take {
            accepted.push((idx, score));
        } else {
            skipped.push((idx, score));
        }
    }
    // Deterministic fill: best skipped scores take the remaining slots.
    for &(idx, score) in &skipped {
        if accepted.len() == k {
            break;
        }
        trace.push(SelectionStep {
            node_id: bids[idx].node_id.clone(),
            score,
            accepted: true,
            by_fill: true,
        });
        accepted.push((idx, score));
    }

    accepted.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let winners = accepted
        .into_iter()
        .map(|(idx, score)| Winner {
            node_id: bids[idx].node_id.clone(),
            score,
            payment: bids[idx].payment,
        })
        .collect();

    Ok(WinnerSet {
        winners,
        trace,
        shortfall,
    })
}

/// Both readings of the probability that a single descending psi-pass over
/// N nodes fills all K slots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FillProbability {
    /// `sum_{i=0}^{N-K} C(i+K, i) (1-psi)^i psi^K`, evaluated verbatim.
    pub verbatim: f64,
    /// Negative-binomial form `sum_{i=0}^{N-K} C(K+i-1, i) (1-psi)^i psi^K`
    /// (K-th acceptance occurs within N scanned nodes).
    pub negative_binomial: f64,
}

pub fn fill_probability(n: usize, k: usize, psi: f64) -> Result<FillProbability> {
    if k == 0 || k > n {
        return Err(Error::Config(format!("need 1 <= K <= N, got K={k}, N={n}")));
    }
    if !(psi > 0.0 && psi <= 1.0) {
        return Err(Error::Config(format!("psi must be in (0, 1], got {psi}")));
    }
    let binom = |n: usize, r: usize| -> f64 {
        if r > n {
            return 0.0;
        }
        let r = r.min(n - r);
        let mut acc = 1.0f64;
        for i in 0..r {
            acc = acc * (n - i) as f64 / (i + 1) as f64;
        }
        acc
    };
    let psi_k = psi.powi(k as i32);
    let mut verbatim = 0.0;
    let mut negbin = 0.0;
    for i in 0..=(n - k) {
        let q = (1.0 - psi).powi(i as i32);
        verbatim += binom(i + k, i) * q * psi_k;
        negbin += binom(k + i - 1, i) * q * psi_k;
    }
    Ok(FillProbability {
        verbatim,
        negative_binomial: negbin,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettleOutcome {
    /// Winners blacklisted for under-delivery; their payment is withheld.
    pub defaulters: Vec<String>,
}

pub const DEFAULT_COMPLIANCE_TOLERANCE: f64 = 0.01;

/// Compare delivered against declared quality. Any component short of the
/// declaration by more than `tolerance` (relative) marks the winner as a
/// defaulter: payment withheld, blacklist entry recorded.
pub fn settle(
    winners: &WinnerSet,
    declared: &BTreeMap<String, QualityVector>,
    delivered: &BTreeMap<String, QualityVector>,
    tolerance: f64,
    blacklist: &mut Blacklist,
) -> Result<SettleOutcome> {
    let mut defaulters = Vec::new();
    for w in &winners.winners {
        let decl = declared.get(&w.node_id).ok_or_else(|| {
            Error::Config(format!("no declared quality for winner {}", w.node_id))
        })?;
        let Some(del) = delivered.get(&w.node_id) else {
            blacklist.record_offense(&w.node_id);
            defaulters.push(w.node_id.clone());
            continue;
        };
        if del.dim() != decl.dim() {
            return Err(Error::DimensionMismatch {
                expected: decl.dim(),
                got: del.dim(),
            });
        }
        let under = decl
            .values()
            .iter()
            .zip(del.values())
            .any(|(&d, &got)| got < d * (1.0 - tolerance) - f64::EPSILON);
        if under {
            blacklist.record_offense(&w.node_id);
            defaulters.push(w.node_id.clone());
        }
    }
    Ok(SettleOutcome { defaulters })
}

/// One JSON record per round; stable field names (documented in the README).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundTranscript {
    pub round: u64,
    pub seed: u64,
    pub bids: Vec<TranscriptBid>,
    pub scores: BTreeMap<String, f64>,
    pub winners: Vec<String>,
    pub payments: BTreeMap<String, f64>,
    pub trace: Vec<SelectionStep>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptBid {
    pub node_id: String,
    pub quality: Vec<f64>,
    pub payment: f64,
    /// Bids were mutually invisible during collection.
    pub sealed: bool,
}

impl RoundTranscript {
    pub fn from_round(
        round: u64,
        seed: u64,
        bids: &[Bid],
        config: &AuctionConfig,
        winners: &WinnerSet,
    ) -> Result<Self> {
        let mut scores = BTreeMap::new();
        for b in bids {
            scores.insert(b.node_id.clone(), config.rule.score(b)?);
        }
        Ok(RoundTranscript {
            round,
            seed,
            bids: bids
                .iter()
                .map(|b| TranscriptBid {
                    node_id: b.node_id.clone(),
                    quality: b.quality.values().to_vec(),
                    payment: b.payment,
                    sealed: true,
                })
                .collect(),
            scores,
            winners: winners.ids().iter().map(|s| s.to_string()).collect(),
            payments: winners
                .winners
                .iter()
                .map(|w| (w.node_id.clone(), w.payment))
                .collect(),
            trace: winners.trace.clone(),
        })
    }
}

/// The worked five-node, two-round example used by the `walkthrough`
/// subcommand and the acceptance suite: min-weighted rule over two quality
/// dimensions, declared ranges [1000, 5000] and [5, 100], raw payments.
pub mod demo {
    use super::*;
    use crate::auction::{NormalizationSpec, ScoreKind, ScoringRule, WinningProbMode};

    pub fn rule() -> ScoringRule {
        ScoringRule::new(
            ScoreKind::MinWeighted {
                coeffs: vec![0.5, 0.5],
            },
            Some(NormalizationSpec::new(vec![(1000.0, 5000.0), (5.0, 100.0)], false).unwrap()),
        )
        .unwrap()
    }

    fn bid(id: &str, q1: f64, q2: f64, p: f64) -> Bid {
        Bid::new(id, QualityVector::new(vec![q1, q2]).unwrap(), p).unwrap()
    }

    pub fn round1_bids() -> Vec<Bid> {
        vec![
            bid("A", 4000.0, 85.0, 0.20),
            bid("B", 3000.0, 35.0, 0.10),
            bid("C", 3500.0, 75.0, 0.18),
            bid("D", 5000.0, 85.0, 0.20),
            bid("E", 5000.0, 100.0, 0.20),
        ]
    }

    pub fn round2_bids() -> Vec<Bid> {
        vec![
            bid("A", 4000.0, 85.0, 0.16),
            bid("B", 3500.0, 45.0, 0.10),
            bid("C", 4000.0, 80.0, 0.15),
            bid("D", 4000.0, 80.0, 0.20),
            bid("E", 5000.0, 100.0, 0.30),
        ]
    }

    pub fn config(k: usize, psi: f64) -> AuctionConfig {
        AuctionConfig::new(5, k, psi, rule(), WinningProbMode::OrderStatistics).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::demo::{
        config, round1_bids as walkthrough_round1, round2_bids as walkthrough_round2,
        rule as walkthrough_rule,
    };
    use super::*;
    use crate::auction::WinningProbMode;

    fn bid(id: &str, q1: f64, q2: f64, p: f64) -> Bid {
        Bid::new(id, QualityVector::new(vec![q1, q2]).unwrap(), p).unwrap()
    }

    #[test]
    fn walkthrough_round1_winners() {
        let ws = determine_winners(&walkthrough_round1(), &config(3, 1.0), 42).unwrap();
        let mut ids = ws.ids();
        ids.sort();
        assert_eq!(ids, vec!["A", "D", "E"]);
        // Descending: E 0.300, D 0.221, A 0.175.
        assert!((ws.winners[0].score - 0.300).abs() < 1e-9);
        assert!((ws.winners[1].score - (0.5 * 80.0 / 95.0 - 0.20)).abs() < 1e-9);
        assert!((ws.winners[2].score - 0.175).abs() < 1e-9);
    }

    #[test]
    fn walkthrough_round2_winners_and_payments() {
        let ws = determine_winners(&walkthrough_round2(), &config(3, 1.0), 42).unwrap();
        let mut ids = ws.ids();
        ids.sort();
        assert_eq!(ids, vec!["A", "C", "E"]);
        let pay: BTreeMap<_, _> = ws
            .winners
            .iter()
            .map(|w| (w.node_id.as_str(), w.payment))
            .collect();
        assert_eq!(pay["A"], 0.16);
        assert_eq!(pay["C"], 0.15);
        assert_eq!(pay["E"], 0.30);
    }

    #[test]
    fn everyone_wins_when_k_equals_bid_count() {
        let bids = walkthrough_round1();
        let ws = determine_winners(&bids, &config(5, 1.0), 0).unwrap();
        assert_eq!(ws.winners.len(), 5);
        assert_eq!(ws.shortfall, 0);
    }

    #[test]
    fn shortfall_reported_when_fewer_bids_than_k() {
        let bids = vec![bid("A", 4000.0, 85.0, 0.2), bid("B", 3000.0, 35.0, 0.1)];
        let ws = determine_winners(&bids, &config(3, 1.0), 0).unwrap();
        assert_eq!(ws.winners.len(), 2);
        assert_eq!(ws.shortfall, 1);
    }

    #[test]
    fn psi_pass_fills_to_k() {
        let bids = walkthrough_round1();
        for seed in 0..200 {
            let ws = determine_winners(&bids, &config(3, 0.3), seed).unwrap();
            assert_eq!(ws.winners.len(), 3, "psi-FMore must still fill K slots");
        }
    }

    #[test]
    fn psi_one_equals_brute_force_top_k() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..50 {
            let n = rng.gen_range(2..=12usize);
            let k = rng.gen_range(1..=n);
            let bids: Vec<Bid> = (0..n)
                .map(|i| {
                    bid(
                        &format!("n{i}"),
                        rng.gen_range(1000.0..5000.0),
                        rng.gen_range(5.0..100.0),
                        rng.gen_range(0.0..0.4),
                    )
                })
                .collect();
            let cfg = AuctionConfig::new(
                n.max(2),
                k,
                1.0,
                walkthrough_rule(),
                WinningProbMode::OrderStatistics,
            )
            .unwrap();
            let ws = determine_winners(&bids, &cfg, trial).unwrap();
            // Brute force: sort all scores, take the K largest.
            let mut scored: Vec<(String, f64)> = bids
                .iter()
                .map(|b| (b.node_id.clone(), cfg.rule.score(b).unwrap()))
                .collect();
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
            let mut expect: Vec<String> =
                scored.iter().take(k).map(|(id, _)| id.clone()).collect();
            expect.sort();
            let mut got: Vec<String> = ws.ids().iter().map(|s| s.to_string()).collect();
            got.sort();
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn selection_is_anonymous_under_permutation() {
        let mut bids = walkthrough_round1();
        let ws1 = determine_winners(&bids, &config(3, 1.0), 7).unwrap();
        bids.reverse();
        let ws2 = determine_winners(&bids, &config(3, 1.0), 7).unwrap();
        let mut a = ws1.ids();
        let mut b = ws2.ids();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn collect_bids_respects_blacklist_and_ir() {
        struct Fixed(Bid);
        struct Abstainer(String);
        impl NodeAgent for Fixed {
            fn node_id(&self) -> &str {
                &self.0.node_id
            }
            fn bid(&self, _: &BidAsk) -> Option<Bid> {
                Some(self.0.clone())
            }
        }
        impl NodeAgent for Abstainer {
            fn node_id(&self) -> &str {
                &self.0
            }
            fn bid(&self, _: &BidAsk) -> Option<Bid> {
                None
            }
        }
        let ask = BidAsk {
            round: 0,
            rule: walkthrough_rule(),
            requirements: BTreeMap::new(),
        };
        let a = Fixed(bid("A", 4000.0, 85.0, 0.2));
        let b = Fixed(bid("B", 3000.0, 35.0, 0.1));
        let c = Abstainer("C".into());
        let mut blacklist = Blacklist::new();
        blacklist.record_offense("B");
        let bids =
            collect_bids(&ask, &[&a as &dyn NodeAgent, &b, &c], &blacklist).unwrap();
        assert_eq!(bids.len(), 1);
        assert_eq!(bids[0].node_id, "A");

        blacklist.record_offense("A");
        let err = collect_bids(&ask, &[&a as &dyn NodeAgent, &b, &c], &blacklist);
        assert!(matches!(err, Err(Error::RoundAborted(_))));
    }

    #[test]
    fn fill_probability_psi_one() {
        let fp = fill_probability(10, 4, 1.0).unwrap();
        assert_eq!(fp.verbatim, 1.0);
        assert_eq!(fp.negative_binomial, 1.0);
    }

    #[test]
    fn fill_probability_n_equals_k() {
        let fp = fill_probability(3, 3, 0.5).unwrap();
        // Only the i = 0 term survives in both forms.
        assert!((fp.verbatim - 0.125).abs() < 1e-12);
        assert!((fp.negative_binomial - 0.125).abs() < 1e-12);
    }

    #[test]
    fn settle_flags_under_delivery() {
        let bids = walkthrough_round1();
        let ws = determine_winners(&bids, &config(3, 1.0), 1).unwrap();
        let declared: BTreeMap<String, QualityVector> = bids
            .iter()
            .map(|b| (b.node_id.clone(), b.quality.clone()))
            .collect();

        // Exact delivery: no change.
        let mut bl = Blacklist::new();
        let out = settle(&ws, &declared, &declared, DEFAULT_COMPLIANCE_TOLERANCE, &mut bl)
            .unwrap();
        assert!(out.defaulters.is_empty());
        assert!(bl.is_empty());

        // Node A under-delivers q1 by 2%.
        let mut delivered = declared.clone();
        delivered.insert(
            "A".into(),
            QualityVector::new(vec![4000.0 * 0.98, 85.0]).unwrap(),
        );
        let out = settle(&ws, &declared, &delivered, DEFAULT_COMPLIANCE_TOLERANCE, &mut bl)
            .unwrap();
        assert_eq!(out.defaulters, vec!["A".to_string()]);
        assert!(bl.contains("A"));
    }

    #[test]
    fn settle_empty_winner_set_is_noop() {
        let ws = WinnerSet {
            winners: vec![],
            trace: vec![],
            shortfall: 0,
        };
        let mut bl = Blacklist::new();
        let out = settle(
            &ws,
            &BTreeMap::new(),
            &BTreeMap::new(),
            DEFAULT_COMPLIANCE_TOLERANCE,
            &mut bl,
        )
        .unwrap();
        assert!(out.defaulters.is_empty());
    }
}
