//! Shared auction domain types: quality vectors, scoring rules, cost models
//! and the private-type distribution.
//!
//! A bid is a pair `(q, p)` of an m-dimensional quality vector and an asked
//! payment. The aggregator ranks bids with a quasi-linear scoring rule
//! `S(q, p) = s(q) - p`, optionally after min-max normalization of the
//! quality components (and, if configured, of the payment).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An m-dimensional vector of declared resource qualities.
///
/// Components are finite and non-negative; units (samples, Mb/s, ...) are
/// carried as labels on the bid ask, not here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityVector(Vec<f64>);

impl QualityVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("quality vector", "dimension must be >= 1"));
        }
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::invalid(
                    "quality vector",
                    format!("component {i} is {v}; must be finite and >= 0"),
                ));
            }
        }
        Ok(QualityVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Per-dimension min-max normalization bounds.
///
/// Bounds come from the declared resource ranges, not from the observed
/// bids. Out-of-range components are clamped to `[lo, hi]` before
/// normalization. The payment is normalized only when `normalize_payment`
/// is set, using `payment_bounds` (default `[0, 1]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub bounds: Vec<(f64, f64)>,
    #[serde(default)]
    pub normalize_payment: bool,
    #[serde(default)]
    pub payment_bounds: Option<(f64, f64)>,
}

impl NormalizationSpec {
    pub fn new(bounds: Vec<(f64, f64)>, normalize_payment: bool) -> Result<Self> {
        for (i, (lo, hi)) in bounds.iter().enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(Error::invalid(
                    "normalization bounds",
                    format!("dimension {i}: need finite lo < hi, got ({lo}, {hi})"),
                ));
            }
        }
        Ok(NormalizationSpec {
            bounds,
            normalize_payment,
            payment_bounds: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    /// Clamp to the declared range, then map onto [0, 1].
    pub fn normalize_component(&self, dim: usize, x: f64) -> f64 {
        let (lo, hi) = self.bounds[dim];
        let x = x.clamp(lo, hi);
        (x - lo) / (hi - lo)
    }

    pub fn normalize(&self, q: &QualityVector) -> Result<Vec<f64>> {
        if q.dim() != self.bounds.len() {
            return Err(Error::DimensionMismatch {
                expected: self.bounds.len(),
                got: q.dim(),
            });
        }
        Ok(q.values()
            .iter()
            .enumerate()
            .map(|(i, &x)| self.normalize_component(i, x))
            .collect())
    }

    pub fn effective_payment(&self, p: f64) -> f64 {
        if self.normalize_payment {
            let (lo, hi) = self.payment_bounds.unwrap_or((0.0, 1.0));
            (p.clamp(lo, hi) - lo) / (hi - lo)
        } else {
            p
        }
    }
}

/// The quality part `s(.)` of the scoring rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreKind {
    /// Perfect substitutes: `s = sum_i alpha_i q_i`.
    Additive { coeffs: Vec<f64> },
    /// Perfect complements: `s = min_i alpha_i q_i`.
    MinWeighted { coeffs: Vec<f64> },
    /// `s = prod_i q_i^{alpha_i}`. Exponents need not sum to one.
    CobbDouglas { coeffs: Vec<f64> },
    /// `s = alpha * prod_i q_i` (the two-resource simulation rule).
    ScaledProduct { alpha: f64 },
}

impl ScoreKind {
    fn coeffs(&self) -> Option<&[f64]> {
        match self {
            ScoreKind::Additive { coeffs }
            | ScoreKind::MinWeighted { coeffs }
            | ScoreKind::CobbDouglas { coeffs } => Some(coeffs),
            ScoreKind::ScaledProduct { .. } => None,
        }
    }
}

/// Quasi-linear scoring rule `S(q, p) = s(q) - p`, with optional min-max
/// normalization applied before `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringRule {
    pub kind: ScoreKind,
    pub normalization: Option<NormalizationSpec>,
}

impl ScoringRule {
    pub fn new(kind: ScoreKind, normalization: Option<NormalizationSpec>) -> Result<Self> {
        match &kind {
            ScoreKind::ScaledProduct { alpha } => {
                if !alpha.is_finite() || *alpha <= 0.0 {
                    return Err(Error::invalid("scoring rule", "alpha must be > 0"));
                }
            }
            other => {
                let coeffs = other.coeffs().unwrap();
                if coeffs.is_empty() {
                    return Err(Error::invalid("scoring rule", "dimension must be >= 1"));
                }
                for c in coeffs {
                    if !c.is_finite() || *c <= 0.0 {
                        return Err(Error::invalid(
                            "scoring rule",
                            format!("coefficient {c} must be > 0"),
                        ));
                    }
                }
            }
        }
        if let (Some(norm), Some(coeffs)) = (&normalization, kind.coeffs()) {
            if norm.dim() != coeffs.len() {
                return Err(Error::DimensionMismatch {
                    expected: coeffs.len(),
                    got: norm.dim(),
                });
            }
        }
        Ok(ScoringRule {
            kind,
            normalization,
        })
    }

    /// Re-run the constructor checks, for deserialized rules.
    pub fn validate(&self) -> Result<()> {
        Self::new(self.kind.clone(), self.normalization.clone()).map(|_| ())
    }

    /// Declared dimension, when the rule fixes one.
    pub fn dim(&self) -> Option<usize> {
        self.kind
            .coeffs()
            .map(|c| c.len())
            .or_else(|| self.normalization.as_ref().map(|n| n.dim()))
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if let Some(expected) = self.dim() {
            if expected != got {
                return Err(Error::DimensionMismatch { expected, got });
            }
        }
        Ok(())
    }

    /// Evaluate `s(.)` on an already-normalized (or raw, if no
    /// normalization is configured) quality slice.
    pub fn s_part_raw(&self, q: &[f64]) -> f64 {
        match &self.kind {
            ScoreKind::Additive { coeffs } => {
                coeffs.iter().zip(q).map(|(a, x)| a * x).sum()
            }
            ScoreKind::MinWeighted { coeffs } => coeffs
                .iter()
                .zip(q)
                .map(|(a, x)| a * x)
                .fold(f64::INFINITY, f64::min),
            ScoreKind::CobbDouglas { coeffs } => {
                // q_i = 0 takes the continuous limit s = 0.
                if q.iter().any(|&x| x == 0.0) {
                    0.0
                } else {
                    coeffs.iter().zip(q).map(|(a, x)| x.powf(*a)).product()
                }
            }
            ScoreKind::ScaledProduct { alpha } => alpha * q.iter().product::<f64>(),
        }
    }

    /// `s(norm(q))` on a raw slice, clamping into the declared ranges when
    /// normalization is configured. No dimension check.
    pub fn s_normalized(&self, q: &[f64]) -> f64 {
        match &self.normalization {
            Some(norm) => {
                let vals: Vec<f64> = q
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| norm.normalize_component(i, x))
                    .collect();
                self.s_part_raw(&vals)
            }
            None => self.s_part_raw(q),
        }
    }

    /// The aggregator-utility part `s(norm(q))` (the aggregator's
    /// utility `U` defaults to `s`).
    pub fn quality_score(&self, q: &QualityVector) -> Result<f64> {
        self.check_dim(q.dim())?;
        let normalized;
        let vals: &[f64] = match &self.normalization {
            Some(norm) => {
                normalized = norm.normalize(q)?;
                &normalized
            }
            None => q.values(),
        };
        Ok(self.s_part_raw(vals))
    }

    /// Full score `S(q, p) = s(norm(q)) - p_effective`.
    pub fn score(&self, bid: &Bid) -> Result<f64> {
        let s = self.quality_score(&bid.quality)?;
        let p = match &self.normalization {
            Some(norm) => norm.effective_payment(bid.payment),
            None => bid.payment,
        };
        Ok(s - p)
    }
}

/// The private-cost-parameter distribution `F` on `[lo, hi]`,
/// `0 < lo < hi < inf`, with a positive density on the support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThetaDist {
    Uniform { lo: f64, hi: f64 },
    /// `F(t) = ((t - lo) / (hi - lo))^shape`, shape > 0.
    Power { lo: f64, hi: f64, shape: f64 },
}

impl ThetaDist {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.support();
        if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo < hi) {
            return Err(Error::invalid(
                "theta distribution",
                format!("need 0 < lo < hi < inf, got [{lo}, {hi}]"),
            ));
        }
        if let ThetaDist::Power { shape, .. } = self {
            if !shape.is_finite() || *shape <= 0.0 {
                return Err(Error::invalid("theta distribution", "shape must be > 0"));
            }
        }
        Ok(())
    }

    pub fn support(&self) -> (f64, f64) {
        match *self {
            ThetaDist::Uniform { lo, hi } => (lo, hi),
            ThetaDist::Power { lo, hi, .. } => (lo, hi),
        }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        let (lo, hi) = self.support();
        if t <= lo {
            return 0.0;
        }
        if t >= hi {
            return 1.0;
        }
        let z = (t - lo) / (hi - lo);
        match *self {
            ThetaDist::Uniform { .. } => z,
            ThetaDist::Power { shape, .. } => z.powf(shape),
        }
    }

    pub fn pdf(&self, t: f64) -> f64 {
        let (lo, hi) = self.support();
        if t < lo || t > hi {
            return 0.0;
        }
        let w = hi - lo;
        match *self {
            ThetaDist::Uniform { .. } => 1.0 / w,
            ThetaDist::Power { shape, .. } => {
                let z = ((t - lo) / w).max(f64::MIN_POSITIVE);
                shape * z.powf(shape - 1.0) / w
            }
        }
    }

    pub fn inv_cdf(&self, u: f64) -> f64 {
        let (lo, hi) = self.support();
        let u = u.clamp(0.0, 1.0);
        match *self {
            ThetaDist::Uniform { .. } => lo + u * (hi - lo),
            ThetaDist::Power { shape, .. } => lo + u.powf(1.0 / shape) * (hi - lo),
        }
    }

    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> f64 {
        self.inv_cdf(rng.gen::<f64>())
    }
}

/// The cost-function family `c(q, theta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostFn {
    /// `c = theta * sum_i beta_i q_i`.
    AdditiveLinear { betas: Vec<f64> },
    /// `c = theta * sum_i beta_i q_i^{gamma_i}`, `gamma_i >= 1`.
    PowerSeparable { betas: Vec<f64>, gammas: Vec<f64> },
}

impl CostFn {
    pub fn validate(&self) -> Result<()> {
        match self {
            CostFn::AdditiveLinear { betas } => {
                if betas.is_empty() || betas.iter().any(|b| !b.is_finite() || *b < 0.0) {
                    return Err(Error::invalid("cost function", "betas must be >= 0"));
                }
            }
            CostFn::PowerSeparable { betas, gammas } => {
                if betas.len() != gammas.len() {
                    return Err(Error::DimensionMismatch {
                        expected: betas.len(),
                        got: gammas.len(),
                    });
                }
                if betas.is_empty() || betas.iter().any(|b| !b.is_finite() || *b < 0.0) {
                    return Err(Error::invalid("cost function", "betas must be >= 0"));
                }
                if gammas.iter().any(|g| !g.is_finite() || *g < 1.0) {
                    return Err(Error::invalid("cost function", "gammas must be >= 1"));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            CostFn::AdditiveLinear { betas } => betas.len(),
            CostFn::PowerSeparable { betas, .. } => betas.len(),
        }
    }

    pub fn eval_raw(&self, q: &[f64], theta: f64) -> f64 {
        match self {
            CostFn::AdditiveLinear { betas } => {
                theta * betas.iter().zip(q).map(|(b, x)| b * x).sum::<f64>()
            }
            CostFn::PowerSeparable { betas, gammas } => {
                theta
                    * betas
                        .iter()
                        .zip(gammas)
                        .zip(q)
                        .map(|((b, g), x)| b * x.powf(*g))
                        .sum::<f64>()
            }
        }
    }

    pub fn eval(&self, q: &QualityVector, theta: f64) -> Result<f64> {
        if q.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: q.dim(),
            });
        }
        Ok(self.eval_raw(q.values(), theta))
    }
}

/// A node's private cost side: its type `theta`, the common type
/// distribution, and the cost-function family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub theta: f64,
    pub dist: ThetaDist,
    pub cost_fn: CostFn,
}

impl CostModel {
    pub fn new(theta: f64, dist: ThetaDist, cost_fn: CostFn) -> Result<Self> {
        dist.validate()?;
        cost_fn.validate()?;
        let (lo, hi) = dist.support();
        if !theta.is_finite() || theta < lo || theta > hi {
            return Err(Error::invalid(
                "cost model",
                format!("theta {theta} outside support [{lo}, {hi}]"),
            ));
        }
        Ok(CostModel {
            theta,
            dist,
            cost_fn,
        })
    }

    pub fn cost(&self, q: &QualityVector) -> Result<f64> {
        self.cost_fn.eval(q, self.theta)
    }

    pub fn cost_at(&self, q: &QualityVector, theta: f64) -> Result<f64> {
        self.cost_fn.eval(q, theta)
    }
}

/// A sealed bid `(q, p)` from one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bid {
    pub node_id: String,
    pub quality: QualityVector,
    pub payment: f64,
}

impl Bid {
    pub fn new(node_id: impl Into<String>, quality: QualityVector, payment: f64) -> Result<Self> {
        if !payment.is_finite() || payment < 0.0 {
            return Err(Error::invalid(
                "bid",
                format!("payment {payment} must be finite and >= 0"),
            ));
        }
        Ok(Bid {
            node_id: node_id.into(),
            quality,
            payment,
        })
    }
}

/// Which top-K winning-probability formula to evaluate. The verbatim form
/// omits the binomial coefficient of the order-statistics form; both are
/// kept and compared against simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WinningProbMode {
    Verbatim,
    OrderStatistics,
}

/// Static parameters of one auction run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionConfig {
    pub n_nodes: usize,
    pub n_winners: usize,
    /// Acceptance probability of the descending scan; 1 selects the plain
    /// top-K rule.
    pub psi: f64,
    pub rule: ScoringRule,
    pub winning_prob_mode: WinningProbMode,
}

impl AuctionConfig {
    pub fn new(
        n_nodes: usize,
        n_winners: usize,
        psi: f64,
        rule: ScoringRule,
        winning_prob_mode: WinningProbMode,
    ) -> Result<Self> {
        let cfg = AuctionConfig {
            n_nodes,
            n_winners,
            psi,
            rule,
            winning_prob_mode,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-field validation, also for deserialized configs that bypass
    /// the constructor.
    pub fn validate(&self) -> Result<()> {
        if self.n_nodes < 2 {
            return Err(Error::Config(format!(
                "n_nodes must be >= 2, got {}",
                self.n_nodes
            )));
        }
        if self.n_winners == 0 || self.n_winners > self.n_nodes {
            return Err(Error::Config(format!(
                "need 1 <= n_winners <= n_nodes, got K={}, N={}",
                self.n_winners, self.n_nodes
            )));
        }
        if !(self.psi > 0.0 && self.psi <= 1.0) {
            return Err(Error::Config(format!("psi must be in (0, 1], got {}", self.psi)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn walkthrough_rule() -> ScoringRule {
        ScoringRule::new(
            ScoreKind::MinWeighted {
                coeffs: vec![0.5, 0.5],
            },
            Some(
                NormalizationSpec::new(vec![(1000.0, 5000.0), (5.0, 100.0)], false).unwrap(),
            ),
        )
        .unwrap()
    }

    fn bid(q1: f64, q2: f64, p: f64) -> Bid {
        Bid::new("n", QualityVector::new(vec![q1, q2]).unwrap(), p).unwrap()
    }

    #[test]
    fn walkthrough_round1_scores() {
        let rule = walkthrough_rule();
        assert!((rule.score(&bid(4000.0, 85.0, 0.20)).unwrap() - 0.175).abs() < 1e-12);
        assert!((rule.score(&bid(5000.0, 100.0, 0.20)).unwrap() - 0.300).abs() < 1e-12);
        // node D
        let d = rule.score(&bid(5000.0, 85.0, 0.20)).unwrap();
        assert!((d - (0.5 * 80.0 / 95.0 - 0.20)).abs() < 1e-12);
    }

    #[test]
    fn walkthrough_round2_score() {
        let rule = walkthrough_rule();
        // min(0.5 * 0.75, 0.5 * 0.7895...) - 0.15
        let c = rule.score(&bid(4000.0, 80.0, 0.15)).unwrap();
        assert!((c - 0.225).abs() < 1e-12);
    }

    #[test]
    fn additive_zero_vector_zero_payment() {
        let rule = ScoringRule::new(
            ScoreKind::Additive {
                coeffs: vec![1.0, 1.0],
            },
            None,
        )
        .unwrap();
        assert_eq!(rule.score(&bid(0.0, 0.0, 0.0)).unwrap(), 0.0);
    }

    #[test]
    fn cobb_douglas_zero_component_is_zero() {
        let rule = ScoringRule::new(
            ScoreKind::CobbDouglas {
                coeffs: vec![0.5, 0.5],
            },
            None,
        )
        .unwrap();
        assert_eq!(rule.quality_score(&QualityVector::new(vec![0.0, 3.0]).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn utility_examples() {
        let add = ScoringRule::new(
            ScoreKind::Additive {
                coeffs: vec![1.0, 1.0],
            },
            None,
        )
        .unwrap();
        assert_eq!(
            add.quality_score(&QualityVector::new(vec![2.0, 3.0]).unwrap())
                .unwrap(),
            5.0
        );
        let cd = ScoringRule::new(
            ScoreKind::CobbDouglas {
                coeffs: vec![0.5, 0.5],
            },
            None,
        )
        .unwrap();
        assert!(
            (cd.quality_score(&QualityVector::new(vec![4.0, 9.0]).unwrap())
                .unwrap()
                - 6.0)
                .abs()
                < 1e-12
        );
        let mw = ScoringRule::new(
            ScoreKind::MinWeighted {
                coeffs: vec![1.0, 1.0],
            },
            None,
        )
        .unwrap();
        assert_eq!(
            mw.quality_score(&QualityVector::new(vec![0.0, 7.0]).unwrap())
                .unwrap(),
            0.0
        );
    }

    #[test]
    fn cost_examples() {
        let m = CostModel::new(
            2.0,
            ThetaDist::Uniform { lo: 0.1, hi: 10.0 },
            CostFn::AdditiveLinear {
                betas: vec![0.6, 0.4],
            },
        )
        .unwrap();
        assert!((m.cost(&QualityVector::new(vec![1.0, 1.0]).unwrap()).unwrap() - 2.0).abs() < 1e-12);

        let m = CostModel::new(
            0.8,
            ThetaDist::Uniform { lo: 0.1, hi: 10.0 },
            CostFn::AdditiveLinear {
                betas: vec![0.5, 0.5],
            },
        )
        .unwrap();
        assert!((m.cost(&QualityVector::new(vec![2.0, 4.0]).unwrap()).unwrap() - 2.4).abs() < 1e-12);

        let m = CostModel::new(
            1.0,
            ThetaDist::Uniform { lo: 0.1, hi: 10.0 },
            CostFn::PowerSeparable {
                betas: vec![1.0],
                gammas: vec![2.0],
            },
        )
        .unwrap();
        assert!((m.cost(&QualityVector::new(vec![3.0]).unwrap()).unwrap() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let rule = walkthrough_rule();
        let b = Bid::new("n", QualityVector::new(vec![1.0]).unwrap(), 0.1).unwrap();
        assert!(matches!(
            rule.score(&b),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn quality_vector_rejects_bad_components() {
        assert!(QualityVector::new(vec![]).is_err());
        assert!(QualityVector::new(vec![-1.0]).is_err());
        assert!(QualityVector::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn theta_dist_endpoints() {
        let d = ThetaDist::Uniform { lo: 1.0, hi: 2.0 };
        assert_eq!(d.cdf(1.0), 0.0);
        assert_eq!(d.cdf(2.0), 1.0);
        assert!((d.inv_cdf(d.cdf(1.37)) - 1.37).abs() < 1e-12);
        let p = ThetaDist::Power {
            lo: 1.0,
            hi: 2.0,
            shape: 2.0,
        };
        assert_eq!(p.cdf(1.0), 0.0);
        assert_eq!(p.cdf(2.0), 1.0);
        assert!((p.inv_cdf(p.cdf(1.6)) - 1.6).abs() < 1e-12);
        assert!(p.pdf(1.5) > 0.0);
    }

    #[test]
    fn auction_config_validation() {
        let rule = walkthrough_rule();
        assert!(AuctionConfig::new(5, 3, 1.0, rule.clone(), WinningProbMode::OrderStatistics).is_ok());
        assert!(AuctionConfig::new(5, 6, 1.0, rule.clone(), WinningProbMode::OrderStatistics).is_err());
        assert!(AuctionConfig::new(5, 3, 0.0, rule.clone(), WinningProbMode::OrderStatistics).is_err());
        assert!(AuctionConfig::new(1, 1, 1.0, rule, WinningProbMode::OrderStatistics).is_err());
    }
}
