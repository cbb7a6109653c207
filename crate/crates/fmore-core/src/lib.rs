//! Multi-dimensional procurement auction for federated-learning
//! participant selection: domain types, equilibrium bidding, the round
//! mechanism, a federated training simulator, and executable checks of
//! the mechanism's claimed properties.

pub mod auction;
pub mod config;
pub mod equilibrium;
pub mod error;
pub mod flsim;
pub mod mechanism;
pub mod theory;

pub use auction::{
    AuctionConfig, Bid, CostFn, CostModel, NormalizationSpec, QualityVector, ScoreKind,
    ScoringRule, ThetaDist, WinningProbMode,
};
pub use error::{Error, Result};
