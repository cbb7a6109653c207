//! Federated-learning round loop with pluggable participant-selection
//! policies: the auction mechanism (plain and psi-probabilistic), random
//! selection, and a fixed winner set.

pub mod data;
pub mod experiment;
pub mod learner;

pub use data::{make_non_iid_partition, synth_gaussian_mixture, Dataset, PartitionConfig};
pub use experiment::{run_experiment, FlConfig, Policy, RoundResult};
pub use learner::{aggregate, evaluate, local_train, GlobalModel, LearnerSpec};
