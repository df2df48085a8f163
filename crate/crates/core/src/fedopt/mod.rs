//! Conflict-aware federated optimization.
//!
//! Each round the server turns client task vectors into similarity,
//! heterogeneity, consensus weights and per-dimension sign-conflict scores
//! ([`analyze_round`]). The conflict scores regularize the next round's
//! local training ([`pcr_grad`]); heterogeneity and weights drive the
//! heterogeneity-aware TIES merge ([`hties_sparsify`], [`hties_merge`]).
//! FedAvg, FedProx and plain TIES are provided as baselines, and the
//! single-component ablations are selected through [`Method`].

mod analysis;
mod config;
mod merge;
mod regularize;
mod round;

pub use analysis::{analyze_round, conflict_scores, retention_rate, ServerAnalysis};
pub use config::{AggConfig, ClientConfig, Method};
pub use merge::{
    apply_update, fedavg_merge, hties_merge, hties_merge_detailed, hties_sparsify, ties_merge_baseline, HtiesOutcome,
};
pub use regularize::{fedprox_grad, fedprox_penalty, pcr_grad, pcr_penalty};
pub use round::{
    run_round, server_merge, train_client, Client, ClientRoundMetrics, FederatedState, RoundMetrics, RoundOutput,
    ServerMerge,
};
