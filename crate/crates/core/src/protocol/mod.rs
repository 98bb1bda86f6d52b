//! Multi-party state, the standard split-network training exchange and
//! the per-phase communication ledger.
//!
//! Only embeddings (party → server) and embedding gradients (server →
//! party) are charged, at [`BYTES_PER_SCALAR`] bytes per scalar.

mod batch;
mod ledger;
mod system;

pub use batch::BatchPlan;
pub use ledger::{ledger_total_mb, CommLedger, Phase, PhaseCounters, BYTES_PER_SCALAR};
pub use system::{
    evaluate, party_embed, vfl_train_step, ComponentMap, DataSplit, Evaluation, GroupLassoStep,
    Party, VflSystem,
};
pub(crate) use system::sgd_step;
