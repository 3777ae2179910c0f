//! Preference-data generation by reward-gap rejection sampling, followed by
//! direct preference optimization, on a desk-scale synthetic task.
//!
//! The pipeline:
//!
//! 1. [`synth`] builds a permutation-copy task with an exact oracle and emits
//!    noisy demonstrations and noisy pairwise annotations.
//! 2. [`optim::train_sft`] fits a c-gram policy ([`toylm::ToyLMParams`]) to
//!    the demonstrations.
//! 3. [`reward::train_rm`] fits a Bradley–Terry reward model.
//! 4. [`pdgrs`] samples `k` responses per prompt from the SFT policy, scores
//!    them, and keeps every ordered pair whose temperature-scaled reward gap
//!    clears a threshold.
//! 5. [`dpo::train_dpo`] aligns the policy on the kept pairs, and
//!    [`synth::eval_winrate`] judges it against the SFT model.
//!
//! [`pipeline`] wires these into file-based stages and experiment grids.

pub mod dpo;
mod error;
pub mod io;
pub mod math;
pub mod optim;
pub mod pdgrs;
pub mod pipeline;
pub mod reward;
pub mod synth;
pub mod toylm;

pub use error::{Error, Result};
pub use toylm::RngStream;
