//! Dual-phase self-evolution pipeline on a transparent toy policy model.
//!
//! The crate wires five stages into one closed loop:
//!
//! 1. **Signal extraction** ([`signal`]) pulls five behavioral/semantic
//!    signals out of each user-model interaction.
//! 2. **Fusion and constraints** ([`fusion`], [`constraint`]) turn the
//!    signals into a satisfaction score in [-1, 1] via gated,
//!    credibility-weighted fusion under interpretable weight constraints.
//! 3. **Preference memory** ([`memory`]) stores (content, score, topic)
//!    triples and fires a self-evolution trigger every N included entries.
//! 4. **Dataset expansion** ([`expansion`]) builds a topic-balanced SFT set
//!    and a frequency-weighted preference-pair set from each memory batch.
//! 5. **Dual-phase training** ([`policy`], [`trainer`]) runs supervised
//!    fine-tuning then weighted direct preference optimization on a bigram
//!    log-linear policy model, with finite-difference gradient auditing.
//!
//! The [`orchestrator`] module closes the loop and ships a synthetic-user
//! simulator; everything is deterministic given a master seed.

pub mod backends;
pub mod constraint;
pub mod error;
pub mod expansion;
pub mod fusion;
pub mod memory;
pub mod orchestrator;
pub mod policy;
pub mod seed;
pub mod signal;
pub mod trainer;

pub use error::{Error, Result};
