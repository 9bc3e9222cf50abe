//! Contextual bandits under a semiparametric reward model.
//!
//! Rewards follow `E[r_i(t) | history, contexts] = ν(t) + b_i(t)ᵀμ`, where the
//! intercept `ν(t)` may drift or react adversarially to the history. The crate
//! provides:
//!
//! - [`numkit`]: SPD precision matrices, Cholesky solves and Gaussian sampling.
//! - [`policies`]: Thompson sampling with centered contexts ([`policies::SemiTs`])
//!   and the comparators LinTS, ACTS, BOSE and the uniform policy.
//! - [`envsim`]: the block-structured synthetic environment with three
//!   intercept regimes.
//! - [`replay`]: offline replay evaluation over uniformly logged events.
//! - [`runner`]: seeded multi-replication experiments, grid tuning, CSV output.
//! - [`diagnostics`]: post-hoc checks of the confidence-width claims.
//!
//! Arm indices are zero-based everywhere in the API. The on-disk log format
//! stores them one-based.

pub mod diagnostics;
pub mod envsim;
pub mod error;
pub mod numkit;
pub mod policies;
pub mod replay;
pub mod runner;

pub use error::{Error, Result};

/// Seedable generator used for every random stream in the crate.
pub type SimRng = rand_chacha::ChaCha8Rng;
