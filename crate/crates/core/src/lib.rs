//! Cooperative multi-agent value decomposition.
//!
//! Per-agent recurrent Q-networks feed a joint-value head: an additive sum
//! (VDN), a state-conditioned monotone mixer (QMIX-style), or a hypergraph
//! convolution over a hypergraph generated from the agents' observations
//! followed by the same state-conditioned mixer (HGCN-MIX).

pub mod agents;
pub mod envs;
pub mod hypergraph;
pub mod mixers;
pub mod nn;
pub mod numcore;
pub mod parallel;
pub mod training;

pub use numcore::{Matrix, NumError, Rng, Stream, Tape, Var};

use thiserror::Error as ThisError;

#[derive(Debug, ThisError)]
pub enum Error {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Nn(#[from] nn::NnError),
    #[error(transparent)]
    Env(#[from] envs::EnvError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("environment contract violated: {0}")]
    EnvContract(String),
    #[error("training diverged: {0}")]
    Training(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("mixer {0} does not build a hypergraph")]
    UnsupportedMixer(String),
    #[error("joint action space of {0} exceeds the enumeration limit")]
    TooLarge(usize),
}
