//! Layers, parameter storage, the RMSProp optimizer and checkpoints.

pub mod checkpoint;
mod layers;
mod optim;
mod store;

pub use layers::{
    activate, gru_cell, gru_step, init_params, linear, mlp, Activation, LayerKind, LayerSpec,
};
pub use optim::RmsProp;
pub use store::{Binding, Param, ParameterStore};

use thiserror::Error;

use crate::numcore::NumError;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("duplicate parameter name {0}")]
    Duplicate(String),
    #[error("unknown parameter {0}")]
    Missing(String),
    #[error("parameter {name}: expected shape {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("non-finite gradient in parameter {0}")]
    NonFinite(String),
    #[error("invalid layer config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Num(#[from] NumError),
}
