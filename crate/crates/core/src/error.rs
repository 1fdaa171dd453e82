//! Error type shared by every module of the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("integration produced a non-finite state at t = {t}")]
    Integration { t: f64 },

    #[error("non-finite {what} at t = {t}")]
    NonFinite { what: &'static str, t: f64 },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("event at t = {t} lies outside the window ({t_a}, {t_b}]")]
    EventOutsideWindow { t: f64, t_a: f64, t_b: f64 },

    #[error("adjoint became non-finite at t = {t}")]
    Gradient { t: f64 },

    #[error("update {update} failed: {source}")]
    Update {
        update: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("active pixel set is empty")]
    EmptyActiveSet,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
