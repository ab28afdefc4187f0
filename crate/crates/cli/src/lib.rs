//! Experiment runner for the `mc-relay` engine: figure sweeps, BER reports
//! and gain tables, all emitted as CSV.

// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod csv;
pub mod experiments;

pub use config::{ConfigError, ExperimentConfig, ProtocolName};
pub use csv::{Cell, Table};
pub use experiments::{run_ber, run_figure, run_kopt, Dataset, FigureId, FigureSpec, RunSettings};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] mc_relay::Error),
    #[error("unknown figure `{0}` (expected fig2, fig3, fig4, fig5 or fig6)")]
    UnknownFigure(String),
    #[error("invalid figure spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;
