//! Configuration-driven reports of exit-time moments, Dirichlet spectra and
//! eigenvalue bounds.

pub mod config;
pub mod expr;
pub mod render;
pub mod report;

pub use config::{Analysis, ChainSource, Format, Model, Omega, Output, RunConfig};
pub use expr::{expr_eval, DomainError, Expr, ExprError, ParseError};
pub use render::{render, render_csv, render_json, render_text};
pub use report::{run, RunReport};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("expression {expression:?}: {source}")]
    Expr { expression: String, source: ExprError },
    #[error("{0}")]
    Core(#[from] exit_spectrum_core::Error),
    #[error("{0}")]
    Unsupported(String),
    #[error("non-finite value in report field {0}")]
    NonFinite(String),
    #[error("output: {0}")]
    Output(String),
}

impl CliError {
    /// Name of the module the failure came from.
    pub fn module(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.module(),
            _ => "cli_report",
        }
    }
}

macro_rules! from_core {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        }
    )*};
}

from_core!(
    exit_spectrum_core::GeneratorError,
    exit_spectrum_core::SolverError,
    exit_spectrum_core::MomentError,
    exit_spectrum_core::SpectralError,
    exit_spectrum_core::BoundsError,
    exit_spectrum_core::McError
);
