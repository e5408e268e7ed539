//! Exit-time moments, Dirichlet spectra and principal-eigenvalue bounds for
//! finite symmetric Markov generators and 1-d discretizations of diffusions,
//! fractional Laplacians and their time changes.

mod linalg;

pub mod bounds;
pub mod generator;
pub mod killed;
pub mod montecarlo;
pub mod moments;
pub mod quadrature;
pub mod spectral;

pub use bounds::{
    blm_stable_bounds, bounds_report, delta_plus, delta_r, estimate_lambda0, exp_moment_bounds,
    lower_bound, proof_bounds, sandwich_check, upper_bound_odd, upper_bound_ratio, BoundsError,
    BoundsReport, Check,
};
pub use generator::{
    build_chain, build_diffusion_1d, build_fractional_1d, build_time_changed_1d, ChainSpec,
    Generator, GeneratorError, GeneratorKind, GridSpec,
};
pub use killed::{kill, kill_all, KilledGenerator, SolverError};
pub use moments::{
    cross_moment, exit_moments, exp_moment_series, variational_gap, verify_iterate_identity,
    ExpSeries, MomentError, MomentTable,
};
pub use montecarlo::{
    empirical_vs_solver, simulate_chain_exit, simulate_diffusion_exit, simulate_stable_exit,
    McConfig, McError, McEstimate, Scheme, Start,
};
pub use quadrature::QuadratureConfig;
pub use spectral::{
    exp_moment_exact, exp_moment_resolvent, full_spectrum, principal_pair, spectral_moments,
    PrincipalPair, Spectrum, SpectralError,
};

/// Any failure from the library, tagged with the module it came from.
#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum Error {
    #[error("generator: {0}")]
    Generator(#[from] GeneratorError),
    #[error("killed_solver: {0}")]
    Solver(#[from] SolverError),
    #[error("moments: {0}")]
    Moments(#[from] MomentError),
    #[error("spectral: {0}")]
    Spectral(#[from] SpectralError),
    #[error("bounds: {0}")]
    Bounds(#[from] BoundsError),
    #[error("montecarlo: {0}")]
    MonteCarlo(#[from] McError),
}

impl Error {
    /// Name of the module that raised the error.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Generator(_) => "generator",
            Error::Solver(_) => "killed_solver",
            Error::Moments(_) => "moments",
            Error::Spectral(_) => "spectral",
            Error::Bounds(_) => "bounds",
            Error::MonteCarlo(_) => "montecarlo",
        }
    }
}
