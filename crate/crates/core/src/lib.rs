//! Diffusive molecular communication with steady uniform flow.
//!
//! A transmitter releases batches of molecules into an unbounded fluid; the
//! molecules diffuse and drift past a passive spherical receiver that counts
//! how many are inside its volume at scheduled sampling times. This crate
//! provides:
//!
//! - [`env`]: physical channel parameters and their dimensionless (Péclet)
//!   form, plus TOML config loading.
//! - [`signal`]: the expected receiver count after one emission — exact
//!   (adaptive spherical quadrature), closed form (parallel flow), and the
//!   uniform-concentration approximation — and the ISI-summed signal mean.
//! - [`channel`]: observation-matrix generation via a particle-based
//!   Brownian-dynamics backend and a fast Poisson-statistical backend.
//! - [`detect`]: equal-weight, matched-filter, and maximum-likelihood
//!   sequence detectors, threshold optimization, and BER estimation.
//!
//! All simulation entry points are seeded and deterministic; independent
//! trials run on separate counter-based RNG streams so parallel execution
//! reproduces bit-exactly.

pub mod channel;
pub mod detect;
pub mod env;
pub mod quad;
pub mod signal;
pub mod special;

pub use channel::{ObservationMatrix, SamplingSchedule};
pub use detect::{BerReport, DecisionRule, WeightVector};
pub use env::{DimensionlessEnv, FlowVector, PhysicalEnv};
pub use signal::{QuadratureSpec, SignalProfile};

/// Error type for the whole crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("quadrature did not converge within {max_depth} refinements (last delta {last_delta:e}); parameters may be ill-conditioned (extreme Péclet)")]
    QuadratureNonConvergence { max_depth: usize, last_delta: f64 },

    #[error("relative deviation undefined: exact expected count {exact:e} is below the underflow floor")]
    UndefinedDeviation { exact: f64 },

    #[error("matched weights undefined: signal profile is zero at every offset")]
    AllZeroProfile,

    #[error("threshold search degenerate: every candidate threshold yields the same error")]
    DegenerateThreshold,

    #[error("particle budget exceeded: {particles} live particles, cap {cap}")]
    ParticleBudget { particles: usize, cap: usize },

    #[error("config parse error: {0}")]
    ConfigParse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
