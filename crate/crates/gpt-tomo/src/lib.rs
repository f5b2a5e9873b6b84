//! Self-consistent tomography for generalized probabilistic theories (GPTs).
//!
//! The pipeline fits rank-constrained probability matrices to noisy
//! prepare-and-measure count data, selects the matrix rank statistically,
//! reconstructs the realized GPT state and effect polytopes together with
//! their duals, and computes quantitative bounds on deviations from quantum
//! theory (no-restriction violation, noncontextuality and CHSH bounds).
//!
//! Modules follow the pipeline stages:
//!
//! * [`core`] — GPT vectors, probability/frequency matrices, model checks
//! * [`synth`] — synthetic ground truth and Poisson count sampling
//! * [`wlra`] — weighted low-rank approximation via alternating convex QPs
//! * [`modelselect`] — χ² goodness-of-fit intervals and Akaike weights
//! * [`decompose`] — canonical factorization of a fitted matrix into S·E
//! * [`polytope`] — vertex/facet enumeration, dual spaces, volumes
//! * [`bounds`] — inscribed/circumscribed radii and the derived bounds
//! * [`qfit`] — quantum-consistency shrink factor via ellipsoid fitting
//! * [`pipeline`] — orchestration, file formats, Monte Carlo error bars

pub mod bounds;
pub mod core;
pub mod decompose;
pub mod modelselect;
pub mod pipeline;
pub mod polytope;
pub mod qfit;
pub mod synth;
pub mod wlra;

/// Errors surfaced by the pipeline, split by how the caller should react:
/// bad inputs are recoverable by fixing the input, numerical failures are
/// properties of the data/configuration combination.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Input or configuration rejected before any numerics ran.
    Invalid(String),
    /// A numerical stage failed; `stage` names the pipeline step.
    Numerical { stage: &'static str, detail: String },
    /// Filesystem problem while reading inputs or persisting artifacts.
    Io(String),
}

impl std::fmt::Display for Error {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Error::Invalid(msg) => write!(f, "invalid input: {msg}"),
            Error::Numerical { stage, detail } => {
                write!(f, "numerical failure in {stage}: {detail}")
            }
            Error::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
