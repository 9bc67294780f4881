//! Local-density-dependent Markov processes on graphs sampled from graphons,
//! and the nonlocal mean-field equation that describes them for large graphs.
//!
//! The crate is organised bottom-up:
//!
//! - [`step`] and [`kernels`]: step functions on `[0,1]`, graphon kernels and
//!   the integral operator `(W f)(x) = int W(x,y) f(y) dy`.
//! - [`sampling`]: W-random graphs with density parameter `kappa`.
//! - [`spectral`]: eigenpairs of kernel operators, finite-rank truncation,
//!   operator norms and the SIS epidemic threshold.
//! - [`dynamics`]: exact event-driven simulation of the particle system.
//! - [`meanfield`]: the `M`-cell discretized mean-field ODE system and SIS
//!   equilibria.
//! - [`analysis`]: interval norm, `L^1` distance, cut-norm surrogate and
//!   trajectory comparison.
//! - [`experiments`]: seeded pipelines that produce machine-checked reports.

pub mod analysis;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod kernels;
pub mod meanfield;
pub mod rng;
pub mod sampling;
pub mod spectral;
pub mod step;

pub use error::{Error, Result};
pub use kernels::{GraphonKernel, KernelClass, KernelRepr, KernelSpec, Profile, SamplePoint};
pub use sampling::{sample_graph, SampledGraph, VertexMode};
pub use step::StepFunction;

/// Library version embedded in every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
