//! Optimal transport with latent global transformations.
//!
//! Classic discrete optimal transport assumes the two point collections live
//! in a shared, registered space. When the representations are learned (word
//! embeddings, features), they are only fixed up to a global transformation
//! such as a rotation, and raw cross-space distances are meaningless. This
//! crate jointly optimizes a transport coupling Γ and a linear map P
//! constrained to a Schatten ℓp-norm ball, by annealed alternating
//! maximization: Sinkhorn solves against the cost induced by the current map,
//! a closed-form spectral update solves for the map given the coupling, and
//! the entropic regularization λ decays geometrically to sharpen the coupling
//! without ad-hoc initialization.
//!
//! Module map:
//! - [`model`]: point sets, histograms, couplings, Schatten balls, maps.
//! - [`sinkhorn`]: cost matrices, entropic OT via Sinkhorn scaling, exact
//!   small-scale LP references.
//! - [`procrustes`]: closed-form maximization of `⟨P, M⟩` over a Schatten
//!   ball, and feasible random map initialization.
//! - [`solver`]: the annealed alternating solver with trace capture.
//! - [`gromov`]: numerical equivalence checks between the Frobenius-invariant
//!   objective and the Gromov-Wasserstein objective.
//! - [`synthetic`]: controlled correspondence-recovery benchmarks.
//! - [`embed`]: word-embedding alignment pipeline (ingestion, two-stage
//!   solve, CSLS retrieval, precision@k).

pub mod embed;
pub mod error;
mod linalg;
pub mod exact;
pub mod gromov;
pub mod model;
pub mod procrustes;
pub mod solver;
pub mod sinkhorn;
pub mod synthetic;
pub mod util;

pub use error::{Error, Result};
