//! Numerical laboratory for operator learning on truncated coefficient spaces.
//!
//! The ambient space is a finite truncation of a separable Hilbert space,
//! represented by coefficient vectors against a fixed basis. On top of it the
//! crate provides:
//!
//! - encoder/decoder/partial-sum operators and families of encoder-decoder
//!   models (projection, DeepONet-style sensor encoders, PCA encoders),
//! - exact mixed directional derivatives of deep networks via truncated
//!   nilpotent jet arithmetic, and the induced chain-rule derivatives of
//!   encoder-decoder models,
//! - benchmark operators with closed-form derivatives and their cylindrical
//!   (rank-truncated) approximations,
//! - seeded samplers for Gaussian and compact-set measures together with
//!   moment functionals,
//! - error functionals: compact-open seminorms, operator-norm and
//!   evaluation-style weighted Sobolev errors, mixed `(p,r)` norms, and exact
//!   Gaussian Hilbert-Schmidt norms,
//! - smooth radial bump functions with verified derivative bounds,
//! - derivative-informed (Sobolev-loss) gradient-descent training,
//! - experiment drivers used by the `oplab` command-line runner.
//!
//! Everything downstream of a seed is deterministic, including Monte-Carlo
//! estimates evaluated on a worker pool.

pub mod bump;
pub mod eda;
pub mod error;
pub mod experiments;
pub mod jets;
pub mod mc;
pub mod measures;
pub mod metrics;
pub mod operator;
pub mod space;
pub mod targets;
pub mod training;

pub use error::{Error, Result};
