//! Numerical toolkit for the (η,T)-divergence-form operator
//!
//! ```text
//! 𝓛u = div(T(∇u)) − ⟨∇η, T(∇u)⟩
//! ```
//!
//! with Dirichlet boundary conditions on box-shaped grid domains, either in
//! Euclidean space or in the upper half-space model of hyperbolic space.
//!
//! The crate is organized bottom-up:
//!
//! * [`geometry`]: metric models, masked grid domains, geodesic distance.
//! * [`fields`]: the coefficient tensor `T`, the drift `η`, and every scalar
//!   constant extracted from them (ε, δ, T₀, C₀, η₁, η_r).
//! * [`assembly`]: Q1 finite elements for the weighted forms, giving the
//!   sparse stiffness/mass pair `(A, B)`.
//! * [`spectral`]: lowest eigenpairs of the pencil `(A, B)` and their
//!   validation.
//! * [`bounds`]: gap-bound constants and the auxiliary inequalities checked
//!   against computed spectra.
//! * [`scenario`]: declarative experiment configs, builtin scenarios and
//!   closed-form oracle spectra.

pub mod assembly;
pub mod bounds;
mod error;
pub mod fields;
pub mod geometry;
pub mod scenario;
pub mod sparse;
pub mod spectral;

pub use error::{Error, Result};
