//! Time-stepping and certification for set-valued Lur'e systems
//!
//! ```text
//! ẋ = f(t,x) + Bλ,   y = Cx + Dλ,   λ ∈ −N_{K(t,x)}(y)
//! ```
//!
//! The crate provides the convex-set primitives ([`sets`]), the passivity
//! certificate and step-size shift `κ` ([`linalg`]), moving sets `K(t,x)`
//! ([`moving`]), the implicit resolvent step ([`step`]), the uniform-grid
//! integrator ([`integrate`]) and executable checks of the stability and
//! dependence estimates ([`analysis`]).

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod integrate;
pub mod linalg;
pub mod moving;
pub mod sets;
pub mod step;
pub mod vi;

pub use error::{Error, Result};
pub use linalg::{Matrix, PassivityCertificate, Vector};
pub use moving::{MovingSet, PiecewiseLinear};
pub use sets::{BoxSet, ConvexSet, Polyhedron};
pub use step::{Drift, LureSystem, SolverOptions, StepResult};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/sets.md")]
    mod sets {}
    #[doc = include_str!("../../../book/src/passivity.md")]
    mod passivity {}
    #[doc = include_str!("../../../book/src/moving.md")]
    mod moving {}
    #[doc = include_str!("../../../book/src/scheme.md")]
    mod scheme {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/estimates.md")]
    mod estimates {}
    #[doc = include_str!("../../../book/src/perturbation.md")]
    mod perturbation {}
}
