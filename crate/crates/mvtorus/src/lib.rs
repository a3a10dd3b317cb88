//! Numerical laboratory for the McKean–Vlasov equation on the torus.
//!
//! The crate computes stationary states through the Gibbs fixed-point map,
//! enumerates and continues bifurcation branches from the uniform state,
//! classifies phase transitions, and checks decay-to-equilibrium estimates for
//! a catalog of interaction potentials.

pub mod bifurcation;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod functionals;
pub mod kuramoto;
pub mod potentials;
pub mod quadrature;
pub mod stationary;
pub mod torus;
pub mod transitions;

pub use error::{Error, Result};
