//! Stability analysis for quantum dynamical semigroups on finite (possibly
//! Fock-truncated) Hilbert spaces.

pub mod dynamics;
pub mod error;
pub mod fock;
pub mod gksl;
pub mod lasalle;
pub mod lyapunov;
pub mod opalg;
pub mod random;
mod search;

pub use error::{Error, Result};
pub use gksl::{DensityOperator, StationarySet, Superoperator, SystemModel};
pub use opalg::{CMat, CVec};
