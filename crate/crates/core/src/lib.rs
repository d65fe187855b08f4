//! Lagrangian neural networks for dynamical systems driven by
//! servomechanisms: systems whose generalized coordinates split into free
//! coordinates and externally specified ones whose trajectory is imposed.

pub mod autodiff;
pub mod dynamics;
pub mod evaluation;
mod error;
pub mod linalg;
pub mod network;
pub mod simulator;
pub mod training;
pub mod verification;

pub use error::{Error, Result};
