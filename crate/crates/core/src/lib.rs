//! Optimal stopping of a one-dimensional diffusion together with its running
//! maximum, with absorption once the drawdown exceeds a level-dependent bound.
//!
//! The problem `sup_tau E[int_0^tau e^{-qt} f dt + e^{-q tau} g(X_tau, S_tau)]`
//! is reduced, level by level of the running maximum, to a one-dimensional
//! stopping problem solved by concave majorants in the `F = psi/phi` scale.

pub mod diffusion;
pub mod majorant;
pub mod error;
pub mod gbm_app;
pub mod numeric;
pub mod quadrature;
pub mod reward;
pub mod sim;
pub mod vss;

pub use error::{Error, Result};
