//! Optimal control of epidemic-like (SIS-type) stochastic processes with
//! time-varying infection and cure rates.

pub mod control;
pub mod ctmc;
pub mod error;
pub mod experiments;
pub mod lp;
pub mod mdp;
pub mod meanfield;
pub mod rates;

pub use error::{Error, Result};
