//! Stochastic realization of generalized bilinear systems (GBS) and
//! generalized jump-Markov linear systems (GJMLS) from output covariances.

pub mod error;
pub mod estimate;
pub mod gbs;
pub mod io;
pub mod jmls;
pub mod linalg;
pub mod par;
pub mod repr;
pub mod words;

pub use error::{Error, Result};
