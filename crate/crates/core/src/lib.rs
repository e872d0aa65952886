//! Estimation of optimal multi-stage treatment regimes by Q-learning and
//! A-learning, with the generative scenarios, regime-value calculations and
//! Monte Carlo study drivers used to compare the two.

pub mod alearn;
pub mod calibrate;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod numeric;
pub mod qlearn;
pub mod scenarios;

pub use error::{Error, Result};
