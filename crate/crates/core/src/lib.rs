//! Residual-whitening system identification.
//!
//! Small sequence models (dense, RNN, LSTM) are trained to predict a window
//! of future states from a window of past states and actions. The loss is
//! MSE plus a Ljung-Box penalty on the autocorrelation of each channel's
//! residuals, which pushes prediction errors toward white noise.
//!
//! All arithmetic is `f64`; every random draw comes from a seeded
//! [`numerics::RngState`], so runs are reproducible bit for bit.

pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod gradcheck;
pub mod losses;
pub mod nn;
pub mod numerics;
pub mod par;
pub mod simulators;
pub mod training;

pub use error::{Error, Result};
