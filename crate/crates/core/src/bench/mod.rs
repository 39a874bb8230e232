//! Synthetic data, file formats and evaluation.

pub mod eval;
pub mod io;
pub mod sim;
