//! Command-line front end for emotest, plus the synthetic fixture and model double.

pub mod commands;
pub mod double;
pub mod fixture;
