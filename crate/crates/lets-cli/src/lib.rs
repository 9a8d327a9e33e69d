//! Experiment harness around the `lets` library: TOML-described twin
//! experiments, replicate scheduling, CSV records, and the autocorrelation
//! table cache. The `lets` binary is a thin command layer over this.

pub mod autocorr;
pub mod config;
pub mod experiment;
pub mod records;
