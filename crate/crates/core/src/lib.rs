//! Geometric diagnostics and regulation for autoregressive state trajectories.
//!
//! The crate is organised around one data path: trajectories are persisted as
//! [`trace`] files, measured with the online correlation-dimension machinery in
//! [`corrdim`], and (for value-cache-like streams) regulated by the persistent
//! mode engine in [`rmr`]. [`ifs`] holds the two-dimensional state-dependent
//! IFS used as a minimal collapse model, and [`decoding`] wires synthetic token
//! sources, sampling filters, the dimension monitor and the regulator into
//! reproducible generation runs.

pub mod cli;
pub mod corrdim;
pub mod decoding;
pub mod error;
pub mod ifs;
pub mod manifest;
pub mod rmr;
pub mod seed;
pub mod trace;

pub use error::{Error, Result};
