//! Simulation toolkit for a qubit-array detector of single-photon wave fronts.
//!
//! The crate covers the full quantum trajectory model of a small detector
//! (qubits coupled to an input and a readout mode), deterministic master
//! equations for the scaling studies, a classical Bloch-vector model of the
//! collective spin, spectral/SNR analysis, closed-form oracles, and the
//! experiment harness used by the `qmm` command-line tool.

pub mod bloch;
pub mod error;
pub mod experiment;
pub mod master;
pub mod model;
pub mod operator;
pub mod oracles;
pub mod parallel;
pub mod qsd;
pub mod spectral;

pub use error::{Error, Result};
