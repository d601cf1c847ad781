//! Quantization and simulation of longitudinally coupled superconducting
//! qubit circuits: netlists, Lagrangian reductions, Fock-space Hamiltonians,
//! spectra and driven dynamics.

// `!(x > 0.0)` is used deliberately so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod lagrangian;
mod linalg;
pub mod netlist;
pub mod quantize;
pub mod report;
pub mod spectra;
pub mod units;

pub use error::{Error, Result};
