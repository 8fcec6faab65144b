//! Design and analysis of amplitude-segmented two-qubit entangling gates in
//! linear ion chains.

pub mod budget;
pub mod constants;
pub mod crystal;
pub mod dynamics;
pub mod error;
pub mod fidelity;
pub mod fit;
pub mod optimizer;
pub mod oracle;
pub mod sequence;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
