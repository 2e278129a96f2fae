//! Near-critical dimer model, spanning trees and loop-erased random walk on
//! the square and directed triangular lattices.
//!
//! The crate builds weighted lattice domains, samples drifted, massive and
//! simple walks, runs Wilson's algorithm, solves the absorbing-chain linear
//! systems behind Green functions and hitting probabilities, implements
//! Temperley's bijection with exact partition functions, and extracts radial
//! Loewner driving functions from discrete curves.

pub mod error;
pub mod girsanov;
pub mod green;
pub mod lattice;
pub mod loewner;
pub mod numeric;
pub mod observables;
pub mod temperley;
pub mod walk;

pub use error::{Error, Result};
