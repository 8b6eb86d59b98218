//! Desk-scale simulator for the stationary state of a small quantum system
//! embedded in a large environment through a random interaction.
//!
//! The composite Hamiltonian is `H = H_s + H_e + W` where the bare part
//! `H_s + H_e` is diagonal in the product basis and `W` is drawn from a
//! random-matrix ensemble (GOE, banded, or randomly rotated). The library
//! builds the bare spectra ([`model`]), samples interactions ([`ensembles`]),
//! diagonalizes the dressed Hamiltonian and measures overlap statistics
//! ([`spectral`]), evolves the reduced density matrix exactly ([`dynamics`]),
//! and compares the measured occupation probabilities against closed-form
//! predictions that interpolate between a local microcanonical ensemble and
//! global equiprobability ([`theory`]). The [`harness`] module wires these
//! pieces into reproducible, seeded command-line experiments.
//!
//! Units are dimensionless throughout (`hbar = 1`, `k = 1`); energies and
//! times are bare numbers.

pub mod dynamics;
pub mod ensembles;
pub mod error;
pub mod harness;
pub mod model;
pub mod numeric;
pub mod spectral;
pub mod theory;

pub use error::{Error, Result};
