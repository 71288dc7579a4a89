//! Topologically protected qubit in a 2D lattice of trapped-ion spins:
//! operator algebra, lattice Hamiltonians, symmetry sectors, eigensolvers,
//! noise and lifetime estimates, phonon spectra and gate dynamics.

pub mod cli;
pub mod dynamics;
pub mod eigensolver;
pub mod error;
pub mod hamiltonians;
pub mod linalg;
pub mod noise;
pub mod pauli;
pub mod phonons;
pub mod symmetries;

pub use error::{Error, Result};
