//! Measurement-quench dynamics of spin chains.
//!
//! A chain is prepared in its ground state, one site is projectively
//! measured, and the post-measurement state is evolved under the unchanged
//! Hamiltonian. The crate provides the pieces of that pipeline (bases,
//! Hamiltonians, eigensolvers, collapse, Krylov propagation) and the
//! analyses built on the resulting magnetization traces: quench
//! spectroscopy, finite-size data collapse and Kondo screening-length
//! extraction.

// `!(x > 0.0)` guards are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod eigensolve;
pub mod error;
pub mod evolve;
pub mod hamiltonians;
pub mod kondocloud;
pub mod pipeline;
pub mod quench;
pub mod scaling;
pub mod spectro;
pub mod statespace;

pub use error::{Error, Result};
