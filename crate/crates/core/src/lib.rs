//! Numerical core for the kicked anharmonic oscillator laboratory.
//!
//! The crate is `no_std` (it only needs `alloc`) and contains every piece of
//! numerics: the static model ([`model`]), the forced classical oscillator
//! with its passage-time bookkeeping ([`classical`]), the linearised flow
//! along that orbit ([`flow`]), squeezed Gaussian states evolved in closed
//! form ([`gaussian`]) and a split-step Fourier solver for the full and the
//! quadratic Schrödinger equations ([`quantum`]).
//!
//! File formats, configuration and the command-line front end live in the
//! companion `anharm-lab` crate.
#![no_std]

extern crate alloc;

pub mod classical;
pub mod error;
pub mod fft;
pub mod fit;
pub mod flow;
pub mod gaussian;
pub mod linalg;
pub mod model;
pub mod ode;
pub mod quadrature;
pub mod quantum;

pub use error::{Error, Result};
pub use model::{ModelParams, PhasePoint};

pub use num_complex::Complex64;
