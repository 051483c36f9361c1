//! Parabolic Anderson model driven by noise that is white in time and rough
//! in space (Hurst index in `(1/4, 1/2)`).
//!
//! Three independent routes to the moments of the solution are provided:
//! a Fourier–Galerkin solver ([`heat_solver`]), the Wiener-chaos series
//! ([`chaos`]) and a mollified Feynman–Kac Monte Carlo ([`feynman_kac`]).
//! [`intermittency`] runs growth scans on top of them.

pub mod chaos;
pub mod error;
pub mod feynman_kac;
pub mod heat_solver;
pub mod intermittency;
pub mod quadrature;
pub mod rng;
pub mod special;
pub mod spectral_noise;
pub mod stats;

pub use error::{PamError, Result};
pub use spectral_noise::{HurstParam, SpectralGrid};
