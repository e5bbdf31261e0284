//! Coupled magnon / microwave-photon mode toolkit.
//!
//! The crate models a ferrimagnetic sphere (uniform Kittel magnon mode) sitting
//! inside a three-dimensional microwave cavity probed in reflection through a
//! single port. It covers
//!
//! - forward design of the coupling strength from geometry and spin count
//!   ([`physics`]),
//! - reflection spectra, bias-field maps and polariton frequencies
//!   ([`spectra`]),
//! - time-domain ringdown and Rabi dynamics ([`dynamics`]),
//! - damped Gauss-Newton extraction of rates and couplings from measured
//!   spectra and decay traces ([`estimation`]),
//! - coupling-regime classification ([`regimes`]).
//!
//! All internal quantities are SI: angular frequencies and decay rates in
//! rad/s, fields in tesla, lengths in metres. Every decay rate `kappa` is an
//! amplitude half-linewidth: field amplitudes decay as `exp(-kappa t)`, energy
//! as `exp(-2 kappa t)`, and the FWHM of a Lorentzian reflection dip is
//! `2 kappa`.

pub mod dynamics;
pub mod error;
pub mod estimation;
pub mod physics;
pub mod regimes;
pub mod spectra;

pub use error::{Error, Result};
pub use physics::{CavityMode, CoupledSystem, MagnonMode, ModeParameters, SpherePosition};

/// `2π`, used at every Hz <-> rad/s boundary.
pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
