//! Forward and inverse imaging models for rotationally symmetric optical
//! systems: polar resampling, Seidel pupil synthesis, ring convolution and
//! deconvolution, single-shot aberration calibration, and rotational
//! Fourier diagnostics.

pub mod calib;
pub mod error;
pub mod fft;
pub mod imgops;
pub mod polar;
pub mod roft;
pub mod forward;
pub mod seidel;
pub mod optim;
pub mod solvers;
pub mod synth;

pub use error::{RdmError, Result};
