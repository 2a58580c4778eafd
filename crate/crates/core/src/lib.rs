//! Numerical core of the psep source-separation workbench.
//!
//! Everything here is a pure function of its inputs and needs only `alloc`:
//! STFT analysis/synthesis, oracle masks, a tape-based reverse-mode
//! differentiation engine, the chimera++ separator with its mask-conditioned
//! phase head, the training objectives and permutation criteria, MISI phase
//! reconstruction, SI-SDR scoring, a synthetic two-speaker corpus generator,
//! and the Adam training loop with a byte-level checkpoint codec.
//!
//! File-system IO, configuration files and the command line live in the
//! `psep` crate.

#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod autodiff;
pub mod datagen;
pub mod dsp;
mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod phase_recon;
pub mod rng;
pub mod targets;
pub mod trainer;

pub use error::{Error, Result};
