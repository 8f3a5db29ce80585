//! Room acoustics simulation core: scene description, image sources,
//! delay-network reverberation, spatialization, impulse response synthesis,
//! decay analysis and listening-test protocol logic.
//!
//! The crate is `no_std` with `alloc`; file formats, the command line and the
//! session service live in the companion `alod` crate.

#![no_std]

extern crate alloc;

pub mod analysis;
pub mod bands;
pub mod convolve;
pub mod decay;
pub mod error;
pub mod experiment;
pub mod fft;
pub mod filter;
pub mod geom;
pub mod ism;
pub mod render;
pub mod resample;
pub mod reverb;
pub mod scene;
pub mod spatial;
pub mod stimulus;

pub use error::{Error, Result};

/// Version of this crate, recorded in artifact provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
