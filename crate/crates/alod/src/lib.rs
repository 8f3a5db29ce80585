//! File formats, command line and listening-test service around
//! `alod-core`.

pub mod cli;
pub mod error;
pub mod hrir;
pub mod jobs;
pub mod layout;
pub mod provenance;
pub mod report;
pub mod scene_io;
pub mod service;
pub mod wav;

pub use error::{Error, Result};
