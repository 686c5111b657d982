//! Optical homodyne tomograms for single-mode states of light, distance
//! markers between quadrature distributions, and normal-ordered moments
//! extracted directly from tomogram slices.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod markers;
pub mod moments;
pub mod special;
pub mod states;
pub mod tomogram;

pub use error::{Error, Result};
