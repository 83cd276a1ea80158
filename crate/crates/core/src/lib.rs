//! Implicit neural representations with hierarchical hypernetwork-generated
//! coordinate warps, a compact sinusoidal decoder, and a verification suite
//! for the spectral and stability properties of the warp.

pub mod autodiff;
pub mod decoder;
pub mod error;
pub mod features;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod spectral;
pub mod tasks;
pub mod train;
pub mod warp;

pub use error::{Error, Result};
