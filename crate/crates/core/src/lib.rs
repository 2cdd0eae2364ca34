//! Computational ghost imaging through an unknown scattering medium.
//!
//! The crate simulates a single-pixel (bucket) acquisition in which preset
//! binary source patterns are scrambled by a static diffuser before they
//! reach the object, and recovers the object from the patterns and bucket
//! values alone: correlate, take the Fourier magnitude, optionally
//! compensate the system MTF, then run HIO/ER phase retrieval.

pub mod correlation;
pub mod error;
pub mod evaluation;
pub mod forward;
pub mod grid;
pub mod objects;
pub mod patterns;
pub mod pipeline;
pub mod retrieval;
pub mod rng;

pub use error::{Error, Result};
