//! Synthesis, verification and simulation of hybrid anti-windup controllers
//! for switched linear plants with input saturation under average dwell time.

pub mod error;
pub mod hybridsim;
pub mod linalg;
pub mod lmi;
pub mod matrix_serde;
pub mod model;
pub mod pipeline;
pub mod reproduce;
pub mod sdp;
pub mod synth;

pub use error::{Error, Result};
