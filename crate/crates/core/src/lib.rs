//! Audio-visual quality assessment for omnidirectional video.

pub mod audiofe;
pub mod erp;
pub mod error;
pub mod hm;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod par;
pub mod siti;
pub mod subjective;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
