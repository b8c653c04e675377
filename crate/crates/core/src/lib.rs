//! Non-neural frontend for distant multi-talker speech processing.

pub mod audio;
pub mod beamform;
pub mod diarize;
pub mod error;
pub mod features;
pub mod formats;
pub mod fusion;
pub mod gss;
pub mod linalg;
pub mod metrics;
pub mod micselect;
pub mod pipeline;
pub mod spkcount;
pub mod stft;
pub mod synth;
pub mod wpe;

pub use error::{Error, Result};
