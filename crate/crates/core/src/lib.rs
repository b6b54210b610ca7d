//! Weakly supervised step localization in instructional videos: step
//! classifiers composed from shared components, trained against ordered
//! step assignments found by dynamic programming.

pub mod dp;
pub mod error;
pub mod eval;
pub mod features;
pub mod io;
pub mod matrix;
pub mod model;
pub mod par;
pub mod stem;
pub mod synth;
pub mod task;
pub mod text;
pub mod trainer;

pub use error::{Error, Result};
pub use features::FeatureSequence;
pub use matrix::Mat;
