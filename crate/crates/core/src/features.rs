use crate::error::{Error, Result};
use crate::matrix::Mat;

/// Per-video T×D features, one row per temporal segment.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    values: Mat,
    seconds_per_segment: f64,
}

impl FeatureSequence {
    pub fn new(values: Mat) -> Result<Self> {
        Self::with_segment_length(values, 1.0)
    }

    pub fn with_segment_length(values: Mat, seconds_per_segment: f64) -> Result<Self> {
        if values.rows() == 0 || values.cols() == 0 {
            return Err(Error::invalid(format!(
                "feature sequence must be non-empty, got {}x{}",
                values.rows(),
                values.cols()
            )));
        }
        if let Some(i) = values.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "feature value at segment {}, dim {}",
                i / values.cols(),
                i % values.cols()
            )));
        }
        if !(seconds_per_segment.is_finite() && seconds_per_segment > 0.0) {
            return Err(Error::invalid("seconds_per_segment must be positive"));
        }
        Ok(FeatureSequence {
            values,
            seconds_per_segment,
        })
    }

    /// Number of segments (T).
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    /// Feature dimension (D).
    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn segment(&self, t: usize) -> &[f64] {
        self.values.row(t)
    }

    pub fn values(&self) -> &Mat {
        &self.values
    }

    pub fn seconds_per_segment(&self) -> f64 {
        self.seconds_per_segment
    }
}
