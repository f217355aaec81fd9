//! From dated observations and crowd labels to normalized, batched training
//! examples.

mod batches;
mod composite;
mod normalize;
mod split;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::Tensor2;
use crate::{FEATURES, N_BANDS, TIMESTEPS};

pub use batches::{make_batches, Batch};
pub use composite::{
    composite_least_cloudy, compute_ndvi, select_least_cloudy, window_bounds, WINDOW_DAYS,
};
pub use normalize::{normalize, NormalizationStats, STD_FLOOR};
pub use split::{split_train_val, Split};

/// One dated, cloud-scored acquisition of the 11 kept bands at a point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralObservation {
    pub point_id: String,
    pub date: NaiveDate,
    pub cloud_score: f64,
    /// B02, B03, B04, B05, B06, B07, B08, B8A, B09, B11, B12
    pub bands: [f64; N_BANDS],
}

impl SpectralObservation {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.cloud_score) {
            return Err(Error::Precondition(format!(
                "cloud_score {} of point {} on {} is outside [0, 1]",
                self.cloud_score, self.point_id, self.date
            )));
        }
        if !self.bands.iter().all(|b| b.is_finite()) {
            return Err(Error::NonFinite { context: "observation bands" });
        }
        Ok(())
    }
}

/// Twelve composited windows of eleven bands plus NDVI, timestep-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelTimeSeries {
    values: Tensor2,
    pub start_date: Option<NaiveDate>,
    normalized: bool,
}

impl PixelTimeSeries {
    pub fn new(values: Tensor2, start_date: Option<NaiveDate>) -> Result<Self> {
        check_dim("series timesteps", TIMESTEPS, values.rows())?;
        check_dim("series features", FEATURES, values.cols())?;
        Ok(Self { values, start_date, normalized: false })
    }

    /// Builds a series from the flattened `t01_B02 … t12_NDVI` layout.
    pub fn from_flat(flat: &[f64], start_date: Option<NaiveDate>) -> Result<Self> {
        check_dim("flattened series", TIMESTEPS * FEATURES, flat.len())?;
        Self::new(Tensor2::from_vec(TIMESTEPS, FEATURES, flat.to_vec())?, start_date)
    }

    pub fn values(&self) -> &Tensor2 {
        &self.values
    }

    pub fn flat(&self) -> &[f64] {
        self.values.data()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Marks raw values as already normalized, e.g. after loading them from
    /// a source that stores normalized features.
    pub fn assume_normalized(mut self) -> Self {
        self.normalized = true;
        self
    }

    pub(crate) fn values_mut(&mut self) -> &mut Tensor2 {
        &mut self.values
    }

    pub(crate) fn set_normalized(&mut self) {
        self.normalized = true;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    /// Crowdsourced pool from outside the mapping region.
    Global,
    /// Hand-labeled pool inside the mapping region.
    Local,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Global => "global",
            Source::Local => "local",
        }
    }
}

impl core::str::FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "global" => Ok(Source::Global),
            "local" => Ok(Source::Local),
            other => Err(Error::Precondition(format!("unknown source '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub point_id: String,
    pub series: PixelTimeSeries,
    /// `true` is crop.
    pub label: bool,
    pub source: Source,
    pub lat: Option<f64>,
    pub lon: Option<f64>,
}

impl LabeledExample {
    pub fn target(&self) -> f64 {
        if self.label {
            1.0
        } else {
            0.0
        }
    }
}

/// Crowd labels in `[0, 1]` collapse to crop when their mean reaches 0.5.
pub fn binarize_crowd_label(labeler_values: &[f64]) -> Result<bool> {
    if labeler_values.is_empty() {
        return Err(Error::Precondition("no labeler values for point".into()));
    }
    if let Some(v) = labeler_values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Precondition(format!("label value {v} is outside [0, 1]")));
    }
    let mean = labeler_values.iter().sum::<f64>() / labeler_values.len() as f64;
    Ok(mean >= 0.5)
}

/// Splits examples into the global and local pools, preserving order.
pub fn partition_by_source(examples: Vec<LabeledExample>) -> (Vec<LabeledExample>, Vec<LabeledExample>) {
    examples.into_iter().partition(|e| e.source == Source::Global)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crowd_binarization() {
        assert!(binarize_crowd_label(&[1.0, 0.0, 1.0]).unwrap());
        assert!(!binarize_crowd_label(&[0.0, 0.0, 0.0]).unwrap());
        assert!(binarize_crowd_label(&[0.5, 0.5]).unwrap());
        assert!(!binarize_crowd_label(&[0.0, 0.0, 1.0]).unwrap());
        assert!(matches!(binarize_crowd_label(&[]), Err(Error::Precondition(_))));
    }

    #[test]
    fn series_shape_is_enforced() {
        assert!(PixelTimeSeries::from_flat(&[0.0; 143], None).is_err());
        let s = PixelTimeSeries::from_flat(&[0.0; 144], None).unwrap();
        assert!(!s.is_normalized());
    }

    #[test]
    fn source_parses_case_insensitively() {
        assert_eq!("Global".parse::<Source>().unwrap(), Source::Global);
        assert_eq!(" local".parse::<Source>().unwrap(), Source::Local);
        assert!("regional".parse::<Source>().is_err());
    }
}
