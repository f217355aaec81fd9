use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{LabeledExample, PixelTimeSeries};
use crate::error::{check_dim, Error, Result};

pub const STD_FLOOR: f64 = 1e-8;

/// Per-feature standardization fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    /// Identity transform over `features` columns.
    pub fn identity(features: usize) -> Self {
        Self { mean: vec![0.0; features], std: vec![1.0; features] }
    }

    /// Population mean and standard deviation of every feature over all
    /// timesteps of all series.
    pub fn fit<'a, I>(series: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a PixelTimeSeries>,
    {
        let mut iter = series.into_iter().peekable();
        let first = iter.peek().ok_or_else(|| {
            Error::Precondition("cannot fit normalization on an empty dataset".into())
        })?;
        let features = first.values().cols();
        // Shifting by the first row keeps constant features exactly constant.
        let shift = first.values().row(0).to_vec();
        let mut sum = vec![0.0; features];
        let mut sum_sq = vec![0.0; features];
        let mut n = 0usize;
        for s in iter {
            let v = s.values();
            check_dim("normalization features", features, v.cols())?;
            for r in 0..v.rows() {
                for (j, &x) in v.row(r).iter().enumerate() {
                    let d = x - shift[j];
                    sum[j] += d;
                    sum_sq[j] += d * d;
                }
                n += 1;
            }
        }
        let n = n as f64;
        let mut mean = vec![0.0; features];
        let mut std = vec![0.0; features];
        for j in 0..features {
            let m = sum[j] / n;
            mean[j] = shift[j] + m;
            let var = (sum_sq[j] / n - m * m).max(0.0);
            std[j] = libm::sqrt(var).max(STD_FLOOR);
        }
        Ok(Self { mean, std })
    }

    pub fn features(&self) -> usize {
        self.mean.len()
    }

    /// Standardizes raw values in place; series must not be normalized yet.
    pub fn apply(&self, series: &mut PixelTimeSeries) -> Result<()> {
        if series.is_normalized() {
            return Err(Error::AlreadyNormalized);
        }
        self.apply_values(series.values_mut().data_mut())?;
        series.set_normalized();
        Ok(())
    }

    /// Standardizes a flat timestep-major buffer in place.
    pub fn apply_values(&self, values: &mut [f64]) -> Result<()> {
        let f = self.features();
        if f == 0 || !values.len().is_multiple_of(f) {
            return Err(Error::Dimension {
                context: "normalization input",
                expected: f,
                found: values.len(),
            });
        }
        for row in values.chunks_exact_mut(f) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(())
    }
}

/// Normalizes a dataset. Without `stats` they are fitted on `examples`, which
/// must then be the training split; the stats used are returned either way.
pub fn normalize(
    examples: &[LabeledExample],
    stats: Option<&NormalizationStats>,
) -> Result<(Vec<LabeledExample>, NormalizationStats)> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => NormalizationStats::fit(examples.iter().map(|e| &e.series))?,
    };
    let mut out = examples.to_vec();
    for e in &mut out {
        stats.apply(&mut e.series)?;
    }
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::Source;
    use crate::numerics::Tensor2;
    use alloc::string::ToString;
    use rand::Rng as _;

    fn example(seed: u64, constant: f64) -> LabeledExample {
        let mut rng = crate::rng::rng_from(seed, &[]);
        let mut data: Vec<f64> = (0..144).map(|_| rng.gen_range(0.0..0.6)).collect();
        for t in 0..12 {
            data[t * 12 + 3] = constant;
        }
        LabeledExample {
            point_id: seed.to_string(),
            series: PixelTimeSeries::new(Tensor2::from_vec(12, 12, data).unwrap(), None).unwrap(),
            label: seed.is_multiple_of(2),
            source: Source::Local,
            lat: None,
            lon: None,
        }
    }

    #[test]
    fn constant_feature_becomes_zero() {
        let data: Vec<_> = (0..7).map(|s| example(s, 0.1)).collect();
        let (norm, stats) = normalize(&data, None).unwrap();
        assert_eq!(stats.std[3], STD_FLOOR);
        for e in &norm {
            for t in 0..12 {
                assert_eq!(e.series.values().get(t, 3), 0.0);
            }
        }
    }

    #[test]
    fn normalized_training_features_are_centered() {
        let data: Vec<_> = (0..20).map(|s| example(s, 0.2)).collect();
        let (norm, _) = normalize(&data, None).unwrap();
        let refit = NormalizationStats::fit(norm.iter().map(|e| &e.series)).unwrap();
        for (j, m) in refit.mean.iter().enumerate() {
            assert!(m.abs() < 1e-9, "feature {j}: {m}");
            if j != 3 {
                assert!((refit.std[j] - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn second_application_is_refused() {
        let data: Vec<_> = (0..5).map(|s| example(s, 0.2)).collect();
        let (norm, stats) = normalize(&data, None).unwrap();
        assert_eq!(normalize(&norm, Some(&stats)).unwrap_err(), Error::AlreadyNormalized);

        // Applying the arithmetic twice is not idempotent.
        let mut raw = data[0].series.flat().to_vec();
        stats.apply_values(&mut raw).unwrap();
        let once = raw.clone();
        stats.apply_values(&mut raw).unwrap();
        assert_ne!(once, raw);
    }

    #[test]
    fn saved_stats_are_reused_verbatim() {
        let train: Vec<_> = (0..10).map(|s| example(s, 0.2)).collect();
        let test: Vec<_> = (10..13).map(|s| example(s, 0.2)).collect();
        let (_, stats) = normalize(&train, None).unwrap();
        let (_, reused) = normalize(&test, Some(&stats)).unwrap();
        assert_eq!(stats, reused);
    }
}
