//! Deterministic synthetic crop / non-crop pixels with known labels.
//!
//! Each pixel has a latent greenness curve over windows `t = 1..12`:
//!
//! ```text
//! bump(t)     = exp(-((t - 6.5) / 2)²)
//! crop:       g(t) = 0.15 + 0.65·bump(t)
//! non-crop:   g(t) = 0.30 + 0.05·sin(2π(t - 1)/12)
//! jitter:     g(t) += a + b·bump(t),   a, b ~ N(0, noise_std²) per pixel
//! ```
//!
//! Band `k` reflectance is `base[k] + slope[k]·g(t)` plus independent
//! `N(0, (noise_std/10)²)` noise, plus `domain_shift` for global pixels,
//! clamped to `[0, 1]`. NDVI is then computed from the noisy B08 and B04.
//! With `noise_std = 0` every pixel of a class is identical.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datapipe::{compute_ndvi, LabeledExample, PixelTimeSeries, Source};
use crate::error::{check_dim, Error, Result};
use crate::raster::RasterStack;
use crate::rng::{rng_from, Rng, STREAM_SYNTH};
use crate::{B04, B08, FEATURES, N_BANDS, TIMESTEPS};

/// Reflectance at zero greenness, per band.
pub const BAND_BASE: [f64; N_BANDS] = [0.10, 0.12, 0.14, 0.16, 0.20, 0.22, 0.20, 0.22, 0.08, 0.30, 0.24];
/// Reflectance change per unit greenness, per band.
pub const BAND_SLOPE: [f64; N_BANDS] =
    [-0.05, -0.03, -0.10, -0.04, 0.10, 0.18, 0.30, 0.30, 0.06, -0.12, -0.14];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_crop: usize,
    pub n_noncrop: usize,
    pub seed: u64,
    pub domain: Source,
    /// Reflectance offset added to every band of global pixels.
    pub domain_shift: f64,
    pub noise_std: f64,
}

impl SynthConfig {
    pub fn local(n_crop: usize, n_noncrop: usize, noise_std: f64, seed: u64) -> Self {
        Self { n_crop, n_noncrop, seed, domain: Source::Local, domain_shift: 0.0, noise_std }
    }

    pub fn global(n_crop: usize, n_noncrop: usize, noise_std: f64, domain_shift: f64, seed: u64) -> Self {
        Self { n_crop, n_noncrop, seed, domain: Source::Global, domain_shift, noise_std }
    }

    fn validate(&self) -> Result<()> {
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::InvalidConfig(format!("noise_std must be ≥ 0, got {}", self.noise_std)));
        }
        if !(self.domain_shift.is_finite() && self.domain_shift >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "domain_shift must be ≥ 0, got {}",
                self.domain_shift
            )));
        }
        Ok(())
    }

    fn shift(&self) -> f64 {
        match self.domain {
            Source::Global => self.domain_shift,
            Source::Local => 0.0,
        }
    }

    fn domain_tag(&self) -> u64 {
        match self.domain {
            Source::Global => 0,
            Source::Local => 1,
        }
    }
}

/// Seasonal bump centred between windows 6 and 7 (1-based `t`).
pub fn bump(t: usize) -> f64 {
    let u = (t as f64 - 6.5) / 2.0;
    libm::exp(-u * u)
}

/// Noise-free greenness of the class archetype at window `t` (1-based).
pub fn archetype_greenness(crop: bool, t: usize) -> f64 {
    if crop {
        0.15 + 0.65 * bump(t)
    } else {
        0.30 + 0.05 * libm::sin(2.0 * core::f64::consts::PI * (t as f64 - 1.0) / 12.0)
    }
}

fn normal(std: f64) -> Option<Normal<f64>> {
    (std > 0.0).then(|| Normal::new(0.0, std).expect("finite positive std"))
}

/// Flat `12 × 12` series for one pixel.
fn pixel_series(crop: bool, config: &SynthConfig, rng: &mut Rng) -> Vec<f64> {
    let latent = normal(config.noise_std);
    let band_noise = normal(config.noise_std / 10.0);
    let (a, b) = match &latent {
        Some(d) => (d.sample(rng), d.sample(rng)),
        None => (0.0, 0.0),
    };
    let shift = config.shift();
    let mut out = vec![0.0; TIMESTEPS * FEATURES];
    for t in 0..TIMESTEPS {
        let g = archetype_greenness(crop, t + 1) + a + b * bump(t + 1);
        let row = &mut out[t * FEATURES..(t + 1) * FEATURES];
        for k in 0..N_BANDS {
            let noise = band_noise.as_ref().map_or(0.0, |d| d.sample(rng));
            row[k] = (BAND_BASE[k] + BAND_SLOPE[k] * g + noise + shift).clamp(0.0, 1.0);
        }
        row[N_BANDS] = compute_ndvi(row[B08], row[B04]);
    }
    out
}

/// `n_crop` crop pixels followed by `n_noncrop` non-crop pixels.
pub fn generate_examples(config: &SynthConfig) -> Result<Vec<LabeledExample>> {
    config.validate()?;
    let total = config.n_crop + config.n_noncrop;
    (0..total)
        .map(|i| {
            let crop = i < config.n_crop;
            let mut rng = rng_from(config.seed, &[STREAM_SYNTH, config.domain_tag(), i as u64]);
            let flat = pixel_series(crop, config, &mut rng);
            Ok(LabeledExample {
                point_id: format!("{}-{i:05}", config.domain.as_str()),
                series: PixelTimeSeries::from_flat(&flat, None)?,
                label: crop,
                source: config.domain,
                lat: None,
                lon: None,
            })
        })
        .collect()
}

/// A raster whose pixels follow the archetype given by `crop_mask`
/// (row-major). Counts in `config` are ignored. Returns the stack and the
/// ground truth, which is `crop_mask` itself.
pub fn generate_raster(
    width: usize,
    height: usize,
    crop_mask: &[bool],
    config: &SynthConfig,
) -> Result<(RasterStack, Vec<bool>)> {
    config.validate()?;
    let n = width.checked_mul(height).ok_or_else(|| Error::Precondition("raster too large".into()))?;
    check_dim("crop mask", n, crop_mask.len())?;
    let mut data = Vec::with_capacity(n * TIMESTEPS * FEATURES);
    for (i, &crop) in crop_mask.iter().enumerate() {
        let mut rng = rng_from(config.seed, &[STREAM_SYNTH, 2 + config.domain_tag(), i as u64]);
        data.extend(pixel_series(crop, config, &mut rng).into_iter().map(|v| v as f32));
    }
    let stack = RasterStack::new(width, height, TIMESTEPS, FEATURES, data, vec![true; n])?;
    Ok((stack, crop_mask.to_vec()))
}

/// Mean NDVI over windows 5–8 minus mean NDVI over windows 1, 2, 11, 12.
pub fn ndvi_peak_score(series: &PixelTimeSeries) -> f64 {
    let ndvi = |t: usize| series.values().get(t - 1, N_BANDS);
    let peak = (5..=8).map(ndvi).sum::<f64>() / 4.0;
    let off = [1, 2, 11, 12].iter().map(|&t| ndvi(t)).sum::<f64>() / 4.0;
    peak - off
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::auc_roc;

    #[test]
    fn counts_follow_config() {
        let ex = generate_examples(&SynthConfig::local(50, 70, 0.1, 1)).unwrap();
        assert_eq!(ex.len(), 120);
        assert_eq!(ex.iter().filter(|e| e.label).count(), 50);
        assert!(ex.iter().all(|e| e.source == Source::Local));
    }

    #[test]
    fn zero_noise_collapses_each_class() {
        let ex = generate_examples(&SynthConfig::local(5, 5, 0.0, 9)).unwrap();
        for pair in ex[..5].windows(2).chain(ex[5..].windows(2)) {
            assert_eq!(pair[0].series, pair[1].series);
        }
        assert_ne!(ex[0].series, ex[5].series);
    }

    #[test]
    fn archetype_ndvi_peaks_mid_season() {
        // Closed form from the documented band model, without the generator.
        let ndvi = |crop: bool, t: usize| {
            let g = archetype_greenness(crop, t);
            let b08 = 0.20 + 0.30 * g;
            let b04 = 0.14 - 0.10 * g;
            (b08 - b04) / (b08 + b04)
        };
        let crop: Vec<f64> = (1..=12).map(|t| ndvi(true, t)).collect();
        let peak = (0..12).max_by(|&a, &b| crop[a].total_cmp(&crop[b])).unwrap() + 1;
        assert!((5..=8).contains(&peak), "peak at {peak}");
        assert!(crop[peak - 1] > ndvi(false, peak));

        let ex = generate_examples(&SynthConfig::local(1, 1, 0.0, 0)).unwrap();
        for t in 1..=12 {
            assert!((ex[0].series.values().get(t - 1, N_BANDS) - ndvi(true, t)).abs() < 1e-12);
            assert!((ex[1].series.values().get(t - 1, N_BANDS) - ndvi(false, t)).abs() < 1e-12);
        }
    }

    #[test]
    fn generation_is_seeded() {
        let c = SynthConfig::global(20, 20, 0.1, 0.05, 4);
        assert_eq!(generate_examples(&c).unwrap(), generate_examples(&c).unwrap());
        let other = SynthConfig { seed: 5, ..c.clone() };
        assert_ne!(generate_examples(&c).unwrap(), generate_examples(&other).unwrap());
    }

    #[test]
    fn global_pixels_are_shifted() {
        let local = generate_examples(&SynthConfig::local(1, 0, 0.0, 0)).unwrap();
        let global = generate_examples(&SynthConfig::global(1, 0, 0.0, 0.05, 0)).unwrap();
        let (l, g) = (local[0].series.values(), global[0].series.values());
        assert!((g.get(0, 0) - l.get(0, 0) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn ndvi_stays_in_range() {
        for noise in [0.0, 0.1, 0.5] {
            let ex = generate_examples(&SynthConfig::global(30, 30, noise, 0.1, 2)).unwrap();
            for e in &ex {
                for t in 0..12 {
                    let v = e.series.values().get(t, N_BANDS);
                    assert!((-1.0..=1.0).contains(&v));
                }
            }
        }
    }

    #[test]
    fn separability_falls_with_noise() {
        let auc_at = |noise: f64| {
            let ex = generate_examples(&SynthConfig::local(400, 400, noise, 12)).unwrap();
            let scores: Vec<f64> = ex.iter().map(|e| ndvi_peak_score(&e.series)).collect();
            let labels: Vec<bool> = ex.iter().map(|e| e.label).collect();
            auc_roc(&scores, &labels).unwrap()
        };
        let (a, b, c) = (auc_at(0.1), auc_at(0.25), auc_at(0.5));
        assert!(a > b && b > c, "{a} {b} {c}");
    }

    #[test]
    fn raster_truth_is_the_mask() {
        let mask = vec![true; 12];
        let (stack, truth) = generate_raster(4, 3, &mask, &SynthConfig::local(0, 0, 0.1, 1)).unwrap();
        assert!(truth.iter().all(|&t| t));
        assert_eq!(stack.width(), 4);
        let again = generate_raster(4, 3, &mask, &SynthConfig::local(0, 0, 0.1, 1)).unwrap();
        assert_eq!(stack, again.0);
        assert!(generate_raster(4, 3, &mask[..11], &SynthConfig::local(0, 0, 0.1, 1)).is_err());
    }
}
