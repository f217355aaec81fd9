use alloc::vec;
use alloc::vec::Vec;

use chrono::{Days, NaiveDate};

use super::{PixelTimeSeries, SpectralObservation};
use crate::error::{Error, Result};
use crate::numerics::Tensor2;
use crate::{B04, B08, FEATURES, N_BANDS};

pub const WINDOW_DAYS: u32 = 30;

/// `(B08 - B04) / (B08 + B04)`, or 0 when the denominator vanishes.
pub fn compute_ndvi(b08: f64, b04: f64) -> f64 {
    let sum = b08 + b04;
    if sum == 0.0 {
        0.0
    } else {
        (b08 - b04) / sum
    }
}

/// First day and exclusive last day of 0-based window `index`.
pub fn window_bounds(start: NaiveDate, index: usize, window_days: u32) -> (NaiveDate, NaiveDate) {
    let from = start + Days::new(index as u64 * window_days as u64);
    (from, from + Days::new(window_days as u64))
}

/// For each window `[start + w·k, start + w·(k+1))`, the index of the
/// observation with the lowest cloud score. Ties go to the earlier date, then
/// to input order. Observations outside the span are ignored.
pub fn select_least_cloudy(
    observations: &[SpectralObservation],
    start: NaiveDate,
    n_windows: usize,
    window_days: u32,
) -> Result<Vec<usize>> {
    if window_days == 0 || n_windows == 0 {
        return Err(Error::Precondition("compositing needs at least one non-empty window".into()));
    }
    let mut best: Vec<Option<usize>> = vec![None; n_windows];
    for (idx, obs) in observations.iter().enumerate() {
        obs.validate()?;
        let offset = (obs.date - start).num_days();
        if offset < 0 {
            continue;
        }
        let window = (offset / window_days as i64) as usize;
        if window >= n_windows {
            continue;
        }
        let slot = &mut best[window];
        let better = match *slot {
            None => true,
            Some(cur) => {
                let c = &observations[cur];
                obs.cloud_score < c.cloud_score
                    || (obs.cloud_score == c.cloud_score && obs.date < c.date)
            }
        };
        if better {
            *slot = Some(idx);
        }
    }
    best.into_iter()
        .enumerate()
        .map(|(w, s)| s.ok_or(Error::WindowGap { window: w + 1 }))
        .collect()
}

/// Least-cloudy monthly composite with NDVI appended as the last feature.
pub fn composite_least_cloudy(
    observations: &[SpectralObservation],
    start: NaiveDate,
    n_windows: usize,
    window_days: u32,
) -> Result<PixelTimeSeries> {
    let chosen = select_least_cloudy(observations, start, n_windows, window_days)?;
    let mut values = Tensor2::zeros(n_windows, FEATURES);
    for (t, &idx) in chosen.iter().enumerate() {
        let bands = &observations[idx].bands;
        let row = values.row_mut(t);
        row[..N_BANDS].copy_from_slice(bands);
        row[N_BANDS] = compute_ndvi(bands[B08], bands[B04]);
    }
    PixelTimeSeries::new(values, Some(start))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::TIMESTEPS;
    use alloc::string::ToString;

    fn obs(day: u64, cloud: f64, fill: f64) -> SpectralObservation {
        let start = NaiveDate::from_ymd_opt(2019, 3, 1).unwrap();
        SpectralObservation {
            point_id: "p".to_string(),
            date: start + Days::new(day),
            cloud_score: cloud,
            bands: [fill; N_BANDS],
        }
    }

    fn march() -> NaiveDate {
        NaiveDate::from_ymd_opt(2019, 3, 1).unwrap()
    }

    #[test]
    fn ndvi_values() {
        assert!((compute_ndvi(0.5, 0.25) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(compute_ndvi(0.3, 0.3), 0.0);
        assert_eq!(compute_ndvi(0.0, 0.0), 0.0);
    }

    #[test]
    fn one_observation_per_window_is_copied_verbatim() {
        let list: Vec<_> = (0..12).map(|k| obs(30 * k + 7, 0.5, k as f64 * 0.01 + 0.01)).collect();
        let s = composite_least_cloudy(&list, march(), TIMESTEPS, WINDOW_DAYS).unwrap();
        for (t, o) in list.iter().enumerate() {
            assert_eq!(&s.values().row(t)[..N_BANDS], &o.bands[..]);
            assert_eq!(s.values().get(t, N_BANDS), 0.0);
        }
    }

    #[test]
    fn least_cloudy_wins_within_window() {
        let mut list: Vec<_> = (0..12).map(|k| obs(30 * k, 0.9, 0.1)).collect();
        list.push(obs(3, 0.2, 0.2));
        list.push(obs(5, 0.05, 0.3));
        list.push(obs(9, 0.6, 0.4));
        let chosen = select_least_cloudy(&list, march(), 12, 30).unwrap();
        assert_eq!(chosen[0], 13);
    }

    #[test]
    fn ties_go_to_earliest_date() {
        let mut list: Vec<_> = (0..12).map(|k| obs(30 * k + 20, 0.1, 0.1)).collect();
        list.push(obs(4, 0.1, 0.2));
        let chosen = select_least_cloudy(&list, march(), 12, 30).unwrap();
        assert_eq!(chosen[0], 12);
    }

    #[test]
    fn last_window_covers_days_330_to_359() {
        let (from, to) = window_bounds(march(), 11, WINDOW_DAYS);
        assert_eq!((from - march()).num_days(), 330);
        assert_eq!((to - march()).num_days(), 360);
        // Day 359 belongs to window 12, day 360 to nothing.
        let mut list: Vec<_> = (0..11).map(|k| obs(30 * k, 0.1, 0.1)).collect();
        list.push(obs(360, 0.0, 0.9));
        assert_eq!(
            select_least_cloudy(&list, march(), 12, 30),
            Err(Error::WindowGap { window: 12 })
        );
        list.push(obs(359, 0.3, 0.5));
        assert_eq!(select_least_cloudy(&list, march(), 12, 30).unwrap()[11], 12);
    }

    #[test]
    fn gap_names_the_window() {
        let list: Vec<_> = (0..12).filter(|&k| k != 4).map(|k| obs(30 * k, 0.1, 0.1)).collect();
        assert_eq!(
            composite_least_cloudy(&list, march(), 12, 30).unwrap_err(),
            Error::WindowGap { window: 5 }
        );
    }

    #[test]
    fn invalid_cloud_score_is_rejected() {
        let list = [obs(0, 1.5, 0.1)];
        assert!(matches!(select_least_cloudy(&list, march(), 1, 30), Err(Error::Precondition(_))));
    }
}
