use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::{LabeledExample, Source};
use crate::error::{Error, Result};
use crate::rng::{rng_from, STREAM_SPLIT};

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<LabeledExample>,
    pub val: Vec<LabeledExample>,
    /// `false` when a stratum was too small and the split fell back to a
    /// plain random draw.
    pub stratified: bool,
}

const STRATA: [(Source, bool); 4] =
    [(Source::Global, false), (Source::Global, true), (Source::Local, false), (Source::Local, true)];

fn stratum_of(e: &LabeledExample) -> usize {
    STRATA.iter().position(|&(s, l)| s == e.source && l == e.label).unwrap_or(0)
}

/// Seeded train/validation split, stratified by `(source, label)`.
///
/// The validation set has `round(n · val_fraction)` examples; each stratum
/// contributes within one example of its proportional share (largest
/// remainder allocation). Both halves keep input order.
pub fn split_train_val(examples: &[LabeledExample], val_fraction: f64, seed: u64) -> Result<Split> {
    let n = examples.len();
    if n < 5 {
        return Err(Error::Precondition(alloc::format!("need at least 5 examples to split, got {n}")));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Precondition(alloc::format!(
            "validation fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    let n_val = (libm::round(n as f64 * val_fraction) as usize).clamp(1, n - 1);
    let mut rng = rng_from(seed, &[STREAM_SPLIT]);

    let mut groups: [Vec<usize>; 4] = Default::default();
    for (i, e) in examples.iter().enumerate() {
        groups[stratum_of(e)].push(i);
    }
    let stratified = groups.iter().all(|g| g.is_empty() || g.len() >= 2);

    let mut in_val = alloc::vec![false; n];
    if stratified {
        let quotas: Vec<f64> = groups.iter().map(|g| g.len() as f64 * val_fraction).collect();
        let mut take: Vec<usize> = quotas.iter().map(|q| libm::floor(*q) as usize).collect();
        let mut order: Vec<usize> = (0..4).collect();
        // Stable sort keeps stratum order among equal remainders.
        order.sort_by(|&a, &b| {
            let ra = quotas[a] - libm::floor(quotas[a]);
            let rb = quotas[b] - libm::floor(quotas[b]);
            rb.partial_cmp(&ra).unwrap_or(core::cmp::Ordering::Equal)
        });
        let mut missing = n_val.saturating_sub(take.iter().sum());
        for &s in order.iter().cycle().take(8) {
            if missing == 0 {
                break;
            }
            if take[s] < groups[s].len() {
                take[s] += 1;
                missing -= 1;
            }
        }
        for (g, &k) in groups.iter_mut().zip(&take) {
            g.shuffle(&mut rng);
            for &i in &g[..k] {
                in_val[i] = true;
            }
        }
    } else {
        log::warn!("a (source, label) stratum has fewer than 2 examples; using an unstratified split");
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        for &i in &idx[..n_val] {
            in_val[i] = true;
        }
    }

    let (mut train, mut val) = (Vec::with_capacity(n - n_val), Vec::with_capacity(n_val));
    for (e, &v) in examples.iter().zip(&in_val) {
        if v {
            val.push(e.clone());
        } else {
            train.push(e.clone());
        }
    }
    Ok(Split { train, val, stratified })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::PixelTimeSeries;
    use alloc::collections::BTreeSet;
    use alloc::string::{String, ToString};
    use proptest::prelude::*;

    fn ex(i: usize, source: Source, label: bool) -> LabeledExample {
        LabeledExample {
            point_id: i.to_string(),
            series: PixelTimeSeries::from_flat(&[i as f64; 144], None).unwrap(),
            label,
            source,
            lat: None,
            lon: None,
        }
    }

    fn mixed(counts: [usize; 4]) -> Vec<LabeledExample> {
        let mut out = Vec::new();
        for (s, &c) in counts.iter().enumerate() {
            let (src, lab) = STRATA[s];
            for _ in 0..c {
                out.push(ex(out.len(), src, lab));
            }
        }
        out
    }

    fn ids(v: &[LabeledExample]) -> BTreeSet<String> {
        v.iter().map(|e| e.point_id.clone()).collect()
    }

    #[test]
    fn hundred_examples_split_eighty_twenty() {
        let data = mixed([30, 20, 35, 15]);
        let s = split_train_val(&data, 0.2, 1).unwrap();
        assert_eq!((s.train.len(), s.val.len()), (80, 20));
        assert!(s.stratified);
    }

    #[test]
    fn same_seed_same_assignment() {
        let data = mixed([13, 7, 21, 9]);
        assert_eq!(split_train_val(&data, 0.2, 4).unwrap(), split_train_val(&data, 0.2, 4).unwrap());
        assert_ne!(
            ids(&split_train_val(&data, 0.2, 4).unwrap().val),
            ids(&split_train_val(&data, 0.2, 5).unwrap().val)
        );
    }

    #[test]
    fn singleton_stratum_falls_back() {
        let data = mixed([10, 1, 10, 10]);
        let s = split_train_val(&data, 0.2, 3).unwrap();
        assert!(!s.stratified);
        assert_eq!(s.val.len(), 6);
    }

    #[test]
    fn too_few_examples() {
        assert!(split_train_val(&mixed([2, 2, 0, 0]), 0.2, 0).is_err());
    }

    proptest! {
        #[test]
        fn split_is_a_stratified_partition(
            counts in proptest::array::uniform4(0usize..40),
            frac in 0.05f64..0.6,
            seed in any::<u64>(),
        ) {
            let data = mixed(counts);
            prop_assume!(data.len() >= 5);
            let s = split_train_val(&data, frac, seed).unwrap();
            let (tr, va) = (ids(&s.train), ids(&s.val));
            prop_assert!(tr.is_disjoint(&va));
            prop_assert_eq!(tr.len() + va.len(), data.len());
            prop_assert_eq!(tr.union(&va).count(), data.len());
            if s.stratified {
                for (k, &c) in counts.iter().enumerate() {
                    let got = s.val.iter().filter(|e| stratum_of(e) == k).count() as f64;
                    prop_assert!((got - c as f64 * frac).abs() <= 1.0 + 1e-9);
                }
            }
        }
    }
}
