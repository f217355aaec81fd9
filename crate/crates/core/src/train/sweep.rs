use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::fit::{train, TrainConfig};
use crate::datapipe::LabeledExample;
use crate::error::{Error, Result};
use crate::eval::confusion_metrics;
use crate::model::{HeadKind, ModelConfig};
use crate::rng::{rng_from, STREAM_SUBSAMPLE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub fraction: f64,
    pub seed: u64,
    pub n_local: usize,
    pub auc: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub fraction: f64,
    pub runs: usize,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub runs: Vec<SweepRun>,
    pub summary: Vec<SweepSummary>,
}

/// Keeps `round(fraction · n_class)` examples of each class, chosen by a
/// seeded shuffle; the result preserves input order. `fraction = 1` returns
/// the input unchanged.
pub fn subsample_stratified(
    examples: &[LabeledExample],
    fraction: f64,
    seed: u64,
) -> Result<Vec<LabeledExample>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Precondition(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    if fraction == 1.0 {
        return Ok(examples.to_vec());
    }
    let mut rng = rng_from(seed, &[STREAM_SUBSAMPLE, fraction.to_bits()]);
    let mut keep = alloc::vec![false; examples.len()];
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..examples.len()).filter(|&i| examples[i].label == class).collect();
        let k = libm::round(idx.len() as f64 * fraction) as usize;
        if k < 2 {
            return Err(Error::Precondition(format!(
                "fraction {fraction} leaves {k} examples of class {}; need at least 2",
                u8::from(class)
            )));
        }
        idx.shuffle(&mut rng);
        for &i in &idx[..k] {
            keep[i] = true;
        }
    }
    Ok(examples.iter().zip(&keep).filter(|(_, &k)| k).map(|(e, _)| e.clone()).collect())
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

/// For each fraction of the local pool and each of `n_seeds` seeds: subsample,
/// train, and score the local head on the fixed `test` set.
pub fn label_size_sweep(
    config: &ModelConfig,
    tconfig: &TrainConfig,
    global: &[LabeledExample],
    local: &[LabeledExample],
    test: &[LabeledExample],
    fractions: &[f64],
    n_seeds: usize,
) -> Result<SweepResult> {
    if n_seeds == 0 || fractions.is_empty() {
        return Err(Error::Precondition("sweep needs at least one fraction and one seed".into()));
    }
    if test.is_empty() {
        return Err(Error::Precondition("sweep needs a held-out test set".into()));
    }
    let test_labels: Vec<bool> = test.iter().map(|e| e.label).collect();
    let mut runs = Vec::with_capacity(fractions.len() * n_seeds);
    let mut summary = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let mut aucs = Vec::with_capacity(n_seeds);
        let mut accs = Vec::with_capacity(n_seeds);
        for s in 0..n_seeds as u64 {
            let subset = subsample_stratified(local, fraction, tconfig.seed.wrapping_add(s))?;
            let run_config = config.clone().with_seed(config.seed.wrapping_add(s));
            let run_tconfig = TrainConfig { seed: tconfig.seed.wrapping_add(s), ..tconfig.clone() };
            let outcome = train(&run_config, &run_tconfig, global, &subset)?;
            let scores = test
                .iter()
                .map(|e| outcome.checkpoint.predict(&e.series, HeadKind::Local))
                .collect::<Result<Vec<f64>>>()?;
            let report = confusion_metrics(&scores, &test_labels, 0.5)?;
            let auc = report.auc.ok_or(Error::SingleClass)?;
            aucs.push(auc);
            accs.push(report.accuracy);
            runs.push(SweepRun { fraction, seed: tconfig.seed.wrapping_add(s), n_local: subset.len(), auc, accuracy: report.accuracy });
        }
        let (mean_auc, std_auc) = mean_std(&aucs);
        let (mean_accuracy, std_accuracy) = mean_std(&accs);
        summary.push(SweepSummary { fraction, runs: n_seeds, mean_auc, std_auc, mean_accuracy, std_accuracy });
    }
    Ok(SweepResult { runs, summary })
}
