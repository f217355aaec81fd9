//! Independent reference implementations checked against the library.

use cropmap_core::datapipe::{split_train_val, LabeledExample, PixelTimeSeries, Source};
use cropmap_core::model::{init_model, predict_values, Head, HeadKind, ModelConfig, ModelParams};
use cropmap_core::numerics::{adam_step, AdamState, Tensor2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scalar LSTM with gates ordered input, forget, candidate, output.
fn naive_prob(p: &ModelParams, x: &Tensor2, head: &Head) -> f64 {
    let h = p.trunk.bias.len() / 4;
    let (wi, wh) = (&p.trunk.w_input, &p.trunk.w_hidden);
    let mut hs = vec![0.0; h];
    let mut cs = vec![0.0; h];
    for t in 0..x.rows() {
        let z: Vec<f64> = (0..4 * h)
            .map(|r| {
                p.trunk.bias[r]
                    + (0..x.cols()).map(|k| wi.get(r, k) * x.get(t, k)).sum::<f64>()
                    + (0..h).map(|k| wh.get(r, k) * hs[k]).sum::<f64>()
            })
            .collect();
        for j in 0..h {
            let (i, f, g, o) = (sig(z[j]), sig(z[h + j]), z[2 * h + j].tanh(), sig(z[3 * h + j]));
            cs[j] = f * cs[j] + i * g;
            hs[j] = o * cs[j].tanh();
        }
    }
    let mut act = hs;
    for (n, layer) in head.layers.iter().enumerate() {
        let w = &layer.weight;
        act = (0..w.rows())
            .map(|r| {
                let v = layer.bias[r] + (0..w.cols()).map(|c| w.get(r, c) * act[c]).sum::<f64>();
                if n + 1 < head.layers.len() { v.max(0.0) } else { v }
            })
            .collect();
    }
    sig(act[0])
}

#[test]
fn forward_matches_scalar_lstm() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (config, seed) in [(ModelConfig::multi_headed(), 3), (ModelConfig::single_headed(), 4)] {
        let mut params = init_model(&config.with_seed(seed)).unwrap();
        for b in &mut params.trunk.bias {
            *b = rng.gen_range(-0.5..0.5);
        }
        for _ in 0..5 {
            let x = Tensor2::from_vec(12, 12, (0..144).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
            let local = predict_values(&params, &x, HeadKind::Local).unwrap();
            assert!((local - naive_prob(&params, &x, &params.local_head)).abs() < 1e-12);
            if let Some(g) = &params.global_head {
                let global = predict_values(&params, &x, HeadKind::Global).unwrap();
                assert!((global - naive_prob(&params, &x, g)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn adam_matches_textbook_update() {
    let grads = [[0.5, -1.0, 0.0], [2.0, 0.1, -0.3], [-0.7, -0.7, 4.0]];
    let mut params = vec![1.0, -2.0, 0.5];
    let mut state = AdamState::with_lr(&[3], 0.01);
    let (mut m, mut v, mut reference) = ([0.0; 3], [0.0; 3], params.clone());
    for (t, g) in grads.iter().enumerate() {
        adam_step(&mut state, &mut [&mut params[..]], &[&g[..]]).unwrap();
        let t = (t + 1) as i32;
        for k in 0..3 {
            m[k] = 0.9 * m[k] + 0.1 * g[k];
            v[k] = 0.999 * v[k] + 0.001 * g[k] * g[k];
            let mh = m[k] / (1.0 - 0.9f64.powi(t));
            let vh = v[k] / (1.0 - 0.999f64.powi(t));
            reference[k] -= 0.01 * mh / (vh.sqrt() + 1e-8);
        }
        for k in 0..3 {
            assert!((params[k] - reference[k]).abs() < 1e-12, "step {t}: {} vs {}", params[k], reference[k]);
        }
    }
}

fn example(i: usize, source: Source, label: bool) -> LabeledExample {
    LabeledExample {
        point_id: format!("p{i}"),
        series: PixelTimeSeries::from_flat(&[i as f64; 144], None).unwrap(),
        label,
        source,
        lat: None,
        lon: None,
    }
}

proptest! {
    #[test]
    fn split_respects_strata(counts in proptest::array::uniform4(2usize..40), fraction in 0.05f64..0.6, seed in 0u64..1000) {
        let strata = [(Source::Global, false), (Source::Global, true), (Source::Local, false), (Source::Local, true)];
        let mut examples = Vec::new();
        for (&(src, lab), &n) in strata.iter().zip(&counts) {
            for _ in 0..n {
                examples.push(example(examples.len(), src, lab));
            }
        }
        let n = examples.len();
        let split = split_train_val(&examples, fraction, seed).unwrap();
        prop_assert!(split.stratified);
        prop_assert_eq!(split.val.len(), (n as f64 * fraction).round() as usize);
        prop_assert_eq!(split.train.len() + split.val.len(), n);
        for (&(src, lab), &count) in strata.iter().zip(&counts) {
            let got = split.val.iter().filter(|e| e.source == src && e.label == lab).count() as f64;
            let share = count as f64 * split.val.len() as f64 / n as f64;
            prop_assert!((got - share).abs() < 1.0 + 1e-9, "stratum share {share}, got {got}");
        }
        let mut ids: Vec<&str> = split.train.iter().chain(&split.val).map(|e| e.point_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), n);
    }
}
