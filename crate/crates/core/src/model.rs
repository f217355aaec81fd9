//! Shared LSTM trunk with a global and a local logistic head.
//!
//! Both heads read the trunk's final hidden state `h_T`. A head is either a
//! single `h → 1` layer or `h → head_hidden → 1` with a ReLU in between.
//! Single-headed models carry only the local head.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::datapipe::{NormalizationStats, PixelTimeSeries};
use crate::error::{check_dim, Error, Result};
use crate::numerics::{lstm_forward, relu, sigmoid, Linear, LinearTape, LstmParams, LstmTape, Tensor2};
use crate::rng::{derive, rng_from, STREAM_DROPOUT, STREAM_INIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Global,
    Local,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub input_features: usize,
    pub timesteps: usize,
    /// 1 or 2 linear layers per head.
    pub classifier_layers: usize,
    /// Width of the intermediate layer of 2-layer heads.
    pub head_hidden: usize,
    /// 0.0 or 0.2, applied to the recurrent path between timesteps.
    pub lstm_dropout: f64,
    pub multi_headed: bool,
    /// Down-weighting of the global loss term.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_size: 64,
            input_features: crate::FEATURES,
            timesteps: crate::TIMESTEPS,
            classifier_layers: 1,
            head_hidden: 32,
            lstm_dropout: 0.0,
            multi_headed: true,
            alpha: 10.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Grid-search winner for the local-only model: one layer, no dropout.
    pub fn single_headed() -> Self {
        Self { multi_headed: false, classifier_layers: 1, lstm_dropout: 0.0, ..Self::default() }
    }

    /// Grid-search winner for the global + local model: two layers, dropout 0.2.
    pub fn multi_headed() -> Self {
        Self { multi_headed: true, classifier_layers: 2, lstm_dropout: 0.2, ..Self::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.classifier_layers, 1 | 2) {
            return Err(Error::InvalidConfig(format!(
                "classifier_layers must be 1 or 2, got {}",
                self.classifier_layers
            )));
        }
        if self.lstm_dropout != 0.0 && self.lstm_dropout != 0.2 {
            return Err(Error::InvalidConfig(format!(
                "lstm_dropout must be 0.0 or 0.2, got {}",
                self.lstm_dropout
            )));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidConfig(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.hidden_size == 0 || self.input_features == 0 || self.timesteps == 0 || self.head_hidden == 0 {
            return Err(Error::InvalidConfig("sizes must be non-zero".into()));
        }
        Ok(())
    }

    /// Routes an example's pool to a head; single-headed models send
    /// everything to the local head.
    pub fn route(&self, source: crate::datapipe::Source) -> HeadKind {
        match source {
            crate::datapipe::Source::Global if self.multi_headed => HeadKind::Global,
            _ => HeadKind::Local,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub layers: Vec<Linear>,
}

#[derive(Debug, Clone)]
struct HeadTape {
    layers: Vec<LinearTape>,
    /// Pre-activation outputs of every layer but the last.
    pre_activations: Vec<Vec<f64>>,
}

impl Head {
    fn shape(config: &ModelConfig) -> Vec<(usize, usize)> {
        match config.classifier_layers {
            1 => vec![(config.hidden_size, 1)],
            _ => vec![(config.hidden_size, config.head_hidden), (config.head_hidden, 1)],
        }
    }

    fn zeros(config: &ModelConfig) -> Self {
        Self { layers: Self::shape(config).into_iter().map(|(i, o)| Linear::zeros(i, o)).collect() }
    }

    fn forward(&self, input: &[f64]) -> Result<(f64, HeadTape)> {
        let mut tape = HeadTape { layers: Vec::new(), pre_activations: Vec::new() };
        let mut act = input.to_vec();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let (out, t) = layer.forward(&act)?;
            tape.layers.push(t);
            if k < last {
                act = out.iter().map(|&v| relu(v)).collect();
                tape.pre_activations.push(out);
            } else {
                act = out;
            }
        }
        Ok((act[0], tape))
    }

    fn backward(&self, tape: HeadTape, d_logit: f64, grads: &mut Head) -> Vec<f64> {
        let mut d = vec![d_logit];
        let mut pre = tape.pre_activations;
        for ((layer, t), g) in self.layers.iter().zip(tape.layers).zip(grads.layers.iter_mut()).rev() {
            d = layer.backward(t, &d, g);
            if let Some(z) = pre.pop() {
                for (di, zi) in d.iter_mut().zip(&z) {
                    if *zi <= 0.0 {
                        *di = 0.0;
                    }
                }
            }
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub trunk: LstmParams,
    pub global_head: Option<Head>,
    pub local_head: Head,
}

/// A borrowed parameter tensor with its stable name.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

/// Seeded initialization: weights uniform in `[-1/√h, 1/√h]`, biases zero.
pub fn init_model(config: &ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = rng_from(config.seed, &[STREAM_INIT]);
    let trunk = LstmParams::uniform(config.input_features, config.hidden_size, &mut rng);
    let bound = 1.0 / libm::sqrt(config.hidden_size as f64);
    let head = |rng: &mut crate::rng::Rng| Head {
        layers: Head::shape(config)
            .into_iter()
            .map(|(i, o)| Linear::uniform(i, o, bound, rng))
            .collect(),
    };
    let local_head = head(&mut rng);
    let global_head = if config.multi_headed { Some(head(&mut rng)) } else { None };
    Ok(ModelParams { trunk, global_head, local_head })
}

impl ModelParams {
    /// All-zero parameters shaped for `config`.
    pub fn zeros(config: &ModelConfig) -> Self {
        Self {
            trunk: LstmParams::zeros(config.input_features, config.hidden_size),
            global_head: config.multi_headed.then(|| Head::zeros(config)),
            local_head: Head::zeros(config),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    pub fn head(&self, kind: HeadKind) -> Result<&Head> {
        match kind {
            HeadKind::Local => Ok(&self.local_head),
            HeadKind::Global => self.global_head.as_ref().ok_or(Error::MissingHead),
        }
    }

    fn head_mut(&mut self, kind: HeadKind) -> Result<&mut Head> {
        match kind {
            HeadKind::Local => Ok(&mut self.local_head),
            HeadKind::Global => self.global_head.as_mut().ok_or(Error::MissingHead),
        }
    }

    fn heads(&self) -> impl Iterator<Item = (&'static str, &Head)> {
        self.global_head.iter().map(|h| ("global_head", h)).chain([("local_head", &self.local_head)])
    }

    /// Parameters in checkpoint order.
    pub fn named_tensors(&self) -> Vec<NamedTensor<'_>> {
        let t = &self.trunk;
        let mut out = vec![
            NamedTensor { name: "trunk.w_input".into(), shape: vec![t.w_input.rows(), t.w_input.cols()], data: t.w_input.data() },
            NamedTensor { name: "trunk.w_hidden".into(), shape: vec![t.w_hidden.rows(), t.w_hidden.cols()], data: t.w_hidden.data() },
            NamedTensor { name: "trunk.bias".into(), shape: vec![t.bias.len()], data: &t.bias },
        ];
        for (prefix, head) in self.heads() {
            for (k, layer) in head.layers.iter().enumerate() {
                out.push(NamedTensor {
                    name: format!("{prefix}.{k}.weight"),
                    shape: vec![layer.weight.rows(), layer.weight.cols()],
                    data: layer.weight.data(),
                });
                out.push(NamedTensor {
                    name: format!("{prefix}.{k}.bias"),
                    shape: vec![layer.bias.len()],
                    data: &layer.bias,
                });
            }
        }
        out
    }

    /// Mutable views in the same order as [`ModelParams::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.trunk.w_input.data_mut(),
            self.trunk.w_hidden.data_mut(),
            &mut self.trunk.bias,
        ];
        for head in self.global_head.iter_mut().chain(core::iter::once(&mut self.local_head)) {
            for layer in &mut head.layers {
                out.push(layer.weight.data_mut());
                out.push(&mut layer.bias);
            }
        }
        out
    }

    pub fn tensor_sizes(&self) -> Vec<usize> {
        self.named_tensors().iter().map(|t| t.data.len()).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensor_sizes().iter().sum()
    }

    /// Rebuilds parameters for `config` from named tensors, checking that the
    /// names, order and shapes match exactly.
    pub fn from_named(config: &ModelConfig, tensors: &[(String, Vec<usize>, Vec<f64>)]) -> Result<Self> {
        config.validate()?;
        let mut params = Self::zeros(config);
        let expected: Vec<(String, Vec<usize>)> =
            params.named_tensors().into_iter().map(|t| (t.name, t.shape)).collect();
        check_dim("tensor count", expected.len(), tensors.len())?;
        for ((name, shape), (got_name, got_shape, _)) in expected.iter().zip(tensors) {
            if name != got_name || shape != got_shape {
                return Err(Error::Precondition(format!(
                    "expected tensor {name} {shape:?}, found {got_name} {got_shape:?}"
                )));
            }
        }
        for (slot, (_, _, data)) in params.tensors_mut().into_iter().zip(tensors) {
            check_dim("tensor data", slot.len(), data.len())?;
            slot.copy_from_slice(data);
        }
        Ok(params)
    }

    /// Element-wise `self += other`.
    pub fn add_assign(&mut self, other: &ModelParams) {
        let src: Vec<&[f64]> = other.named_tensors().into_iter().map(|t| t.data).collect();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
    }
}

/// Intermediates for one example.
#[derive(Debug, Clone)]
pub struct ExampleTape {
    lstm: LstmTape,
    head: HeadKind,
    head_tape: HeadTape,
    prob: f64,
    steps: usize,
}

/// Forward record of a batch; consumed by [`GradTape::backward`].
#[derive(Debug, Clone)]
pub struct GradTape {
    examples: Vec<ExampleTape>,
}

/// Runs one `T × D` sequence through the trunk and the chosen head.
/// `dropout_seed` switches on training-mode dropout.
pub fn forward_example(
    params: &ModelParams,
    sequence: &Tensor2,
    head: HeadKind,
    dropout_rate: f64,
    dropout_seed: Option<u64>,
) -> Result<(f64, ExampleTape)> {
    let classifier = params.head(head)?;
    let (hidden, lstm) = lstm_forward(&params.trunk, sequence, dropout_rate, dropout_seed)?;
    let steps = hidden.rows();
    let (logit, head_tape) = classifier.forward(hidden.row(steps - 1))?;
    let prob = sigmoid(logit);
    Ok((prob, ExampleTape { lstm, head, head_tape, prob, steps }))
}

/// Forward pass over `(sequence, head)` pairs. Example `i` draws its dropout
/// masks from a stream derived from `dropout_seed` and `i`.
pub fn forward_batch(
    params: &ModelParams,
    items: &[(&Tensor2, HeadKind)],
    dropout_rate: f64,
    dropout_seed: Option<u64>,
) -> Result<(Vec<f64>, GradTape)> {
    let mut probs = Vec::with_capacity(items.len());
    let mut examples = Vec::with_capacity(items.len());
    for (i, &(x, head)) in items.iter().enumerate() {
        let seed = dropout_seed.map(|s| derive(s, &[STREAM_DROPOUT, i as u64]));
        let (p, tape) = forward_example(params, x, head, dropout_rate, seed)?;
        probs.push(p);
        examples.push(tape);
    }
    Ok((probs, GradTape { examples }))
}

impl GradTape {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Exact gradients of a loss whose derivative with respect to each
    /// example's probability is `d_probs`.
    pub fn backward(self, params: &ModelParams, d_probs: &[f64]) -> Result<ModelParams> {
        check_dim("loss gradient", self.examples.len(), d_probs.len())?;
        let mut grads = params.zeros_like();
        let h = params.trunk.hidden_size();
        for (ex, &dp) in self.examples.into_iter().zip(d_probs) {
            let d_logit = dp * ex.prob * (1.0 - ex.prob);
            let head = params.head(ex.head)?;
            let d_last = head.backward(ex.head_tape, d_logit, grads.head_mut(ex.head)?);
            let mut d_hidden = Tensor2::zeros(ex.steps, h);
            d_hidden.row_mut(ex.steps - 1).copy_from_slice(&d_last);
            ex.lstm.backward(&params.trunk, &d_hidden, &mut grads.trunk)?;
        }
        Ok(grads)
    }
}

/// Inference-mode probability for an already-normalized `T × D` array.
pub fn predict_values(params: &ModelParams, values: &Tensor2, head: HeadKind) -> Result<f64> {
    forward_example(params, values, head, 0.0, None).map(|(p, _)| p)
}

/// Posterior crop probability of a normalized series.
pub fn predict_proba(params: &ModelParams, series: &PixelTimeSeries, head: HeadKind) -> Result<f64> {
    if !series.is_normalized() {
        return Err(Error::Precondition("series must be normalized before prediction".into()));
    }
    predict_values(params, series.values(), head)
}

/// A trained model with the normalization it was trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub normalization: NormalizationStats,
    pub params: ModelParams,
}

impl Checkpoint {
    /// Probability for a series in raw units, or one already normalized.
    pub fn predict(&self, series: &PixelTimeSeries, head: HeadKind) -> Result<f64> {
        if series.is_normalized() {
            return predict_proba(&self.params, series, head);
        }
        let mut s = series.clone();
        self.normalization.apply(&mut s)?;
        predict_proba(&self.params, &s, head)
    }

    /// Probability for a raw, timestep-major `T·D` buffer.
    pub fn predict_raw(&self, flat: &[f64], head: HeadKind) -> Result<f64> {
        let c = &self.config;
        check_dim("raw series", c.timesteps * c.input_features, flat.len())?;
        let mut values = Tensor2::from_vec(c.timesteps, c.input_features, flat.to_vec())?;
        self.normalization.apply_values(values.data_mut())?;
        predict_values(&self.params, &values, head)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn series(seed: u64) -> PixelTimeSeries {
        let mut rng = rng_from(seed, &[99]);
        let flat: Vec<f64> = (0..144).map(|_| rng.gen_range(-2.0..2.0)).collect();
        PixelTimeSeries::from_flat(&flat, None).unwrap().assume_normalized()
    }

    fn small(multi: bool, layers: usize) -> ModelConfig {
        ModelConfig { hidden_size: 8, head_hidden: 4, multi_headed: multi, classifier_layers: layers, ..ModelConfig::default() }
    }

    #[test]
    fn default_shapes() {
        let p = init_model(&ModelConfig { classifier_layers: 1, ..ModelConfig::default() }).unwrap();
        assert_eq!(p.trunk.w_input.shape(), (256, 12));
        assert_eq!(p.trunk.w_hidden.shape(), (256, 64));
        assert_eq!(p.local_head.layers.len(), 1);
        assert_eq!(p.local_head.layers[0].weight.shape(), (1, 64));

        let p = init_model(&ModelConfig::multi_headed()).unwrap();
        let g = p.global_head.as_ref().unwrap();
        assert_eq!(g.layers[0].weight.shape(), (32, 64));
        assert_eq!(g.layers[1].weight.shape(), (1, 32));
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let c = ModelConfig::multi_headed().with_seed(7);
        let a = init_model(&c).unwrap();
        assert_eq!(a, init_model(&c).unwrap());
        assert_ne!(a, init_model(&c.clone().with_seed(8)).unwrap());
        let bound = 1.0 / 8.0;
        for t in a.named_tensors() {
            if t.name.ends_with("bias") {
                assert!(t.data.iter().all(|&v| v == 0.0));
            } else {
                assert!(t.data.iter().all(|v| v.abs() <= bound));
            }
        }
    }

    #[test]
    fn single_headed_has_no_global_head() {
        let p = init_model(&ModelConfig::single_headed()).unwrap();
        assert!(p.global_head.is_none());
        assert_eq!(predict_proba(&p, &series(1), HeadKind::Global), Err(Error::MissingHead));
        assert!(p.named_tensors().iter().all(|t| !t.name.starts_with("global")));
    }

    #[test]
    fn invalid_grid_values_are_rejected() {
        for bad in [
            ModelConfig { classifier_layers: 3, ..ModelConfig::default() },
            ModelConfig { lstm_dropout: 0.5, ..ModelConfig::default() },
            ModelConfig { alpha: 0.0, ..ModelConfig::default() },
        ] {
            assert!(matches!(init_model(&bad), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn zeroed_heads_predict_one_half() {
        for layers in [1, 2] {
            let mut p = init_model(&small(true, layers)).unwrap();
            let z = p.zeros_like();
            p.local_head = z.local_head.clone();
            p.global_head = z.global_head.clone();
            for s in 0..5 {
                assert_eq!(predict_proba(&p, &series(s), HeadKind::Local).unwrap(), 0.5);
                assert_eq!(predict_proba(&p, &series(s), HeadKind::Global).unwrap(), 0.5);
            }
        }
    }

    #[test]
    fn probabilities_are_open_unit_interval_and_repeatable() {
        let p = init_model(&ModelConfig::multi_headed()).unwrap();
        for s in 0..1000 {
            let x = series(s);
            let a = predict_proba(&p, &x, HeadKind::Local).unwrap();
            assert!(a > 0.0 && a < 1.0);
            if s < 20 {
                assert_eq!(a.to_bits(), predict_proba(&p, &x, HeadKind::Local).unwrap().to_bits());
            }
        }
    }

    #[test]
    fn raw_series_is_refused() {
        let p = init_model(&small(false, 1)).unwrap();
        let raw = PixelTimeSeries::from_flat(&[0.1; 144], None).unwrap();
        assert!(matches!(predict_proba(&p, &raw, HeadKind::Local), Err(Error::Precondition(_))));
    }

    #[test]
    fn heads_are_independent_and_trunk_is_shared() {
        let base = init_model(&small(true, 2)).unwrap();
        let x = series(3);
        let local = predict_proba(&base, &x, HeadKind::Local).unwrap();
        let global = predict_proba(&base, &x, HeadKind::Global).unwrap();

        let mut g = base.clone();
        g.global_head.as_mut().unwrap().layers[0].weight.data_mut()[0] += 0.5;
        g.global_head.as_mut().unwrap().layers[1].bias[0] += 0.5;
        assert_eq!(predict_proba(&g, &x, HeadKind::Local).unwrap(), local);
        assert_ne!(predict_proba(&g, &x, HeadKind::Global).unwrap(), global);

        let mut l = base.clone();
        l.local_head.layers[1].bias[0] -= 0.5;
        assert_eq!(predict_proba(&l, &x, HeadKind::Global).unwrap(), global);

        let mut t = base.clone();
        let mut rng = rng_from(5, &[]);
        for w in t.trunk.w_input.data_mut() {
            *w += rng.gen_range(-0.05..0.05);
        }
        assert_ne!(predict_proba(&t, &x, HeadKind::Local).unwrap(), local);
        assert_ne!(predict_proba(&t, &x, HeadKind::Global).unwrap(), global);
    }

    #[test]
    fn unused_head_gets_zero_gradient() {
        let p = init_model(&small(true, 2)).unwrap();
        let xs = [series(1), series(2)];
        let items: Vec<_> = xs.iter().map(|s| (s.values(), HeadKind::Local)).collect();
        let (probs, tape) = forward_batch(&p, &items, 0.0, None).unwrap();
        let d: Vec<f64> = probs.iter().map(|p| p - 1.0).collect();
        let g = tape.backward(&p, &d).unwrap();
        for t in g.named_tensors() {
            let any = t.data.iter().any(|&v| v != 0.0);
            assert_eq!(any, !t.name.starts_with("global"), "{}", t.name);
        }
    }

    #[test]
    fn named_round_trip() {
        let c = small(true, 2);
        let p = init_model(&c).unwrap();
        let named: Vec<_> =
            p.named_tensors().into_iter().map(|t| (t.name, t.shape, t.data.to_vec())).collect();
        assert_eq!(ModelParams::from_named(&c, &named).unwrap(), p);
        let mut bad = named.clone();
        bad.swap(0, 1);
        assert!(ModelParams::from_named(&c, &bad).is_err());
    }
}
