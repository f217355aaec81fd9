//! Random-forest baseline over flattened `T·D` series.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datapipe::LabeledExample;
use crate::error::{check_dim, Error, Result};
use crate::raster::PixelScorer;
use crate::rng::{rng_from, STREAM_FOREST};
use crate::{FEATURES, TIMESTEPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// `None` means `floor(sqrt(d))`.
    pub features_per_split: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: None, min_samples_split: 2, features_per_split: None, seed: 0 }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidConfig("n_trees must be at least 1".into()));
        }
        if self.min_samples_split < 2 {
            return Err(Error::InvalidConfig("min_samples_split must be at least 2".into()));
        }
        if self.features_per_split == Some(0) {
            return Err(Error::InvalidConfig("features_per_split must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// `x[feature] <= threshold` goes left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    /// `[non-crop, crop]` frequencies of the training samples reaching the leaf.
    Leaf { freq: [f64; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    /// Root is node 0.
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    /// A single leaf.
    pub fn leaf(crop_freq: f64) -> Self {
        Self { nodes: vec![Node::Leaf { freq: [1.0 - crop_freq, crop_freq] }] }
    }

    /// Checks child indices and leaf frequencies.
    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Precondition("tree has no nodes".into()));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            match *node {
                Node::Split { feature, left, right, threshold } => {
                    if feature >= n_features || left <= i || right <= i || left >= self.nodes.len() || right >= self.nodes.len() || !threshold.is_finite() {
                        return Err(Error::Precondition(format!("tree node {i} is malformed")));
                    }
                }
                Node::Leaf { freq } => {
                    if !(freq[0] >= 0.0 && freq[1] >= 0.0 && ((freq[0] + freq[1]) - 1.0).abs() < 1e-9) {
                        return Err(Error::Precondition(format!("leaf {i} frequencies do not sum to 1")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Crop frequency of the leaf `x` falls into.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
                Node::Leaf { freq } => return freq[1],
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub n_features: usize,
    pub trees: Vec<DecisionTree>,
}

impl Forest {
    pub fn new(n_features: usize, trees: Vec<DecisionTree>) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::Precondition("forest has no trees".into()));
        }
        for t in &trees {
            t.validate(n_features)?;
        }
        Ok(Self { n_features, trees })
    }
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [bool],
    config: &'a ForestConfig,
    m: usize,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

fn gini(crop: usize, n: usize) -> f64 {
    let p = crop as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

impl Builder<'_> {
    fn best_split_on(&self, idx: &[usize], feature: usize, buf: &mut Vec<(f64, bool)>) -> Option<BestSplit> {
        buf.clear();
        buf.extend(idx.iter().map(|&i| (self.x[i][feature], self.y[i])));
        buf.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = buf.len();
        let total_crop = buf.iter().filter(|v| v.1).count();
        let mut left_crop = 0;
        let mut best: Option<BestSplit> = None;
        for k in 1..n {
            left_crop += usize::from(buf[k - 1].1);
            let (lo, hi) = (buf[k - 1].0, buf[k].0);
            if lo == hi {
                continue;
            }
            let impurity = (k as f64 * gini(left_crop, k)
                + (n - k) as f64 * gini(total_crop - left_crop, n - k))
                / n as f64;
            if best.as_ref().is_none_or(|b| impurity < b.impurity) {
                let mid = lo + (hi - lo) / 2.0;
                let threshold = if mid < hi { mid } else { lo };
                best = Some(BestSplit { feature, threshold, impurity });
            }
        }
        best
    }

    fn build(&self, sample: Vec<usize>, rng: &mut crate::rng::Rng) -> DecisionTree {
        let d = self.x[0].len();
        let mut nodes = vec![Node::Leaf { freq: [0.0, 0.0] }];
        let mut stack = vec![(0usize, sample, 0usize)];
        let mut features: Vec<usize> = (0..d).collect();
        let mut buf = Vec::new();
        while let Some((slot, idx, depth)) = stack.pop() {
            let n = idx.len();
            let crop = idx.iter().filter(|&&i| self.y[i]).count();
            let freq = [(n - crop) as f64 / n as f64, crop as f64 / n as f64];
            let stop = crop == 0
                || crop == n
                || n < self.config.min_samples_split
                || self.config.max_depth.is_some_and(|m| depth >= m);
            let split = if stop {
                None
            } else {
                features.shuffle(rng);
                let parent = gini(crop, n);
                let mut best: Option<BestSplit> = None;
                for (tried, &f) in features.iter().enumerate() {
                    if tried >= self.m && best.is_some() {
                        break;
                    }
                    if let Some(s) = self.best_split_on(&idx, f, &mut buf) {
                        if best.as_ref().is_none_or(|b| s.impurity < b.impurity) {
                            best = Some(s);
                        }
                    }
                }
                best.filter(|b| b.impurity <= parent)
            };
            match split {
                None => nodes[slot] = Node::Leaf { freq },
                Some(s) => {
                    let (l, r): (Vec<usize>, Vec<usize>) =
                        idx.iter().partition(|&&i| self.x[i][s.feature] <= s.threshold);
                    let left = nodes.len();
                    let right = left + 1;
                    nodes.push(Node::Leaf { freq: [0.0, 0.0] });
                    nodes.push(Node::Leaf { freq: [0.0, 0.0] });
                    nodes[slot] = Node::Split { feature: s.feature, threshold: s.threshold, left, right };
                    stack.push((right, r, depth + 1));
                    stack.push((left, l, depth + 1));
                }
            }
        }
        DecisionTree { nodes }
    }
}

/// Fits a forest on row vectors `x` with labels `y`.
pub fn rf_fit_flat(x: &[Vec<f64>], y: &[bool], config: &ForestConfig) -> Result<Forest> {
    config.validate()?;
    check_dim("forest labels", x.len(), y.len())?;
    if x.len() < 2 {
        return Err(Error::Precondition("forest needs at least 2 examples".into()));
    }
    let d = x[0].len();
    if d == 0 {
        return Err(Error::Precondition("forest needs at least one feature".into()));
    }
    for row in x {
        check_dim("forest feature vector", d, row.len())?;
        if !row.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { context: "forest features" });
        }
    }
    if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
        return Err(Error::SingleClass);
    }
    let m = config.features_per_split.unwrap_or_else(|| libm::floor(libm::sqrt(d as f64)) as usize).clamp(1, d);
    let builder = Builder { x, y, config, m };
    let n = x.len();
    let trees = (0..config.n_trees)
        .map(|t| {
            let mut rng = rng_from(config.seed, &[STREAM_FOREST, t as u64]);
            let sample: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            builder.build(sample, &mut rng)
        })
        .collect();
    Ok(Forest { n_features: d, trees })
}

pub fn flatten_examples(examples: &[LabeledExample]) -> (Vec<Vec<f64>>, Vec<bool>) {
    examples.iter().map(|e| (e.series.flat().to_vec(), e.label)).unzip()
}

/// Fits on the raw flattened series of `examples`.
pub fn rf_fit(examples: &[LabeledExample], config: &ForestConfig) -> Result<Forest> {
    let (x, y) = flatten_examples(examples);
    rf_fit_flat(&x, &y, config)
}

/// Mean of the per-tree leaf crop frequencies.
pub fn rf_predict_proba(forest: &Forest, x: &[f64]) -> Result<f64> {
    check_dim("forest input", forest.n_features, x.len())?;
    let sum: f64 = forest.trees.iter().map(|t| t.predict(x)).sum();
    Ok(sum / forest.trees.len() as f64)
}

impl PixelScorer for Forest {
    fn input_shape(&self) -> (usize, usize) {
        if self.n_features == TIMESTEPS * FEATURES {
            (TIMESTEPS, FEATURES)
        } else {
            (1, self.n_features)
        }
    }

    fn score(&self, raw: &[f64]) -> Result<f64> {
        rf_predict_proba(self, raw)
    }
}
