//! Command-line entry point.
//!
//! Every artifact-producing command resolves its arguments (flags over an
//! optional `--config` JSON file over built-in defaults), writes its outputs
//! into a fresh run directory and records the resolved arguments in
//! `manifest.json`. `cropmap replay` reruns a manifest.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use cropmap_core::baselines::{rf_fit, rf_predict_proba, ForestConfig};
use cropmap_core::datapipe::{composite_least_cloudy, partition_by_source, LabeledExample};
use cropmap_core::eval::{confusion_metrics, consensus_vote, pairwise_agreement};
use cropmap_core::model::{HeadKind, ModelConfig};
use cropmap_core::raster::{threshold_mask, LstmScorer, PixelScorer};
use cropmap_core::synthgen::{generate_examples, generate_raster, SynthConfig};
use cropmap_core::train::{grid_search, label_size_sweep, train, TrainConfig};
use cropmap_core::TIMESTEPS;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_model, save_checkpoint, save_forest, SavedModel};
use crate::csvio;
use crate::error::{Error, Result};
use crate::manifest::{create_run_dir, RunManifest};
use crate::parallel::predict_raster_par;
use crate::rasterio;

#[derive(Debug, Parser)]
#[command(name = "cropmap", version, about = "Cropland classification from monthly multispectral time series")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct RunOpts {
    /// Parent directory of the run directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// JSON object of argument values (snake_case keys); flags win over it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Composite raw observations into the labeled-points CSV.
    Compose {
        #[command(flatten)]
        run: RunOpts,
        #[command(flatten)]
        args: ComposeArgs,
    },
    /// Train an LSTM or random-forest model.
    Train {
        #[command(flatten)]
        run: RunOpts,
        #[command(flatten)]
        args: TrainArgs,
    },
    /// Search head depth × dropout by validation AUC.
    Gridsearch {
        #[command(flatten)]
        run: RunOpts,
        #[command(flatten)]
        args: GridArgs,
    },
    /// Score a model on a labeled test set.
    Eval {
        #[command(flatten)]
        run: RunOpts,
        #[command(flatten)]
        args: EvalArgs,
    },
    /// Produce a probability raster from a stack.
    Predict {
        #[command(flatten)]
        run: RunOpts,
        #[command(flatten)]
        args: PredictArgs,
    },
    /// Turn a probability raster into a binary crop mask.
    Threshold {
        #[command(flatten)]
        run: RunOpts,
        #[command(flatten)]
        args: ThresholdArgs,
    },
    /// Retrain on growing fractions of the local pool.
    Sweep {
        #[command(flatten)]
        run: RunOpts,
        #[command(flatten)]
        args: SweepArgs,
    },
    /// Majority-vote consensus and pairwise agreement of crowd labels.
    Consensus {
        #[command(flatten)]
        run: RunOpts,
        #[command(flatten)]
        args: ConsensusArgs,
    },
    /// Generate synthetic labeled points and, optionally, a raster.
    Synth {
        #[command(flatten)]
        run: RunOpts,
        #[command(flatten)]
        args: SynthArgs,
    },
    /// Rerun the command recorded in a manifest.
    Replay {
        manifest: PathBuf,
        /// Parent directory for the new run (default: next to the original).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Preset {
    /// Global and local heads, 2-layer heads, dropout 0.2.
    Multi,
    /// Local head only, 1-layer head, no dropout.
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ModelKind {
    Lstm,
    Forest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum HeadArg {
    Local,
    Global,
}

impl From<HeadArg> for HeadKind {
    fn from(h: HeadArg) -> Self {
        match h {
            HeadArg::Local => HeadKind::Local,
            HeadArg::Global => HeadKind::Global,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Domain {
    Local,
    Global,
}

/// A resolved command.
trait Cmd: Serialize + DeserializeOwned + Default {
    const NAME: &'static str;
    /// Fills defaults and canonicalizes input paths.
    fn resolve(&mut self) -> Result<()>;
    fn seeds(&self) -> Vec<u64>;
    fn inputs(&self) -> Vec<PathBuf>;
    /// Writes artifacts into `dir` and returns their file names.
    fn execute(&self, dir: &Path) -> Result<Vec<String>>;
}

fn required<T: Clone>(v: &Option<T>, flag: &str) -> Result<T> {
    v.clone().ok_or_else(|| Error::Usage(format!("missing required argument --{flag}")))
}

fn input_path(p: &mut Option<PathBuf>, flag: &str) -> Result<()> {
    let path = required(p, flag)?;
    *p = Some(fs::canonicalize(&path).map_err(|e| Error::io(&path, e))?);
    Ok(())
}

fn optional_input_path(p: &mut Option<PathBuf>) -> Result<()> {
    if let Some(path) = p.clone() {
        *p = Some(fs::canonicalize(&path).map_err(|e| Error::io(&path, e))?);
    }
    Ok(())
}

fn path(p: &Option<PathBuf>) -> &Path {
    p.as_deref().expect("resolved")
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<String> {
    let p = dir.join(name);
    let bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::json(&p, e))?;
    fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
    Ok(name.to_string())
}

/// Model and training hyperparameters shared by `train`, `gridsearch` and
/// `sweep`.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
struct LstmFlags {
    /// Head layout preset [default: multi].
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Linear layers per head, 1 or 2 [default: from preset].
    #[arg(long)]
    classifier_layers: Option<usize>,
    /// Recurrent dropout, 0 or 0.2 [default: from preset].
    #[arg(long)]
    lstm_dropout: Option<f64>,
    /// LSTM hidden size [default: 64].
    #[arg(long)]
    hidden_size: Option<usize>,
    /// Global-loss down-weighting [default: 10].
    #[arg(long)]
    alpha: Option<f64>,
    /// [default: 64]
    #[arg(long)]
    batch_size: Option<usize>,
    /// [default: 1000]
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Early-stopping patience in epochs [default: 10].
    #[arg(long)]
    patience: Option<usize>,
    /// Adam learning rate [default: 0.001].
    #[arg(long)]
    lr: Option<f64>,
    /// Validation share of the combined pools [default: 0.2].
    #[arg(long)]
    val_fraction: Option<f64>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
}

impl LstmFlags {
    fn resolve(&mut self) {
        let preset = *self.preset.get_or_insert(Preset::Multi);
        let base = match preset {
            Preset::Multi => ModelConfig::multi_headed(),
            Preset::Single => ModelConfig::single_headed(),
        };
        let t = TrainConfig::default();
        self.classifier_layers.get_or_insert(base.classifier_layers);
        self.lstm_dropout.get_or_insert(base.lstm_dropout);
        self.hidden_size.get_or_insert(base.hidden_size);
        self.alpha.get_or_insert(base.alpha);
        self.batch_size.get_or_insert(t.batch_size);
        self.max_epochs.get_or_insert(t.max_epochs);
        self.patience.get_or_insert(t.patience);
        self.lr.get_or_insert(t.lr);
        self.val_fraction.get_or_insert(t.val_fraction);
        self.seed.get_or_insert(t.seed);
    }

    fn seed(&self) -> u64 {
        self.seed.expect("resolved")
    }

    fn model_config(&self) -> ModelConfig {
        ModelConfig {
            multi_headed: self.preset == Some(Preset::Multi),
            classifier_layers: self.classifier_layers.expect("resolved"),
            lstm_dropout: self.lstm_dropout.expect("resolved"),
            hidden_size: self.hidden_size.expect("resolved"),
            alpha: self.alpha.expect("resolved"),
            seed: self.seed(),
            ..ModelConfig::default()
        }
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size.expect("resolved"),
            max_epochs: self.max_epochs.expect("resolved"),
            patience: self.patience.expect("resolved"),
            lr: self.lr.expect("resolved"),
            val_fraction: self.val_fraction.expect("resolved"),
            seed: self.seed(),
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
struct ComposeArgs {
    /// Observations CSV (`point_id,date,cloud_score,B02,…,B12`).
    #[arg(long)]
    observations: Option<PathBuf>,
    /// Points CSV (`point_id,source,lat,lon,label`; label may be empty).
    #[arg(long)]
    points: Option<PathBuf>,
    /// Crowd-label CSV supplying labels for points without one.
    #[arg(long)]
    crowd: Option<PathBuf>,
    /// First day of the first window (YYYY-MM-DD).
    #[arg(long)]
    start: Option<String>,
    /// Window length in days [default: 30].
    #[arg(long)]
    window_days: Option<u32>,
    /// Drop points with an empty window instead of failing [default: false].
    #[arg(long)]
    skip_gaps: Option<bool>,
}

impl Cmd for ComposeArgs {
    const NAME: &'static str = "compose";

    fn resolve(&mut self) -> Result<()> {
        input_path(&mut self.observations, "observations")?;
        input_path(&mut self.points, "points")?;
        optional_input_path(&mut self.crowd)?;
        let start = required(&self.start, "start")?;
        NaiveDate::parse_from_str(&start, "%Y-%m-%d")
            .map_err(|_| Error::Usage(format!("--start must be YYYY-MM-DD, got {start:?}")))?;
        self.window_days.get_or_insert(cropmap_core::datapipe::WINDOW_DAYS);
        self.skip_gaps.get_or_insert(false);
        Ok(())
    }

    fn seeds(&self) -> Vec<u64> {
        Vec::new()
    }

    fn inputs(&self) -> Vec<PathBuf> {
        [&self.observations, &self.points, &self.crowd].into_iter().flatten().cloned().collect()
    }

    fn execute(&self, dir: &Path) -> Result<Vec<String>> {
        let obs_path = path(&self.observations);
        let start = NaiveDate::parse_from_str(self.start.as_deref().expect("resolved"), "%Y-%m-%d").expect("validated");
        let window_days = self.window_days.expect("resolved");
        let points = csvio::read_points(path(&self.points))?;
        let crowd = match &self.crowd {
            Some(p) => csvio::binarize_crowd(p, &csvio::read_crowd(p)?)?,
            None => BTreeMap::new(),
        };
        let mut by_point: BTreeMap<String, Vec<_>> = BTreeMap::new();
        for o in csvio::read_observations(obs_path)? {
            by_point.entry(o.point_id.clone()).or_default().push(o);
        }
        let mut examples = Vec::with_capacity(points.len());
        let mut skipped = 0usize;
        for p in &points {
            let label = p.label.or_else(|| crowd.get(&p.point_id).copied()).ok_or_else(|| {
                Error::data(path(&self.points), format!("point {} has no label and no crowd labels", p.point_id))
            })?;
            let obs = by_point.get(&p.point_id).map(Vec::as_slice).unwrap_or(&[]);
            match composite_least_cloudy(obs, start, TIMESTEPS, window_days) {
                Ok(series) => examples.push(LabeledExample {
                    point_id: p.point_id.clone(),
                    series,
                    label,
                    source: p.source,
                    lat: p.lat,
                    lon: p.lon,
                }),
                Err(cropmap_core::Error::WindowGap { window }) if self.skip_gaps == Some(true) => {
                    log::warn!("skipping point {}: window {window} has no observation", p.point_id);
                    skipped += 1;
                }
                Err(e) => return Err(Error::data(obs_path, format!("point {}: {e}", p.point_id))),
            }
        }
        log::info!("composited {} points, skipped {skipped}", examples.len());
        csvio::write_labeled(&dir.join("labeled.csv"), &examples)?;
        Ok(vec!["labeled.csv".into()])
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
struct ForestFlags {
    /// [default: 100]
    #[arg(long)]
    n_trees: Option<usize>,
    /// Unlimited when omitted.
    #[arg(long)]
    max_depth: Option<usize>,
    /// [default: 2]
    #[arg(long)]
    min_samples_split: Option<usize>,
    /// Features tried per split [default: floor(sqrt(144)) = 12].
    #[arg(long)]
    features_per_split: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
struct TrainArgs {
    /// Labeled-points CSV holding both pools.
    #[arg(long)]
    data: Option<PathBuf>,
    /// [default: lstm]
    #[arg(long, value_enum)]
    model: Option<ModelKind>,
    #[command(flatten)]
    #[serde(flatten)]
    lstm: LstmFlags,
    #[command(flatten)]
    #[serde(flatten)]
    forest: ForestFlags,
}

impl TrainArgs {
    fn forest_config(&self) -> ForestConfig {
        let d = ForestConfig::default();
        ForestConfig {
            n_trees: self.forest.n_trees.unwrap_or(d.n_trees),
            max_depth: self.forest.max_depth,
            min_samples_split: self.forest.min_samples_split.unwrap_or(d.min_samples_split),
            features_per_split: self.forest.features_per_split,
            seed: self.lstm.seed(),
        }
    }
}

impl Cmd for TrainArgs {
    const NAME: &'static str = "train";

    fn resolve(&mut self) -> Result<()> {
        input_path(&mut self.data, "data")?;
        self.model.get_or_insert(ModelKind::Lstm);
        self.lstm.resolve();
        let d = ForestConfig::default();
        self.forest.n_trees.get_or_insert(d.n_trees);
        self.forest.min_samples_split.get_or_insert(d.min_samples_split);
        match self.model {
            Some(ModelKind::Lstm) => {
                self.lstm.model_config().validate()?;
                self.lstm.train_config().validate()?;
            }
            _ => self.forest_config().validate()?,
        }
        Ok(())
    }

    fn seeds(&self) -> Vec<u64> {
        vec![self.lstm.seed()]
    }

    fn inputs(&self) -> Vec<PathBuf> {
        self.data.iter().cloned().collect()
    }

    fn execute(&self, dir: &Path) -> Result<Vec<String>> {
        let data = csvio::read_labeled(path(&self.data))?;
        if self.model == Some(ModelKind::Forest) {
            let config = self.forest_config();
            let forest = rf_fit(&data, &config).map_err(|e| Error::data(path(&self.data), e.to_string()))?;
            save_forest(&dir.join("model.ckpt"), &config, &forest)?;
            return Ok(vec!["model.ckpt".into()]);
        }
        let (global, local) = partition_by_source(data);
        let outcome = train(&self.lstm.model_config(), &self.lstm.train_config(), &global, &local)
            .map_err(|e| match e {
                cropmap_core::Error::InvalidConfig(_) => Error::Core(e),
                e => Error::data(path(&self.data), e.to_string()),
            })?;
        save_checkpoint(&dir.join("model.ckpt"), &outcome.checkpoint)?;
        csvio::write_history(&dir.join("history.csv"), &outcome.history.epochs)?;
        let best = outcome.history.best();
        log::info!(
            "best epoch {} of {}: val loss {:.5}, val AUC {:.4}",
            outcome.history.best_epoch,
            outcome.history.stopped_epoch,
            best.val_loss,
            best.val_auc
        );
        Ok(vec!["model.ckpt".into(), "history.csv".into()])
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
struct GridArgs {
    /// Labeled-points CSV holding both pools.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    lstm: LstmFlags,
}

impl Cmd for GridArgs {
    const NAME: &'static str = "gridsearch";

    fn resolve(&mut self) -> Result<()> {
        input_path(&mut self.data, "data")?;
        self.lstm.resolve();
        self.lstm.train_config().validate()?;
        Ok(())
    }

    fn seeds(&self) -> Vec<u64> {
        vec![self.lstm.seed()]
    }

    fn inputs(&self) -> Vec<PathBuf> {
        self.data.iter().cloned().collect()
    }

    fn execute(&self, dir: &Path) -> Result<Vec<String>> {
        let (global, local) = partition_by_source(csvio::read_labeled(path(&self.data))?);
        let result = grid_search(&self.lstm.model_config(), &self.lstm.train_config(), &global, &local)
            .map_err(|e| Error::data(path(&self.data), e.to_string()))?;
        let csv_path = dir.join("grid.csv");
        let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::csv(&csv_path, e))?;
        w.write_record(["classifier_layers", "lstm_dropout", "val_auc", "best_epoch"])
            .map_err(|e| Error::csv(&csv_path, e))?;
        for c in &result.table {
            w.write_record([
                c.classifier_layers.to_string(),
                c.lstm_dropout.to_string(),
                c.val_auc.to_string(),
                c.best_epoch.to_string(),
            ])
            .map_err(|e| Error::csv(&csv_path, e))?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))?;
        let json = write_json(dir, "grid.json", &result)?;
        Ok(vec!["grid.csv".into(), json])
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
struct EvalArgs {
    /// Checkpoint file (LSTM or forest).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Labeled-points CSV to score.
    #[arg(long)]
    data: Option<PathBuf>,
    /// LSTM head to score with [default: local].
    #[arg(long, value_enum)]
    head: Option<HeadArg>,
    /// Crop iff probability ≥ threshold [default: 0.5].
    #[arg(long)]
    threshold: Option<f64>,
}

impl Cmd for EvalArgs {
    const NAME: &'static str = "eval";

    fn resolve(&mut self) -> Result<()> {
        input_path(&mut self.model, "model")?;
        input_path(&mut self.data, "data")?;
        self.head.get_or_insert(HeadArg::Local);
        self.threshold.get_or_insert(0.5);
        Ok(())
    }

    fn seeds(&self) -> Vec<u64> {
        Vec::new()
    }

    fn inputs(&self) -> Vec<PathBuf> {
        [&self.model, &self.data].into_iter().flatten().cloned().collect()
    }

    fn execute(&self, dir: &Path) -> Result<Vec<String>> {
        let model = load_model(path(&self.model))?;
        let data = csvio::read_labeled(path(&self.data))?;
        let head: HeadKind = self.head.expect("resolved").into();
        let probs = data
            .iter()
            .map(|e| match &model {
                SavedModel::Lstm(ck) => ck.predict(&e.series, head),
                SavedModel::Forest { forest, .. } => rf_predict_proba(forest, e.series.flat()),
            })
            .collect::<cropmap_core::Result<Vec<f64>>>()
            .map_err(|e| Error::data(path(&self.model), e.to_string()))?;
        let labels: Vec<bool> = data.iter().map(|e| e.label).collect();
        let report = confusion_metrics(&probs, &labels, self.threshold.expect("resolved"))
            .map_err(|e| Error::data(path(&self.data), e.to_string()))?;
        log::info!("accuracy {:.4}, AUC {:?}, F1 {:.4}", report.accuracy, report.auc, report.f1);
        let json = write_json(dir, "metrics.json", &report)?;
        csvio::write_metrics(&dir.join("metrics.csv"), &report)?;
        csvio::write_predictions(&dir.join("predictions.csv"), &data, &probs)?;
        Ok(vec![json, "metrics.csv".into(), "predictions.csv".into()])
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
struct PredictArgs {
    /// Checkpoint file (LSTM or forest).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Raster stack file.
    #[arg(long)]
    raster: Option<PathBuf>,
    /// [default: 256]
    #[arg(long)]
    tile_size: Option<usize>,
    /// LSTM head [default: local].
    #[arg(long, value_enum)]
    head: Option<HeadArg>,
}

impl Cmd for PredictArgs {
    const NAME: &'static str = "predict";

    fn resolve(&mut self) -> Result<()> {
        input_path(&mut self.model, "model")?;
        input_path(&mut self.raster, "raster")?;
        if self.tile_size == Some(0) {
            return Err(Error::Usage("--tile-size must be positive".into()));
        }
        self.tile_size.get_or_insert(256);
        self.head.get_or_insert(HeadArg::Local);
        Ok(())
    }

    fn seeds(&self) -> Vec<u64> {
        Vec::new()
    }

    fn inputs(&self) -> Vec<PathBuf> {
        [&self.model, &self.raster].into_iter().flatten().cloned().collect()
    }

    fn execute(&self, dir: &Path) -> Result<Vec<String>> {
        let model = load_model(path(&self.model))?;
        let stack = rasterio::read_stack(path(&self.raster))?;
        let tile = self.tile_size.expect("resolved");
        let lstm_scorer;
        let scorer: &(dyn PixelScorer + Sync) = match &model {
            SavedModel::Lstm(ck) => {
                lstm_scorer = LstmScorer { checkpoint: ck, head: self.head.expect("resolved").into() };
                &lstm_scorer
            }
            SavedModel::Forest { forest, .. } => forest,
        };
        let prob = predict_raster_par(scorer, &stack, tile).map_err(|e| Error::data(path(&self.raster), e.to_string()))?;
        rasterio::write_probability(&dir.join("probability.crrs"), &prob)?;
        Ok(vec!["probability.crrs".into()])
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
struct ThresholdArgs {
    /// Probability raster file.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Crop iff probability ≥ threshold [default: 0.5].
    #[arg(long)]
    threshold: Option<f64>,
    /// Ground-truth mask raster; reports pixel accuracy when given.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct PixelAccuracy {
    accuracy: f64,
    correct: usize,
    valid_pixels: usize,
}

impl Cmd for ThresholdArgs {
    const NAME: &'static str = "threshold";

    fn resolve(&mut self) -> Result<()> {
        input_path(&mut self.input, "input")?;
        optional_input_path(&mut self.truth)?;
        self.threshold.get_or_insert(0.5);
        Ok(())
    }

    fn seeds(&self) -> Vec<u64> {
        Vec::new()
    }

    fn inputs(&self) -> Vec<PathBuf> {
        [&self.input, &self.truth].into_iter().flatten().cloned().collect()
    }

    fn execute(&self, dir: &Path) -> Result<Vec<String>> {
        let prob = rasterio::read_probability(path(&self.input))?;
        let mask = threshold_mask(&prob, self.threshold.expect("resolved"));
        rasterio::write_mask(&dir.join("mask.crrs"), &mask)?;
        let mut outputs = vec!["mask.crrs".to_string()];
        if let Some(truth_path) = &self.truth {
            let truth = rasterio::read_mask(truth_path)?;
            if (truth.width, truth.height) != (mask.width, mask.height) {
                return Err(Error::data(truth_path, "truth raster size differs from the probability raster"));
            }
            let (mut correct, mut valid) = (0, 0);
            for i in 0..mask.values.len() {
                if mask.valid[i] && truth.valid[i] {
                    valid += 1;
                    correct += usize::from(mask.values[i] == truth.values[i]);
                }
            }
            let acc = PixelAccuracy { accuracy: correct as f64 / valid.max(1) as f64, correct, valid_pixels: valid };
            log::info!("pixel accuracy {:.4}", acc.accuracy);
            outputs.push(write_json(dir, "pixel_accuracy.json", &acc)?);
        }
        Ok(outputs)
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
struct SweepArgs {
    /// Labeled-points CSV with the training pools.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Held-out local labeled-points CSV.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Local-pool fractions [default: 0.1,0.25,0.5,0.75,1].
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
    /// Runs per fraction [default: 3].
    #[arg(long)]
    n_seeds: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    lstm: LstmFlags,
}

impl Cmd for SweepArgs {
    const NAME: &'static str = "sweep";

    fn resolve(&mut self) -> Result<()> {
        input_path(&mut self.data, "data")?;
        input_path(&mut self.test, "test")?;
        self.fractions.get_or_insert_with(|| vec![0.1, 0.25, 0.5, 0.75, 1.0]);
        self.n_seeds.get_or_insert(3);
        self.lstm.resolve();
        self.lstm.model_config().validate()?;
        self.lstm.train_config().validate()?;
        Ok(())
    }

    fn seeds(&self) -> Vec<u64> {
        let s = self.lstm.seed();
        (0..self.n_seeds.unwrap_or(0) as u64).map(|k| s.wrapping_add(k)).collect()
    }

    fn inputs(&self) -> Vec<PathBuf> {
        [&self.data, &self.test].into_iter().flatten().cloned().collect()
    }

    fn execute(&self, dir: &Path) -> Result<Vec<String>> {
        let (global, local) = partition_by_source(csvio::read_labeled(path(&self.data))?);
        let test = csvio::read_labeled(path(&self.test))?;
        let result = label_size_sweep(
            &self.lstm.model_config(),
            &self.lstm.train_config(),
            &global,
            &local,
            &test,
            self.fractions.as_deref().expect("resolved"),
            self.n_seeds.expect("resolved"),
        )
        .map_err(|e| Error::data(path(&self.data), e.to_string()))?;
        csvio::write_sweep(&dir.join("sweep.csv"), &result.runs)?;
        let json = write_json(dir, "sweep_summary.json", &result.summary)?;
        Ok(vec!["sweep.csv".into(), json])
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
struct ConsensusArgs {
    /// Crowd-label CSV (`point_id,labeler_id,value` with 0/1 values).
    #[arg(long)]
    labels: Option<PathBuf>,
}

impl Cmd for ConsensusArgs {
    const NAME: &'static str = "consensus";

    fn resolve(&mut self) -> Result<()> {
        input_path(&mut self.labels, "labels")
    }

    fn seeds(&self) -> Vec<u64> {
        Vec::new()
    }

    fn inputs(&self) -> Vec<PathBuf> {
        self.labels.iter().cloned().collect()
    }

    fn execute(&self, dir: &Path) -> Result<Vec<String>> {
        let p = path(&self.labels);
        let matrix = csvio::crowd_matrix(p, &csvio::read_crowd(p)?)?;
        let summary = consensus_vote(&matrix);
        let agreement = pairwise_agreement(&matrix);
        csvio::write_consensus(&dir.join("consensus.csv"), &matrix, &summary)?;
        #[derive(Serialize)]
        struct Report<'a> {
            labelers: &'a [String],
            crop: usize,
            noncrop: usize,
            discarded: usize,
            agreement: &'a cropmap_core::eval::AgreementReport,
        }
        let json = write_json(
            dir,
            "agreement.json",
            &Report {
                labelers: matrix.labelers(),
                crop: summary.crop,
                noncrop: summary.noncrop,
                discarded: summary.discarded,
                agreement: &agreement,
            },
        )?;
        Ok(vec!["consensus.csv".into(), json])
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
struct SynthArgs {
    /// [default: 300]
    #[arg(long)]
    n_crop: Option<usize>,
    /// [default: 300]
    #[arg(long)]
    n_noncrop: Option<usize>,
    /// [default: local]
    #[arg(long, value_enum)]
    domain: Option<Domain>,
    /// Reflectance offset applied to global pixels [default: 0.05].
    #[arg(long)]
    domain_shift: Option<f64>,
    /// [default: 0.25]
    #[arg(long)]
    noise_std: Option<f64>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Also write a raster of this width (requires --raster-height).
    #[arg(long)]
    raster_width: Option<usize>,
    #[arg(long)]
    raster_height: Option<usize>,
}

impl SynthArgs {
    fn config(&self) -> SynthConfig {
        let (nc, nn, noise, seed) = (
            self.n_crop.expect("resolved"),
            self.n_noncrop.expect("resolved"),
            self.noise_std.expect("resolved"),
            self.seed.expect("resolved"),
        );
        match self.domain.expect("resolved") {
            Domain::Local => SynthConfig::local(nc, nn, noise, seed),
            Domain::Global => SynthConfig::global(nc, nn, noise, self.domain_shift.expect("resolved"), seed),
        }
    }
}

/// Checkerboard-like fields of 8×8 pixels, about 40% crop.
pub fn synthetic_field_mask(width: usize, height: usize) -> Vec<bool> {
    (0..height)
        .flat_map(|r| (0..width).map(move |c| ((r / 8) * 7 + (c / 8) * 3) % 5 < 2))
        .collect()
}

impl Cmd for SynthArgs {
    const NAME: &'static str = "synth";

    fn resolve(&mut self) -> Result<()> {
        self.n_crop.get_or_insert(300);
        self.n_noncrop.get_or_insert(300);
        self.domain.get_or_insert(Domain::Local);
        self.domain_shift.get_or_insert(0.05);
        self.noise_std.get_or_insert(0.25);
        self.seed.get_or_insert(0);
        if self.raster_width.is_some() != self.raster_height.is_some() {
            return Err(Error::Usage("--raster-width and --raster-height go together".into()));
        }
        let c = self.config();
        if !(c.noise_std >= 0.0 && c.domain_shift >= 0.0) {
            return Err(Error::Usage("--noise-std and --domain-shift must be non-negative".into()));
        }
        Ok(())
    }

    fn seeds(&self) -> Vec<u64> {
        self.seed.into_iter().collect()
    }

    fn inputs(&self) -> Vec<PathBuf> {
        Vec::new()
    }

    fn execute(&self, dir: &Path) -> Result<Vec<String>> {
        let config = self.config();
        csvio::write_labeled(&dir.join("points.csv"), &generate_examples(&config)?)?;
        let mut outputs = vec!["points.csv".to_string()];
        if let (Some(w), Some(h)) = (self.raster_width, self.raster_height) {
            let crop = synthetic_field_mask(w, h);
            let (stack, truth) = generate_raster(w, h, &crop, &config)?;
            rasterio::write_stack(&dir.join("stack.crrs"), &stack)?;
            let truth = cropmap_core::raster::MaskRaster {
                width: w,
                height: h,
                values: truth.iter().map(|&t| u8::from(t)).collect(),
                valid: vec![true; w * h],
                geo: None,
            };
            rasterio::write_mask(&dir.join("truth.crrs"), &truth)?;
            outputs.extend(["stack.crrs".into(), "truth.crrs".into()]);
        }
        Ok(outputs)
    }
}

/// Overlays the non-null flag values on the config file's object.
fn merge<C: Cmd>(flags: &C, config: Option<&Path>) -> Result<C> {
    let flag_value = serde_json::to_value(flags).expect("arguments serialize");
    let Some(config) = config else {
        return Ok(serde_json::from_value(flag_value).expect("arguments round-trip"));
    };
    let bytes = fs::read(config).map_err(|e| Error::io(config, e))?;
    let file: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| Error::json(config, e))?;
    let serde_json::Value::Object(mut merged) = file else {
        return Err(Error::data(config, "config must be a JSON object"));
    };
    let known = serde_json::to_value(C::default()).expect("arguments serialize");
    let known = known.as_object().expect("arguments are objects");
    if let Some(k) = merged.keys().find(|k| !known.contains_key(*k)) {
        return Err(Error::Usage(format!("{}: unknown key {k:?} for `{}`", config.display(), C::NAME)));
    }
    for (k, v) in flag_value.as_object().expect("arguments are objects") {
        if !v.is_null() {
            merged.insert(k.clone(), v.clone());
        }
    }
    serde_json::from_value(serde_json::Value::Object(merged)).map_err(|e| Error::json(config, e))
}

fn execute_resolved<C: Cmd>(args: &C, out: &Path, argv: &[String]) -> Result<PathBuf> {
    let started = chrono::Local::now();
    let clock = Instant::now();
    let seeds = args.seeds();
    let dir = create_run_dir(out, C::NAME, &started, seeds.first().copied().unwrap_or(0))?;
    log::info!("{} → {}", C::NAME, dir.display());
    let outputs = args.execute(&dir)?;
    let manifest = RunManifest {
        command: C::NAME.into(),
        config: serde_json::to_value(args).expect("arguments serialize"),
        seeds,
        inputs: args.inputs(),
        outputs: outputs.into_iter().map(PathBuf::from).collect(),
        run_dir: fs::canonicalize(&dir).unwrap_or_else(|_| dir.clone()),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        argv: argv.to_vec(),
        started_at: started.to_rfc3339(),
        duration_secs: clock.elapsed().as_secs_f64(),
    };
    manifest.write(&dir)?;
    println!("{}", dir.display());
    Ok(dir)
}

fn launch<C: Cmd>(args: &C, run: &RunOpts, argv: &[String]) -> Result<PathBuf> {
    let mut resolved = merge(args, run.config.as_deref())?;
    resolved.resolve()?;
    execute_resolved(&resolved, &run.out, argv)
}

fn replay_as<C: Cmd>(manifest: &RunManifest, manifest_path: &Path, out: &Path, argv: &[String]) -> Result<PathBuf> {
    let mut args: C = serde_json::from_value(manifest.config.clone())
        .map_err(|e| Error::data(manifest_path, format!("config does not match `{}`: {e}", C::NAME)))?;
    args.resolve()?;
    execute_resolved(&args, out, argv)
}

fn replay(manifest_path: &Path, out: Option<&Path>, argv: &[String]) -> Result<PathBuf> {
    let m = RunManifest::read(manifest_path)?;
    let default_out = m.run_dir.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("runs"));
    let out = out.unwrap_or(&default_out);
    match m.command.as_str() {
        ComposeArgs::NAME => replay_as::<ComposeArgs>(&m, manifest_path, out, argv),
        TrainArgs::NAME => replay_as::<TrainArgs>(&m, manifest_path, out, argv),
        GridArgs::NAME => replay_as::<GridArgs>(&m, manifest_path, out, argv),
        EvalArgs::NAME => replay_as::<EvalArgs>(&m, manifest_path, out, argv),
        PredictArgs::NAME => replay_as::<PredictArgs>(&m, manifest_path, out, argv),
        ThresholdArgs::NAME => replay_as::<ThresholdArgs>(&m, manifest_path, out, argv),
        SweepArgs::NAME => replay_as::<SweepArgs>(&m, manifest_path, out, argv),
        ConsensusArgs::NAME => replay_as::<ConsensusArgs>(&m, manifest_path, out, argv),
        SynthArgs::NAME => replay_as::<SynthArgs>(&m, manifest_path, out, argv),
        other => Err(Error::data(manifest_path, format!("unknown command {other:?}"))),
    }
}

fn dispatch(cli: Cli, argv: &[String]) -> Result<PathBuf> {
    match &cli.command {
        Command::Compose { run, args } => launch(args, run, argv),
        Command::Train { run, args } => launch(args, run, argv),
        Command::Gridsearch { run, args } => launch(args, run, argv),
        Command::Eval { run, args } => launch(args, run, argv),
        Command::Predict { run, args } => launch(args, run, argv),
        Command::Threshold { run, args } => launch(args, run, argv),
        Command::Sweep { run, args } => launch(args, run, argv),
        Command::Consensus { run, args } => launch(args, run, argv),
        Command::Synth { run, args } => launch(args, run, argv),
        Command::Replay { manifest, out } => replay(manifest, out.as_deref(), argv),
    }
}

/// Runs the CLI on `argv` (program name first) and returns the exit code:
/// 0 on success, 1 on usage errors, 2 on data errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(cli, &argv) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_win_over_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        fs::write(&cfg, r#"{"patience": 3, "lr": 0.01, "data": "x.csv"}"#).unwrap();
        let flags = TrainArgs { lstm: LstmFlags { lr: Some(0.5), ..Default::default() }, ..Default::default() };
        let merged = merge(&flags, Some(&cfg)).unwrap();
        assert_eq!(merged.lstm.patience, Some(3));
        assert_eq!(merged.lstm.lr, Some(0.5));
        assert_eq!(merged.data, Some(PathBuf::from("x.csv")));

        fs::write(&cfg, r#"{"patiense": 3}"#).unwrap();
        assert!(matches!(merge(&flags, Some(&cfg)), Err(Error::Usage(_))));
    }

    #[test]
    fn presets_fill_defaults() {
        let mut f = LstmFlags::default();
        f.resolve();
        let c = f.model_config();
        assert_eq!((c.classifier_layers, c.lstm_dropout, c.multi_headed, c.hidden_size, c.alpha), (2, 0.2, true, 64, 10.0));
        assert_eq!(f.train_config(), TrainConfig::default());

        let mut f = LstmFlags { preset: Some(Preset::Single), lstm_dropout: Some(0.2), ..Default::default() };
        f.resolve();
        let c = f.model_config();
        assert_eq!((c.classifier_layers, c.lstm_dropout, c.multi_headed), (1, 0.2, false));
    }

    #[test]
    fn field_mask_has_both_classes() {
        let m = synthetic_field_mask(40, 40);
        let crop = m.iter().filter(|&&v| v).count();
        assert!(crop > 400 && crop < 1200, "{crop}");
    }
}
