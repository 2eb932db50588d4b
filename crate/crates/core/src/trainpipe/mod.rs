//! Training loop, evaluation, loss curves, the misprediction gallery and
//! run directories.

mod export;
pub mod raster;
mod rundir;

pub use export::{export_curves, export_mispredictions, plot_curves, write_loss_csv, CurveSeries, GalleryOptions, GallerySummary};
pub use rundir::{evaluate_run, load_run_config, run_training, EvalFiles, RunPaths, CONFIG_FILE, CONFUSION_FILE, LOSS_CSV, LOSS_PNG, METRICS_FILE, MISPREDICTIONS_DIR, MODEL_FILE};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use thiserror::Error;

use crate::models::{build_model, ModelGraph, ModelKind, WidthConfig, CLASS_COUNT};
use crate::nn::{softmax_cross_entropy, Adam, ForwardCtx, Mode, NnError, Scalar};
use crate::qstate::ClassId;
use crate::render::{make_batches, ordered_batches, CorpusManifest, ImageSource, RenderError, Split, SplitData};
use crate::rng::SeededRng;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config: {0}")]
    Config(String),
    #[error("corpus does not match the manifest: {0}")]
    Mismatch(String),
    #[error("loss diverged ({loss}) at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("nothing to export: {0}")]
    Empty(&'static str),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::Single => "f32",
            Precision::Double => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "f32" | "single" => Ok(Precision::Single),
            "f64" | "double" => Ok(Precision::Double),
            other => Err(format!("unknown precision `{other}` (expected f32 or f64)")),
        }
    }
}

/// Hyperparameters of one training run. Defaults are the reference ResNet
/// settings: Adam, cross-entropy, lr 1e-5, 100 epochs, batch 16.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub precision: Precision,
    pub width_mult: f64,
    pub side: usize,
    /// Store Adam moments in the checkpoint.
    pub save_optimizer: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::ResNet,
            epochs: 100,
            batch_size: 16,
            lr: 1e-5,
            seed: 0,
            precision: Precision::Single,
            width_mult: 1.0,
            side: 128,
            save_optimizer: false,
        }
    }
}

/// Fixed parts of the recipe, echoed for the record.
pub const FIXED_KEYS: [(&str, &str); 3] = [("optimizer", "adam"), ("loss", "cross_entropy"), ("activation", "relu")];

impl TrainConfig {
    /// Reduced profile for quick CPU runs; not the reference configuration.
    pub fn desk_scale(model: ModelKind) -> Self {
        TrainConfig { model, side: 32, width_mult: 0.25, epochs: 30, lr: 1e-3, ..TrainConfig::default() }
    }

    pub fn width(&self) -> WidthConfig {
        WidthConfig { side: self.side, width_mult: self.width_mult }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be finite and non-negative", self.lr));
        }
        if !(self.width_mult > 0.0 && self.width_mult <= 1.0) {
            return bad(format!("width_mult {} outside (0, 1]", self.width_mult));
        }
        if self.side < 4 || !self.side.is_multiple_of(4) {
            return bad(format!("side {} must be a positive multiple of 4", self.side));
        }
        Ok(())
    }

    /// Applies one `key=value` setting. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
            value.trim().parse().map_err(|_| TrainError::Config(format!("bad value `{value}` for `{key}`")))
        }
        match key {
            "model" => self.model = value.parse().map_err(TrainError::Config)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "precision" => self.precision = value.parse().map_err(TrainError::Config)?,
            "width_mult" => self.width_mult = parse(key, value)?,
            "side" => self.side = parse(key, value)?,
            "save_optimizer" => self.save_optimizer = parse(key, value)?,
            _ => match FIXED_KEYS.iter().find(|(k, _)| *k == key) {
                Some((_, fixed)) if value.trim() == *fixed => {}
                Some((_, fixed)) => return Err(TrainError::Config(format!("`{key}` only supports `{fixed}`"))),
                None => return Err(TrainError::Config(format!("unknown key `{key}`"))),
            },
        }
        Ok(())
    }

    /// Every effective value, in a stable order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = vec![
            ("model".into(), self.model.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("lr".into(), format!("{:e}", self.lr)),
            ("seed".into(), self.seed.to_string()),
            ("precision".into(), self.precision.to_string()),
            ("width_mult".into(), self.width_mult.to_string()),
            ("side".into(), self.side.to_string()),
            ("save_optimizer".into(), self.save_optimizer.to_string()),
        ];
        out.extend(FIXED_KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())));
        out
    }
}

/// Splits flat `key=value` text into pairs. Blank lines and `#` comments are
/// skipped; a line without `=` or a repeated key is an error.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| TrainError::Config(format!("line {}: expected key=value", i + 1)))?;
        let k = k.trim().to_string();
        if out.iter().any(|(seen, _)| *seen == k) {
            return Err(TrainError::Config(format!("line {}: duplicate key `{k}`", i + 1)));
        }
        out.push((k, v.trim().to_string()));
    }
    Ok(out)
}

pub fn format_kv(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Position in the manifest.
    pub index: usize,
    pub path: String,
    pub truth: ClassId,
    pub predicted: ClassId,
    pub probabilities: [f64; CLASS_COUNT],
}

impl Prediction {
    pub fn is_correct(&self) -> bool {
        self.truth == self.predicted
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub split: Split,
    pub correct: usize,
    pub total: usize,
    pub predictions: Vec<Prediction>,
    /// `confusion[truth][predicted]`.
    pub confusion: [[usize; CLASS_COUNT]; CLASS_COUNT],
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }

    pub fn mispredictions(&self) -> impl Iterator<Item = &Prediction> {
        self.predictions.iter().filter(|p| !p.is_correct())
    }

    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("true\\predicted");
        for c in ClassId::ALL {
            s.push_str(&format!(",{c}"));
        }
        s.push('\n');
        for c in ClassId::ALL {
            s.push_str(c.name());
            for n in self.confusion[c.index()] {
                s.push_str(&format!(",{n}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn metrics_csv(&self) -> String {
        format!("metric,value\nsplit,{}\ncorrect,{}\ntotal,{}\naccuracy,{}\n", self.split, self.correct, self.total, self.accuracy())
    }
}

/// What a training run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub model: ModelKind,
    /// Mean training loss per epoch; one entry per epoch.
    pub epoch_losses: Vec<f64>,
    /// Per-batch training losses, `[epoch][batch]`.
    pub batch_losses: Vec<Vec<f64>>,
    /// Filled in once the run has been evaluated.
    pub evaluation: Option<Evaluation>,
    pub wall_time_s: f64,
}

impl RunRecord {
    pub fn test_accuracy(&self) -> Option<f64> {
        self.evaluation.as_ref().map(Evaluation::accuracy)
    }
}

/// Trained weights and optimizer state.
#[derive(Debug, Clone)]
pub struct Trained<T> {
    pub record: RunRecord,
    pub model: ModelGraph<T>,
    pub optimizer: Adam<T>,
}

/// Seed streams derived from the run seed.
const STREAM_INIT: u64 = 1;
const STREAM_DROPOUT: u64 = 2;
const STREAM_SHUFFLE: u64 = 1000;

pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    SeededRng::derive(seed, STREAM_SHUFFLE + epoch as u64).next_u64()
}

pub fn init_model<T: Scalar>(cfg: &TrainConfig) -> Result<ModelGraph<T>> {
    Ok(build_model(cfg.model, cfg.width(), &mut SeededRng::derive(cfg.seed, STREAM_INIT))?)
}

/// Runs `cfg.epochs` passes of shuffled minibatch Adam over the train split.
/// Only train-tagged images are ever requested from `source`.
pub fn train<T: Scalar>(
    cfg: &TrainConfig,
    manifest: &CorpusManifest,
    source: &dyn ImageSource,
    on_epoch: &mut dyn FnMut(usize, f64),
) -> Result<Trained<T>> {
    cfg.validate()?;
    let started = Instant::now();
    let data = SplitData::load(source, manifest, Split::Train, cfg.side).map_err(|e| match e {
        RenderError::Io { .. } | RenderError::Png { .. } => TrainError::Mismatch(e.to_string()),
        other => other.into(),
    })?;
    let mut model = init_model::<T>(cfg)?;
    let mut optimizer = Adam::new(cfg.lr);
    let mut dropout_rng = SeededRng::derive(cfg.seed, STREAM_DROPOUT);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut batch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let batches = make_batches::<T>(&data, cfg.batch_size, epoch_seed(cfg.seed, epoch))?;
        let mut losses = Vec::with_capacity(batches.len());
        for (b, batch) in batches.iter().enumerate() {
            model.zero_grad();
            let logits = model.forward(&batch.inputs, &mut ForwardCtx::new(Mode::Train, &mut dropout_rng)).map_err(|e| diverged(e, epoch, b + 1))?;
            let (loss, grad) = softmax_cross_entropy(&logits, &batch.targets).map_err(|e| diverged(e, epoch, b + 1))?;
            model.backward(&grad)?;
            optimizer.step(model.params_mut().into_iter().map(|(_, p)| p))?;
            losses.push(loss.as_f64());
        }
        model.clear_caches();
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        on_epoch(epoch, mean);
        epoch_losses.push(mean);
        batch_losses.push(losses);
    }

    let record = RunRecord { model: cfg.model, epoch_losses, batch_losses, evaluation: None, wall_time_s: started.elapsed().as_secs_f64() };
    Ok(Trained { record, model, optimizer })
}

fn diverged(e: NnError, epoch: usize, batch: usize) -> TrainError {
    match e {
        NnError::NonFinite { .. } => TrainError::Diverged { epoch, batch, loss: f64::NAN },
        other => TrainError::Nn(other),
    }
}

/// Eval-mode accuracy and per-sample predictions over a loaded split.
pub fn evaluate<T: Scalar>(model: &mut ModelGraph<T>, data: &SplitData, batch_size: usize) -> Result<Evaluation> {
    let mut rng = SeededRng::new(0);
    let mut predictions = Vec::with_capacity(data.len());
    let mut confusion = [[0; CLASS_COUNT]; CLASS_COUNT];
    for batch in ordered_batches::<T>(data, batch_size)? {
        let logits = model.forward(&batch.inputs, &mut ForwardCtx::new(Mode::Eval, &mut rng))?;
        for (row, &item) in logits.data().chunks(CLASS_COUNT).zip(&batch.items) {
            let probabilities = softmax(row);
            let predicted = argmax(&probabilities);
            let entry = &data.entries[item];
            confusion[entry.label.index()][predicted] += 1;
            predictions.push(Prediction {
                index: data.indices[item],
                path: entry.path.clone(),
                truth: entry.label,
                predicted: ClassId::from_index(predicted).expect("class index in range"),
                probabilities,
            });
        }
    }
    model.clear_caches();
    let correct = predictions.iter().filter(|p| p.is_correct()).count();
    Ok(Evaluation { split: data.split, correct, total: predictions.len(), predictions, confusion })
}

/// Loads `split` from `source` and evaluates it.
pub fn evaluate_split<T: Scalar>(
    model: &mut ModelGraph<T>,
    manifest: &CorpusManifest,
    source: &dyn ImageSource,
    split: Split,
    batch_size: usize,
) -> Result<Evaluation> {
    let side = model.config.side;
    let data = SplitData::load(source, manifest, split, side)?;
    evaluate(model, &data, batch_size)
}

fn softmax<T: Scalar>(row: &[T]) -> [f64; CLASS_COUNT] {
    let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let mut p = [0.0; CLASS_COUNT];
    for (o, v) in p.iter_mut().zip(row) {
        *o = (v.as_f64() - max).exp();
    }
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= sum);
    p
}

/// First index of the maximum.
fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}
