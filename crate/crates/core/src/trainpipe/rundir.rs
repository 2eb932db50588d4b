//! `runs/<name>/` layout: `config.txt`, `loss.csv`, `loss.png`,
//! `metrics.csv`, `confusion.csv`, `model.cwnn`, `mispredictions/`.

use std::fs;
use std::path::{Path, PathBuf};

use super::{
    evaluate_split, export_curves, export_mispredictions, format_kv, init_model, io_err, parse_kv, train, Evaluation, GalleryOptions, Precision,
    Result, RunRecord, TrainConfig, TrainError,
};
use crate::models::ModelGraph;
use crate::nn::{Checkpoint, Scalar};
use crate::render::{CorpusManifest, FileSource, Split};

pub const CONFIG_FILE: &str = "config.txt";
pub const LOSS_CSV: &str = "loss.csv";
pub const LOSS_PNG: &str = "loss.png";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const MODEL_FILE: &str = "model.cwnn";
pub const MISPREDICTIONS_DIR: &str = "mispredictions";

const EVAL_BATCH: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunPaths { root: root.into() }
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

/// Output names for one evaluation. The test split written during training
/// uses the plain names; later evaluations get a `_<split>` suffix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalFiles {
    pub metrics: String,
    pub confusion: String,
    pub gallery: String,
}

impl EvalFiles {
    pub fn plain() -> Self {
        EvalFiles { metrics: METRICS_FILE.into(), confusion: CONFUSION_FILE.into(), gallery: MISPREDICTIONS_DIR.into() }
    }

    pub fn for_split(split: Split) -> Self {
        EvalFiles { metrics: format!("metrics_{split}.csv"), confusion: format!("confusion_{split}.csv"), gallery: format!("{MISPREDICTIONS_DIR}_{split}") }
    }
}

fn partial_dir(target: &Path) -> PathBuf {
    let name = target.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    target.with_file_name(format!(".{name}.partial"))
}

/// Trains, checkpoints and evaluates on the test split, writing the full run
/// directory. Files are assembled in a hidden sibling directory and moved
/// into place only when everything succeeded.
pub fn run_training(
    cfg: &TrainConfig,
    corpus_dir: &Path,
    run_dir: &Path,
    overwrite: bool,
    on_epoch: &mut dyn FnMut(usize, f64),
) -> Result<RunRecord> {
    cfg.validate()?;
    if run_dir.exists() && !overwrite {
        return Err(TrainError::Config(format!("{} already exists; pass overwrite to replace it", run_dir.display())));
    }
    let manifest = CorpusManifest::load(corpus_dir)?;
    let work = partial_dir(run_dir);
    if work.exists() {
        fs::remove_dir_all(&work).map_err(io_err(&work))?;
    }
    fs::create_dir_all(&work).map_err(io_err(&work))?;

    let result = match cfg.precision {
        Precision::Single => train_into::<f32>(cfg, corpus_dir, &manifest, &work, on_epoch),
        Precision::Double => train_into::<f64>(cfg, corpus_dir, &manifest, &work, on_epoch),
    };
    let record = match result {
        Ok(r) => r,
        Err(e) => {
            let _ = fs::remove_dir_all(&work);
            return Err(e);
        }
    };
    if run_dir.exists() {
        fs::remove_dir_all(run_dir).map_err(io_err(run_dir))?;
    }
    fs::rename(&work, run_dir).map_err(io_err(run_dir))?;
    Ok(record)
}

fn train_into<T: Scalar>(
    cfg: &TrainConfig,
    corpus_dir: &Path,
    manifest: &CorpusManifest,
    work: &Path,
    on_epoch: &mut dyn FnMut(usize, f64),
) -> Result<RunRecord> {
    let paths = RunPaths::new(work);
    let mut pairs = cfg.to_pairs();
    let corpus_abs = fs::canonicalize(corpus_dir).map_err(io_err(corpus_dir))?;
    pairs.push(("corpus".into(), corpus_abs.display().to_string()));
    let config_path = paths.file(CONFIG_FILE);
    fs::write(&config_path, format_kv(&pairs)).map_err(io_err(&config_path))?;

    let source = FileSource::new(corpus_dir);
    let mut trained = train::<T>(cfg, manifest, &source, on_epoch)?;
    let ck = trained.model.to_checkpoint(cfg.save_optimizer.then_some(&trained.optimizer));
    ck.save(&paths.file(MODEL_FILE))?;

    // Evaluate what was saved, so later evaluations of the file agree.
    let mut model = init_model::<T>(cfg)?;
    model.load_checkpoint(&ck)?;
    let eval = evaluate_split(&mut model, manifest, &source, Split::Test, EVAL_BATCH)?;
    write_eval(&paths, &eval, &EvalFiles::plain(), manifest, &source)?;

    let mut record = trained.record;
    export_curves(&[(cfg.model.name(), &record)], work)?;
    let metrics_path = paths.file(METRICS_FILE);
    let mut metrics = eval.metrics_csv();
    metrics.push_str(&format!(
        "epochs,{}\nfirst_epoch_loss,{}\nfinal_epoch_loss,{}\nwall_time_s,{:.3}\n",
        record.epoch_losses.len(),
        record.epoch_losses[0],
        record.epoch_losses[record.epoch_losses.len() - 1],
        record.wall_time_s
    ));
    fs::write(&metrics_path, metrics).map_err(io_err(&metrics_path))?;
    record.evaluation = Some(eval);
    Ok(record)
}

fn write_eval(paths: &RunPaths, eval: &Evaluation, files: &EvalFiles, manifest: &CorpusManifest, source: &FileSource) -> Result<()> {
    let m = paths.file(&files.metrics);
    fs::write(&m, eval.metrics_csv()).map_err(io_err(&m))?;
    let c = paths.file(&files.confusion);
    fs::write(&c, eval.confusion_csv()).map_err(io_err(&c))?;
    let g = paths.file(&files.gallery);
    if g.exists() {
        fs::remove_dir_all(&g).map_err(io_err(&g))?;
    }
    export_mispredictions(eval, manifest, source, &g, GalleryOptions { include_correct: false })?;
    Ok(())
}

/// Reads a run's `config.txt` back into a config plus the corpus path it
/// was trained on.
pub fn load_run_config(run_dir: &Path) -> Result<(TrainConfig, PathBuf)> {
    let path = run_dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let mut cfg = TrainConfig::default();
    let mut corpus = None;
    for (k, v) in parse_kv(&text)? {
        if k == "corpus" {
            corpus = Some(PathBuf::from(v));
        } else {
            cfg.set(&k, &v)?;
        }
    }
    let corpus = corpus.ok_or_else(|| TrainError::Config(format!("{}: missing `corpus`", path.display())))?;
    Ok((cfg, corpus))
}

/// Re-evaluates a finished run's checkpoint on `split`, writing
/// `metrics_<split>.csv`, `confusion_<split>.csv` and a gallery.
pub fn evaluate_run(run_dir: &Path, split: Split, corpus_override: Option<&Path>) -> Result<Evaluation> {
    let (cfg, corpus) = load_run_config(run_dir)?;
    let corpus = corpus_override.map(Path::to_path_buf).unwrap_or(corpus);
    let model_path = run_dir.join(MODEL_FILE);
    if !model_path.is_file() {
        return Err(TrainError::Config(format!("{}: checkpoint not found", model_path.display())));
    }
    let ck = Checkpoint::load(&model_path)?;
    let manifest = CorpusManifest::load(&corpus)?;
    let source = FileSource::new(&corpus);
    let eval = match cfg.precision {
        Precision::Single => eval_with::<f32>(&cfg, &ck, &manifest, &source, split)?,
        Precision::Double => eval_with::<f64>(&cfg, &ck, &manifest, &source, split)?,
    };
    let paths = RunPaths::new(run_dir);
    let files = EvalFiles::for_split(split);
    if let Err(e) = write_eval(&paths, &eval, &files, &manifest, &source) {
        for f in [&files.metrics, &files.confusion] {
            let _ = fs::remove_file(paths.file(f));
        }
        let _ = fs::remove_dir_all(paths.file(&files.gallery));
        return Err(e);
    }
    Ok(eval)
}

fn eval_with<T: Scalar>(cfg: &TrainConfig, ck: &Checkpoint, manifest: &CorpusManifest, source: &FileSource, split: Split) -> Result<Evaluation> {
    let mut model: ModelGraph<T> = init_model(cfg)?;
    model.load_checkpoint(ck)?;
    evaluate_split(&mut model, manifest, source, split, EVAL_BATCH)
}
