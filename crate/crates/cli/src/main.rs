//! `catwig`: generate Wigner-image corpora, train and evaluate classifiers,
//! render single states and audit model parameter counts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use catwig::models::{audit_params, build_model, ModelKind, WidthConfig};
use catwig::render::{generate_corpus, render_state, write_png, CorpusConfig, Split, MANIFEST_FILE};
use catwig::rng::SeededRng;
use catwig::trainpipe::{evaluate_run, format_kv, parse_kv, run_training, TrainConfig};
use catwig::ClassId;

const THREADS_ENV: &str = "CATWIG_THREADS";

#[derive(Parser)]
#[command(name = "catwig", version, about = "Quantum-state Wigner image classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the labeled PNG corpus with manifest and split.
    Generate(GenerateArgs),
    /// Train a classifier and write a run directory.
    Train(TrainArgs),
    /// Re-evaluate a finished run's checkpoint.
    Evaluate(EvaluateArgs),
    /// Render one state's Wigner function to a PNG.
    RenderWigner(RenderArgs),
    /// Print layer output shapes and parameter counts.
    Audit(AuditArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    overwrite: bool,
    /// Flat key=value file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Run name; output goes to `<runs-dir>/<run>`.
    #[arg(long)]
    run: Option<String>,
    #[arg(long)]
    runs_dir: Option<PathBuf>,
    #[arg(long)]
    side: Option<usize>,
    #[arg(long)]
    width_mult: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// f32 or f64.
    #[arg(long)]
    precision: Option<String>,
    /// Reduced profile: side 32, width 0.25, 30 epochs, lr 1e-3.
    #[arg(long)]
    desk_scale: bool,
    /// Store Adam moments in the checkpoint.
    #[arg(long)]
    with_optimizer: bool,
    #[arg(long)]
    overwrite: bool,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the effective configuration and exit without training.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    run: String,
    #[arg(long, default_value = "runs")]
    runs_dir: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Corpus to read instead of the one recorded in config.txt.
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long = "class")]
    class: ClassId,
    #[arg(long)]
    n: u32,
    #[arg(long)]
    out: PathBuf,
    /// Half-width of the square phase-space window (default √n + 4).
    #[arg(long)]
    extent: Option<f64>,
    #[arg(long, default_value_t = 512)]
    resolution: usize,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    model: ModelKind,
    #[arg(long, default_value_t = 128)]
    side: usize,
    #[arg(long, default_value_t = 1.0)]
    width_mult: f64,
    /// Also write the table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::RenderWigner(a) => cmd_render_wigner(a),
        Command::Audit(a) => cmd_audit(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| anyhow!("{THREADS_ENV}={raw} is not a positive integer"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker threads")?;
    Ok(())
}

fn read_config(path: Option<&Path>) -> Result<BTreeMap<String, String>> {
    let Some(path) = path else { return Ok(BTreeMap::new()) };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_kv(&text).with_context(|| path.display().to_string())?.into_iter().collect())
}

fn parse_value<V: std::str::FromStr>(key: &str, v: &str) -> Result<V> {
    v.trim().parse().map_err(|_| anyhow!("config: bad value `{v}` for `{key}`"))
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let mut cfg = CorpusConfig::default();
    let mut out = None;
    for (k, v) in read_config(a.config.as_deref())? {
        match k.as_str() {
            "out" => out = Some(PathBuf::from(v)),
            "resolution" => cfg.resolution = parse_value(&k, &v)?,
            "seed" => cfg.seed = parse_value(&k, &v)?,
            "overwrite" => cfg.overwrite = parse_value(&k, &v)?,
            "n_min" => cfg.n_min = parse_value(&k, &v)?,
            "n_max" => cfg.n_max = parse_value(&k, &v)?,
            "split_fraction" => cfg.split_fraction = parse_value(&k, &v)?,
            _ => bail!("config: unknown key `{k}`"),
        }
    }
    out = a.out.or(out);
    cfg.resolution = a.resolution.unwrap_or(cfg.resolution);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.overwrite |= a.overwrite;
    let out = out.ok_or_else(|| anyhow!("--out is required"))?;
    if cfg.resolution < 2 {
        bail!("resolution must be at least 2");
    }

    let manifest = generate_corpus(&out, &cfg)?;
    let counts = manifest.class_counts();
    let (train, test) = (manifest.count(Split::Train), manifest.count(Split::Test));
    println!("{} images, {train} train / {test} test", manifest.entries.len());
    for c in ClassId::ALL {
        println!("  {c}: {}", counts[c.index()]);
    }
    println!("manifest: {}", out.join(MANIFEST_FILE).display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let file = read_config(a.config.as_deref())?;
    let desk = a.desk_scale || file.get("desk_scale").map(|v| parse_value::<bool>("desk_scale", v)).transpose()?.unwrap_or(false);
    let model = match (&a.model, file.get("model")) {
        (Some(m), _) => *m,
        (None, Some(v)) => v.parse().map_err(|e: String| anyhow!("config: {e}"))?,
        (None, None) => ModelKind::ResNet,
    };
    let mut cfg = if desk { TrainConfig::desk_scale(model) } else { TrainConfig { model, ..TrainConfig::default() } };
    let (mut corpus, mut run, mut runs_dir, mut overwrite) = (None, None, PathBuf::from("runs"), false);
    for (k, v) in &file {
        match k.as_str() {
            "corpus" => corpus = Some(PathBuf::from(v)),
            "run" => run = Some(v.clone()),
            "runs_dir" => runs_dir = PathBuf::from(v),
            "overwrite" => overwrite = parse_value(k, v)?,
            "desk_scale" | "model" => {}
            "with_optimizer" => cfg.set("save_optimizer", v)?,
            _ => cfg.set(k, v)?,
        }
    }
    corpus = a.corpus.or(corpus);
    run = a.run.or(run);
    runs_dir = a.runs_dir.unwrap_or(runs_dir);
    overwrite |= a.overwrite;
    cfg.side = a.side.unwrap_or(cfg.side);
    cfg.width_mult = a.width_mult.unwrap_or(cfg.width_mult);
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
    cfg.lr = a.lr.unwrap_or(cfg.lr);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    if let Some(p) = &a.precision {
        cfg.set("precision", p)?;
    }
    cfg.save_optimizer |= a.with_optimizer;
    cfg.validate()?;
    if a.print_config {
        print!("{}", format_kv(&cfg.to_pairs()));
        return Ok(());
    }

    let corpus = corpus.ok_or_else(|| anyhow!("--corpus is required"))?;
    let run = run.ok_or_else(|| anyhow!("--run is required"))?;
    if run.is_empty() || run.contains(['/', '\\']) || run.starts_with('.') {
        bail!("run name `{run}` must be a plain directory name");
    }
    fs::create_dir_all(&runs_dir).with_context(|| format!("creating {}", runs_dir.display()))?;
    let run_dir = runs_dir.join(&run);

    println!("training {} (side {}, width {}, {} epochs, lr {:e}, batch {}, seed {})", cfg.model, cfg.side, cfg.width_mult, cfg.epochs, cfg.lr, cfg.batch_size, cfg.seed);
    let record = run_training(&cfg, &corpus, &run_dir, overwrite, &mut |epoch, loss| println!("epoch {epoch:>4}  loss {loss:.6}"))?;
    let eval = record.evaluation.as_ref().expect("run_training evaluates the test split");
    println!("test accuracy {:.4} ({}/{}), {:.1}s", eval.accuracy(), eval.correct, eval.total, record.wall_time_s);
    println!("run: {}", run_dir.display());
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let run_dir = a.runs_dir.join(&a.run);
    if !run_dir.is_dir() {
        bail!("run directory {} not found", run_dir.display());
    }
    let eval = evaluate_run(&run_dir, a.split, a.corpus.as_deref())?;
    println!("{} accuracy {:.4} ({}/{})", a.split, eval.accuracy(), eval.correct, eval.total);
    print!("{}", eval.confusion_csv());
    println!("mispredictions: {}", eval.mispredictions().count());
    Ok(())
}

fn cmd_render_wigner(a: RenderArgs) -> Result<()> {
    if a.resolution < 2 {
        bail!("resolution must be at least 2");
    }
    if let Some(r) = a.extent {
        if !(r > 0.0 && r.is_finite()) {
            bail!("extent must be positive");
        }
    }
    let img = render_state(a.class, a.n, a.resolution, a.extent)?;
    let tmp = a.out.with_extension("png.partial");
    let written = write_png(&img.pixels, img.side, img.side, &tmp).map_err(anyhow::Error::from).and_then(|()| {
        fs::rename(&tmp, &a.out).with_context(|| format!("writing {}", a.out.display()))
    });
    if written.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    written?;
    println!("{} n={} extent {:.4} -> {}", a.class, a.n, img.extent, a.out.display());
    Ok(())
}

fn cmd_audit(a: AuditArgs) -> Result<()> {
    let graph = build_model::<f32>(a.model, WidthConfig { side: a.side, width_mult: a.width_mult }, &mut SeededRng::new(0))?;
    let report = audit_params(&graph)?;
    print!("{}", report.to_text());
    if let Some(path) = &a.csv {
        fs::write(path, report.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
