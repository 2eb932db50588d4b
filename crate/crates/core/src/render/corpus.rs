use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use super::{colorize, encode_png, io_err, ImageRecord, RenderError, Result};
use crate::qstate::{default_extent, make_state, wigner_analytic, ClassId};
use crate::rng::SeededRng;

pub const COLORMAP_VERSION: &str = "wmap-v1";
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const META_FILE: &str = "corpus_meta";
const MANIFEST_HEADER: &str = "path,label,n,split";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = RenderError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(RenderError::Manifest(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// File name relative to the corpus directory.
    pub path: String,
    pub label: ClassId,
    pub n_photon: u32,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
    pub seed: u64,
    pub split_fraction: f64,
}

impl CorpusManifest {
    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.entries.iter().enumerate().filter(|(_, e)| e.split == split).map(|(i, _)| i).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    pub fn class_counts(&self) -> [usize; ClassId::COUNT] {
        let mut counts = [0; ClassId::COUNT];
        for e in &self.entries {
            counts[e.label.index()] += 1;
        }
        counts
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{MANIFEST_HEADER}\n");
        for e in &self.entries {
            s.push_str(&format!("{},{},{},{}\n", e.path, e.label, e.n_photon, e.split));
        }
        s
    }

    pub fn from_csv(text: &str, seed: u64, split_fraction: f64) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(MANIFEST_HEADER) {
            return Err(RenderError::Manifest(format!("missing header `{MANIFEST_HEADER}`")));
        }
        let mut entries = Vec::new();
        for (lineno, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split(',').collect();
            let bad = |what: &str| RenderError::Manifest(format!("line {}: {what}", lineno + 2));
            let [path, label, n, split] = fields[..] else {
                return Err(bad("expected 4 fields"));
            };
            entries.push(ManifestEntry {
                path: path.to_string(),
                label: label.parse().map_err(|_| bad("bad label"))?,
                n_photon: n.trim().parse().map_err(|_| bad("bad photon number"))?,
                split: split.parse()?,
            });
        }
        Ok(CorpusManifest { entries, seed, split_fraction })
    }

    /// Reads `manifest.csv` and `corpus_meta` from a corpus directory.
    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
        let meta = read_meta(dir)?;
        let seed = meta.get("seed").and_then(|s| s.parse().ok()).unwrap_or(0);
        let split_fraction = meta.get("split_fraction").and_then(|s| s.parse().ok()).unwrap_or(0.8);
        Self::from_csv(&text, seed, split_fraction)
    }
}

pub fn read_meta(dir: &Path) -> Result<HashMap<String, String>> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    Ok(text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub resolution: usize,
    pub n_min: u32,
    pub n_max: u32,
    pub seed: u64,
    pub split_fraction: f64,
    pub overwrite: bool,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig { resolution: 512, n_min: 1, n_max: 100, seed: 0, split_fraction: 0.8, overwrite: false }
    }
}

pub fn image_file_name(class: ClassId, n: u32) -> String {
    format!("{class}_{n:03}.png")
}

/// Renders one state with the default extent rule `√n + 4`.
pub fn render_state(class: ClassId, n: u32, resolution: usize, extent: Option<f64>) -> Result<ImageRecord> {
    let state = make_state(class, n)?;
    let grid = wigner_analytic(&state, extent.unwrap_or_else(|| default_extent(n)), resolution)?;
    colorize(&grid, class, n)
}

fn is_corpus_file(name: &str) -> bool {
    name == MANIFEST_FILE || name == META_FILE || name.ends_with(".png")
}

/// Renders every (class, n) image, assigns the seeded 80/20 split and
/// writes PNGs, `manifest.csv` and `corpus_meta` into `out_dir`.
///
/// Output is byte-identical for a fixed configuration. Files written before
/// a failure are removed.
pub fn generate_corpus(out_dir: &Path, cfg: &CorpusConfig) -> Result<CorpusManifest> {
    if !(cfg.split_fraction > 0.0 && cfg.split_fraction < 1.0) {
        return Err(RenderError::Manifest(format!("split fraction {} outside (0, 1)", cfg.split_fraction)));
    }
    if cfg.n_min == 0 || cfg.n_min > cfg.n_max {
        return Err(RenderError::Manifest(format!("bad photon range {}..={}", cfg.n_min, cfg.n_max)));
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let existing: Vec<PathBuf> = fs::read_dir(out_dir)
        .map_err(io_err(out_dir))?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_str().is_some_and(is_corpus_file))
        .map(|e| e.path())
        .collect();
    if !existing.is_empty() {
        if !cfg.overwrite {
            return Err(RenderError::Exists(out_dir.to_path_buf()));
        }
        for p in &existing {
            fs::remove_file(p).map_err(io_err(p))?;
        }
    }

    let jobs: Vec<(ClassId, u32)> = ClassId::ALL.iter().flat_map(|&c| (cfg.n_min..=cfg.n_max).map(move |n| (c, n))).collect();
    let total = jobs.len();
    let mut order: Vec<usize> = (0..total).collect();
    SeededRng::new(cfg.seed).shuffle(&mut order);
    let n_train = (cfg.split_fraction * total as f64).round() as usize;
    let mut split = vec![Split::Test; total];
    for &i in &order[..n_train] {
        split[i] = Split::Train;
    }

    let results: Vec<Result<PathBuf>> = jobs
        .par_iter()
        .map(|&(class, n)| {
            let path = out_dir.join(image_file_name(class, n));
            let img = render_state(class, n, cfg.resolution, None)?;
            let bytes = encode_png(&img.pixels, img.side, img.side, &path)?;
            fs::write(&path, bytes).map_err(io_err(&path))?;
            Ok(path)
        })
        .collect();
    if let Some(err) = cleanup_on_error(results) {
        return Err(err);
    }

    let entries = jobs
        .iter()
        .zip(&split)
        .map(|(&(class, n), &s)| ManifestEntry { path: image_file_name(class, n), label: class, n_photon: n, split: s })
        .collect();
    let manifest = CorpusManifest { entries, seed: cfg.seed, split_fraction: cfg.split_fraction };
    let written = write_manifest_files(out_dir, &manifest, cfg);
    if let Err(e) = written {
        for name in jobs.iter().map(|&(c, n)| image_file_name(c, n)).chain([MANIFEST_FILE.into(), META_FILE.into()]) {
            let _ = fs::remove_file(out_dir.join(name));
        }
        return Err(e);
    }
    Ok(manifest)
}

fn cleanup_on_error(results: Vec<Result<PathBuf>>) -> Option<RenderError> {
    if results.iter().all(|r| r.is_ok()) {
        return None;
    }
    let mut first = None;
    for r in results {
        match r {
            Ok(p) => {
                let _ = fs::remove_file(p);
            }
            Err(e) => {
                first.get_or_insert(e);
            }
        }
    }
    first
}

fn write_manifest_files(out_dir: &Path, manifest: &CorpusManifest, cfg: &CorpusConfig) -> Result<()> {
    let mpath = out_dir.join(MANIFEST_FILE);
    fs::write(&mpath, manifest.to_csv()).map_err(io_err(&mpath))?;
    let meta_path = out_dir.join(META_FILE);
    let mut w = super::create_writer(&meta_path)?;
    let lines = [
        format!("seed={}", cfg.seed),
        "extent_rule=sqrt(n)+4".to_string(),
        format!("resolution={}", cfg.resolution),
        format!("colormap={COLORMAP_VERSION}"),
        format!("n_min={}", cfg.n_min),
        format!("n_max={}", cfg.n_max),
        format!("split_fraction={}", cfg.split_fraction),
        "shuffle=xoshiro256++ (splitmix64 seeding), fisher-yates".to_string(),
    ];
    for l in lines {
        writeln!(w, "{l}").map_err(io_err(&meta_path))?;
    }
    w.flush().map_err(io_err(&meta_path))
}
