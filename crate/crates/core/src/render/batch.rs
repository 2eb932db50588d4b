use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{read_png, resize_bilinear, stack_inputs, CorpusManifest, ImageRecord, ManifestEntry, RenderError, Result, Split};
use crate::nn::{Scalar, Tensor4};
use crate::rng::SeededRng;

/// Where corpus pixels come from.
pub trait ImageSource: Sync {
    fn load(&self, entry: &ManifestEntry) -> Result<ImageRecord>;
}

/// Reads PNGs relative to a corpus directory.
#[derive(Debug, Clone)]
pub struct FileSource {
    root: PathBuf,
}

impl FileSource {
    pub fn new(root: impl AsRef<Path>) -> Self {
        FileSource { root: root.as_ref().to_path_buf() }
    }
}

impl ImageSource for FileSource {
    fn load(&self, entry: &ManifestEntry) -> Result<ImageRecord> {
        let (pixels, w, h) = read_png(&self.root.join(&entry.path))?;
        if w != h {
            return Err(RenderError::Image(format!("{}: image is {w}x{h}, expected square", entry.path)));
        }
        Ok(ImageRecord {
            pixels,
            side: w,
            label: entry.label,
            n_photon: entry.n_photon,
            extent: crate::qstate::default_extent(entry.n_photon),
            source_resolution: w,
        })
    }
}

/// One split of the corpus, decoded and resized to the network input side.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub split: Split,
    pub side: usize,
    /// Manifest positions of `entries`.
    pub indices: Vec<usize>,
    pub entries: Vec<ManifestEntry>,
    pub images: Vec<ImageRecord>,
}

impl SplitData {
    /// Loads only the entries tagged `split`.
    pub fn load(source: &dyn ImageSource, manifest: &CorpusManifest, split: Split, side: usize) -> Result<Self> {
        let indices = manifest.indices(split);
        let entries: Vec<ManifestEntry> = indices.iter().map(|&i| manifest.entries[i].clone()).collect();
        if entries.is_empty() {
            return Err(RenderError::EmptySplit(split));
        }
        let images = entries
            .par_iter()
            .map(|e| source.load(e).map(|img| resize_bilinear(&img, side)))
            .collect::<Result<Vec<_>>>()?;
        Ok(SplitData { split, side, indices, entries, images })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Batch<T> {
    /// `(batch, 4, side, side)`, values in `[0, 1]`.
    pub inputs: Tensor4<T>,
    pub targets: Vec<usize>,
    /// Positions within the split.
    pub items: Vec<usize>,
}

fn shuffled_chunks(len: usize, batch_size: usize, epoch_seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    SeededRng::new(epoch_seed).shuffle(&mut order);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Per-epoch partition of a split's manifest indices into batches; the
/// last batch may be short.
pub fn batch_order(manifest: &CorpusManifest, split: Split, batch_size: usize, epoch_seed: u64) -> Result<Vec<Vec<usize>>> {
    assert!(batch_size > 0, "batch size must be positive");
    let idx = manifest.indices(split);
    if idx.is_empty() {
        return Err(RenderError::EmptySplit(split));
    }
    Ok(shuffled_chunks(idx.len(), batch_size, epoch_seed).into_iter().map(|b| b.into_iter().map(|i| idx[i]).collect()).collect())
}

/// Shuffled batches for one epoch; same order as [`batch_order`] for the
/// same seed.
pub fn make_batches<T: Scalar>(data: &SplitData, batch_size: usize, epoch_seed: u64) -> Result<Vec<Batch<T>>> {
    assert!(batch_size > 0, "batch size must be positive");
    if data.is_empty() {
        return Err(RenderError::EmptySplit(data.split));
    }
    shuffled_chunks(data.len(), batch_size, epoch_seed)
        .into_iter()
        .map(|items| {
            let imgs: Vec<ImageRecord> = items.iter().map(|&i| data.images[i].clone()).collect();
            Ok(Batch { inputs: stack_inputs(&imgs)?, targets: items.iter().map(|&i| data.entries[i].label.index()).collect(), items })
        })
        .collect()
}

/// Sequential, unshuffled batches (for evaluation).
pub fn ordered_batches<T: Scalar>(data: &SplitData, batch_size: usize) -> Result<Vec<Batch<T>>> {
    assert!(batch_size > 0, "batch size must be positive");
    (0..data.len())
        .collect::<Vec<_>>()
        .chunks(batch_size)
        .map(|items| {
            let imgs: Vec<ImageRecord> = items.iter().map(|&i| data.images[i].clone()).collect();
            Ok(Batch { inputs: stack_inputs(&imgs)?, targets: items.iter().map(|&i| data.entries[i].label.index()).collect(), items: items.to_vec() })
        })
        .collect()
}
