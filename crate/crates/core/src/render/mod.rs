//! Wigner grids to RGBA images, the PNG corpus, and input preprocessing.

mod batch;
mod corpus;

pub use batch::{batch_order, make_batches, ordered_batches, Batch, FileSource, ImageSource, SplitData};
pub use corpus::{
    generate_corpus, image_file_name, read_meta, render_state, CorpusConfig, CorpusManifest, ManifestEntry, Split, COLORMAP_VERSION, MANIFEST_FILE,
    META_FILE,
};

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::nn::{Scalar, Tensor4};
use crate::qstate::{ClassId, QStateError, WignerGrid, WIGNER_BOUND};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("grid contains a non-finite value at index {0}")]
    CorruptGrid(usize),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: PNG encoding failed: {message}")]
    Png { path: PathBuf, message: String },
    #[error("{0} already holds a corpus; pass overwrite to replace it")]
    Exists(PathBuf),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("split `{0}` has no entries")]
    EmptySplit(Split),
    #[error("image: {0}")]
    Image(String),
    #[error(transparent)]
    State(#[from] QStateError),
}

pub type Result<T> = std::result::Result<T, RenderError>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RenderError + '_ {
    move |source| RenderError::Io { path: path.to_path_buf(), source }
}

/// A rendered square RGBA image with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    /// Row-major `side × side × 4` bytes.
    pub pixels: Vec<u8>,
    pub side: usize,
    pub label: ClassId,
    pub n_photon: u32,
    pub extent: f64,
    /// Resolution the Wigner grid was rendered at.
    pub source_resolution: usize,
}

impl ImageRecord {
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 4] {
        let i = (row * self.side + col) * 4;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2], self.pixels[i + 3]]
    }
}

fn round_half_up(x: f64) -> u8 {
    (x + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Diverging blue–white–red color for one Wigner value, on the fixed scale
/// `±2/π`.
pub fn wigner_color(v: f64) -> [u8; 4] {
    let t = (v / WIGNER_BOUND).clamp(-1.0, 1.0);
    if t >= 0.0 {
        let g = round_half_up(255.0 * (1.0 - t));
        [255, g, g, 255]
    } else {
        let g = round_half_up(255.0 * (1.0 + t));
        [g, g, 255, 255]
    }
}

/// Maps every grid value through [`wigner_color`].
pub fn colorize(grid: &WignerGrid, label: ClassId, n_photon: u32) -> Result<ImageRecord> {
    if let Some(i) = grid.values.iter().position(|v| !v.is_finite()) {
        return Err(RenderError::CorruptGrid(i));
    }
    let pixels = grid.values.iter().flat_map(|&v| wigner_color(v)).collect();
    Ok(ImageRecord { pixels, side: grid.resolution, label, n_photon, extent: grid.extent, source_resolution: grid.resolution })
}

/// Bilinear resampling with corner-aligned sample positions
/// (`src = dst · (S−1)/(side−1)`). Rounds half up.
pub fn resize_bilinear(img: &ImageRecord, side: usize) -> ImageRecord {
    assert!(side >= 1, "resize target must be positive");
    if side == img.side {
        return img.clone();
    }
    let src = img.side;
    let scale = if side > 1 { (src - 1) as f64 / (side - 1) as f64 } else { 0.0 };
    let axis: Vec<(usize, usize, f64)> = (0..side)
        .map(|i| {
            let pos = i as f64 * scale;
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect();
    let mut pixels = Vec::with_capacity(side * side * 4);
    for &(y0, y1, fy) in &axis {
        for &(x0, x1, fx) in &axis {
            for ch in 0..4 {
                let at = |y: usize, x: usize| f64::from(img.pixels[(y * src + x) * 4 + ch]);
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                pixels.push(round_half_up(top * (1.0 - fy) + bottom * fy));
            }
        }
    }
    ImageRecord { pixels, side, ..img.clone() }
}

/// Channel-first `(4, side, side)` values `byte / 255`, RGBA order.
pub fn to_input<T: Scalar>(img: &ImageRecord) -> Vec<T> {
    let plane = img.side * img.side;
    let mut out = vec![T::zero(); 4 * plane];
    let scale = T::from_f64(255.0);
    for (p, px) in img.pixels.chunks_exact(4).enumerate() {
        for (ch, &b) in px.iter().enumerate() {
            out[ch * plane + p] = T::from_f64(f64::from(b)) / scale;
        }
    }
    out
}

/// Stacks preprocessed images into a `(batch, 4, side, side)` tensor.
pub fn stack_inputs<T: Scalar>(images: &[ImageRecord]) -> Result<Tensor4<T>> {
    let side = images.first().map_or(0, |i| i.side);
    if images.iter().any(|i| i.side != side) {
        return Err(RenderError::Image("images in a batch differ in size".into()));
    }
    let data: Vec<T> = images.iter().flat_map(to_input::<T>).collect();
    Tensor4::from_vec([images.len(), 4, side, side], data).map_err(|e| RenderError::Image(e.to_string()))
}

/// Encodes raw RGBA bytes as an 8-bit PNG.
pub fn encode_png(pixels: &[u8], width: usize, height: usize, path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, width as u32, height as u32);
        enc.set_color(png::ColorType::Rgba);
        enc.set_depth(png::BitDepth::Eight);
        let png_err = |e: png::EncodingError| RenderError::Png { path: path.to_path_buf(), message: e.to_string() };
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(pixels).map_err(png_err)?;
        writer.finish().map_err(png_err)?;
    }
    Ok(buf)
}

pub fn write_png(pixels: &[u8], width: usize, height: usize, path: &Path) -> Result<()> {
    let bytes = encode_png(pixels, width, height, path)?;
    fs::write(path, bytes).map_err(io_err(path))
}

/// Reads an 8-bit RGBA PNG into `(pixels, width, height)`.
pub fn read_png(path: &Path) -> Result<(Vec<u8>, usize, usize)> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let bad = |m: String| RenderError::Png { path: path.to_path_buf(), message: m };
    let mut reader = decoder.read_info().map_err(|e| bad(e.to_string()))?;
    let size = reader.output_buffer_size().ok_or_else(|| bad("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| bad(e.to_string()))?;
    if info.color_type != png::ColorType::Rgba || info.bit_depth != png::BitDepth::Eight {
        return Err(bad(format!("expected 8-bit RGBA, found {:?}/{:?}", info.color_type, info.bit_depth)));
    }
    buf.truncate(info.buffer_size());
    Ok((buf, info.width as usize, info.height as usize))
}

pub(crate) fn create_writer(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(io_err(path))?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_PI, FRAC_2_PI};

    fn flat(side: usize, px: [u8; 4]) -> ImageRecord {
        ImageRecord {
            pixels: px.iter().copied().cycle().take(side * side * 4).collect(),
            side,
            label: ClassId::Cat2,
            n_photon: 4,
            extent: 6.0,
            source_resolution: side,
        }
    }

    #[test]
    fn colormap_anchor_points() {
        assert_eq!(wigner_color(0.0), [255, 255, 255, 255]);
        assert_eq!(wigner_color(FRAC_2_PI), [255, 0, 0, 255]);
        assert_eq!(wigner_color(-FRAC_2_PI), [0, 0, 255, 255]);
        assert_eq!(wigner_color(-FRAC_1_PI), [128, 128, 255, 255]);
        assert_eq!(wigner_color(5.0), [255, 0, 0, 255]);
    }

    #[test]
    fn colorize_rejects_nan() {
        let grid = WignerGrid { values: vec![0.0, f64::NAN, 0.0, 0.0], extent: 1.0, resolution: 2 };
        assert!(matches!(colorize(&grid, ClassId::Coherent, 1), Err(RenderError::CorruptGrid(1))));
    }

    #[test]
    fn resize_constant_and_identity() {
        let img = flat(64, [10, 200, 30, 255]);
        let small = resize_bilinear(&img, 16);
        assert_eq!(small.side, 16);
        assert!(small.pixels.chunks(4).all(|p| p == [10, 200, 30, 255]));
        assert_eq!(resize_bilinear(&img, 64), img);
    }

    #[test]
    fn checkerboard_center_is_mean_of_corners() {
        let mut img = flat(2, [0, 0, 0, 255]);
        img.pixels = vec![0, 0, 0, 255, 255, 255, 255, 255, 255, 255, 255, 255, 0, 0, 0, 255];
        let up = resize_bilinear(&img, 3);
        // (0 + 255 + 255 + 0) / 4 = 127.5 -> 128
        assert_eq!(up.pixel(1, 1), [128, 128, 128, 255]);
        assert_eq!(up.pixel(0, 0), [0, 0, 0, 255]);
        assert_eq!(up.pixel(0, 2), [255, 255, 255, 255]);
    }

    #[test]
    fn input_scaling() {
        let img = flat(2, [255, 0, 128, 255]);
        let x = to_input::<f64>(&img);
        assert_eq!(x.len(), 16);
        assert_eq!(x[0], 1.0);
        assert_eq!(x[4], 0.0);
        assert_eq!(x[8], 128.0 / 255.0);
        assert_eq!(x[12], 1.0);
        let white = to_input::<f32>(&flat(3, [255; 4]));
        assert!(white.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = flat(5, [1, 2, 3, 255]);
        write_png(&img.pixels, 5, 5, &path).unwrap();
        let (px, w, h) = read_png(&path).unwrap();
        assert_eq!((w, h), (5, 5));
        assert_eq!(px, img.pixels);
    }
}
