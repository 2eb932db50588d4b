use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::raster::{text_width, Canvas, BLACK, BLUE, GRAY, PALETTE, RED, WHITE};
use super::{io_err, Evaluation, Prediction, Result, RunRecord, TrainError};
use crate::render::{write_png, CorpusManifest, ImageSource};

/// One named loss curve.
#[derive(Debug, Clone, Copy)]
pub struct CurveSeries<'a> {
    pub name: &'a str,
    pub losses: &'a [f64],
}

pub fn write_loss_csv(record: &RunRecord, path: &Path) -> Result<()> {
    if record.epoch_losses.is_empty() {
        return Err(TrainError::Empty("run record has no epochs"));
    }
    let mut s = String::from("epoch,loss\n");
    for (i, l) in record.epoch_losses.iter().enumerate() {
        let _ = writeln!(s, "{},{l}", i + 1);
    }
    fs::write(path, s).map_err(io_err(path))
}

/// Writes `<name>_loss.csv` per record (or `loss.csv` for a single one) and
/// a combined `loss.png`.
pub fn export_curves(records: &[(&str, &RunRecord)], out_dir: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(TrainError::Empty("no run records"));
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    for (name, rec) in records {
        let file = if records.len() == 1 { "loss.csv".to_string() } else { format!("{name}_loss.csv") };
        write_loss_csv(rec, &out_dir.join(file))?;
    }
    let series: Vec<CurveSeries> = records.iter().map(|(name, r)| CurveSeries { name, losses: &r.epoch_losses }).collect();
    let canvas = plot_curves(&series)?;
    write_png(&canvas.pixels, canvas.width, canvas.height, &out_dir.join("loss.png"))?;
    Ok(())
}

const PLOT_W: usize = 640;
const PLOT_H: usize = 420;
const LEFT: i64 = 80;
const RIGHT: i64 = 20;
const TOP: i64 = 36;
const BOTTOM: i64 = 56;
const Y_TICKS: usize = 5;

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 0.01 && v.abs() < 1000.0 {
        format!("{v:.3}")
    } else {
        format!("{v:.1e}")
    }
}

/// Line plot of loss against epoch, one colored series per entry, with
/// labeled axes and a legend.
pub fn plot_curves(series: &[CurveSeries]) -> Result<Canvas> {
    if series.is_empty() || series.iter().any(|s| s.losses.is_empty()) {
        return Err(TrainError::Empty("loss curve without points"));
    }
    if series.iter().flat_map(|s| s.losses).any(|v| !v.is_finite()) {
        return Err(TrainError::Config("loss curve contains non-finite values".into()));
    }
    let epochs = series.iter().map(|s| s.losses.len()).max().unwrap_or(1);
    let y_max = series.iter().flat_map(|s| s.losses).copied().fold(0.0f64, f64::max).max(1e-12) * 1.05;
    let y_min = series.iter().flat_map(|s| s.losses).copied().fold(0.0f64, f64::min);

    let mut c = Canvas::new(PLOT_W, PLOT_H, WHITE);
    let (x0, x1) = (LEFT, PLOT_W as i64 - RIGHT);
    let (y0, y1) = (PLOT_H as i64 - BOTTOM, TOP);
    let px = |epoch: usize| -> i64 {
        if epochs == 1 {
            (x0 + x1) / 2
        } else {
            x0 + ((epoch - 1) as f64 / (epochs - 1) as f64 * (x1 - x0) as f64).round() as i64
        }
    };
    let py = |v: f64| -> i64 { y0 - ((v - y_min) / (y_max - y_min) * (y0 - y1) as f64).round() as i64 };

    for k in 0..=Y_TICKS {
        let v = y_min + (y_max - y_min) * k as f64 / Y_TICKS as f64;
        let y = py(v);
        c.line((x0, y), (x1, y), GRAY, 1);
        let label = tick_label(v);
        c.text(x0 - 6 - text_width(&label, 1), y - 4, &label, BLACK, 1);
    }
    let x_ticks = epochs.min(10);
    for k in 0..x_ticks {
        let epoch = if x_ticks == 1 { 1 } else { 1 + k * (epochs - 1) / (x_ticks - 1) };
        let x = px(epoch);
        c.line((x, y0), (x, y0 + 4), BLACK, 1);
        let label = epoch.to_string();
        c.text(x - text_width(&label, 1) / 2, y0 + 8, &label, BLACK, 1);
    }
    c.line((x0, y0), (x1, y0), BLACK, 2);
    c.line((x0, y0), (x0, y1), BLACK, 2);
    c.text((x0 + x1) / 2 - text_width("epoch", 2) / 2, PLOT_H as i64 - 24, "epoch", BLACK, 2);
    c.text(8, 8, "loss", BLACK, 2);

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(i64, i64)> = s.losses.iter().enumerate().map(|(e, &v)| (px(e + 1), py(v))).collect();
        for w in pts.windows(2) {
            c.line(w[0], w[1], color, 2);
        }
        if pts.len() == 1 {
            c.fill_rect(pts[0].0 - 2, pts[0].1 - 2, 5, 5, color);
        }
        let ly = TOP + 6 + i as i64 * 14;
        let lx = x1 - 10 - text_width(s.name, 1) - 24;
        c.line((lx, ly + 4), (lx + 16, ly + 4), color, 3);
        c.text(lx + 22, ly, s.name, BLACK, 1);
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy)]
pub struct GalleryOptions {
    /// Also write correctly classified samples (blue captions).
    pub include_correct: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GallerySummary {
    pub mispredicted: usize,
    pub total: usize,
    pub written: usize,
}

fn annotate(pixels: &[u8], side: usize, p: &Prediction) -> Canvas {
    let scale = if side >= 256 { 2 } else { 1 };
    let line_h = 10 * scale;
    let width = side.max(text_width("pred: coherent", scale) as usize + 8);
    let mut c = Canvas::new(width, side + 2 * line_h as usize + 8, WHITE);
    c.blit(0, 0, pixels, side);
    let color = if p.is_correct() { BLUE } else { RED };
    let y = side as i64 + 4;
    c.text(4, y, &format!("true: {}", p.truth), color, scale);
    c.text(4, y + line_h, &format!("pred: {}", p.predicted), color, scale);
    c
}

/// Writes each misclassified sample as a captioned PNG (red text), plus
/// `index.txt` listing them. Correct samples get blue captions when
/// requested. Captioned images use the corpus images at native resolution.
pub fn export_mispredictions(
    eval: &Evaluation,
    manifest: &CorpusManifest,
    source: &dyn ImageSource,
    out_dir: &Path,
    opts: GalleryOptions,
) -> Result<GallerySummary> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let wrong = eval.mispredictions().count();
    let mut index = format!("mispredictions: {wrong} of {}\nfile,source,true,predicted,confidence\n", eval.total);
    let mut written = 0;
    for p in eval.predictions.iter().filter(|p| opts.include_correct || !p.is_correct()) {
        let entry = manifest.entries.get(p.index).ok_or_else(|| TrainError::Mismatch(format!("prediction for missing manifest row {}", p.index)))?;
        let img = source.load(entry)?;
        let canvas = annotate(&img.pixels, img.side, p);
        let tag = if p.is_correct() { "ok" } else { "wrong" };
        let stem = entry.path.trim_end_matches(".png");
        let file = format!("{tag}_{stem}_as_{}.png", p.predicted);
        write_png(&canvas.pixels, canvas.width, canvas.height, &out_dir.join(&file))?;
        let conf = p.probabilities[p.predicted.index()];
        let _ = writeln!(index, "{file},{},{},{},{conf:.6}", entry.path, p.truth, p.predicted);
        written += 1;
    }
    let ipath = out_dir.join("index.txt");
    fs::write(&ipath, index).map_err(io_err(&ipath))?;
    Ok(GallerySummary { mispredicted: wrong, total: eval.total, written })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::ClassId;

    fn record(losses: Vec<f64>) -> RunRecord {
        RunRecord { model: crate::models::ModelKind::LeNet, epoch_losses: losses, batch_losses: vec![], evaluation: None, wall_time_s: 0.0 }
    }

    #[test]
    fn csv_rows_match_epochs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        write_loss_csv(&record((0..100).map(|i| 1.0 / (i + 1) as f64).collect()), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 101);
        assert_eq!(text.lines().next(), Some("epoch,loss"));
        assert!(write_loss_csv(&record(vec![]), &path).is_err());
        assert!(export_curves(&[], dir.path()).is_err());
    }

    #[test]
    fn overlay_draws_each_series_color() {
        let a = [1.0, 0.5, 0.2];
        let b = [1.2, 1.1, 0.9];
        let c = plot_curves(&[CurveSeries { name: "lenet", losses: &a }, CurveSeries { name: "resnet", losses: &b }]).unwrap();
        for color in &PALETTE[..2] {
            assert!(c.pixels.chunks(4).filter(|p| p == color).count() > 50);
        }
        assert_eq!(c.pixels.chunks(4).filter(|p| *p == PALETTE[2]).count(), 0);
    }

    #[test]
    fn caption_color_follows_correctness() {
        let p = |pred| Prediction { index: 0, path: "x.png".into(), truth: ClassId::Cat2, predicted: pred, probabilities: [0.25; 4] };
        let img = vec![255u8; 32 * 32 * 4];
        let wrong = annotate(&img, 32, &p(ClassId::Cat3));
        let right = annotate(&img, 32, &p(ClassId::Cat2));
        let count = |c: &Canvas, col| c.pixels.chunks(4).filter(|x| *x == col).count();
        assert!(count(&wrong, RED) > 0 && count(&wrong, BLUE) == 0);
        assert!(count(&right, BLUE) > 0 && count(&right, RED) == 0);
    }
}
