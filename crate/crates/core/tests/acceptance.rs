//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). Criteria listed in
//! `KNOWN_UNATTAINABLE` are reported but do not fail the process; every
//! other failure does. Set `CATWIG_FULL_SCALE=1` to run the multi-hour
//! reference-configuration training (criterion 7).

mod common;
mod gradsuite;

use std::f64::consts::{FRAC_2_PI, PI};
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use catwig::models::{audit_params, build_resnet, ModelKind, RowKind, TableMatch, WidthConfig};
use catwig::qstate::{default_extent, fock_cutoff, make_state, wigner_analytic, wigner_at, wigner_fock_oracle};
use catwig::render::{generate_corpus, read_png, render_state, CorpusConfig, CorpusManifest, Split};
use catwig::rng::SeededRng;
use catwig::trainpipe::{run_training, TrainConfig, LOSS_CSV};
use catwig::ClassId;
use num_complex::Complex64;

// Tolerances and budgets.
const ORACLE_TOL: f64 = 1e-8;
const ORACLE_BUDGET: Duration = Duration::from_secs(30);
const ORACLE_POINTS: usize = 100;
const ORACLE_NS: [u32; 5] = [1, 4, 9, 16, 25];

const BOUND_SLACK: f64 = 1e-9;
const NORM_TOL: f64 = 1e-2;
const NORM_RES: usize = 256;
const SYMMETRY_TOL: f64 = 1e-10;
const ORIGIN_TOL: f64 = 1e-8;

const AUDIT_BUDGET: Duration = Duration::from_secs(1);
const TABLE_CONV: [u64; 8] = [2368, 36864, 73728, 147456, 294912, 589824, 1179648, 2359296];
const TABLE_LINEAR: u64 = 2048;

const GRAD_BUDGET: Duration = Duration::from_secs(60);

const CORPUS_RES: usize = 512;
const CORPUS_SEED: u64 = 0;
const CORPUS_BUDGET: Duration = Duration::from_secs(300);

const DESK_MIN_ACC: f64 = 0.90;
const DESK_LOSS_DROP: f64 = 0.1;
const DESK_BUDGET: Duration = Duration::from_secs(30 * 60);

const FULL_LENET: (f64, f64) = (0.95, 1.0);
const FULL_RESNET_MIN: f64 = 0.9875;

const FRINGE_RES: usize = 512;
const FRINGE_RATIO: f64 = 0.25;

const KNOWN_UNATTAINABLE: [u32; 1] = [8];

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn oracle_equivalence() -> Verdict {
    let start = Instant::now();
    let mut rng = SeededRng::new(2024);
    let mut worst = 0.0f64;
    for class in ClassId::ALL {
        for n in ORACLE_NS {
            let state = make_state(class, n).unwrap();
            let radius = f64::from(n).sqrt() + 3.0;
            for _ in 0..ORACLE_POINTS {
                // uniform over the disc
                let beta = Complex64::from_polar(radius * rng.next_f64().sqrt(), rng.uniform(0.0, 2.0 * PI));
                let a = wigner_at(&state, beta).unwrap();
                let b = wigner_fock_oracle(&state, beta, fock_cutoff(&state, beta)).unwrap();
                worst = worst.max((a - b).abs());
            }
        }
    }
    let t = start.elapsed();
    verdict(worst < ORACLE_TOL && t < ORACLE_BUDGET, format!("max |analytic - fock| = {worst:.2e} over {} points, {t:.1?}", 4 * ORACLE_NS.len() * ORACLE_POINTS))
}

fn physics_suite() -> Verdict {
    let mut rng = SeededRng::new(7);
    let (mut bound, mut norm_err, mut sym, mut origin) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for class in ClassId::ALL {
        for n in [1, 4, 9, 16, 25, 56, 100] {
            let state = make_state(class, n).unwrap();
            let grid = wigner_analytic(&state, default_extent(n), NORM_RES).unwrap();
            bound = grid.values.iter().fold(bound, |m, v| m.max(v.abs()));
            norm_err = norm_err.max((grid.integral() - 1.0).abs());
            let turn = Complex64::from_polar(1.0, 2.0 * PI / class.components() as f64);
            for _ in 0..50 {
                let beta = Complex64::new(rng.uniform(-6.0, 6.0), rng.uniform(-6.0, 6.0));
                let w = wigner_at(&state, beta).unwrap();
                bound = bound.max(w.abs());
                if class != ClassId::Coherent {
                    sym = sym.max((w - wigner_at(&state, beta * turn).unwrap()).abs());
                }
            }
            if matches!(class, ClassId::Cat2 | ClassId::Cat4) {
                origin = origin.max((wigner_at(&state, Complex64::new(0.0, 0.0)).unwrap() - FRAC_2_PI).abs());
            }
        }
    }
    let ok = bound <= FRAC_2_PI + BOUND_SLACK && norm_err < NORM_TOL && sym < SYMMETRY_TOL && origin < ORIGIN_TOL;
    verdict(ok, format!("max |W| = {bound:.12}, max |norm - 1| = {norm_err:.2e}, rotation {sym:.1e}, even-cat W(0) off by {origin:.1e}"))
}

fn parameter_audit() -> Verdict {
    let start = Instant::now();
    let model = build_resnet::<f32>(WidthConfig { side: 128, width_mult: 1.0 }, &mut SeededRng::new(0)).unwrap();
    let report = audit_params(&model).unwrap();
    let t = start.elapsed();
    let conv: Vec<u64> = report.rows.iter().filter(|r| r.kind == RowKind::Conv).map(|r| r.params as u64).collect();
    let mut distinct = conv.clone();
    distinct.dedup();
    let convs_exact = report.rows.iter().filter(|r| r.kind == RowKind::Conv).all(|r| r.table_match == TableMatch::Yes)
        && distinct == TABLE_CONV
        && conv.len() == 17;
    let linear = report.rows.iter().find(|r| r.kind == RowKind::Linear);
    let linear_ok = linear.is_some_and(|r| r.params as u64 == TABLE_LINEAR && r.shape == [1, 1, 4]);
    let proj = report.rows.iter().filter(|r| matches!(r.kind, RowKind::Projection | RowKind::ProjectionBn)).collect::<Vec<_>>();
    let proj_ok = proj.len() == 6 && proj.iter().all(|r| r.table_match == TableMatch::AbsentFromTable);
    let bn_ok = report.rows.iter().filter(|r| r.kind == RowKind::BatchNorm).all(|r| r.params == 2 * r.table_convention && r.table_match == TableMatch::Yes);
    let pool_ok = report.rows.iter().any(|r| r.kind == RowKind::Pool && r.params == 0 && r.table_match == TableMatch::Erratum);
    let ok = convs_exact && linear_ok && proj_ok && bn_ok && pool_ok && report.mismatches().is_empty() && t < AUDIT_BUDGET;
    verdict(
        ok,
        format!(
            "conv rows {}, linear {}, projections flagged {}, BN convention {}, pool erratum {}, {t:.1?}",
            if convs_exact { "exact" } else { "differ" },
            linear.map_or(0, |r| r.params),
            proj.len(),
            if bn_ok { "ok" } else { "off" },
            if pool_ok { "flagged" } else { "missing" }
        ),
    )
}

fn gradient_checks() -> Verdict {
    let start = Instant::now();
    let (mut checked, mut worst) = (0, 0.0f64);
    for (name, suite) in gradsuite::ALL {
        match suite() {
            Ok((c, w)) => {
                checked += c;
                worst = worst.max(w);
            }
            Err(e) => return Verdict::Fail(format!("{name}: {e}")),
        }
    }
    let t = start.elapsed();
    verdict(t < GRAD_BUDGET, format!("{checked} entries over {} seeds, max rel err {worst:.2e} (limit {:.0e}), {t:.1?}", gradsuite::SEEDS.len(), common::MAX_REL_ERR))
}

fn corpus_determinism(a: &Path, b: &Path) -> Verdict {
    let cfg = CorpusConfig { resolution: CORPUS_RES, seed: CORPUS_SEED, ..CorpusConfig::default() };
    let start = Instant::now();
    let ma = generate_corpus(a, &cfg).unwrap();
    let t = start.elapsed();
    generate_corpus(b, &cfg).unwrap();
    let manifest_same = fs::read(a.join("manifest.csv")).unwrap() == fs::read(b.join("manifest.csv")).unwrap();
    let pixels_same = ma.entries.iter().all(|e| read_png(&a.join(&e.path)).unwrap() == read_png(&b.join(&e.path)).unwrap());
    let counts = ma.entries.len() == 400 && ma.class_counts() == [100; 4] && ma.count(Split::Train) == 320 && ma.count(Split::Test) == 80;
    let reloaded = CorpusManifest::load(a).unwrap() == ma;
    verdict(
        manifest_same && pixels_same && counts && reloaded && t < CORPUS_BUDGET,
        format!(
            "manifest identical {manifest_same}, pixels identical {pixels_same}, {} images {:?}/class, {}/{} split, one pass {t:.1?}",
            ma.entries.len(),
            ma.class_counts(),
            ma.count(Split::Train),
            ma.count(Split::Test)
        ),
    )
}

struct RunSummary {
    accuracy: f64,
    first: f64,
    last: f64,
    csv_rows: usize,
}

fn train_run(cfg: &TrainConfig, corpus: &Path, run: &Path) -> RunSummary {
    let record = run_training(cfg, corpus, run, false, &mut |_, _| {}).unwrap();
    let csv = fs::read_to_string(run.join(LOSS_CSV)).unwrap();
    RunSummary {
        accuracy: record.evaluation.as_ref().unwrap().accuracy(),
        first: record.epoch_losses[0],
        last: *record.epoch_losses.last().unwrap(),
        csv_rows: csv.lines().skip(1).count(),
    }
}

fn desk_scale(corpus: &Path, runs: &Path) -> Verdict {
    let start = Instant::now();
    let resnet_cfg = TrainConfig::desk_scale(ModelKind::ResNet);
    let resnet = train_run(&resnet_cfg, corpus, &runs.join("desk_resnet"));
    let lenet = train_run(&TrainConfig::desk_scale(ModelKind::LeNet), corpus, &runs.join("desk_lenet"));
    let t = start.elapsed();
    let ok = resnet.accuracy >= DESK_MIN_ACC
        && resnet.accuracy >= lenet.accuracy
        && resnet.last < DESK_LOSS_DROP * resnet.first
        && resnet.csv_rows == resnet_cfg.epochs
        && t < DESK_BUDGET;
    verdict(
        ok,
        format!(
            "resnet acc {:.4}, lenet acc {:.4}, resnet loss {:.4} -> {:.2e}, csv rows {}, {t:.0?}",
            resnet.accuracy, lenet.accuracy, resnet.first, resnet.last, resnet.csv_rows
        ),
    )
}

fn full_scale(corpus: &Path, runs: &Path) -> Verdict {
    if std::env::var("CATWIG_FULL_SCALE").as_deref() != Ok("1") {
        return Verdict::Skip("set CATWIG_FULL_SCALE=1 to run (multi-hour CPU)".into());
    }
    let lenet = train_run(&TrainConfig { model: ModelKind::LeNet, ..TrainConfig::default() }, corpus, &runs.join("full_lenet"));
    let resnet = train_run(&TrainConfig::default(), corpus, &runs.join("full_resnet"));
    let ok = (FULL_LENET.0..=FULL_LENET.1).contains(&lenet.accuracy) && resnet.accuracy >= FULL_RESNET_MIN;
    verdict(ok, format!("lenet acc {:.4}, resnet acc {:.4}", lenet.accuracy, resnet.accuracy))
}

/// Peak-to-peak of the signed color intensity `(R − B) / 255` down the
/// central column, which bisects the two lobes of a cat-2 state.
fn fringe_contrast(n: u32) -> f64 {
    let img = render_state(ClassId::Cat2, n, FRINGE_RES, None).unwrap();
    let col = img.side / 2;
    let signed: Vec<f64> = (0..img.side)
        .map(|row| {
            let [r, _, b, _] = img.pixel(row, col);
            (f64::from(r) - f64::from(b)) / 255.0
        })
        .collect();
    let hi = signed.iter().copied().fold(f64::MIN, f64::max);
    let lo = signed.iter().copied().fold(f64::MAX, f64::min);
    hi - lo
}

fn fringe_washout() -> Verdict {
    let low = fringe_contrast(4);
    let high = fringe_contrast(56);
    let ratio = high / low;
    verdict(ratio < FRINGE_RATIO, format!("contrast n=4 {low:.3}, n=56 {high:.3}, ratio {ratio:.3} (limit {FRINGE_RATIO})"))
}

fn main() {
    let work = tempfile::tempdir().unwrap();
    let (corpus_a, corpus_b, runs) = (work.path().join("corpus_a"), work.path().join("corpus_b"), work.path().join("runs"));

    let mut unexpected = Vec::new();
    let mut report = |id: u32, name: &str, v: Verdict| {
        let known = KNOWN_UNATTAINABLE.contains(&id);
        let line = match &v {
            Verdict::Pass(d) if known => format!("PASS (unexpected, listed unattainable) {d}"),
            Verdict::Pass(d) => format!("PASS {d}"),
            Verdict::Fail(d) if known => format!("FAIL (known unattainable) {d}"),
            Verdict::Fail(d) => format!("FAIL {d}"),
            Verdict::Skip(d) => format!("SKIP {d}"),
        };
        println!("criterion {id} [{name}]: {line}");
        if matches!(v, Verdict::Fail(_)) && !known {
            unexpected.push(id);
        }
    };

    report(1, "wigner oracle equivalence", oracle_equivalence());
    report(2, "wigner physics", physics_suite());
    report(3, "parameter audit", parameter_audit());
    report(4, "gradient checks", gradient_checks());
    report(5, "corpus determinism", corpus_determinism(&corpus_a, &corpus_b));
    report(6, "desk-scale training", desk_scale(&corpus_a, &runs));
    report(7, "full-scale reproduction", full_scale(&corpus_a, &runs));
    report(8, "fringe washout", fringe_washout());

    if !unexpected.is_empty() {
        println!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
