use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::Serialize;

use acr_core::metrics::{
    AnalyticsConfig, Boundary, BoundaryKind, EvalReport, Point, RasterGrid, RoundAnalysis, TrajRow, WorkspaceTrace,
};

use crate::failure::{CliResult, Failure, INPUT};

const PLOT_SIZE: usize = 256;

pub fn create_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| Failure::fs(&format!("cannot create {}", dir.display()), e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| Failure::fs(&format!("cannot write {}", path.display()), e))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> CliResult {
    let err = |e: csv::Error| Failure::fs(&format!("cannot write {}", path.display()), e);
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| Failure::fs(&format!("cannot write {}", path.display()), e))
}

/// Trajectory rows; a malformed row is reported with its line number.
pub fn read_trajectory(path: &Path) -> CliResult<Vec<TrajRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Failure::fs(&format!("cannot read {}", path.display()), e))?;
    let mut rows = Vec::new();
    for rec in r.deserialize::<TrajRow>() {
        match rec {
            Ok(row) => rows.push(row),
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                return Err(Failure::new(INPUT, format!("{} line {line}: {e}", path.display())));
            }
        }
    }
    if rows.iter().any(|r| ![r.x, r.y, r.z].iter().all(|v| v.is_finite())) {
        return Err(Failure::new(INPUT, format!("{}: non-finite coordinate", path.display())));
    }
    Ok(rows)
}

#[derive(Serialize)]
struct RoundRow {
    subject: usize,
    round: usize,
    frames: usize,
    pred_convex_area_mm2: Option<f64>,
    pred_concave_area_mm2: Option<f64>,
    truth_convex_area_mm2: Option<f64>,
    truth_concave_area_mm2: Option<f64>,
    jaccard_convex: Option<f64>,
    jaccard_concave: Option<f64>,
    error: String,
}

#[derive(Serialize)]
struct Vertex {
    x: f64,
    y: f64,
}

fn areas(t: Option<&Result<WorkspaceTrace, String>>) -> (Option<f64>, Option<f64>) {
    match t {
        Some(Ok(t)) => (Some(t.convex.area), Some(t.concave.area)),
        _ => (None, None),
    }
}

fn write_boundary(path: &Path, b: &Boundary) -> CliResult {
    write_csv(path, b.vertices.iter().map(|v| Vertex { x: v[0], y: v[1] }))
}

/// Light fill per region: prediction only, reference only, both.
fn render(pred: &[Point], truth: Option<&[Point]>) -> RgbImage {
    let empty: &[Point] = &[];
    let t = truth.unwrap_or(empty);
    let mut grid = RasterGrid::covering(pred, t, PLOT_SIZE);
    for k in 0..2 {
        let pad = 0.05 * (grid.max[k] - grid.min[k]).max(1e-9);
        grid.min[k] -= pad;
        grid.max[k] += pad;
    }
    let cells = grid.rasterize(pred, t);
    let mut img = RgbImage::new(PLOT_SIZE as u32, PLOT_SIZE as u32);
    for (i, (p, q)) in cells.into_iter().enumerate() {
        let (ix, iy) = (i % PLOT_SIZE, i / PLOT_SIZE);
        let c = match (p, q) {
            (true, true) => Rgb([150, 80, 190]),
            (true, false) => Rgb([90, 140, 230]),
            (false, true) => Rgb([230, 110, 100]),
            (false, false) => Rgb([255, 255, 255]),
        };
        // image rows grow downward, y grows upward
        img.put_pixel(ix as u32, (PLOT_SIZE - 1 - iy) as u32, c);
    }
    img
}

/// `rounds.csv`, per-round boundary vertex files and workspace plots.
pub fn write_rounds(dir: &Path, rounds: &[RoundAnalysis], cfg: &AnalyticsConfig) -> CliResult {
    let bdir = dir.join("boundaries");
    let pdir = dir.join("plots");
    create_dir(&bdir)?;
    create_dir(&pdir)?;
    let mut rows = Vec::with_capacity(rounds.len());
    for r in rounds {
        let (pc, pk) = areas(Some(&r.pred));
        let (tc, tk) = areas(r.truth.as_ref());
        let (jc, jk) = match &r.jaccard {
            Some(Ok((c, k))) => (Some(*c), Some(*k)),
            _ => (None, None),
        };
        if let Some(e) = r.error() {
            eprintln!("subject {} round {}: {e}", r.subject, r.round);
        }
        rows.push(RoundRow {
            subject: r.subject,
            round: r.round,
            frames: r.frames,
            pred_convex_area_mm2: pc,
            pred_concave_area_mm2: pk,
            truth_convex_area_mm2: tc,
            truth_concave_area_mm2: tk,
            jaccard_convex: jc,
            jaccard_concave: jk,
            error: r.error().unwrap_or_default(),
        });
        let stem = format!("s{}_r{}", r.subject, r.round);
        let truth = match &r.truth {
            Some(Ok(t)) => Some(t),
            _ => None,
        };
        for (who, trace) in [("pred", r.pred.as_ref().ok()), ("truth", truth)] {
            if let Some(t) = trace {
                write_boundary(&bdir.join(format!("{stem}_{who}_convex.csv")), &t.convex)?;
                write_boundary(&bdir.join(format!("{stem}_{who}_concave.csv")), &t.concave)?;
            }
        }
        if let Ok(p) = &r.pred {
            let img = render(&p.boundary(cfg.boundary).vertices, truth.map(|t| t.boundary(cfg.boundary).vertices.as_slice()));
            let path = pdir.join(format!("{stem}.png"));
            img.save(&path).map_err(|e| Failure::fs(&format!("cannot write {}", path.display()), e))?;
        }
    }
    write_csv(&dir.join("rounds.csv"), rows)
}

fn kind_name(k: BoundaryKind) -> &'static str {
    match k {
        BoundaryKind::Convex => "convex",
        BoundaryKind::Concave => "concave",
    }
}

/// Plain-text digest of the round table.
pub fn rounds_summary(rounds: &[RoundAnalysis], cfg: &AnalyticsConfig) -> String {
    let mut s = format!(
        "boundary: {} (concave shrink {}), Jaccard grid {}\n",
        kind_name(cfg.boundary),
        cfg.concave_shrink,
        cfg.jaccard_resolution
    );
    let pick = |c: f64, k: f64| if cfg.boundary == BoundaryKind::Convex { c } else { k };
    let js: Vec<f64> = rounds.iter().filter_map(|r| r.jaccard.as_ref()?.as_ref().ok().map(|&(c, k)| pick(c, k))).collect();
    let failed = rounds.iter().filter(|r| r.error().is_some()).count();
    s += &format!("rounds: {} ({failed} with errors)\n", rounds.len());
    if !js.is_empty() {
        s += &format!("mean Jaccard: {:.4}\n", js.iter().sum::<f64>() / js.len() as f64);
    }
    for r in rounds {
        let area = r.pred.as_ref().ok().map(|t| t.boundary(cfg.boundary).area);
        let j = r.jaccard.as_ref().and_then(|j| j.as_ref().ok()).map(|&(c, k)| pick(c, k));
        s += &format!(
            "  subject {} round {}: frames {}, area {}, Jaccard {}\n",
            r.subject,
            r.round,
            r.frames,
            area.map_or("-".into(), |a| format!("{a:.0} mm²")),
            j.map_or("-".into(), |j| format!("{j:.4}")),
        );
    }
    s
}

#[derive(Serialize)]
struct JointRow<'a> {
    joint: &'a str,
    map_pct: f64,
    mpjpe_mm: f64,
}

#[derive(Serialize)]
struct PdjRow {
    threshold_mm: f64,
    fraction: f64,
}

/// `report.csv` (per joint plus a `mean` row) and `pdj.csv`.
pub fn write_report(dir: &Path, report: &EvalReport) -> CliResult {
    let mut rows: Vec<JointRow> = report
        .joints
        .iter()
        .enumerate()
        .map(|(j, name)| JointRow { joint: name, map_pct: report.map.per_joint[j], mpjpe_mm: report.mpjpe.per_joint[j] })
        .collect();
    rows.push(JointRow { joint: "mean", map_pct: report.map.mean, mpjpe_mm: report.mpjpe.mean });
    write_csv(&dir.join("report.csv"), rows)?;
    write_csv(
        &dir.join("pdj.csv"),
        report.pdj_thresholds_mm.iter().zip(&report.pdj).map(|(&t, &f)| PdjRow { threshold_mm: t, fraction: f }),
    )
}

pub fn report_summary(report: &EvalReport) -> String {
    let mut s = format!("split: {:?}, samples: {}\n", report.split, report.samples).to_lowercase();
    s += &format!("mAP@{} mm: {:.2} %\n", report.map_threshold_mm, report.map.mean);
    s += &format!("MPJPE: {:.2} mm\n", report.mpjpe.mean);
    for (j, name) in report.joints.iter().enumerate() {
        s += &format!("  {name:>4}: mAP {:6.2} %  MPJPE {:8.2} mm\n", report.map.per_joint[j], report.mpjpe.per_joint[j]);
    }
    s += "PDJ:";
    for (t, f) in report.pdj_thresholds_mm.iter().zip(&report.pdj) {
        s += &format!(" {t}:{f:.3}");
    }
    s.push('\n');
    s
}
