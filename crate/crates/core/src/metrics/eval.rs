use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::scores::{default_pdj_thresholds, map_at, mpjpe, pdj_curve, JointScores};
use super::workspace::{
    geometry_center_named, jaccard, normalize_trace, workspace_boundary, Boundary, BoundaryMode, Point,
    MIN_JACCARD_RESOLUTION,
};
use crate::data::{Corpus, CubeConfig, Split};
use crate::geometry::Vec3;
use crate::model::AcrModel;
use crate::{Error, Result};

/// One joint of one frame, the row format of trajectory files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajRow {
    pub subject: usize,
    pub round: usize,
    pub frame: usize,
    pub joint: String,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    Convex,
    Concave,
}

/// `[analytics]` section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyticsConfig {
    /// Boundary used for headline numbers; both are always reported.
    pub boundary: BoundaryKind,
    pub concave_shrink: f64,
    pub jaccard_resolution: usize,
}

impl Default for AnalyticsConfig {
    fn default() -> Self {
        AnalyticsConfig { boundary: BoundaryKind::Convex, concave_shrink: 0.5, jaccard_resolution: MIN_JACCARD_RESOLUTION }
    }
}

impl AnalyticsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.concave_shrink) {
            return Err(Error::config(format!("analytics.concave_shrink must lie in [0, 1], got {}", self.concave_shrink)));
        }
        if self.jaccard_resolution < MIN_JACCARD_RESOLUTION {
            return Err(Error::config(format!(
                "analytics.jaccard_resolution must be at least {MIN_JACCARD_RESOLUTION}, got {}",
                self.jaccard_resolution
            )));
        }
        Ok(())
    }
}

/// `[evaluation]` section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub map_threshold_mm: f64,
    pub pdj_thresholds_mm: Vec<f64>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig { map_threshold_mm: 100.0, pdj_thresholds_mm: default_pdj_thresholds() }
    }
}

impl EvaluationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.map_threshold_mm > 0.0) {
            return Err(Error::config("evaluation.map_threshold_mm must be positive"));
        }
        let t = &self.pdj_thresholds_mm;
        if t.is_empty() || t.iter().any(|v| !(*v >= 0.0)) || t.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::config("evaluation.pdj_thresholds_mm must be non-empty, non-negative and ascending"));
        }
        Ok(())
    }
}

/// Normalized centre trace of one round and its two boundaries.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkspaceTrace {
    pub centers: Vec<Point>,
    pub convex: Boundary,
    pub concave: Boundary,
}

impl WorkspaceTrace {
    pub fn build(centers: &[Point], cfg: &AnalyticsConfig) -> Result<Self> {
        let centers = normalize_trace(centers)?;
        let convex = workspace_boundary(&centers, BoundaryMode::Convex)?;
        let concave = workspace_boundary(&centers, BoundaryMode::Concave { shrink: cfg.concave_shrink })?;
        Ok(WorkspaceTrace { centers, convex, concave })
    }

    pub fn boundary(&self, kind: BoundaryKind) -> &Boundary {
        match kind {
            BoundaryKind::Convex => &self.convex,
            BoundaryKind::Concave => &self.concave,
        }
    }
}

/// Workspace analysis of one (subject, round). Failures are kept per round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundAnalysis {
    pub subject: usize,
    pub round: usize,
    pub frames: usize,
    pub pred: std::result::Result<WorkspaceTrace, String>,
    /// Absent when no reference trajectory was given.
    pub truth: Option<std::result::Result<WorkspaceTrace, String>>,
    /// `(convex, concave)` Jaccard of prediction against truth.
    pub jaccard: Option<std::result::Result<(f64, f64), String>>,
}

impl RoundAnalysis {
    pub fn error(&self) -> Option<String> {
        let mut parts = Vec::new();
        if let Err(e) = &self.pred {
            parts.push(format!("prediction: {e}"));
        }
        if let Some(Err(e)) = &self.truth {
            parts.push(format!("truth: {e}"));
        }
        if let Some(Err(e)) = &self.jaccard {
            if parts.is_empty() {
                parts.push(e.clone());
            }
        }
        (!parts.is_empty()).then(|| parts.join("; "))
    }
}

type RoundKey = (usize, usize);

/// Geometry centres per round, frames in ascending order.
pub fn round_centers(rows: &[TrajRow]) -> Result<BTreeMap<RoundKey, Vec<Point>>> {
    let mut frames: BTreeMap<RoundKey, BTreeMap<usize, (Vec<String>, Vec<Vec3>)>> = BTreeMap::new();
    for r in rows {
        let f = frames.entry((r.subject, r.round)).or_default().entry(r.frame).or_default();
        if f.0.contains(&r.joint) {
            return Err(Error::contract(format!(
                "joint {} repeated in subject {} round {} frame {}",
                r.joint, r.subject, r.round, r.frame
            )));
        }
        f.0.push(r.joint.clone());
        f.1.push([r.x, r.y, r.z]);
    }
    frames
        .into_iter()
        .map(|(key, fs)| {
            let centers = fs.values().map(|(names, coords)| geometry_center_named(names, coords)).collect::<Result<_>>()?;
            Ok((key, centers))
        })
        .collect()
}

/// Per-round workspace areas and, given a reference, Jaccard similarities.
/// Rounds follow the prediction; a round missing from the reference is an
/// error for that round only.
pub fn analyze_rows(pred: &[TrajRow], truth: Option<&[TrajRow]>, cfg: &AnalyticsConfig) -> Result<Vec<RoundAnalysis>> {
    cfg.validate()?;
    let pred_c = round_centers(pred)?;
    let truth_c = truth.map(round_centers).transpose()?;
    let res = cfg.jaccard_resolution;
    Ok(pred_c
        .into_iter()
        .map(|((subject, round), centers)| {
            let pt = WorkspaceTrace::build(&centers, cfg).map_err(|e| e.to_string());
            let tt = truth_c.as_ref().map(|t| match t.get(&(subject, round)) {
                Some(c) => WorkspaceTrace::build(c, cfg).map_err(|e| e.to_string()),
                None => Err("round missing from the reference".to_string()),
            });
            let jaccard = tt.as_ref().map(|tt| match (&pt, tt) {
                (Ok(p), Ok(t)) => {
                    let c = jaccard(&p.convex.vertices, &t.convex.vertices, res);
                    let k = jaccard(&p.concave.vertices, &t.concave.vertices, res);
                    c.and_then(|c| Ok((c, k?))).map_err(|e| e.to_string())
                }
                _ => Err("no Jaccard without both boundaries".to_string()),
            });
            RoundAnalysis { subject, round, frames: centers.len(), pred: pt, truth: tt, jaccard }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub split: Split,
    pub samples: usize,
    pub joints: Vec<String>,
    pub map_threshold_mm: f64,
    /// Percent.
    pub map: JointScores,
    /// Millimetres.
    pub mpjpe: JointScores,
    pub pdj_thresholds_mm: Vec<f64>,
    /// Fractions in `[0, 1]`.
    pub pdj: Vec<f64>,
}

pub struct Evaluation {
    pub report: EvalReport,
    pub pred_rows: Vec<TrajRow>,
    pub truth_rows: Vec<TrajRow>,
    pub rounds: Vec<RoundAnalysis>,
}

pub enum Predictor<'a> {
    Model(&'a AcrModel),
    /// Uses the labels as predictions, for checking the pipeline itself.
    GroundTruth,
}

fn rows_for<'a>(corpus: &'a Corpus, i: usize, joints: &[Vec3]) -> impl Iterator<Item = TrajRow> + 'a {
    let r = &corpus.manifest.records[i];
    corpus.manifest.joints.iter().zip(joints.to_vec()).map(move |(name, p)| TrajRow {
        subject: r.subject,
        round: r.round,
        frame: r.frame,
        joint: name.clone(),
        x: p[0],
        y: p[1],
        z: p[2],
    })
}

/// Scores every sample of a split in world millimetres and analyses the
/// workspace of each (subject, round).
pub fn evaluate(
    predictor: Predictor<'_>,
    corpus: &Corpus,
    split: Split,
    cube_cfg: &CubeConfig,
    eval: &EvaluationConfig,
    analytics: &AnalyticsConfig,
) -> Result<Evaluation> {
    eval.validate()?;
    let indices = corpus.indices(split);
    if indices.is_empty() {
        return Err(Error::config(format!("split {split:?} has no samples")));
    }
    let cube = corpus.cube(cube_cfg)?;
    let mut preds = Vec::with_capacity(indices.len());
    let mut truths = Vec::with_capacity(indices.len());
    let (mut pred_rows, mut truth_rows) = (Vec::new(), Vec::new());
    for &i in &indices {
        let truth = corpus.world_joints(i);
        let pred = match &predictor {
            Predictor::GroundTruth => truth.clone(),
            Predictor::Model(model) => {
                let s = corpus.sample(i, cube_cfg)?;
                let (est, _) = model.predict(&s.views, &cube)?;
                est.joints.iter().map(|p| s.map.to_world(*p)).collect::<Result<_>>()?
            }
        };
        pred_rows.extend(rows_for(corpus, i, &pred));
        truth_rows.extend(rows_for(corpus, i, &truth));
        preds.push(pred);
        truths.push(truth);
    }
    let report = EvalReport {
        split,
        samples: indices.len(),
        joints: corpus.manifest.joints.clone(),
        map_threshold_mm: eval.map_threshold_mm,
        map: map_at(&preds, &truths, eval.map_threshold_mm)?,
        mpjpe: mpjpe(&preds, &truths)?,
        pdj_thresholds_mm: eval.pdj_thresholds_mm.clone(),
        pdj: pdj_curve(&preds, &truths, &eval.pdj_thresholds_mm)?,
    };
    let has_waist = ["LW", "MW", "RW"].iter().all(|n| report.joints.iter().any(|j| j == n));
    let rounds = if has_waist {
        analyze_rows(&pred_rows, Some(&truth_rows), analytics)?
    } else {
        log::warn!("skeleton has no LW/MW/RW joints; skipping workspace analysis");
        Vec::new()
    };
    Ok(Evaluation { report, pred_rows, truth_rows, rounds })
}
