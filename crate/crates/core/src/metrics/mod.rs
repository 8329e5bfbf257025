//! Pose metrics and workspace analytics.

mod eval;
mod scores;
mod workspace;

pub use eval::{
    analyze_rows, evaluate, round_centers, AnalyticsConfig, BoundaryKind, EvalReport, Evaluation, EvaluationConfig,
    Predictor, RoundAnalysis, TrajRow, WorkspaceTrace,
};
pub use scores::{default_pdj_thresholds, joint_errors, map_at, mpjpe, pdj_curve, JointScores};
pub use workspace::{
    concave_hull, convex_hull, geometry_center, geometry_center_named, jaccard, normalize_trace, point_in_polygon,
    polygon_area, workspace_boundary, Boundary, BoundaryMode, Point, RasterGrid, MIN_JACCARD_RESOLUTION,
};
