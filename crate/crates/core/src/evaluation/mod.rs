//! Registration accuracy, overlap and structural metrics, synthetic
//! evaluation pairs and report aggregation.

mod aggregate;
mod keypoints;
mod overlap;
mod pairs;
pub mod plot;
mod run;
mod score;
mod structural;

pub use aggregate::{
    aggregate, aggregate_default, metric_bundle, AggregateReport, CategoryScore, MaskSource,
    MetricBundle, MetricMeans, PairEvaluation, PairImages, EVALUATION_SCHEMA,
};
pub use keypoints::{
    distance_stats, keypoint_distance_stats, keypoint_distance_sweep, KeypointDistanceStats,
    SweepPoint,
};
pub use overlap::{mask_overlap, overlap_metrics, OverlapMetrics};
pub use pairs::{
    make_synthetic_pair, make_synthetic_triplet, PairMode, SyntheticPair, SyntheticPairConfig,
    DEFAULT_CONTROL_POINTS,
};
pub use run::evaluate_synthetic_pair;
pub use score::{
    auc, control_point_error, registration_score, success_curve, ControlPointPair, PairScore,
    DEFAULT_MAX_THRESHOLD,
};
pub use structural::{
    structural_in_mask, structural_metrics, StructuralMetrics, SSIM_SIGMA, SSIM_WINDOW,
};
