//! Describe-to-detect: target maps from a frozen descriptor, heatmap
//! regression, map combination and keypoint selection.

mod heatmap;
mod select;
mod targets;
mod train;

pub use heatmap::{Heatmap, HeatmapKind, HeatmapMeta, Polarity, TargetKind};
pub use select::{
    combine_maps, d2_detect, d2_scores, nms_select, KeypointBudget, KeypointCandidates,
    DEFAULT_NMS_WINDOW,
};
pub use targets::{ap_map, ap_map_from_output, describe_views, ss_map, ss_map_from_fields};
pub use train::{
    detector_checkpoint_name, make_target, masked_mse, predict_heatmap, train_detector,
    train_detector_with, Detector, DetectorTrainConfig, DetectorTraining, DETECTOR_LOG,
};
