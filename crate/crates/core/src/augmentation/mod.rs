//! Multiview batch construction: photometric and spatial augmentation with
//! exact correspondence tracking, RoI estimation and random point sampling.

mod batch;
mod color;
mod roi;

pub use batch::{build_view_batch, point_is_valid, BatchSpec, View, ViewBatch};
pub use color::{color_jitter, hsv_to_rgb, rgb_to_hsv, ColorJitterParams, HsvRanges, NoiseConfig};
pub use roi::{
    estimate_roi, sample_points, RoiMask, RoiSource, SamplingMode, DEFAULT_ROI_THRESHOLD,
};
