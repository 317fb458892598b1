//! Planar transforms, point and image warping, and robust homography fitting.

mod ransac;
mod transform;

pub use ransac::{
    estimate_homography_ransac, fit_homography_dlt, reprojection_error, sample_is_degenerate,
    Correspondence, RansacConfig, RansacFailure, RansacOutcome,
};
pub use transform::{
    sample_affine, sample_affine_params, warp_image, warp_mask, warp_points, AffineParams,
    AffineRanges, AffineTransform, Homography, Interpolation, ParamRange, PlanarTransform, Point,
    PointSet, WarpedPoints,
};
