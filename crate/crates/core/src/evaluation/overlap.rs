use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{warp_mask, PlanarTransform};
use crate::raster::Mask;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OverlapMetrics {
    pub iou: f64,
    pub dice: f64,
    pub iom: f64,
}

/// Warps `mask_moving` into the fixed frame (nearest) and compares it with
/// `mask_fixed`.
pub fn overlap_metrics<T: PlanarTransform + ?Sized>(
    mask_fixed: &Mask,
    mask_moving: &Mask,
    h: &T,
) -> Result<OverlapMetrics> {
    let warped = warp_mask(h, mask_moving, mask_fixed.size())?;
    Ok(mask_overlap(mask_fixed, &warped))
}

/// Overlap of two masks already in the same frame. Sizes must agree.
pub fn mask_overlap(a: &Mask, b: &Mask) -> OverlapMetrics {
    assert_eq!(a.size(), b.size(), "mask sizes differ");
    let (na, nb) = (a.count(), b.count());
    if na == 0 || nb == 0 {
        log::warn!("overlap metrics on an empty mask ({na} vs {nb} pixels); reporting 0");
        return OverlapMetrics::default();
    }
    let inter = a
        .data()
        .iter()
        .zip(b.data())
        .filter(|(x, y)| **x && **y)
        .count();
    if inter == 0 {
        return OverlapMetrics::default();
    }
    let i = inter as f64;
    let union = (na + nb - inter) as f64;
    OverlapMetrics {
        iou: i / union,
        dice: 2.0 * i / (na + nb) as f64,
        iom: i / na.min(nb) as f64,
    }
}
