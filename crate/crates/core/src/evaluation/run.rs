use super::{
    keypoint_distance_sweep, metric_bundle, MaskSource, PairEvaluation, PairImages, SyntheticPair,
};
use crate::error::Result;
use crate::nn::DescriptorNet;
use crate::registration::{register_pair, KeypointSource, RegisterConfig, RegistrationOutput};

/// Registers a synthetic pair and scores it against its known transform.
/// RoI masks stand in for vessel masks.
pub fn evaluate_synthetic_pair(
    name: impl Into<String>,
    pair: &SyntheticPair,
    descriptor: &DescriptorNet,
    source: KeypointSource<'_>,
    config: &RegisterConfig,
    sweep: &[f64],
    ransac_seed: u64,
) -> Result<(PairEvaluation, RegistrationOutput)> {
    let out = register_pair(
        &pair.fixed,
        &pair.moving,
        (Some(&pair.fixed_roi), Some(&pair.moving_roi)),
        descriptor,
        source,
        config,
        ransac_seed,
    )?;
    let keypoint_distance = if out.matches.is_empty() {
        None
    } else {
        Some(keypoint_distance_sweep(
            &out.matches,
            &pair.true_transform,
            sweep,
        )?)
    };
    let metrics = match (&out.result.homography, out.result.success) {
        (Some(h), true) => {
            let images = PairImages {
                fixed: &pair.fixed,
                moving: &pair.moving,
                masks: (&pair.fixed_roi, &pair.moving_roi),
                rois: (&pair.fixed_roi, &pair.moving_roi),
            };
            Some(metric_bundle(h, &images, Some(&pair.control_points))?)
        }
        _ => None,
    };
    let control_error_px = Some(
        metrics
            .as_ref()
            .and_then(|m| m.mean_control_error_px)
            .unwrap_or(f64::INFINITY),
    );
    let eval = PairEvaluation {
        name: name.into(),
        category: Some(pair.mode.to_string()),
        mask_source: MaskSource::Roi,
        result: out.result.clone(),
        metrics,
        control_error_px,
        keypoint_distance,
        error: None,
    };
    Ok((eval, out))
}
