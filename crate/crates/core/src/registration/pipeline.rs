use serde::{Deserialize, Serialize};

use super::matching::{match_descriptors, select_top_matches, MatchSet};
use crate::augmentation::{estimate_roi, RoiMask, DEFAULT_ROI_THRESHOLD};
use crate::descriptor::{describe, sample_descriptors, DescriptorField};
use crate::detector::{
    combine_maps, d2_detect, nms_select, predict_heatmap, Detector, KeypointBudget,
    KeypointCandidates, DEFAULT_NMS_WINDOW,
};
use crate::error::{Error, Result};
use crate::geometry::{estimate_homography_ransac, Correspondence, Homography, RansacConfig};
use crate::nn::DescriptorNet;
use crate::raster::{Image, Mask};

pub const INFERENCE_SIZE: usize = 565;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegisterConfig {
    /// Both images are resized to this square side before detection.
    pub inference_size: usize,
    pub keypoints: KeypointBudget,
    /// Keep only the closest `m` matches.
    pub top_matches: Option<usize>,
    pub nms_window: usize,
    /// Lowe ratio test; off by default.
    pub ratio: Option<f64>,
    pub roi_threshold: f64,
    pub ransac: RansacConfig,
}

impl Default for RegisterConfig {
    fn default() -> Self {
        Self {
            inference_size: INFERENCE_SIZE,
            keypoints: KeypointBudget::Top(500),
            top_matches: None,
            nms_window: DEFAULT_NMS_WINDOW,
            ratio: None,
            roi_threshold: DEFAULT_ROI_THRESHOLD,
            ransac: RansacConfig::default(),
        }
    }
}

impl RegisterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inference_size < 8 {
            return Err(Error::Config("inference_size must be at least 8".into()));
        }
        if self.nms_window % 2 == 0 {
            return Err(Error::Config("nms_window must be odd".into()));
        }
        if self.keypoints == KeypointBudget::Top(0) || self.top_matches == Some(0) {
            return Err(Error::Config(
                "keypoint and match counts must be at least 1".into(),
            ));
        }
        if let Some(r) = self.ratio {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::Config("ratio must lie in (0, 1]".into()));
            }
        }
        self.ransac.validate()
    }
}

/// Where keypoints come from.
#[derive(Clone, Copy, Debug)]
pub enum KeypointSource<'a> {
    /// One trained detector (AP or SS).
    Heatmap(&'a Detector),
    /// Both detectors, combined at inference.
    Combined { ap: &'a Detector, ss: &'a Detector },
    /// D2-style score on the descriptor field.
    D2,
}

impl KeypointSource<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            KeypointSource::Heatmap(d) => match d.target {
                crate::detector::TargetKind::Ap => "ap",
                crate::detector::TargetKind::Ss => "ss",
            },
            KeypointSource::Combined { .. } => "combined",
            KeypointSource::D2 => "d2",
        }
    }
}

/// Outcome of one pair. The homography maps moving into fixed coordinates
/// at source resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub success: bool,
    pub homography: Option<Homography>,
    pub inlier_count: usize,
    pub matches_used: usize,
    /// `(fixed, moving)`.
    pub keypoints_detected: (usize, usize),
    pub failure: Option<String>,
}

impl RegistrationResult {
    fn failed(reason: impl Into<String>, keypoints: (usize, usize), matches: usize) -> Self {
        Self {
            success: false,
            homography: None,
            inlier_count: 0,
            matches_used: matches,
            keypoints_detected: keypoints,
            failure: Some(reason.into()),
        }
    }
}

/// Everything produced on the way to a [`RegistrationResult`].
#[derive(Clone, Debug)]
pub struct RegistrationOutput {
    pub result: RegistrationResult,
    /// `a` = fixed, `b` = moving, at source resolution.
    pub matches: MatchSet,
    /// Indices into `matches.pairs`.
    pub inliers: Vec<usize>,
    pub keypoints_fixed: KeypointCandidates,
    pub keypoints_moving: KeypointCandidates,
}

/// Per-image detection at inference resolution.
pub struct Detection {
    pub keypoints: KeypointCandidates,
    pub descriptors: Vec<Vec<f32>>,
    pub field: DescriptorField,
    pub roi: Option<RoiMask>,
}

/// Resizes, estimates (or resizes) the RoI, describes and detects.
pub fn detect_and_describe(
    image: &Image,
    roi: Option<&Mask>,
    descriptor: &DescriptorNet,
    source: KeypointSource<'_>,
    config: &RegisterConfig,
) -> Result<Detection> {
    let s = config.inference_size;
    let small = image.to_rgb().resize(s, s);
    let roi = match roi {
        Some(m) => RoiMask::loaded(m.resize(s, s)).ok(),
        None => estimate_roi(&small, config.roi_threshold).ok(),
    };
    let field = describe(descriptor, &small)?;
    let Some(roi_mask) = roi.as_ref() else {
        let empty = KeypointCandidates {
            points: crate::geometry::PointSet::from_coords(Vec::new()),
            scores: Vec::new(),
            polarity: crate::detector::Polarity::HigherIsBetter,
        };
        return Ok(Detection {
            keypoints: empty,
            descriptors: Vec::new(),
            field,
            roi: None,
        });
    };
    let keypoints = match source {
        KeypointSource::Heatmap(det) => {
            let map = predict_heatmap(det, &small, roi_mask)?;
            nms_select(&map, config.keypoints, config.nms_window)?
        }
        KeypointSource::Combined { ap, ss } => {
            let a = predict_heatmap(ap, &small, roi_mask)?;
            let b = predict_heatmap(ss, &small, roi_mask)?;
            nms_select(&combine_maps(&a, &b)?, config.keypoints, config.nms_window)?
        }
        KeypointSource::D2 => d2_detect(
            &field,
            config.keypoints,
            config.nms_window,
            Some(&roi_mask.mask),
        )?,
    };
    let descriptors = sample_descriptors(&field, &keypoints.points)?;
    Ok(Detection {
        keypoints,
        descriptors,
        field,
        roi,
    })
}

/// Detect, describe, match and fit a homography from `moving` to `fixed`.
/// RANSAC runs on keypoints rescaled to each image's source resolution.
#[allow(clippy::too_many_arguments)]
pub fn register_pair(
    fixed: &Image,
    moving: &Image,
    masks: (Option<&Mask>, Option<&Mask>),
    descriptor: &DescriptorNet,
    source: KeypointSource<'_>,
    config: &RegisterConfig,
    ransac_seed: u64,
) -> Result<RegistrationOutput> {
    config.validate()?;
    let df = detect_and_describe(fixed, masks.0, descriptor, source, config)?;
    let dm = detect_and_describe(moving, masks.1, descriptor, source, config)?;
    let counts = (df.keypoints.len(), dm.keypoints.len());

    let s = config.inference_size as f64;
    let scale_f = (fixed.width() as f64 / s, fixed.height() as f64 / s);
    let scale_m = (moving.width() as f64 / s, moving.height() as f64 / s);
    let pairs = match_descriptors(&df.descriptors, &dm.descriptors, config.ratio)?;
    let mut matches = MatchSet::new(
        pairs,
        df.keypoints.points.clone(),
        dm.keypoints.points.clone(),
    )?;
    if let Some(m) = config.top_matches {
        matches = select_top_matches(&matches, m);
    }
    let matches = matches.scaled(scale_f, scale_m);
    let n_matches = matches.len();

    let mut out = RegistrationOutput {
        result: RegistrationResult::failed("", counts, n_matches),
        matches,
        inliers: Vec::new(),
        keypoints_fixed: df.keypoints,
        keypoints_moving: dm.keypoints,
    };
    if counts.0 == 0 || counts.1 == 0 {
        out.result.failure = Some("no keypoints detected".into());
        return Ok(out);
    }
    let corr: Vec<Correspondence> = out
        .matches
        .coordinates()
        .map(|(f, m)| Correspondence::new(m, f))
        .collect();
    match estimate_homography_ransac(&corr, &config.ransac, ransac_seed) {
        Ok(fit) => {
            out.result = RegistrationResult {
                success: true,
                homography: Some(fit.homography),
                inlier_count: fit.inliers.len(),
                matches_used: n_matches,
                keypoints_detected: counts,
                failure: None,
            };
            out.inliers = fit.inliers;
        }
        Err(e) => out.result.failure = Some(e.to_string()),
    }
    Ok(out)
}
