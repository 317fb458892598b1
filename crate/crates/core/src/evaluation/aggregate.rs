use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::keypoints::SweepPoint;
use super::overlap::overlap_metrics;
use super::score::{
    auc, control_point_error, success_curve, ControlPointPair, DEFAULT_MAX_THRESHOLD,
};
use super::structural::structural_metrics;
use crate::error::{Error, Result};
use crate::geometry::Homography;
use crate::raster::{Image, Mask};
use crate::registration::RegistrationResult;

pub const EVALUATION_SCHEMA: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub iou: f64,
    pub dice: f64,
    pub iom: f64,
    pub sm: f64,
    pub ssim: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_control_error_px: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    Vessel,
    Roi,
    Mixed,
}

/// Images and masks of one pair at source resolution. `masks` are the
/// vessel masks when available, otherwise the RoIs.
pub struct PairImages<'a> {
    pub fixed: &'a Image,
    pub moving: &'a Image,
    pub masks: (&'a Mask, &'a Mask),
    pub rois: (&'a Mask, &'a Mask),
}

/// All per-pair metrics for a registered pair.
pub fn metric_bundle(
    h: &Homography,
    pair: &PairImages<'_>,
    control_points: Option<&ControlPointPair>,
) -> Result<MetricBundle> {
    let o = overlap_metrics(pair.masks.0, pair.masks.1, h)?;
    let s = structural_metrics(pair.fixed, pair.moving, h, pair.rois.0, pair.rois.1)?;
    let mean_control_error_px = control_points
        .map(|cp| control_point_error(h, cp))
        .transpose()?;
    Ok(MetricBundle {
        iou: o.iou,
        dice: o.dice,
        iom: o.iom,
        sm: s.sm,
        ssim: s.ssim,
        mean_control_error_px,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairEvaluation {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub category: Option<String>,
    pub mask_source: MaskSource,
    pub result: RegistrationResult,
    /// Present for registered pairs.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub metrics: Option<MetricBundle>,
    /// Set when control points exist; infinite for failed registrations.
    #[serde(skip_serializing_if = "Option::is_none", default, with = "inf_as_null")]
    pub control_error_px: Option<f64>,
    /// Match distances under the known transform, per kept fraction.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub keypoint_distance: Option<Vec<SweepPoint>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.map(|x| if x.is_finite() { Some(x) } else { None })
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(Some(
            Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY),
        ))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub iou: f64,
    pub dice: f64,
    pub iom: f64,
    pub sm: f64,
    pub ssim: f64,
}

impl MetricMeans {
    fn scaled(&self, f: f64) -> Self {
        Self {
            iou: self.iou * f,
            dice: self.dice * f,
            iom: self.iom * f,
            sm: self.sm * f,
            ssim: self.ssim * f,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub pairs: usize,
    pub registered: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub schema_version: u32,
    pub pairs_total: usize,
    pub pairs_registered: usize,
    /// Means over registered pairs.
    pub raw: MetricMeans,
    /// `raw * pairs_registered / pairs_total`.
    pub normalized: MetricMeans,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_control_error_px: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub success_curve: Option<Vec<f64>>,
    pub max_threshold: usize,
    pub by_category: BTreeMap<String, CategoryScore>,
    /// Per-fraction means of the pairs' keypoint-distance sweeps.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub keypoint_distance: Option<Vec<SweepPoint>>,
    pub lpips: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mask_source: Option<MaskSource>,
    pub pairs: Vec<PairEvaluation>,
}

fn curve_of(pairs: &[&PairEvaluation], max_threshold: usize) -> Result<Option<Vec<f64>>> {
    let errors: Vec<f64> = pairs.iter().filter_map(|p| p.control_error_px).collect();
    if errors.is_empty() {
        return Ok(None);
    }
    success_curve(&errors, max_threshold).map(Some)
}

/// Averages sweeps that share the first sweep's fractions.
fn mean_sweep(results: &[PairEvaluation]) -> Option<Vec<SweepPoint>> {
    let sweeps: Vec<&Vec<SweepPoint>> = results
        .iter()
        .filter_map(|r| r.keypoint_distance.as_ref())
        .collect();
    let first = sweeps.first()?;
    let same: Vec<_> = sweeps
        .iter()
        .filter(|s| {
            s.len() == first.len()
                && s.iter()
                    .zip(first.iter())
                    .all(|(a, b)| a.fraction == b.fraction)
        })
        .collect();
    let n = same.len() as f64;
    Some(
        (0..first.len())
            .map(|i| SweepPoint {
                fraction: first[i].fraction,
                matches: same.iter().map(|s| s[i].matches).sum::<usize>() / same.len(),
                mean_px: same.iter().map(|s| s[i].mean_px).sum::<f64>() / n,
                median_px: same.iter().map(|s| s[i].median_px).sum::<f64>() / n,
            })
            .collect(),
    )
}

/// Reduces per-pair evaluations. `total` counts every attempted pair,
/// including ones that never produced an evaluation.
pub fn aggregate(
    results: &[PairEvaluation],
    total: usize,
    max_threshold: usize,
) -> Result<AggregateReport> {
    if total == 0 {
        return Err(Error::InvalidInput(
            "cannot aggregate over zero pairs".into(),
        ));
    }
    if results.len() > total {
        return Err(Error::InvalidInput(format!(
            "{} results for {total} pairs",
            results.len()
        )));
    }
    let registered: Vec<&MetricBundle> = results
        .iter()
        .filter(|r| r.result.success)
        .filter_map(|r| r.metrics.as_ref())
        .collect();
    let n = registered.len();
    let mut raw = MetricMeans::default();
    for m in &registered {
        raw.iou += m.iou;
        raw.dice += m.dice;
        raw.iom += m.iom;
        raw.sm += m.sm;
        raw.ssim += m.ssim;
    }
    if n > 0 {
        raw = raw.scaled(1.0 / n as f64);
    }
    let normalized = raw.scaled(n as f64 / total as f64);
    let errs: Vec<f64> = registered
        .iter()
        .filter_map(|m| m.mean_control_error_px)
        .collect();
    let mean_control_error_px =
        (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64);

    let all: Vec<&PairEvaluation> = results.iter().collect();
    let curve = curve_of(&all, max_threshold)?;
    let mut by_category = BTreeMap::new();
    let mut cats: BTreeMap<&str, Vec<&PairEvaluation>> = BTreeMap::new();
    for r in results {
        if let Some(c) = &r.category {
            cats.entry(c.as_str()).or_default().push(r);
        }
    }
    for (c, rs) in cats {
        let auc = curve_of(&rs, max_threshold)?.map(|cv| auc(&cv));
        by_category.insert(
            c.to_string(),
            CategoryScore {
                pairs: rs.len(),
                registered: rs.iter().filter(|r| r.result.success).count(),
                auc,
            },
        );
    }
    let keypoint_distance = mean_sweep(results);
    let mask_source = results.first().map(|f| {
        if results.iter().all(|r| r.mask_source == f.mask_source) {
            f.mask_source
        } else {
            MaskSource::Mixed
        }
    });
    Ok(AggregateReport {
        schema_version: EVALUATION_SCHEMA,
        pairs_total: total,
        pairs_registered: n,
        raw,
        normalized,
        mean_control_error_px,
        auc: curve.as_ref().map(|c| auc(c)),
        success_curve: curve,
        max_threshold,
        by_category,
        keypoint_distance,
        lpips: "unavailable".into(),
        mask_source,
        pairs: results.to_vec(),
    })
}

/// [`aggregate`] with the default 25 px threshold.
pub fn aggregate_default(results: &[PairEvaluation], total: usize) -> Result<AggregateReport> {
    aggregate(results, total, DEFAULT_MAX_THRESHOLD)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(success: bool) -> RegistrationResult {
        RegistrationResult {
            success,
            homography: success.then(Homography::identity),
            inlier_count: 0,
            matches_used: 0,
            keypoints_detected: (0, 0),
            failure: None,
        }
    }

    fn eval(success: bool, iou: f64, cp: Option<f64>) -> PairEvaluation {
        PairEvaluation {
            name: "p".into(),
            category: Some("A".into()),
            mask_source: MaskSource::Roi,
            result: result(success),
            metrics: success.then_some(MetricBundle {
                iou,
                dice: iou,
                iom: iou,
                sm: iou,
                ssim: iou,
                mean_control_error_px: cp,
            }),
            control_error_px: if success {
                cp
            } else {
                cp.map(|_| f64::INFINITY)
            },
            keypoint_distance: None,
            error: None,
        }
    }

    #[test]
    fn all_registered_normalized_equals_raw() {
        let r = vec![eval(true, 0.6, None), eval(true, 0.8, None)];
        let a = aggregate(&r, 2, 25).unwrap();
        assert!((a.raw.iou - 0.7).abs() < 1e-12);
        assert_eq!(a.normalized, a.raw);
        assert_eq!(a.lpips, "unavailable");
        assert_eq!(a.mask_source, Some(MaskSource::Roi));
    }

    #[test]
    fn half_registered_halves_metrics() {
        let r = vec![eval(true, 0.8, Some(3.0)), eval(false, 0.0, Some(0.0))];
        let a = aggregate(&r, 2, 25).unwrap();
        assert!((a.raw.iou - 0.8).abs() < 1e-12);
        assert!((a.normalized.iou - 0.4).abs() < 1e-12);
        assert_eq!(a.pairs_registered, 1);
        // failed pair never reaches a threshold
        assert!((a.auc.unwrap() - 0.5 * 23.0 / 25.0).abs() < 1e-12);
        assert_eq!(a.by_category["A"].registered, 1);
    }

    #[test]
    fn zero_registered_and_zero_total() {
        let r = vec![eval(false, 0.0, None)];
        let a = aggregate(&r, 3, 25).unwrap();
        assert_eq!(a.normalized, MetricMeans::default());
        assert!(aggregate(&[], 0, 25).is_err());
        assert!(aggregate(&r, 0, 25).is_err());
    }

    #[test]
    fn infinite_error_serializes_as_null() {
        let e = eval(false, 0.0, Some(1.0));
        let s = serde_json::to_string(&e).unwrap();
        assert!(s.contains("\"control_error_px\":null"), "{s}");
        let back: PairEvaluation = serde_json::from_str(&s).unwrap();
        assert_eq!(back.control_error_px, Some(f64::INFINITY));
    }
}
