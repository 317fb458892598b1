use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PlanarTransform;
use crate::registration::{select_top_matches, MatchSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeypointDistanceStats {
    pub mean_px: f64,
    pub median_px: f64,
    pub per_match: Vec<f64>,
}

/// Distance between each fixed keypoint (`a`) and its matched moving
/// keypoint (`b`) projected by `true_transform` (moving to fixed).
pub fn keypoint_distance_stats<T: PlanarTransform + ?Sized>(
    matches: &MatchSet,
    true_transform: &T,
) -> Result<KeypointDistanceStats> {
    if matches.is_empty() {
        return Err(Error::InvalidInput("no matches to measure".into()));
    }
    let per_match: Vec<f64> = matches
        .coordinates()
        .map(|(f, m)| match true_transform.apply(m) {
            Some(q) => ((q[0] - f[0]).powi(2) + (q[1] - f[1]).powi(2)).sqrt(),
            None => f64::INFINITY,
        })
        .collect();
    Ok(distance_stats(per_match))
}

pub fn distance_stats(per_match: Vec<f64>) -> KeypointDistanceStats {
    let mut sorted = per_match.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median_px = if n == 0 {
        0.0
    } else if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    let mean_px = if n == 0 {
        0.0
    } else {
        per_match.iter().sum::<f64>() / n as f64
    };
    KeypointDistanceStats {
        mean_px,
        median_px,
        per_match,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub fraction: f64,
    pub matches: usize,
    pub mean_px: f64,
    pub median_px: f64,
}

/// Statistics over the closest `ceil(fraction * len)` matches for each
/// fraction in `(0, 1]`.
pub fn keypoint_distance_sweep<T: PlanarTransform + ?Sized>(
    matches: &MatchSet,
    true_transform: &T,
    fractions: &[f64],
) -> Result<Vec<SweepPoint>> {
    fractions
        .iter()
        .map(|&f| {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("sweep fraction {f} outside (0, 1]")));
            }
            let m = ((f * matches.len() as f64).ceil() as usize).max(1);
            let s = keypoint_distance_stats(&select_top_matches(matches, m), true_transform)?;
            Ok(SweepPoint {
                fraction: f,
                matches: s.per_match.len(),
                mean_px: s.mean_px,
                median_px: s.median_px,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{AffineParams, AffineTransform, PointSet};
    use crate::registration::DescriptorMatch;

    fn set(fixed: Vec<[f64; 2]>, moving: Vec<[f64; 2]>) -> MatchSet {
        let pairs = (0..fixed.len())
            .map(|i| DescriptorMatch {
                a: i,
                b: i,
                distance: i as f64 * 0.01,
            })
            .collect();
        MatchSet::new(
            pairs,
            PointSet::from_coords(fixed),
            PointSet::from_coords(moving),
        )
        .unwrap()
    }

    #[test]
    fn exact_transform_gives_zero() {
        let p = AffineParams {
            rotation_deg: 30.0,
            translate_px: [2.0, 1.0],
            scale: 1.05,
            shear_deg: 3.0,
        };
        let t = AffineTransform::from_params(&p, (50, 50));
        let inv = t.inverse().unwrap();
        let fixed: Vec<_> = (0..12).map(|i| [i as f64 * 3.0, 40.0 - i as f64]).collect();
        let moving: Vec<_> = fixed.iter().map(|&q| inv.apply(q).unwrap()).collect();
        let s = keypoint_distance_stats(&set(fixed, moving), &t).unwrap();
        assert!(s.per_match.iter().all(|&d| d < 1e-9));
    }

    #[test]
    fn one_outlier_among_nine() {
        let fixed: Vec<_> = (0..10).map(|i| [i as f64, 0.0]).collect();
        let mut moving = fixed.clone();
        moving[9][0] += 100.0;
        let s = keypoint_distance_stats(&set(fixed, moving), &AffineTransform::identity((10, 10)))
            .unwrap();
        assert!((s.mean_px - 10.0).abs() < 1e-12);
        assert_eq!(s.median_px, 0.0);
    }

    #[test]
    fn direct_mean_and_median() {
        let s = distance_stats(vec![1.0, 2.0, 100.0]);
        assert!((s.mean_px - 103.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.median_px, 2.0);
    }

    #[test]
    fn sweep_uses_closest_matches_first() {
        let fixed: Vec<_> = (0..10).map(|i| [i as f64, 0.0]).collect();
        let mut moving = fixed.clone();
        moving[9][0] += 100.0;
        let sw = keypoint_distance_sweep(
            &set(fixed, moving),
            &AffineTransform::identity((10, 10)),
            &[0.5, 1.0],
        )
        .unwrap();
        assert_eq!(sw[0].matches, 5);
        assert_eq!(sw[0].mean_px, 0.0);
        assert!(sw[1].mean_px > sw[0].mean_px);
        let empty = set(vec![], vec![]);
        assert!(keypoint_distance_stats(&empty, &AffineTransform::identity((1, 1))).is_err());
    }
}
