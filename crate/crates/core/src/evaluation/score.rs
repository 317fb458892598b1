use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PlanarTransform, PointSet};

pub const DEFAULT_MAX_THRESHOLD: usize = 25;

/// Corresponding control points in source resolution; index `i` of each set
/// refers to the same physical location.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlPointPair {
    pub fixed: PointSet,
    pub moving: PointSet,
}

impl ControlPointPair {
    pub fn new(fixed: PointSet, moving: PointSet) -> Result<Self> {
        if fixed.len() != moving.len() {
            return Err(Error::InvalidInput(format!(
                "control point counts differ: {} fixed vs {} moving",
                fixed.len(),
                moving.len()
            )));
        }
        if fixed.ids != moving.ids {
            return Err(Error::InvalidInput(
                "control point ids are not aligned".into(),
            ));
        }
        Ok(Self { fixed, moving })
    }

    pub fn len(&self) -> usize {
        self.fixed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixed.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub mean_error_px: f64,
    /// Indicator `error <= t` for `t = 1..=max_threshold`.
    pub success_curve: Vec<f64>,
    pub auc: f64,
}

/// Mean distance between `H(moving)` and `fixed`. Points whose projection
/// is undefined count as infinitely far.
pub fn control_point_error<T: PlanarTransform + ?Sized>(
    h: &T,
    cp: &ControlPointPair,
) -> Result<f64> {
    if cp.is_empty() {
        return Err(Error::InvalidInput("no control points".into()));
    }
    let mut sum = 0.0;
    for (f, m) in cp.fixed.coords.iter().zip(&cp.moving.coords) {
        match h.apply(*m) {
            Some(q) => sum += ((q[0] - f[0]).powi(2) + (q[1] - f[1]).powi(2)).sqrt(),
            None => return Ok(f64::INFINITY),
        }
    }
    Ok(sum / cp.len() as f64)
}

pub fn registration_score<T: PlanarTransform + ?Sized>(
    h: &T,
    cp: &ControlPointPair,
    max_threshold: usize,
) -> Result<PairScore> {
    let e = control_point_error(h, cp)?;
    let success_curve = success_curve(&[e], max_threshold)?;
    let auc = auc(&success_curve);
    Ok(PairScore {
        mean_error_px: e,
        success_curve,
        auc,
    })
}

/// Fraction of pairs with error `<= t` for `t = 1..=max_threshold`. Failed
/// registrations should be passed as `f64::INFINITY`.
pub fn success_curve(errors: &[f64], max_threshold: usize) -> Result<Vec<f64>> {
    if errors.is_empty() {
        return Err(Error::InvalidInput(
            "success curve needs at least one pair".into(),
        ));
    }
    if max_threshold == 0 {
        return Err(Error::Config("max_threshold must be at least 1".into()));
    }
    let n = errors.len() as f64;
    Ok((1..=max_threshold)
        .map(|t| errors.iter().filter(|&&e| e <= t as f64).count() as f64 / n)
        .collect())
}

pub fn auc(curve: &[f64]) -> f64 {
    if curve.is_empty() {
        return 0.0;
    }
    curve.iter().sum::<f64>() / curve.len() as f64
}
