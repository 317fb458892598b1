//! Normalized DLT homography fitting and a seeded RANSAC loop around it.

use nalgebra::{DMatrix, Matrix3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::transform::{Homography, PlanarTransform, Point};
use crate::error::{Error, Result};

/// A source -> destination point pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub src: Point,
    pub dst: Point,
}

impl Correspondence {
    pub fn new(src: Point, dst: Point) -> Self {
        Self { src, dst }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RansacConfig {
    /// Inlier threshold in pixels at the resolution the points are given in.
    pub reproj_threshold_px: f64,
    pub max_iters: usize,
    /// Total inliers required for success (the 4-point sample included).
    pub min_inliers: usize,
    /// Early-exit confidence for the adaptive iteration bound.
    pub confidence: f64,
    /// Upper bound on the singular-value ratio of the linear block.
    pub max_anisotropy: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            reproj_threshold_px: 5.0,
            max_iters: 2000,
            min_inliers: 8,
            confidence: 0.999,
            max_anisotropy: 20.0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.reproj_threshold_px > 0.0) {
            return Err(Error::Config(
                "ransac.reproj_threshold_px must be positive".into(),
            ));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("ransac.max_iters must be at least 1".into()));
        }
        if self.min_inliers < 4 {
            return Err(Error::Config(
                "ransac.min_inliers must be at least 4".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.confidence) {
            return Err(Error::Config("ransac.confidence must lie in [0, 1)".into()));
        }
        if !(self.max_anisotropy > 1.0) {
            return Err(Error::Config("ransac.max_anisotropy must exceed 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RansacOutcome {
    pub homography: Homography,
    pub inliers: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RansacFailure {
    TooFewMatches,
    NotEnoughInliers,
    Degenerate,
}

impl std::fmt::Display for RansacFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RansacFailure::TooFewMatches => "fewer than 4 matches",
            RansacFailure::NotEnoughInliers => "no model reached the inlier minimum",
            RansacFailure::Degenerate => "all candidate models were degenerate",
        };
        f.write_str(s)
    }
}

/// Similarity transform moving the centroid to the origin with mean
/// distance sqrt(2).
fn normalizer(points: impl Iterator<Item = Point> + Clone) -> Option<Matrix3<f64>> {
    let n = points.clone().count() as f64;
    let (mut cx, mut cy) = (0.0, 0.0);
    for p in points.clone() {
        cx += p[0];
        cy += p[1];
    }
    cx /= n;
    cy /= n;
    let mean_d = points
        .map(|p| ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if !(mean_d > 1e-12) {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_d;
    Some(Matrix3::new(
        s,
        0.0,
        -s * cx,
        0.0,
        s,
        -s * cy,
        0.0,
        0.0,
        1.0,
    ))
}

/// Hartley-normalized direct linear transform over all given pairs.
/// Returns `None` when the system is degenerate.
pub fn fit_homography_dlt(pairs: &[Correspondence]) -> Option<Homography> {
    if pairs.len() < 4 {
        return None;
    }
    let ts = normalizer(pairs.iter().map(|c| c.src))?;
    let td = normalizer(pairs.iter().map(|c| c.dst))?;
    let rows = (2 * pairs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, c) in pairs.iter().enumerate() {
        let x = ts[(0, 0)] * c.src[0] + ts[(0, 2)];
        let y = ts[(1, 1)] * c.src[1] + ts[(1, 2)];
        let u = td[(0, 0)] * c.dst[0] + td[(0, 2)];
        let v = td[(1, 1)] * c.dst[1] + td[(1, 2)];
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for j in 0..9 {
            a[(2 * i, j)] = r0[j];
            a[(2 * i + 1, j)] = r1[j];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let h = v_t.row(min_idx);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td.try_inverse()?;
    let full = td_inv * hn * ts;
    if full[(2, 2)].abs() < 1e-14 {
        return None;
    }
    let m = [
        [full[(0, 0)], full[(0, 1)], full[(0, 2)]],
        [full[(1, 0)], full[(1, 1)], full[(1, 2)]],
        [full[(2, 0)], full[(2, 1)], full[(2, 2)]],
    ];
    let hom = Homography::from_matrix(m);
    if hom.matrix().iter().flatten().all(|v| v.is_finite()) && hom.det().abs() > 1e-10 {
        Some(hom)
    } else {
        None
    }
}

fn collinear(a: Point, b: Point, c: Point) -> bool {
    let area2 = ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])).abs();
    let scale = ((b[0] - a[0]).hypot(b[1] - a[1])).max((c[0] - a[0]).hypot(c[1] - a[1]));
    area2 <= 1e-6 * scale.max(1.0) * scale.max(1.0)
}

/// True if any three of the four points are (nearly) collinear.
pub fn sample_is_degenerate(points: &[Point; 4]) -> bool {
    const TRIPLES: [[usize; 3]; 4] = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];
    TRIPLES
        .iter()
        .any(|t| collinear(points[t[0]], points[t[1]], points[t[2]]))
}

pub fn reprojection_error(h: &Homography, c: &Correspondence) -> f64 {
    match h.apply(c.src) {
        Some(p) => (p[0] - c.dst[0]).hypot(p[1] - c.dst[1]),
        None => f64::INFINITY,
    }
}

fn inliers_of(h: &Homography, pairs: &[Correspondence], thr: f64) -> (Vec<usize>, f64) {
    let mut idx = Vec::new();
    let mut sse = 0.0;
    for (i, c) in pairs.iter().enumerate() {
        let e = reprojection_error(h, c);
        if e < thr {
            idx.push(i);
            sse += e * e;
        }
    }
    (idx, sse)
}

/// Robustly fits a homography mapping `src` to `dst`.
pub fn estimate_homography_ransac(
    pairs: &[Correspondence],
    config: &RansacConfig,
    seed: u64,
) -> std::result::Result<RansacOutcome, RansacFailure> {
    if pairs.len() < 4 {
        return Err(RansacFailure::TooFewMatches);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = pairs.len();
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut any_model = false;
    let mut budget = config.max_iters;
    let mut it = 0;
    while it < budget {
        it += 1;
        let idx = sample(&mut rng, n, 4);
        let chosen: Vec<Correspondence> = idx.iter().map(|i| pairs[i]).collect();
        let src = [chosen[0].src, chosen[1].src, chosen[2].src, chosen[3].src];
        let dst = [chosen[0].dst, chosen[1].dst, chosen[2].dst, chosen[3].dst];
        if sample_is_degenerate(&src) || sample_is_degenerate(&dst) {
            continue;
        }
        let Some(h) = fit_homography_dlt(&chosen) else {
            continue;
        };
        if !h.is_plausible(config.max_anisotropy) {
            continue;
        }
        any_model = true;
        let (inl, sse) = inliers_of(&h, pairs, config.reproj_threshold_px);
        let better = match &best {
            None => true,
            Some((b, bsse)) => inl.len() > b.len() || (inl.len() == b.len() && sse < *bsse),
        };
        if better {
            let ratio = inl.len() as f64 / n as f64;
            best = Some((inl, sse));
            if ratio >= 1.0 {
                break;
            }
            let denom = (1.0 - ratio.powi(4)).ln();
            if denom < 0.0 {
                let needed = ((1.0 - config.confidence).ln() / denom).ceil();
                if needed.is_finite() && needed >= 0.0 {
                    budget = budget.min(needed as usize);
                }
            }
        }
    }
    let Some((mut inliers, _)) = best else {
        return Err(if any_model {
            RansacFailure::NotEnoughInliers
        } else {
            RansacFailure::Degenerate
        });
    };
    if inliers.len() < config.min_inliers {
        return Err(RansacFailure::NotEnoughInliers);
    }
    // least-squares refinement on the consensus set, repeated while it grows
    let mut model = None;
    for _ in 0..5 {
        let subset: Vec<Correspondence> = inliers.iter().map(|&i| pairs[i]).collect();
        let Some(h) = fit_homography_dlt(&subset) else {
            break;
        };
        if !h.is_plausible(config.max_anisotropy) {
            break;
        }
        let (next, _) = inliers_of(&h, pairs, config.reproj_threshold_px);
        let grew = next.len() > inliers.len();
        if next.len() >= inliers.len() {
            model = Some(h);
            if !grew {
                break;
            }
            inliers = next;
        } else {
            if model.is_none() {
                model = Some(h);
                inliers = next;
            }
            break;
        }
    }
    let Some(h) = model else {
        return Err(RansacFailure::Degenerate);
    };
    if inliers.len() < config.min_inliers {
        return Err(RansacFailure::NotEnoughInliers);
    }
    Ok(RansacOutcome {
        homography: h,
        inliers,
    })
}
