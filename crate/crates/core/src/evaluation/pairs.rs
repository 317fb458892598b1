use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::score::ControlPointPair;
use crate::augmentation::{ColorJitterParams, HsvRanges, NoiseConfig};
use crate::error::{Error, Result};
use crate::geometry::{
    sample_affine_params, warp_image, warp_mask, AffineParams, AffineRanges, AffineTransform,
    Interpolation, PlanarTransform, PointSet,
};
use crate::raster::{Image, Mask};

pub const DEFAULT_CONTROL_POINTS: usize = 5000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    Color,
    Geometric,
    Full,
}

impl PairMode {
    pub const ALL: [PairMode; 3] = [PairMode::Color, PairMode::Geometric, PairMode::Full];

    pub fn as_str(&self) -> &'static str {
        match self {
            PairMode::Color => "color",
            PairMode::Geometric => "geometric",
            PairMode::Full => "full",
        }
    }
}

impl fmt::Display for PairMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PairMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "color" => Ok(PairMode::Color),
            "geometric" => Ok(PairMode::Geometric),
            "full" => Ok(PairMode::Full),
            _ => Err(Error::Config(format!(
                "unknown pair mode '{s}' (expected color, geometric or full)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticPairConfig {
    pub affine: AffineRanges,
    pub hsv: HsvRanges,
    pub noise: NoiseConfig,
    pub control_points: usize,
}

impl Default for SyntheticPairConfig {
    fn default() -> Self {
        Self {
            affine: AffineRanges::evaluation(),
            hsv: HsvRanges::default(),
            noise: NoiseConfig::default(),
            control_points: DEFAULT_CONTROL_POINTS,
        }
    }
}

impl SyntheticPairConfig {
    pub fn validate(&self) -> Result<()> {
        self.affine.validate()?;
        self.hsv.validate()?;
        self.noise.validate()?;
        if self.control_points == 0 {
            return Err(Error::Config("control_points must be at least 1".into()));
        }
        Ok(())
    }
}

/// A generated pair. `warp` maps fixed to moving coordinates; the
/// registration target is `true_transform = warp^-1`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticPair {
    pub mode: PairMode,
    pub fixed: Image,
    pub moving: Image,
    pub fixed_roi: Mask,
    pub moving_roi: Mask,
    pub affine_params: AffineParams,
    pub color: ColorJitterParams,
    pub warp: AffineTransform,
    pub true_transform: AffineTransform,
    pub control_points: ControlPointPair,
}

struct Draw {
    affine: AffineParams,
    color: ColorJitterParams,
    points: Vec<[f64; 2]>,
}

fn draw<R: Rng + ?Sized>(
    rng: &mut R,
    image: &Image,
    roi: &Mask,
    config: &SyntheticPairConfig,
) -> Result<Draw> {
    config.validate()?;
    if roi.size() != image.size() {
        return Err(Error::Shape("RoI size differs from the image".into()));
    }
    if roi.is_empty() {
        return Err(Error::EmptyMask("synthetic pair RoI".into()));
    }
    let affine = sample_affine_params(rng, &config.affine, image.size())?;
    let color = ColorJitterParams::sample(rng, &config.hsv, &config.noise);
    let points = sample_in_mask(rng, roi, config.control_points)?;
    Ok(Draw {
        affine,
        color,
        points,
    })
}

/// Continuous uniform positions inside `mask` by rejection.
fn sample_in_mask<R: Rng + ?Sized>(
    rng: &mut R,
    mask: &Mask,
    count: usize,
) -> Result<Vec<[f64; 2]>> {
    let (w, h) = mask.size();
    let mut out = Vec::with_capacity(count);
    let budget = count.saturating_mul(1000).max(10_000);
    for _ in 0..budget {
        let p = [
            rng.random_range(0.0..=(w - 1) as f64),
            rng.random_range(0.0..=(h - 1) as f64),
        ];
        if mask.contains(p[0], p[1]) {
            out.push(p);
            if out.len() == count {
                return Ok(out);
            }
        }
    }
    Err(Error::InvalidInput(format!(
        "could not place {count} control points in the RoI"
    )))
}

fn build(d: &Draw, mode: PairMode, image: &Image, roi: &Mask) -> Result<SyntheticPair> {
    let size = image.size();
    let (affine_params, color) = match mode {
        PairMode::Color => (AffineParams::identity(), d.color),
        PairMode::Geometric => (d.affine, ColorJitterParams::identity()),
        PairMode::Full => (d.affine, d.color),
    };
    let warp = AffineTransform::from_params(&affine_params, size);
    let true_transform = warp.inverse()?;
    let jittered = color.apply(image);
    let (moving, moving_roi) = if mode == PairMode::Color {
        (jittered, roi.clone())
    } else {
        let (img, _) = warp_image(&warp, &jittered, size, Interpolation::Bilinear)?;
        (img, warp_mask(&warp, roi, size)?)
    };
    let fixed_pts = PointSet::from_coords(d.points.clone());
    let moving_pts = PointSet::new(
        d.points
            .iter()
            .map(|&p| warp.apply(p).expect("affine"))
            .collect(),
        fixed_pts.ids.clone(),
    )?;
    Ok(SyntheticPair {
        mode,
        fixed: image.clone(),
        moving,
        fixed_roi: roi.clone(),
        moving_roi,
        affine_params,
        color,
        warp,
        true_transform,
        control_points: ControlPointPair::new(fixed_pts, moving_pts)?,
    })
}

pub fn make_synthetic_pair<R: Rng + ?Sized>(
    rng: &mut R,
    image: &Image,
    roi: &Mask,
    mode: PairMode,
    config: &SyntheticPairConfig,
) -> Result<SyntheticPair> {
    let d = draw(rng, image, roi, config)?;
    build(&d, mode, image, roi)
}

/// Color, geometric and full pairs from a single parameter draw, so the full
/// pair reuses exactly the other two modes' settings and control points.
pub fn make_synthetic_triplet<R: Rng + ?Sized>(
    rng: &mut R,
    image: &Image,
    roi: &Mask,
    config: &SyntheticPairConfig,
) -> Result<[SyntheticPair; 3]> {
    let d = draw(rng, image, roi, config)?;
    Ok([
        build(&d, PairMode::Color, image, roi)?,
        build(&d, PairMode::Geometric, image, roi)?,
        build(&d, PairMode::Full, image, roi)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::registration_score;
    use crate::geometry::Homography;
    use crate::synthetic::{generate_fundus, VesselParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fundus() -> (Image, Mask) {
        let f = generate_fundus(&VesselParams::with_size(80, 80), 2);
        (f.image, f.field)
    }

    #[test]
    fn color_mode_is_identity() {
        let (img, roi) = fundus();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = make_synthetic_pair(
            &mut rng,
            &img,
            &roi,
            PairMode::Color,
            &SyntheticPairConfig::default(),
        )
        .unwrap();
        assert_eq!(p.true_transform, AffineTransform::identity((80, 80)));
        assert_eq!(p.control_points.len(), 5000);
        assert!(p
            .control_points
            .fixed
            .coords
            .iter()
            .all(|q| roi.contains(q[0], q[1])));
        let s = registration_score(&Homography::identity(), &p.control_points, 25).unwrap();
        assert_eq!(s.auc, 1.0);
    }

    #[test]
    fn geometric_mode_is_reproducible() {
        let (img, roi) = fundus();
        let cfg = SyntheticPairConfig::default();
        let a = make_synthetic_pair(
            &mut ChaCha8Rng::seed_from_u64(5),
            &img,
            &roi,
            PairMode::Geometric,
            &cfg,
        )
        .unwrap();
        let b = make_synthetic_pair(
            &mut ChaCha8Rng::seed_from_u64(5),
            &img,
            &roi,
            PairMode::Geometric,
            &cfg,
        )
        .unwrap();
        assert_eq!(a, b);
        assert!(a.affine_params.rotation_deg.abs() <= 45.0);
        assert!((0.9..=1.1).contains(&a.affine_params.scale));
        assert!(a.affine_params.shear_deg.abs() <= 10.0);
    }

    #[test]
    fn triplet_shares_parameters() {
        let (img, roi) = fundus();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let [c, g, f] =
            make_synthetic_triplet(&mut rng, &img, &roi, &SyntheticPairConfig::default()).unwrap();
        assert_eq!(f.warp, g.warp);
        assert_eq!(f.affine_params, g.affine_params);
        assert_eq!(f.color, c.color);
        assert_eq!(f.control_points, g.control_points);
        assert_eq!(c.control_points.fixed, g.control_points.fixed);
    }

    #[test]
    fn control_points_round_trip() {
        let (img, roi) = fundus();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = make_synthetic_pair(
            &mut rng,
            &img,
            &roi,
            PairMode::Full,
            &SyntheticPairConfig::default(),
        )
        .unwrap();
        for (f, m) in p
            .control_points
            .fixed
            .coords
            .iter()
            .zip(&p.control_points.moving.coords)
        {
            let back = p.true_transform.apply(*m).unwrap();
            assert!((back[0] - f[0]).abs() < 1e-6 && (back[1] - f[1]).abs() < 1e-6);
        }
        let s = registration_score(&p.true_transform, &p.control_points, 25).unwrap();
        assert!(s.mean_error_px < 1e-6);
    }

    #[test]
    fn empty_roi_is_an_error() {
        let (img, _) = fundus();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = make_synthetic_pair(
            &mut rng,
            &img,
            &Mask::new(80, 80, false),
            PairMode::Full,
            &SyntheticPairConfig::default(),
        );
        assert!(r.is_err());
        assert!("diagonal".parse::<PairMode>().is_err());
    }
}
