use rand::Rng;
use serde::{Deserialize, Serialize};

use super::color::{ColorJitterParams, HsvRanges, NoiseConfig};
use super::roi::{sample_points, RoiMask, SamplingMode};
use crate::error::{Error, Result};
use crate::geometry::{
    sample_affine, warp_image, warp_points, AffineRanges, AffineTransform, Interpolation, PointSet,
};
use crate::raster::{Image, Mask};

/// Everything needed to assemble one multiview batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSpec {
    pub n_views: usize,
    pub affine: AffineRanges,
    pub hsv: HsvRanges,
    pub noise: NoiseConfig,
    pub point_count: usize,
    pub sampling: SamplingMode,
    pub interpolation: Interpolation,
}

impl Default for BatchSpec {
    fn default() -> Self {
        Self {
            n_views: 9,
            affine: AffineRanges::training(),
            hsv: HsvRanges::default(),
            noise: NoiseConfig::default(),
            point_count: 1460,
            sampling: SamplingMode::Roi,
            interpolation: Interpolation::Bilinear,
        }
    }
}

impl BatchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_views == 0 {
            return Err(Error::Config("n_views must be at least 1".into()));
        }
        if self.point_count == 0 {
            return Err(Error::Config("point_count must be at least 1".into()));
        }
        self.affine.validate()?;
        self.hsv.validate()?;
        self.noise.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub image: Image,
    /// Maps reference coordinates into this view.
    pub affine: AffineTransform,
    /// Pixels of the view that were sampled from inside the reference.
    pub validity: Mask,
    pub color: ColorJitterParams,
}

/// One reference image plus `N` augmented views with tracked anchors.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewBatch {
    pub reference: Image,
    pub roi: RoiMask,
    pub views: Vec<View>,
    pub anchors: PointSet,
    pub per_view_points: Vec<PointSet>,
    /// `valid[v][i]`: anchor `i` lands inside view `v` and its validity mask.
    pub valid: Vec<Vec<bool>>,
}

impl ViewBatch {
    /// Number of images including the reference.
    pub fn len(&self) -> usize {
        self.views.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Reference first, then the views.
    pub fn images(&self) -> impl Iterator<Item = &Image> {
        std::iter::once(&self.reference).chain(self.views.iter().map(|v| &v.image))
    }

    pub fn invalid_fraction(&self) -> f64 {
        let total: usize = self.valid.iter().map(|v| v.len()).sum();
        let bad: usize = self
            .valid
            .iter()
            .map(|v| v.iter().filter(|&&b| !b).count())
            .sum();
        if total == 0 {
            0.0
        } else {
            bad as f64 / total as f64
        }
    }
}

/// Whether `p` is a usable location in a view of the given validity mask.
pub fn point_is_valid(validity: &Mask, p: [f64; 2]) -> bool {
    let (w, h) = validity.size();
    p[0].is_finite()
        && p[1].is_finite()
        && p[0] >= 0.0
        && p[1] >= 0.0
        && p[0] <= (w - 1) as f64
        && p[1] <= (h - 1) as f64
        && validity.contains(p[0], p[1])
}

/// Builds a multiview batch. Spatial and photometric parameters come from
/// `aug_rng`, anchor locations from `sample_rng`; the two streams can be
/// varied independently.
pub fn build_view_batch<A: Rng + ?Sized, S: Rng + ?Sized>(
    aug_rng: &mut A,
    sample_rng: &mut S,
    image: &Image,
    roi: &RoiMask,
    spec: &BatchSpec,
) -> Result<ViewBatch> {
    spec.validate()?;
    if image.channels() != 3 {
        return Err(Error::Shape(format!(
            "expected RGB image, got {} channels",
            image.channels()
        )));
    }
    if roi.size() != image.size() {
        return Err(Error::Shape(format!(
            "RoI {:?} does not match image {:?}",
            roi.size(),
            image.size()
        )));
    }
    let size = image.size();
    let anchors = sample_points(sample_rng, roi, spec.point_count, spec.sampling)?;
    let mut views = Vec::with_capacity(spec.n_views);
    let mut per_view_points = Vec::with_capacity(spec.n_views);
    let mut valid = Vec::with_capacity(spec.n_views);
    for _ in 0..spec.n_views {
        let affine = sample_affine(aug_rng, &spec.affine, size)?;
        let color = ColorJitterParams::sample(aug_rng, &spec.hsv, &spec.noise);
        let jittered = color.apply(image);
        let (mut warped, validity) = warp_image(&affine, &jittered, size, spec.interpolation)?;
        // noise may have lifted the out-of-source area; keep it black
        if color.noise.is_some() {
            for c in 0..warped.channels() {
                let plane = warped.plane_mut(c);
                for (v, &ok) in plane.iter_mut().zip(validity.data()) {
                    if !ok {
                        *v = 0.0;
                    }
                }
            }
        }
        let pts = warp_points(&affine, &anchors);
        let flags: Vec<bool> = pts
            .points
            .coords
            .iter()
            .zip(&pts.finite)
            .map(|(&p, &f)| f && point_is_valid(&validity, p))
            .collect();
        per_view_points.push(pts.points);
        valid.push(flags);
        views.push(View {
            image: warped,
            affine,
            validity,
            color,
        });
    }
    Ok(ViewBatch {
        reference: image.clone(),
        roi: roi.clone(),
        views,
        anchors,
        per_view_points,
        valid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ParamRange;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn texture(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, 3, |c, x, y| {
            (((x * 7 + y * 13 + c * 5) % 17) as f32 / 16.0) * 0.8 + 0.1
        })
    }

    fn identity_spec(points: usize) -> BatchSpec {
        BatchSpec {
            n_views: 3,
            affine: AffineRanges::identity(),
            hsv: HsvRanges::identity(),
            noise: NoiseConfig::none(),
            point_count: points,
            sampling: SamplingMode::Roi,
            interpolation: Interpolation::Nearest,
        }
    }

    #[test]
    fn nine_views_make_ten_images() {
        let img = texture(32, 32);
        let roi = RoiMask::full(32, 32);
        let spec = BatchSpec {
            point_count: 50,
            ..BatchSpec::default()
        };
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut s = ChaCha8Rng::seed_from_u64(2);
        let b = build_view_batch(&mut a, &mut s, &img, &roi, &spec).unwrap();
        assert_eq!(b.len(), 10);
        assert_eq!(b.images().count(), 10);
        assert_eq!(b.per_view_points.len(), 9);
        for pts in &b.per_view_points {
            assert_eq!(pts.ids, b.anchors.ids);
        }
    }

    #[test]
    fn identity_augmentation_reproduces_reference() {
        let img = texture(24, 20);
        let roi = RoiMask::full(24, 20);
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut s = ChaCha8Rng::seed_from_u64(2);
        let b = build_view_batch(&mut a, &mut s, &img, &roi, &identity_spec(40)).unwrap();
        for (v, view) in b.views.iter().enumerate() {
            assert_eq!(view.image, img);
            assert!(b.valid[v].iter().all(|&f| f));
        }
    }

    #[test]
    fn valid_correspondences_carry_reference_values() {
        let img = texture(40, 40);
        let roi = RoiMask::full(40, 40);
        let spec = BatchSpec {
            n_views: 5,
            affine: AffineRanges::training(),
            ..identity_spec(100)
        };
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut s = ChaCha8Rng::seed_from_u64(6);
        let b = build_view_batch(&mut a, &mut s, &img, &roi, &spec).unwrap();
        let mut checked = 0;
        for (v, view) in b.views.iter().enumerate() {
            for (i, &p) in b.anchors.coords.iter().enumerate() {
                if !b.valid[v][i] {
                    continue;
                }
                let q = b.per_view_points[v].coords[i];
                // only exact when the warped anchor lands on a pixel center
                let (qx, qy) = (q[0].round(), q[1].round());
                let back = view.affine.inverse().unwrap();
                let src = crate::geometry::PlanarTransform::apply(&back, [qx, qy]).unwrap();
                let (sx, sy) = (src[0].round(), src[1].round());
                if (sx - p[0]).abs() > 0.0 || (sy - p[1]).abs() > 0.0 {
                    continue;
                }
                for c in 0..3 {
                    assert_eq!(
                        view.image.sample_nearest(c, q[0], q[1]).unwrap(),
                        img.get(c, p[0] as usize, p[1] as usize)
                    );
                }
                checked += 1;
            }
        }
        assert!(checked > 50, "only {checked} points checked");
    }

    #[test]
    fn points_leaving_the_frame_are_flagged() {
        let img = texture(30, 30);
        let roi = RoiMask::full(30, 30);
        let spec = BatchSpec {
            n_views: 4,
            affine: AffineRanges {
                translate_frac: ParamRange::new(0.4, 0.45),
                ..AffineRanges::identity()
            },
            ..identity_spec(200)
        };
        let mut a = ChaCha8Rng::seed_from_u64(8);
        let mut s = ChaCha8Rng::seed_from_u64(9);
        let b = build_view_batch(&mut a, &mut s, &img, &roi, &spec).unwrap();
        for v in 0..4 {
            for (i, q) in b.per_view_points[v].coords.iter().enumerate() {
                let inside = q[0] >= 0.0 && q[1] >= 0.0 && q[0] <= 29.0 && q[1] <= 29.0;
                assert_eq!(
                    b.valid[v][i],
                    inside && b.views[v].validity.contains(q[0], q[1])
                );
                if q[0] > 29.0 {
                    assert!(!b.valid[v][i]);
                }
            }
        }
        assert!(b.invalid_fraction() > 0.2);
    }

    #[test]
    fn seeded_batches_are_reproducible() {
        let img = texture(32, 32);
        let roi = RoiMask::full(32, 32);
        let spec = BatchSpec {
            n_views: 3,
            point_count: 30,
            ..BatchSpec::default()
        };
        let run = || {
            let mut a = ChaCha8Rng::seed_from_u64(10);
            let mut s = ChaCha8Rng::seed_from_u64(11);
            build_view_batch(&mut a, &mut s, &img, &roi, &spec).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn invalid_fraction_grows_with_translation() {
        let img = texture(32, 32);
        let roi = RoiMask::full(32, 32);
        let mut fractions = Vec::new();
        for t in [0.0, 0.15, 0.3, 0.45] {
            let spec = BatchSpec {
                n_views: 2,
                affine: AffineRanges {
                    translate_frac: ParamRange::symmetric(t),
                    ..AffineRanges::identity()
                },
                ..identity_spec(64)
            };
            let mut a = ChaCha8Rng::seed_from_u64(12);
            let mut s = ChaCha8Rng::seed_from_u64(13);
            let mut acc = 0.0;
            for _ in 0..100 {
                acc += build_view_batch(&mut a, &mut s, &img, &roi, &spec)
                    .unwrap()
                    .invalid_fraction();
            }
            fractions.push(acc / 100.0);
        }
        assert!(fractions.windows(2).all(|w| w[0] <= w[1]), "{fractions:?}");
        assert_eq!(fractions[0], 0.0);
    }
}
