use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Image, Mask};

pub type Point = [f64; 2];

/// Points with stable correspondence identifiers.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct PointSet {
    pub coords: Vec<Point>,
    pub ids: Vec<u64>,
}

impl PointSet {
    pub fn new(coords: Vec<Point>, ids: Vec<u64>) -> Result<Self> {
        if coords.len() != ids.len() {
            return Err(Error::Shape(format!(
                "{} coordinates but {} ids",
                coords.len(),
                ids.len()
            )));
        }
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput("point ids must be unique".into()));
        }
        Ok(Self { coords, ids })
    }

    /// Assigns sequential ids `0..n`.
    pub fn from_coords(coords: Vec<Point>) -> Self {
        let ids = (0..coords.len() as u64).collect();
        Self { coords, ids }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, Point)> + '_ {
        self.ids.iter().copied().zip(self.coords.iter().copied())
    }

    /// Multiplies x and y independently.
    pub fn scaled(&self, sx: f64, sy: f64) -> PointSet {
        PointSet {
            coords: self.coords.iter().map(|p| [p[0] * sx, p[1] * sy]).collect(),
            ids: self.ids.clone(),
        }
    }
}

/// Anything that maps image-plane points.
pub trait PlanarTransform {
    /// Maps `p`; `None` when the homogeneous scale vanishes.
    fn apply(&self, p: Point) -> Option<Point>;
    fn to_homography(&self) -> Homography;
}

/// Inclusive `[min, max]` range for uniform sampling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRange {
    pub min: f64,
    pub max: f64,
}

impl ParamRange {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub const fn symmetric(half: f64) -> Self {
        Self {
            min: -half,
            max: half,
        }
    }

    pub const fn fixed(v: f64) -> Self {
        Self { min: v, max: v }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if !self.min.is_finite() || !self.max.is_finite() {
            return Err(Error::Config(format!(
                "{name}: range bounds must be finite"
            )));
        }
        if self.min > self.max {
            return Err(Error::Config(format!(
                "{name}: min {} exceeds max {}",
                self.min, self.max
            )));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.min == self.max {
            // consume a draw so streams stay aligned regardless of width
            let _: f64 = rng.random();
            self.min
        } else {
            rng.random_range(self.min..=self.max)
        }
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }
}

/// Sampling ranges for random affine augmentation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineRanges {
    pub rotation_deg: ParamRange,
    /// Translation as a fraction of the image size, per axis.
    pub translate_frac: ParamRange,
    pub scale: ParamRange,
    pub shear_deg: ParamRange,
}

impl AffineRanges {
    /// Descriptor/detector training regime.
    pub const fn training() -> Self {
        Self {
            rotation_deg: ParamRange::symmetric(60.0),
            translate_frac: ParamRange::symmetric(0.25),
            scale: ParamRange::new(0.75, 1.25),
            shear_deg: ParamRange::symmetric(30.0),
        }
    }

    /// Synthetic evaluation pairs: no translation.
    pub const fn evaluation() -> Self {
        Self {
            rotation_deg: ParamRange::symmetric(45.0),
            translate_frac: ParamRange::fixed(0.0),
            scale: ParamRange::new(0.9, 1.1),
            shear_deg: ParamRange::symmetric(10.0),
        }
    }

    pub const fn identity() -> Self {
        Self {
            rotation_deg: ParamRange::fixed(0.0),
            translate_frac: ParamRange::fixed(0.0),
            scale: ParamRange::fixed(1.0),
            shear_deg: ParamRange::fixed(0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.rotation_deg.validate("rotation_deg")?;
        self.translate_frac.validate("translate_frac")?;
        self.scale.validate("scale")?;
        self.shear_deg.validate("shear_deg")?;
        if self.scale.min <= 0.0 {
            return Err(Error::Config("scale: range must be positive".into()));
        }
        Ok(())
    }
}

/// Concrete parameters of one sampled affine transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub rotation_deg: f64,
    pub translate_px: [f64; 2],
    pub scale: f64,
    pub shear_deg: f64,
}

impl AffineParams {
    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            translate_px: [0.0, 0.0],
            scale: 1.0,
            shear_deg: 0.0,
        }
    }
}

/// 2x3 affine map in pixel units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub matrix: [[f64; 3]; 2],
    pub image_size: (usize, usize),
}

impl AffineTransform {
    pub fn identity(image_size: (usize, usize)) -> Self {
        Self {
            matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            image_size,
        }
    }

    pub fn translation(tx: f64, ty: f64, image_size: (usize, usize)) -> Self {
        Self {
            matrix: [[1.0, 0.0, tx], [0.0, 1.0, ty]],
            image_size,
        }
    }

    /// `T_center * T * R * Sh * S * T_center^-1`, pivoting on the image center.
    pub fn from_params(p: &AffineParams, image_size: (usize, usize)) -> Self {
        let (w, h) = image_size;
        let cx = (w as f64 - 1.0) / 2.0;
        let cy = (h as f64 - 1.0) / 2.0;
        let (s, c) = p.rotation_deg.to_radians().sin_cos();
        let sh = p.shear_deg.to_radians().tan();
        // R * Sh * S
        let a = c * p.scale;
        let b = (c * sh - s) * p.scale;
        let d = s * p.scale;
        let e = (s * sh + c) * p.scale;
        let tx = cx + p.translate_px[0] - (a * cx + b * cy);
        let ty = cy + p.translate_px[1] - (d * cx + e * cy);
        Self {
            matrix: [[a, b, tx], [d, e, ty]],
            image_size,
        }
    }

    pub fn linear_det(&self) -> f64 {
        let m = &self.matrix;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn inverse(&self) -> Result<AffineTransform> {
        let det = self.linear_det();
        if det.abs() <= 1e-8 || !det.is_finite() {
            return Err(Error::Singular { det });
        }
        let m = &self.matrix;
        let (a, b, c, d) = (m[1][1] / det, -m[0][1] / det, -m[1][0] / det, m[0][0] / det);
        let tx = -(a * m[0][2] + b * m[1][2]);
        let ty = -(c * m[0][2] + d * m[1][2]);
        Ok(AffineTransform {
            matrix: [[a, b, tx], [c, d, ty]],
            image_size: self.image_size,
        })
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &AffineTransform) -> AffineTransform {
        let h = self.to_homography().compose(&other.to_homography());
        let m = h.matrix();
        AffineTransform {
            matrix: [[m[0][0], m[0][1], m[0][2]], [m[1][0], m[1][1], m[1][2]]],
            image_size: self.image_size,
        }
    }
}

impl PlanarTransform for AffineTransform {
    #[inline]
    fn apply(&self, p: Point) -> Option<Point> {
        let m = &self.matrix;
        Some([
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2],
        ])
    }

    fn to_homography(&self) -> Homography {
        let m = &self.matrix;
        Homography::from_matrix([m[0], m[1], [0.0, 0.0, 1.0]])
    }
}

/// Draws affine parameters uniformly within `ranges`.
pub fn sample_affine_params<R: Rng + ?Sized>(
    rng: &mut R,
    ranges: &AffineRanges,
    image_size: (usize, usize),
) -> Result<AffineParams> {
    ranges.validate()?;
    if image_size.0 == 0 || image_size.1 == 0 {
        return Err(Error::InvalidInput("image size must be positive".into()));
    }
    let rotation_deg = ranges.rotation_deg.sample(rng);
    let tx = ranges.translate_frac.sample(rng) * image_size.0 as f64;
    let ty = ranges.translate_frac.sample(rng) * image_size.1 as f64;
    let scale = ranges.scale.sample(rng);
    let shear_deg = ranges.shear_deg.sample(rng);
    Ok(AffineParams {
        rotation_deg,
        translate_px: [tx, ty],
        scale,
        shear_deg,
    })
}

pub fn sample_affine<R: Rng + ?Sized>(
    rng: &mut R,
    ranges: &AffineRanges,
    image_size: (usize, usize),
) -> Result<AffineTransform> {
    let p = sample_affine_params(rng, ranges, image_size)?;
    Ok(AffineTransform::from_params(&p, image_size))
}

/// Projective map, normalized so the bottom-right entry is 1 when nonzero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography {
    m: [[f64; 3]; 3],
}

impl Homography {
    pub fn identity() -> Self {
        Self::from_matrix([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn from_matrix(m: [[f64; 3]; 3]) -> Self {
        let s = m[2][2];
        if s != 0.0 && s.is_finite() && s != 1.0 {
            let mut n = m;
            for row in &mut n {
                for v in row.iter_mut() {
                    *v /= s;
                }
            }
            Self { m: n }
        } else {
            Self { m }
        }
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn inverse(&self) -> Result<Homography> {
        let det = self.det();
        if det.abs() <= 1e-10 || !det.is_finite() {
            return Err(Error::Singular { det });
        }
        let m = &self.m;
        let mut inv = [[0.0; 3]; 3];
        inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
        inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
        inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
        inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
        inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
        inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
        inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
        inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
        inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
        Ok(Homography::from_matrix(inv))
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Homography) -> Homography {
        let (a, b) = (&self.m, &other.m);
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        Homography::from_matrix(r)
    }

    /// Determinant of the upper-left 2x2 block.
    pub fn linear_det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    /// Ratio of the singular values of the upper-left 2x2 block.
    pub fn anisotropy(&self) -> f64 {
        let (a, b, c, d) = (self.m[0][0], self.m[0][1], self.m[1][0], self.m[1][1]);
        let s1 = a * a + b * b + c * c + d * d;
        let det = (a * d - b * c).abs();
        let disc = (s1 * s1 - 4.0 * det * det).max(0.0).sqrt();
        let smax = ((s1 + disc) / 2.0).sqrt();
        let smin = ((s1 - disc) / 2.0).max(0.0).sqrt();
        if smin <= f64::EPSILON * smax.max(1.0) {
            f64::INFINITY
        } else {
            smax / smin
        }
    }

    /// Orientation preserved and anisotropy below `max_anisotropy`.
    pub fn is_plausible(&self, max_anisotropy: f64) -> bool {
        self.m.iter().flatten().all(|v| v.is_finite())
            && self.det().abs() > 1e-10
            && self.linear_det() > 0.0
            && self.anisotropy() < max_anisotropy
    }

    /// Nine whitespace-separated decimals, row-major.
    pub fn to_row_major_string(&self) -> String {
        self.to_string()
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.m;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    pub fn from_row_major(v: [f64; 9]) -> Homography {
        Homography::from_matrix([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]])
    }
}

impl PlanarTransform for Homography {
    #[inline]
    fn apply(&self, p: Point) -> Option<Point> {
        let m = &self.m;
        let w = m[2][0] * p[0] + m[2][1] * p[1] + m[2][2];
        if w.abs() < 1e-12 || !w.is_finite() {
            return None;
        }
        Some([
            (m[0][0] * p[0] + m[0][1] * p[1] + m[0][2]) / w,
            (m[1][0] * p[0] + m[1][1] * p[1] + m[1][2]) / w,
        ])
    }

    fn to_homography(&self) -> Homography {
        *self
    }
}

impl fmt::Display for Homography {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.to_row_major();
        for (i, x) in v.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{x}")?;
        }
        Ok(())
    }
}

impl FromStr for Homography {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let vals: Vec<f64> = s
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidInput(format!("homography: {e}")))?;
        let arr: [f64; 9] = vals.try_into().map_err(|v: Vec<f64>| {
            Error::InvalidInput(format!("homography needs 9 values, got {}", v.len()))
        })?;
        Ok(Homography::from_row_major(arr))
    }
}

impl Serialize for Homography {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Homography {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Output of [`warp_points`]: `finite[i]` is false where the homogeneous
/// scale vanished; such points carry NaN coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpedPoints {
    pub points: PointSet,
    pub finite: Vec<bool>,
}

pub fn warp_points<T: PlanarTransform + ?Sized>(transform: &T, points: &PointSet) -> WarpedPoints {
    let mut coords = Vec::with_capacity(points.len());
    let mut finite = Vec::with_capacity(points.len());
    for &p in &points.coords {
        match transform.apply(p) {
            Some(q) => {
                coords.push(q);
                finite.push(true);
            }
            None => {
                coords.push([f64::NAN, f64::NAN]);
                finite.push(false);
            }
        }
    }
    WarpedPoints {
        points: PointSet {
            coords,
            ids: points.ids.clone(),
        },
        finite,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Bilinear,
    Nearest,
}

/// Backward-maps every output pixel through the inverse transform.
/// Returns the warped image and the mask of pixels that landed inside the
/// source.
pub fn warp_image<T: PlanarTransform + ?Sized>(
    transform: &T,
    image: &Image,
    out_size: (usize, usize),
    interpolation: Interpolation,
) -> Result<(Image, Mask)> {
    let inv = transform.to_homography().inverse()?;
    let (ow, oh) = out_size;
    let mut out = Image::new(ow, oh, image.channels());
    let mut mask = Mask::new(ow, oh, false);
    for y in 0..oh {
        for x in 0..ow {
            let Some(src) = inv.apply([x as f64, y as f64]) else {
                continue;
            };
            let inside =
                match interpolation {
                    Interpolation::Nearest => {
                        crate::raster::nearest_pixel(src[0], src[1], image.width(), image.height())
                            .map(|(xi, yi)| {
                                for c in 0..image.channels() {
                                    out.set(c, x, y, image.get(c, xi, yi));
                                }
                            })
                    }
                    Interpolation::Bilinear => {
                        crate::raster::bilinear_cell(src[0], src[1], image.width(), image.height())
                            .map(|_| {
                                for c in 0..image.channels() {
                                    let v = image.sample_bilinear(c, src[0], src[1]).unwrap_or(0.0);
                                    out.set(c, x, y, v);
                                }
                            })
                    }
                };
            if inside.is_some() {
                mask.set(x, y, true);
            }
        }
    }
    Ok((out, mask))
}

/// Warps a mask with nearest-neighbor lookup.
pub fn warp_mask<T: PlanarTransform + ?Sized>(
    transform: &T,
    mask: &Mask,
    out_size: (usize, usize),
) -> Result<Mask> {
    let inv = transform.to_homography().inverse()?;
    Ok(Mask::from_fn(out_size.0, out_size.1, |x, y| {
        inv.apply([x as f64, y as f64])
            .is_some_and(|s| mask.contains(s[0], s[1]))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dist(a: Point, b: Point) -> f64 {
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }

    #[test]
    fn zero_width_ranges_give_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = sample_affine(&mut rng, &AffineRanges::identity(), (64, 48)).unwrap();
        let id = AffineTransform::identity((64, 48));
        for (r1, r2) in a.matrix.iter().zip(id.matrix.iter()) {
            for (x, y) in r1.iter().zip(r2) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inverted_range_is_config_error() {
        let mut r = AffineRanges::training();
        r.scale = ParamRange::new(1.2, 0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            sample_affine(&mut rng, &r, (10, 10)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn sampled_parameters_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let r = AffineRanges::training();
        for _ in 0..200 {
            let p = sample_affine_params(&mut rng, &r, (100, 80)).unwrap();
            assert!(p.rotation_deg.abs() <= 60.0);
            assert!(p.translate_px[0].abs() <= 25.0 && p.translate_px[1].abs() <= 20.0);
            assert!((0.75..=1.25).contains(&p.scale));
            assert!(p.shear_deg.abs() <= 30.0);
        }
    }

    #[test]
    fn pivot_is_image_center() {
        let p = AffineParams {
            rotation_deg: 33.0,
            translate_px: [0.0, 0.0],
            scale: 1.2,
            shear_deg: 11.0,
        };
        let a = AffineTransform::from_params(&p, (101, 51));
        let c = a.apply([50.0, 25.0]).unwrap();
        assert!(dist(c, [50.0, 25.0]) < 1e-9);
    }

    #[test]
    fn translation_moves_origin() {
        let t = AffineTransform::translation(10.0, -5.0, (4, 4));
        let w = warp_points(&t, &PointSet::from_coords(vec![[0.0, 0.0]]));
        assert_eq!(w.points.coords[0], [10.0, -5.0]);
        assert_eq!(w.points.ids, vec![0]);
    }

    #[test]
    fn vanishing_scale_flags_point() {
        let h = Homography::from_matrix([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 1.0]]);
        let w = warp_points(&h, &PointSet::from_coords(vec![[-1.0, 3.0], [1.0, 1.0]]));
        assert_eq!(w.finite, vec![false, true]);
        assert_eq!(w.points.len(), 2);
    }

    #[test]
    fn identity_warp_is_bitwise_equal() {
        let img = Image::from_fn(7, 5, 3, |c, x, y| {
            ((c * 31 + x * 7 + y * 3) % 11) as f32 / 10.0
        });
        let (out, mask) = warp_image(
            &AffineTransform::identity((7, 5)),
            &img,
            (7, 5),
            Interpolation::Nearest,
        )
        .unwrap();
        assert_eq!(out, img);
        assert_eq!(mask.count(), 35);
    }

    #[test]
    fn quarter_turn_permutes_pixels() {
        let img = Image::from_fn(4, 4, 1, |_, x, y| (y * 4 + x) as f32);
        let p = AffineParams {
            rotation_deg: 90.0,
            ..AffineParams::identity()
        };
        let a = AffineTransform::from_params(&p, (4, 4));
        let (out, mask) = warp_image(&a, &img, (4, 4), Interpolation::Nearest).unwrap();
        assert_eq!(mask.count(), 16);
        // forward map about (1.5, 1.5): (x, y) -> (3 - y, x)
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(out.get(0, 3 - y, x), img.get(0, x, y));
            }
        }
    }

    #[test]
    fn full_width_translation_empties_image() {
        let img = Image::from_fn(6, 3, 1, |_, _, _| 1.0);
        let t = AffineTransform::translation(6.0, 0.0, (6, 3));
        let (out, mask) = warp_image(&t, &img, (6, 3), Interpolation::Bilinear).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        assert!(mask.is_empty());
    }

    #[test]
    fn singular_transform_rejected() {
        let a = AffineTransform {
            matrix: [[1.0, 2.0, 0.0], [2.0, 4.0, 0.0]],
            image_size: (4, 4),
        };
        assert!(matches!(a.inverse(), Err(Error::Singular { .. })));
        let img = Image::new(4, 4, 1);
        assert!(warp_image(&a, &img, (4, 4), Interpolation::Nearest).is_err());
    }

    #[test]
    fn homography_string_round_trip_is_exact() {
        let h =
            Homography::from_matrix([[1.1, 0.02, -3.5], [0.01, 0.97, 12.25], [1e-5, -2e-5, 1.0]]);
        let s = h.to_row_major_string();
        assert_eq!(s.split_whitespace().count(), 9);
        assert_eq!(s.parse::<Homography>().unwrap(), h);
        assert!("1 2 3".parse::<Homography>().is_err());
    }

    #[test]
    fn plausibility_flags_reflection_and_shear() {
        assert!(Homography::identity().is_plausible(20.0));
        let refl = Homography::from_matrix([[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(!refl.is_plausible(20.0));
        let squash = Homography::from_matrix([[30.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!((squash.anisotropy() - 30.0).abs() < 1e-9);
        assert!(!squash.is_plausible(20.0));
    }

    proptest! {
        #[test]
        fn affine_round_trip(rot in -180.0f64..180.0, tx in -50.0f64..50.0, ty in -50.0f64..50.0,
                             scale in 0.5f64..2.0, shear in -40.0f64..40.0,
                             px in 0.0f64..200.0, py in 0.0f64..200.0) {
            let p = AffineParams { rotation_deg: rot, translate_px: [tx, ty], scale, shear_deg: shear };
            let a = AffineTransform::from_params(&p, (200, 200));
            let inv = a.inverse().unwrap();
            let pts = PointSet::from_coords(vec![[px, py]]);
            let there = warp_points(&inv, &pts);
            let back = warp_points(&a, &there.points);
            prop_assert!(dist(back.points.coords[0], [px, py]) < 1e-6);
            let h = a.to_homography();
            let hb = h.inverse().unwrap().compose(&h);
            prop_assert!(dist(hb.apply([px, py]).unwrap(), [px, py]) < 1e-6);
        }
    }
}
