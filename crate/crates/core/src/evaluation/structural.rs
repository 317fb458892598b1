use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{warp_image, warp_mask, Interpolation, PlanarTransform};
use crate::raster::{Image, Mask};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
const C3: f64 = C2 / 2.0;

/// Both values rescaled from `[-1, 1]` to `[0, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StructuralMetrics {
    pub ssim: f64,
    pub sm: f64,
    /// Number of windows averaged.
    pub windows: usize,
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable filter evaluated only where the whole window fits in the image.
fn filter(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = SSIM_WINDOW / 2;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in r..w.saturating_sub(r) {
            tmp[y * w + x] = (0..SSIM_WINDOW)
                .map(|i| k[i] * src[y * w + x + i - r])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in r..h.saturating_sub(r) {
        for x in 0..w {
            out[y * w + x] = (0..SSIM_WINDOW)
                .map(|i| k[i] * tmp[(y + i - r) * w + x])
                .sum();
        }
    }
    out
}

/// Centers whose full window lies inside `mask`.
fn window_centers(mask: &Mask) -> Vec<(usize, usize)> {
    let (w, h) = mask.size();
    let r = SSIM_WINDOW / 2;
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Vec::new();
    }
    let mut integral = vec![0u32; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0;
        for x in 0..w {
            row += mask.get(x, y) as u32;
            integral[(y + 1) * (w + 1) + x + 1] = integral[y * (w + 1) + x + 1] + row;
        }
    }
    let full = (SSIM_WINDOW * SSIM_WINDOW) as u32;
    let mut out = Vec::new();
    for y in r..h - r {
        for x in r..w - r {
            let (x0, y0, x1, y1) = (x - r, y - r, x + r + 1, y + r + 1);
            let s = integral[y1 * (w + 1) + x1] + integral[y0 * (w + 1) + x0]
                - integral[y0 * (w + 1) + x1]
                - integral[y1 * (w + 1) + x0];
            if s == full {
                out.push((x, y));
            }
        }
    }
    out
}

/// SSIM and its structure term between `fixed` and `moving` warped into the
/// fixed frame by `h`. Only windows lying entirely inside the intersection
/// of both RoIs (after warping) contribute.
pub fn structural_metrics<T: PlanarTransform + ?Sized>(
    fixed: &Image,
    moving: &Image,
    h: &T,
    roi_fixed: &Mask,
    roi_moving: &Mask,
) -> Result<StructuralMetrics> {
    if roi_fixed.size() != fixed.size() || roi_moving.size() != moving.size() {
        return Err(Error::Shape("RoI masks must match their images".into()));
    }
    let (w, hh) = fixed.size();
    let gx = fixed.luminance();
    let (gy, valid) = warp_image(h, &moving.luminance(), (w, hh), Interpolation::Bilinear)?;
    let overlap = roi_fixed
        .and(&warp_mask(h, roi_moving, (w, hh))?)?
        .and(&valid)?;
    structural_in_mask(&gx, &gy, &overlap)
}

/// Same as [`structural_metrics`] for two single-channel images already in
/// one frame.
pub fn structural_in_mask(x: &Image, y: &Image, overlap: &Mask) -> Result<StructuralMetrics> {
    if x.size() != y.size() || x.size() != overlap.size() || x.channels() != 1 || y.channels() != 1
    {
        return Err(Error::Shape(
            "structural metrics need two equal-size grayscale images and a mask".into(),
        ));
    }
    let centers = window_centers(overlap);
    if centers.is_empty() {
        log::warn!(
            "no {SSIM_WINDOW}x{SSIM_WINDOW} window fits inside the RoI overlap; reporting 0"
        );
        return Ok(StructuralMetrics::default());
    }
    let (w, h) = x.size();
    let k = gaussian_kernel();
    let a: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = y.data().iter().map(|&v| v as f64).collect();
    let mu_a = filter(&a, w, h, &k);
    let mu_b = filter(&b, w, h, &k);
    let aa = filter(&a.iter().map(|v| v * v).collect::<Vec<_>>(), w, h, &k);
    let bb = filter(&b.iter().map(|v| v * v).collect::<Vec<_>>(), w, h, &k);
    let ab = filter(
        &a.iter().zip(&b).map(|(p, q)| p * q).collect::<Vec<_>>(),
        w,
        h,
        &k,
    );

    let (mut ssim, mut sm) = (0.0, 0.0);
    for &(cx, cy) in &centers {
        let i = cy * w + cx;
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = (aa[i] - ma * ma).max(0.0);
        let vb = (bb[i] - mb * mb).max(0.0);
        let cov = ab[i] - ma * mb;
        ssim +=
            ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
        sm += (cov + C3) / (va.sqrt() * vb.sqrt() + C3);
    }
    let n = centers.len() as f64;
    let rescale = |v: f64| ((v / n + 1.0) / 2.0).clamp(0.0, 1.0);
    Ok(StructuralMetrics {
        ssim: rescale(ssim),
        sm: rescale(sm),
        windows: centers.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{AffineParams, AffineTransform, Homography};

    fn texture(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, 1, |_, x, y| {
            let (fx, fy) = (x as f32, y as f32);
            0.45 + 0.2 * (fx * 0.9).sin() * (fy * 0.7).cos() + 0.15 * ((fx + 2.0 * fy) * 0.37).sin()
        })
    }

    #[test]
    fn self_pair_is_one() {
        let img = texture(40, 36);
        let m = Mask::new(40, 36, true);
        let s = structural_metrics(&img, &img, &Homography::identity(), &m, &m).unwrap();
        assert!((s.ssim - 1.0).abs() < 1e-6 && (s.sm - 1.0).abs() < 1e-6);
        assert_eq!(s.windows, 30 * 26);
    }

    #[test]
    fn inverted_image_structure_is_zero() {
        let img = texture(40, 36);
        let mut inv = img.clone();
        inv.data_mut().iter_mut().for_each(|v| *v = 1.0 - *v);
        let m = Mask::new(40, 36, true);
        let s = structural_in_mask(&img, &inv, &m).unwrap();
        // C3 keeps low-variance windows slightly above -1
        assert!(s.sm < 0.05, "{}", s.sm);
    }

    #[test]
    fn bias_keeps_structure_but_lowers_ssim() {
        let img = texture(40, 36);
        let mut b = img.clone();
        b.data_mut().iter_mut().for_each(|v| *v += 0.1);
        let m = Mask::new(40, 36, true);
        let s = structural_in_mask(&img, &b, &m).unwrap();
        assert!((s.sm - 1.0).abs() < 1e-6);
        assert!(s.ssim < 1.0 - 1e-4);
    }

    #[test]
    fn windows_stay_inside_overlap() {
        let m = Mask::from_fn(30, 30, |x, _| x < 15);
        let c = window_centers(&m);
        assert!(!c.is_empty());
        assert!(c.iter().all(|&(x, _)| (5..=9).contains(&x)));
        let tiny = Mask::from_fn(30, 30, |x, y| x < 10 && y < 10);
        let img = texture(30, 30);
        assert_eq!(
            structural_in_mask(&img, &img, &tiny).unwrap(),
            StructuralMetrics::default()
        );
    }

    #[test]
    fn swapping_roles_with_inverse() {
        let base = texture(72, 72);
        let p = AffineParams {
            rotation_deg: 4.0,
            translate_px: [1.0, 0.5],
            scale: 1.0,
            shear_deg: 0.0,
        };
        let a = AffineTransform::from_params(&p, (72, 72));
        let (moving, _) = warp_image(&a, &base, (72, 72), Interpolation::Bilinear).unwrap();
        let h = a.inverse().unwrap().to_homography();
        let disc = Mask::from_fn(72, 72, |x, y| {
            (x as f64 - 35.5).powi(2) + (y as f64 - 35.5).powi(2) < 30.0f64.powi(2)
        });
        let f = structural_metrics(&base, &moving, &h, &disc, &disc).unwrap();
        let r = structural_metrics(&moving, &base, &a, &disc, &disc).unwrap();
        assert!(
            (f.ssim - r.ssim).abs() < 0.01 && (f.sm - r.sm).abs() < 0.01,
            "{f:?} {r:?}"
        );
        assert!(f.sm > 0.9);
    }
}
