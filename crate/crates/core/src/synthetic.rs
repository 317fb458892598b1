//! Procedural fundus-like images: a bright circular field with a darker
//! branching vessel tree, an optic disc and faint background texture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::raster::{Image, Mask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VesselParams {
    pub width: usize,
    pub height: usize,
    /// Field radius as a fraction of the smaller side.
    pub field_radius: f64,
    pub trees: usize,
    pub branch_prob: f64,
    /// Root vessel width in pixels at a 512 px field; scaled with size.
    pub root_width: f64,
    pub texture_amplitude: f64,
}

impl Default for VesselParams {
    fn default() -> Self {
        Self {
            width: 565,
            height: 565,
            field_radius: 0.47,
            trees: 7,
            branch_prob: 0.035,
            root_width: 9.0,
            texture_amplitude: 0.06,
        }
    }
}

impl VesselParams {
    pub fn with_size(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticFundus {
    pub image: Image,
    pub vessels: Mask,
    pub field: Mask,
}

struct Segment {
    x: f64,
    y: f64,
    angle: f64,
    width: f64,
    length: f64,
}

/// Circular field-of-view mask.
pub fn field_mask(width: usize, height: usize, radius_frac: f64) -> Mask {
    let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    let r = radius_frac * width.min(height) as f64;
    Mask::from_fn(width, height, |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        dx * dx + dy * dy <= r * r
    })
}

pub fn generate_fundus(params: &VesselParams, seed: u64) -> SyntheticFundus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (params.width, params.height);
    let side = w.min(h) as f64;
    let scale = side / 512.0;
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let radius = params.field_radius * side;

    // optic disc somewhere left or right of center
    let sgn = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let od = (
        cx + sgn * radius * rng.random_range(0.35..0.55),
        cy + radius * rng.random_range(-0.15..0.15),
    );
    let od_r = radius * rng.random_range(0.11..0.15);

    let mut vessel = vec![0.0f32; w * h];
    let mut stack: Vec<Segment> = (0..params.trees)
        .map(|t| {
            let base = t as f64 / params.trees as f64 * std::f64::consts::TAU;
            Segment {
                x: od.0,
                y: od.1,
                angle: base + rng.random_range(-0.3..0.3),
                width: params.root_width * scale * rng.random_range(0.7..1.0),
                length: radius * rng.random_range(1.0..1.6),
            }
        })
        .collect();
    let step = 0.7f64.max(scale);
    let mut segments = 0;
    while let Some(mut s) = stack.pop() {
        segments += 1;
        if segments > 400 {
            break;
        }
        let mut curl: f64 = rng.random_range(-0.02..0.02);
        let mut travelled = 0.0;
        while travelled < s.length && s.width >= 0.8 * scale.max(0.5) {
            stamp(&mut vessel, w, h, s.x, s.y, s.width / 2.0);
            curl = (curl + rng.random_range(-0.01..0.01)).clamp(-0.05, 0.05);
            s.angle += curl;
            s.x += step * s.angle.cos();
            s.y += step * s.angle.sin();
            travelled += step;
            s.width *= 1.0 - 0.0015 * step;
            let (dx, dy) = (s.x - cx, s.y - cy);
            if dx * dx + dy * dy > (radius * 1.05).powi(2) {
                break;
            }
            if rng.random_bool((params.branch_prob * step / 4.0).min(1.0)) && s.width > 1.5 * scale
            {
                let dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                stack.push(Segment {
                    x: s.x,
                    y: s.y,
                    angle: s.angle + dir * rng.random_range(0.4..1.1),
                    width: s.width * rng.random_range(0.55..0.8),
                    length: (s.length - travelled) * rng.random_range(0.4..0.9),
                });
                s.width *= 0.9;
                s.angle -= dir * rng.random_range(0.1..0.3);
            }
        }
    }

    // smooth background texture from a handful of random plane waves
    let waves: Vec<(f64, f64, f64, f64)> = (0..12)
        .map(|_| {
            let f = rng.random_range(2.0..14.0) / side;
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            (
                f * a.cos(),
                f * a.sin(),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.3..1.0),
            )
        })
        .collect();
    let wsum: f64 = waves.iter().map(|w| w.3).sum();
    let tint = [
        rng.random_range(0.78..0.92),
        rng.random_range(0.38..0.5),
        rng.random_range(0.14..0.24),
    ];

    let field = field_mask(w, h, params.field_radius);
    let mut vessels = Mask::new(w, h, false);
    let img = Image::from_fn(w, h, 3, |c, x, y| {
        if !field.get(x, y) {
            return 0.0;
        }
        let (fx, fy) = (x as f64, y as f64);
        let rr = ((fx - cx).powi(2) + (fy - cy).powi(2)).sqrt() / radius;
        let vignette = 1.0 - 0.35 * rr * rr;
        let tex: f64 = waves
            .iter()
            .map(|&(kx, ky, ph, amp)| {
                amp * (std::f64::consts::TAU * (kx * fx + ky * fy) + ph).sin()
            })
            .sum::<f64>()
            / wsum;
        let d_od = ((fx - od.0).powi(2) + (fy - od.1).powi(2)).sqrt() / od_r;
        let disc = (-(d_od * d_od)).exp();
        let v = vessel[y * w + x] as f64;
        if c == 0 && v > 0.5 {
            vessels.set(x, y, true);
        }
        let base = tint[c] * vignette * (1.0 + params.texture_amplitude * 2.0 * tex);
        let lit = base + disc * (0.95 - base) * 0.85;
        let darken = [0.35, 0.6, 0.55][c];
        (lit * (1.0 - darken * v)).clamp(0.0, 1.0) as f32
    });
    SyntheticFundus {
        image: img,
        vessels,
        field,
    }
}

/// Image only.
pub fn vessel_image(params: &VesselParams, seed: u64) -> Image {
    generate_fundus(params, seed).image
}

/// Soft disc with a one-pixel anti-aliased rim; keeps the maximum.
fn stamp(map: &mut [f32], w: usize, h: usize, x: f64, y: f64, r: f64) {
    let r = r.max(0.4);
    let x0 = (x - r - 1.0).floor().max(0.0) as usize;
    let y0 = (y - r - 1.0).floor().max(0.0) as usize;
    let x1 = ((x + r + 1.0).ceil() as usize).min(w.saturating_sub(1));
    let y1 = ((y + r + 1.0).ceil() as usize).min(h.saturating_sub(1));
    if x < -r - 1.0 || y < -r - 1.0 {
        return;
    }
    for py in y0..=y1 {
        for px in x0..=x1 {
            let d = ((px as f64 - x).powi(2) + (py as f64 - y).powi(2)).sqrt();
            let v = (r + 0.5 - d).clamp(0.0, 1.0) as f32;
            let m = &mut map[py * w + px];
            *m = m.max(v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augmentation::{estimate_roi, DEFAULT_ROI_THRESHOLD};

    #[test]
    fn deterministic_and_seed_dependent() {
        let p = VesselParams::with_size(96, 96);
        assert_eq!(generate_fundus(&p, 3), generate_fundus(&p, 3));
        assert_ne!(generate_fundus(&p, 3).image, generate_fundus(&p, 4).image);
    }

    #[test]
    fn roi_estimate_recovers_the_field() {
        let p = VesselParams::with_size(120, 100);
        let f = generate_fundus(&p, 1);
        let roi = estimate_roi(&f.image, DEFAULT_ROI_THRESHOLD).unwrap();
        let agree = roi
            .mask
            .data()
            .iter()
            .zip(f.field.data())
            .filter(|(a, b)| a == b)
            .count();
        assert!(agree as f64 > 0.98 * (120 * 100) as f64);
        let vessel_frac = f.vessels.count() as f64 / f.field.count() as f64;
        assert!(vessel_frac > 0.02 && vessel_frac < 0.4, "{vessel_frac}");
    }
}
