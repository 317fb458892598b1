use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ParamRange;
use crate::raster::Image;

/// Ranges for HSV perturbation. Hue shift is in turns (1.0 = 360°);
/// saturation and value are multiplicative factors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HsvRanges {
    pub hue_shift: ParamRange,
    pub saturation: ParamRange,
    pub value: ParamRange,
}

impl Default for HsvRanges {
    fn default() -> Self {
        Self {
            hue_shift: ParamRange::symmetric(0.05),
            saturation: ParamRange::new(0.7, 1.3),
            value: ParamRange::new(0.7, 1.3),
        }
    }
}

impl HsvRanges {
    pub const fn identity() -> Self {
        Self {
            hue_shift: ParamRange::fixed(0.0),
            saturation: ParamRange::fixed(1.0),
            value: ParamRange::fixed(1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hue_shift.validate("hue_shift")?;
        self.saturation.validate("saturation")?;
        self.value.validate("value")?;
        if self.saturation.min < 0.0 || self.value.min < 0.0 {
            return Err(Error::Config(
                "saturation/value factors must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub std: f64,
    pub prob: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            std: 0.05,
            prob: 0.25,
        }
    }
}

impl NoiseConfig {
    pub const fn none() -> Self {
        Self {
            std: 0.0,
            prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.std >= 0.0) || !(0.0..=1.0).contains(&self.prob) {
            return Err(Error::Config(
                "noise: std must be >= 0 and prob in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// One draw of photometric parameters. Keeping the draw separate from its
/// application lets several synthetic pairs share identical settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorJitterParams {
    pub hue_shift: f64,
    pub saturation: f64,
    pub value: f64,
    /// `(std, seed)` when Gaussian noise is applied.
    pub noise: Option<(f64, u64)>,
}

impl ColorJitterParams {
    pub fn identity() -> Self {
        Self {
            hue_shift: 0.0,
            saturation: 1.0,
            value: 1.0,
            noise: None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R, hsv: &HsvRanges, noise: &NoiseConfig) -> Self {
        let hue_shift = hsv.hue_shift.sample(rng);
        let saturation = hsv.saturation.sample(rng);
        let value = hsv.value.sample(rng);
        let apply: f64 = rng.random();
        let seed: u64 = rng.random();
        let noise = (apply < noise.prob && noise.std > 0.0).then_some((noise.std, seed));
        Self {
            hue_shift,
            saturation,
            value,
            noise,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.hue_shift == 0.0 && self.saturation == 1.0 && self.value == 1.0 && self.noise.is_none()
    }

    pub fn apply(&self, image: &Image) -> Image {
        let mut out = image.clone();
        if image.channels() == 3
            && (self.hue_shift != 0.0 || self.saturation != 1.0 || self.value != 1.0)
        {
            let n = image.width() * image.height();
            let data = out.data_mut();
            for i in 0..n {
                let (h, s, v) = rgb_to_hsv(data[i], data[n + i], data[2 * n + i]);
                let h = (h + self.hue_shift as f32).rem_euclid(1.0);
                let s = (s * self.saturation as f32).clamp(0.0, 1.0);
                let v = (v * self.value as f32).clamp(0.0, 1.0);
                let (r, g, b) = hsv_to_rgb(h, s, v);
                data[i] = r;
                data[n + i] = g;
                data[2 * n + i] = b;
            }
        }
        if let Some((std, seed)) = self.noise {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0f32, std as f32).expect("noise std validated");
            for v in out.data_mut() {
                *v += normal.sample(&mut rng);
            }
        }
        out.clamp01();
        out
    }
}

/// Random HSV perturbation plus optional Gaussian noise, clipped to [0, 1].
pub fn color_jitter<R: Rng + ?Sized>(
    rng: &mut R,
    image: &Image,
    hsv: &HsvRanges,
    noise: &NoiseConfig,
) -> Image {
    ColorJitterParams::sample(rng, hsv, noise).apply(image)
}

/// `h` in turns `[0, 1)`.
pub fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    (h, s, v)
}

pub fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    (r + m, g + m, b + m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_settings_leave_image_unchanged() {
        let img = Image::from_fn(8, 8, 3, |c, x, y| ((c + x * y) % 7) as f32 / 7.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = color_jitter(&mut rng, &img, &HsvRanges::identity(), &NoiseConfig::none());
        assert_eq!(out, img);
    }

    #[test]
    fn hue_third_turn_maps_red_to_green() {
        let red = Image::from_fn(2, 2, 3, |c, _, _| if c == 0 { 1.0 } else { 0.0 });
        let p = ColorJitterParams {
            hue_shift: 1.0 / 3.0,
            ..ColorJitterParams::identity()
        };
        let out = p.apply(&red);
        for i in 0..4 {
            assert!(out.plane(0)[i].abs() < 1e-5);
            assert!((out.plane(1)[i] - 1.0).abs() < 1e-5);
            assert!(out.plane(2)[i].abs() < 1e-5);
        }
    }

    #[test]
    fn hsv_round_trip() {
        for &(r, g, b) in &[
            (0.2, 0.5, 0.9),
            (0.9, 0.1, 0.4),
            (0.3, 0.3, 0.3),
            (0.0, 0.0, 0.0),
        ] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-5 && (g - g2).abs() < 1e-5 && (b - b2).abs() < 1e-5);
        }
    }

    #[test]
    fn noise_has_requested_spread() {
        let img = Image::from_fn(600, 600, 3, |_, _, _| 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = NoiseConfig {
            std: 0.05,
            prob: 1.0,
        };
        let out = color_jitter(&mut rng, &img, &HsvRanges::identity(), &noise);
        let diffs: Vec<f64> = out
            .data()
            .iter()
            .zip(img.data())
            .map(|(a, b)| (a - b) as f64)
            .collect();
        assert!(diffs.len() >= 1_000_000);
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diffs.len() as f64;
        let std = var.sqrt();
        assert!((0.045..=0.055).contains(&std), "std {std}");
    }

    #[test]
    fn output_is_clipped() {
        let img = Image::from_fn(20, 20, 3, |_, x, _| if x % 2 == 0 { 0.0 } else { 1.0 });
        let p = ColorJitterParams {
            hue_shift: 0.1,
            saturation: 1.5,
            value: 1.4,
            noise: Some((0.3, 4)),
        };
        let out = p.apply(&img);
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
