use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Mask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    LowerIsBetter,
    HigherIsBetter,
}

impl Polarity {
    /// True when `a` ranks strictly before `b`.
    #[inline]
    pub fn better(self, a: f32, b: f32) -> bool {
        match self {
            Polarity::HigherIsBetter => a > b,
            Polarity::LowerIsBetter => a < b,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapKind {
    Ap,
    Ss,
    Combined,
    PredictedAp,
    PredictedSs,
    D2,
}

/// Which descriptor-performance map a detector regresses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Ap,
    Ss,
}

impl TargetKind {
    pub fn polarity(self) -> Polarity {
        match self {
            TargetKind::Ap => Polarity::LowerIsBetter,
            TargetKind::Ss => Polarity::HigherIsBetter,
        }
    }

    pub fn target_kind(self) -> HeatmapKind {
        match self {
            TargetKind::Ap => HeatmapKind::Ap,
            TargetKind::Ss => HeatmapKind::Ss,
        }
    }

    pub fn predicted_kind(self) -> HeatmapKind {
        match self {
            TargetKind::Ap => HeatmapKind::PredictedAp,
            TargetKind::Ss => HeatmapKind::PredictedSs,
        }
    }
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetKind::Ap => "ap",
            TargetKind::Ss => "ss",
        })
    }
}

impl FromStr for TargetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ap" => Ok(TargetKind::Ap),
            "ss" => Ok(TargetKind::Ss),
            other => Err(Error::Config(format!(
                "target kind must be `ap` or `ss`, got `{other}`"
            ))),
        }
    }
}

/// Per-pixel scalar map with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    width: usize,
    height: usize,
    values: Vec<f32>,
    pub polarity: Polarity,
    pub validity: Mask,
    pub kind: HeatmapKind,
}

/// Sidecar metadata written next to an exported heatmap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapMeta {
    pub kind: HeatmapKind,
    pub polarity: Polarity,
    pub width: usize,
    pub height: usize,
    /// PNG value `v` encodes `v / 65535`; values outside [0, 1] are clamped.
    pub scale: f64,
    pub valid_pixels: usize,
    pub validity_png: String,
}

impl Heatmap {
    pub fn new(
        width: usize,
        height: usize,
        values: Vec<f32>,
        validity: Mask,
        polarity: Polarity,
        kind: HeatmapKind,
    ) -> Result<Self> {
        if values.len() != width * height || validity.size() != (width, height) {
            return Err(Error::Shape(format!(
                "heatmap {width}x{height} with {} values and {:?} mask",
                values.len(),
                validity.size()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
            polarity,
            validity,
            kind,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.validity.get(x, y)
    }

    /// Values at valid pixels.
    pub fn valid_values(&self) -> impl Iterator<Item = f32> + '_ {
        self.values
            .iter()
            .zip(self.validity.data())
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
    }

    pub fn mean_valid(&self) -> Option<f64> {
        let (s, n) = self
            .valid_values()
            .fold((0.0f64, 0usize), |(s, n), v| (s + v as f64, n + 1));
        (n > 0).then(|| s / n as f64)
    }

    /// Writes `<stem>.png` (16-bit gray, values clamped to [0,1]),
    /// `<stem>_valid.png` and `<stem>.json`.
    pub fn export(&self, dir: impl AsRef<Path>, stem: &str) -> Result<HeatmapMeta> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let png = dir.join(format!("{stem}.png"));
        let buf: Vec<u16> = self
            .values
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
            .collect();
        let img = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(
            self.width as u32,
            self.height as u32,
            buf,
        )
        .expect("buffer matches dimensions");
        img.save(&png).map_err(|source| Error::Image {
            path: png.clone(),
            source,
        })?;
        let valid_name = format!("{stem}_valid.png");
        self.validity.save_png(dir.join(&valid_name))?;
        let meta = HeatmapMeta {
            kind: self.kind,
            polarity: self.polarity,
            width: self.width,
            height: self.height,
            scale: 65535.0,
            valid_pixels: self.validity.count(),
            validity_png: valid_name,
        };
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, serde_json::to_vec_pretty(&meta)?)
            .map_err(|e| Error::io(&json, e))?;
        Ok(meta)
    }

    /// Reads a map written by [`Heatmap::export`]; values are quantized to
    /// 16 bits.
    pub fn import(dir: impl AsRef<Path>, stem: &str) -> Result<Heatmap> {
        let dir = dir.as_ref();
        let json = dir.join(format!("{stem}.json"));
        let text = std::fs::read(&json).map_err(|e| Error::io(&json, e))?;
        let meta: HeatmapMeta = serde_json::from_slice(&text)?;
        let png = dir.join(format!("{stem}.png"));
        let img = image::open(&png)
            .map_err(|source| Error::Image {
                path: png.clone(),
                source,
            })?
            .into_luma16();
        let values = img
            .as_raw()
            .iter()
            .map(|&v| (v as f64 / meta.scale) as f32)
            .collect();
        let validity = Mask::load_png(dir.join(&meta.validity_png))?;
        Heatmap::new(
            meta.width,
            meta.height,
            values,
            validity,
            meta.polarity,
            meta.kind,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let vals: Vec<f32> = (0..12).map(|i| i as f32 / 11.0).collect();
        let valid = Mask::from_fn(4, 3, |x, _| x != 2);
        let h = Heatmap::new(4, 3, vals, valid, Polarity::LowerIsBetter, HeatmapKind::Ap).unwrap();
        let meta = h.export(dir.path(), "m").unwrap();
        assert_eq!(meta.valid_pixels, 9);
        let back = Heatmap::import(dir.path(), "m").unwrap();
        assert_eq!(back.validity, h.validity);
        assert_eq!(back.polarity, Polarity::LowerIsBetter);
        for (a, b) in back.values().iter().zip(h.values()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn target_kind_parsing() {
        assert_eq!("ss".parse::<TargetKind>().unwrap(), TargetKind::Ss);
        assert!(matches!(
            "heat".parse::<TargetKind>(),
            Err(Error::Config(_))
        ));
    }
}
