use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointSet;
use crate::raster::{Image, Mask};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoiSource {
    Loaded,
    Estimated,
}

/// Region of interest: the imaged fundus field.
#[derive(Clone, Debug, PartialEq)]
pub struct RoiMask {
    pub mask: Mask,
    pub source: RoiSource,
}

impl RoiMask {
    pub fn loaded(mask: Mask) -> Result<Self> {
        if mask.is_empty() {
            return Err(Error::EmptyMask("loaded RoI mask has no pixels".into()));
        }
        Ok(Self {
            mask,
            source: RoiSource::Loaded,
        })
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            mask: Mask::new(width, height, true),
            source: RoiSource::Loaded,
        }
    }

    pub fn size(&self) -> (usize, usize) {
        self.mask.size()
    }

    pub fn resize(&self, width: usize, height: usize) -> RoiMask {
        RoiMask {
            mask: self.mask.resize(width, height),
            source: self.source,
        }
    }
}

pub const DEFAULT_ROI_THRESHOLD: f64 = 0.06;
const CLOSING_RADIUS: usize = 2;

/// Largest 4-connected component of pixels brighter than `threshold`,
/// morphologically closed.
pub fn estimate_roi(image: &Image, luminance_threshold: f64) -> Result<RoiMask> {
    let lum = image.luminance();
    let (w, h) = lum.size();
    let bright: Vec<bool> = lum
        .data()
        .iter()
        .map(|&v| v as f64 > luminance_threshold)
        .collect();
    let mut label = vec![0u32; w * h];
    let mut best = (0u32, 0usize);
    let mut next = 1u32;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !bright[start] || label[start] != 0 {
            continue;
        }
        let mut size = 0usize;
        label[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if bright[j] && label[j] == 0 {
                    label[j] = next;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if size > best.1 {
            best = (next, size);
        }
        next += 1;
    }
    if best.1 == 0 {
        return Err(Error::EmptyMask(format!(
            "no pixel above luminance threshold {luminance_threshold}"
        )));
    }
    let comp = Mask::from_vec(w, h, label.iter().map(|&l| l == best.0).collect())?;
    let closed = erode(&dilate(&comp, CLOSING_RADIUS), CLOSING_RADIUS);
    Ok(RoiMask {
        mask: closed,
        source: RoiSource::Estimated,
    })
}

// Square structuring element; only in-bounds neighbors participate.
fn morph(mask: &Mask, r: usize, dilate: bool) -> Mask {
    let (w, h) = mask.size();
    let mut tmp = Mask::new(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            let v = if dilate {
                (lo..=hi).any(|xx| mask.get(xx, y))
            } else {
                (lo..=hi).all(|xx| mask.get(xx, y))
            };
            tmp.set(x, y, v);
        }
    }
    Mask::from_fn(w, h, |x, y| {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        if dilate {
            (lo..=hi).any(|yy| tmp.get(x, yy))
        } else {
            (lo..=hi).all(|yy| tmp.get(x, yy))
        }
    })
}

fn dilate(mask: &Mask, r: usize) -> Mask {
    morph(mask, r, true)
}

fn erode(mask: &Mask, r: usize) -> Mask {
    morph(mask, r, false)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Only RoI pixels are eligible.
    #[default]
    Roi,
    /// Every pixel of the frame is eligible.
    FullFrame,
}

/// Draws `count` distinct pixels uniformly without replacement from the
/// eligible set; ids are `0..count` in draw order.
pub fn sample_points<R: Rng + ?Sized>(
    rng: &mut R,
    roi: &RoiMask,
    count: usize,
    mode: SamplingMode,
) -> Result<PointSet> {
    let (w, h) = roi.size();
    let eligible: Vec<usize> = match mode {
        SamplingMode::Roi => roi
            .mask
            .data()
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect(),
        SamplingMode::FullFrame => (0..w * h).collect(),
    };
    if count > eligible.len() {
        return Err(Error::InvalidInput(format!(
            "cannot sample {count} points from {} eligible pixels",
            eligible.len()
        )));
    }
    let picks = sample(rng, eligible.len(), count);
    let coords = picks
        .iter()
        .map(|k| {
            let i = eligible[k];
            [(i % w) as f64, (i / w) as f64]
        })
        .collect();
    Ok(PointSet::from_coords(coords))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn black_image_has_no_roi() {
        let img = Image::new(16, 16, 3);
        assert!(matches!(estimate_roi(&img, 0.06), Err(Error::EmptyMask(_))));
    }

    #[test]
    fn white_image_is_full_frame() {
        let img = Image::from_fn(16, 12, 3, |_, _, _| 1.0);
        let roi = estimate_roi(&img, 0.06).unwrap();
        assert_eq!(roi.mask.count(), 16 * 12);
        assert_eq!(roi.source, RoiSource::Estimated);
    }

    #[test]
    fn disc_is_recovered_within_two_pixels() {
        let (cx, cy, r) = (40.0, 36.0, 25.0);
        let img = Image::from_fn(80, 72, 3, |_, x, y| {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            if d <= r {
                0.6
            } else {
                0.0
            }
        });
        // one dark speck inside the disc is filled by the closing
        let mut img = img;
        for c in 0..3 {
            img.set(c, 40, 36, 0.0);
        }
        let roi = estimate_roi(&img, 0.06).unwrap();
        for y in 0..72 {
            for x in 0..80 {
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                if d <= r - 2.0 {
                    assert!(roi.mask.get(x, y), "missing ({x},{y})");
                }
                if d > r + 2.0 {
                    assert!(!roi.mask.get(x, y), "extra ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn largest_component_wins() {
        let img = Image::from_fn(30, 10, 1, |_, x, _| if x < 3 || x > 12 { 1.0 } else { 0.0 });
        let roi = estimate_roi(&img, 0.5).unwrap();
        assert!(roi.mask.get(20, 5));
        assert!(!roi.mask.get(1, 5));
    }

    #[test]
    fn sampling_whole_roi_returns_every_pixel() {
        let mask = Mask::from_fn(10, 10, |x, y| (x + y) % 3 == 0);
        let n = mask.count();
        let roi = RoiMask::loaded(mask.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = sample_points(&mut rng, &roi, n, SamplingMode::Roi).unwrap();
        let mut got: Vec<(usize, usize)> = pts
            .coords
            .iter()
            .map(|p| (p[0] as usize, p[1] as usize))
            .collect();
        got.sort();
        let mut want: Vec<(usize, usize)> = (0..10)
            .flat_map(|y| (0..10).map(move |x| (x, y)))
            .filter(|&(x, y)| mask.get(x, y))
            .collect();
        want.sort();
        assert_eq!(got, want);
        assert_eq!(pts.ids, (0..n as u64).collect::<Vec<_>>());
        assert!(sample_points(&mut rng, &roi, n + 1, SamplingMode::Roi).is_err());
        assert!(sample_points(&mut rng, &roi, n + 1, SamplingMode::FullFrame).is_ok());
    }
}
