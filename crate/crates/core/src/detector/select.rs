//! Keypoint selection: windowed non-maximum suppression, map combination
//! and the D2-style baseline score.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::heatmap::{Heatmap, HeatmapKind, Polarity};
use crate::descriptor::DescriptorField;
use crate::error::{Error, Result};
use crate::geometry::PointSet;
use crate::raster::Mask;

pub const DEFAULT_NMS_WINDOW: usize = 11;

/// How many keypoints to keep after suppression. Serialized as an integer
/// or the string `"all"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "BudgetRepr", try_from = "BudgetRepr")]
pub enum KeypointBudget {
    Top(usize),
    /// Every surviving extremum.
    All,
}

impl KeypointBudget {
    pub fn limit(self) -> usize {
        match self {
            KeypointBudget::Top(k) => k,
            KeypointBudget::All => usize::MAX,
        }
    }
}

impl std::str::FromStr for KeypointBudget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(KeypointBudget::All);
        }
        match s.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(KeypointBudget::Top(k)),
            _ => Err(Error::Config(format!(
                "keypoint budget must be a positive integer or `all`, got `{s}`"
            ))),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BudgetRepr {
    Count(usize),
    Text(String),
}

impl From<KeypointBudget> for BudgetRepr {
    fn from(b: KeypointBudget) -> Self {
        match b {
            KeypointBudget::Top(k) => BudgetRepr::Count(k),
            KeypointBudget::All => BudgetRepr::Text("all".into()),
        }
    }
}

impl TryFrom<BudgetRepr> for KeypointBudget {
    type Error = Error;

    fn try_from(r: BudgetRepr) -> Result<Self> {
        match r {
            BudgetRepr::Count(k) => k.to_string().parse(),
            BudgetRepr::Text(s) => s.parse(),
        }
    }
}

impl std::fmt::Display for KeypointBudget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KeypointBudget::Top(k) => write!(f, "{k}"),
            KeypointBudget::All => f.write_str("all"),
        }
    }
}

/// Selected keypoints, best first.
#[derive(Clone, Debug, PartialEq)]
pub struct KeypointCandidates {
    pub points: PointSet,
    pub scores: Vec<f32>,
    pub polarity: Polarity,
}

impl KeypointCandidates {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// CSV with header `id,x,y,score`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut s = String::from("id,x,y,score\n");
        for ((id, p), score) in self.points.iter().zip(&self.scores) {
            s.push_str(&format!("{id},{},{},{score}\n", p[0], p[1]));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Pixels that beat every other valid pixel in their centered window. Ties
/// go to the pixel earlier in raster order. Results are ordered by score,
/// then raster order.
pub fn nms_select(
    heatmap: &Heatmap,
    budget: KeypointBudget,
    window: usize,
) -> Result<KeypointCandidates> {
    if window % 2 == 0 || window == 0 {
        return Err(Error::Config(format!(
            "NMS window must be odd, got {window}"
        )));
    }
    if budget == KeypointBudget::Top(0) {
        return Err(Error::Config("keypoint count must be at least 1".into()));
    }
    let (w, h) = heatmap.size();
    let r = window / 2;
    let v = heatmap.values();
    let pol = heatmap.polarity;
    let mut found: Vec<(usize, f32)> = Vec::new();
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r).min(h - 1));
        'px: for x in 0..w {
            if !heatmap.is_valid(x, y) {
                continue;
            }
            let s = v[y * w + x];
            if s.is_nan() {
                continue;
            }
            let (x0, x1) = (x.saturating_sub(r), (x + r).min(w - 1));
            for yy in y0..=y1 {
                for xx in x0..=x1 {
                    if (xx, yy) == (x, y) || !heatmap.is_valid(xx, yy) {
                        continue;
                    }
                    let o = v[yy * w + xx];
                    let earlier = (yy, xx) < (y, x);
                    if pol.better(o, s) || (o == s && earlier) {
                        continue 'px;
                    }
                }
            }
            found.push((y * w + x, s));
        }
    }
    // stable sort keeps raster order among equal scores
    found.sort_by(|a, b| match pol {
        Polarity::HigherIsBetter => b.1.total_cmp(&a.1),
        Polarity::LowerIsBetter => a.1.total_cmp(&b.1),
    });
    found.truncate(budget.limit());
    let coords = found
        .iter()
        .map(|&(i, _)| [(i % w) as f64, (i / w) as f64])
        .collect();
    Ok(KeypointCandidates {
        points: PointSet::from_coords(coords),
        scores: found.iter().map(|&(_, s)| s).collect(),
        polarity: pol,
    })
}

/// `(1 - ap_norm) * ss` with `ap_norm` min-max normalized over the joint
/// validity; a flat AP map normalizes to 0.
pub fn combine_maps(pred_ap: &Heatmap, pred_ss: &Heatmap) -> Result<Heatmap> {
    if pred_ap.size() != pred_ss.size() {
        return Err(Error::Shape(format!(
            "cannot combine {:?} and {:?} maps",
            pred_ap.size(),
            pred_ss.size()
        )));
    }
    if pred_ap.polarity != Polarity::LowerIsBetter || pred_ss.polarity != Polarity::HigherIsBetter {
        return Err(Error::InvalidInput(
            "combine expects an AP map (lower is better) and an SS map (higher is better)".into(),
        ));
    }
    let (w, h) = pred_ap.size();
    let joint = pred_ap.validity.and(&pred_ss.validity)?;
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    for (&a, &m) in pred_ap.values().iter().zip(joint.data()) {
        if m {
            lo = lo.min(a);
            hi = hi.max(a);
        }
    }
    let range = hi - lo;
    let values = pred_ap
        .values()
        .iter()
        .zip(pred_ss.values())
        .zip(joint.data())
        .map(|((&a, &s), &m)| {
            if !m {
                return 0.0;
            }
            let norm = if range > 0.0 { (a - lo) / range } else { 0.0 };
            (1.0 - norm) * s
        })
        .collect();
    Heatmap::new(
        w,
        h,
        values,
        joint,
        Polarity::HigherIsBetter,
        HeatmapKind::Combined,
    )
}

/// D2-Net style detection score over rectified descriptors:
/// `max_k [exp(D_k) / sum_3x3 exp(D_k)] * [D_k / max_c D_c]`, with
/// replicated borders.
pub fn d2_scores(field: &DescriptorField, valid: Option<&Mask>) -> Result<Heatmap> {
    let (w, h) = field.size();
    if let Some(m) = valid {
        if m.size() != (w, h) {
            return Err(Error::Shape("D2 mask does not match the field".into()));
        }
    }
    let hw = w * h;
    let dim = field.dim();
    let mut chan_max = vec![0.0f32; hw];
    for c in 0..dim {
        for (m, &v) in chan_max.iter_mut().zip(field.plane(c)) {
            *m = m.max(v.max(0.0));
        }
    }
    let mut score = vec![0.0f32; hw];
    let mut e = vec![0.0f32; hw];
    for c in 0..dim {
        let p = field.plane(c);
        for (ei, &v) in e.iter_mut().zip(p) {
            *ei = v.max(0.0).exp();
        }
        for y in 0..h {
            for x in 0..w {
                let mut sum = 0.0f32;
                for dy in -1isize..=1 {
                    let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    for dx in -1isize..=1 {
                        let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                        sum += e[yy * w + xx];
                    }
                }
                let i = y * w + x;
                let alpha = e[i] / sum;
                let beta = if chan_max[i] > 0.0 {
                    p[i].max(0.0) / chan_max[i]
                } else {
                    0.0
                };
                score[i] = score[i].max(alpha * beta);
            }
        }
    }
    let validity = valid.cloned().unwrap_or_else(|| Mask::new(w, h, true));
    Heatmap::new(
        w,
        h,
        score,
        validity,
        Polarity::HigherIsBetter,
        HeatmapKind::D2,
    )
}

/// D2 score followed by the same windowed suppression as [`nms_select`].
pub fn d2_detect(
    field: &DescriptorField,
    budget: KeypointBudget,
    window: usize,
    valid: Option<&Mask>,
) -> Result<KeypointCandidates> {
    nms_select(&d2_scores(field, valid)?, budget, window)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(w: usize, h: usize, values: Vec<f32>, pol: Polarity) -> Heatmap {
        Heatmap::new(w, h, values, Mask::new(w, h, true), pol, HeatmapKind::Ss).unwrap()
    }

    #[test]
    fn single_peak_is_found() {
        let mut v = vec![0.2f32; 400];
        v[7 * 20 + 13] = 0.9;
        let c = nms_select(
            &map(20, 20, v, Polarity::HigherIsBetter),
            KeypointBudget::Top(1),
            11,
        )
        .unwrap();
        assert_eq!(c.points.coords, vec![[13.0, 7.0]]);
    }

    #[test]
    fn equal_peaks_in_one_window_keep_the_first() {
        let mut v = vec![0.0f32; 30 * 30];
        v[10 * 30 + 10] = 1.0;
        v[10 * 30 + 15] = 1.0;
        let c = nms_select(
            &map(30, 30, v, Polarity::HigherIsBetter),
            KeypointBudget::All,
            11,
        )
        .unwrap();
        assert!(c.points.coords.contains(&[10.0, 10.0]));
        assert!(!c.points.coords.contains(&[15.0, 10.0]));
    }

    #[test]
    fn lower_polarity_picks_minima_and_masks_apply() {
        let mut v = vec![0.5f32; 100];
        v[3 * 10 + 3] = 0.1;
        v[6 * 10 + 8] = 0.0;
        let mut valid = Mask::new(10, 10, true);
        valid.set(8, 6, false);
        let m = Heatmap::new(10, 10, v, valid, Polarity::LowerIsBetter, HeatmapKind::Ap).unwrap();
        let c = nms_select(&m, KeypointBudget::Top(1), 11).unwrap();
        assert_eq!(c.points.coords, vec![[3.0, 3.0]]);
    }

    #[test]
    fn even_window_rejected() {
        let m = map(4, 4, vec![0.0; 16], Polarity::HigherIsBetter);
        assert!(nms_select(&m, KeypointBudget::All, 4).is_err());
        assert!("0".parse::<KeypointBudget>().is_err());
        assert_eq!(
            "all".parse::<KeypointBudget>().unwrap(),
            KeypointBudget::All
        );
    }

    #[test]
    fn combine_two_pixel_case() {
        let ap = Heatmap::new(
            2,
            1,
            vec![0.2, 0.8],
            Mask::new(2, 1, true),
            Polarity::LowerIsBetter,
            HeatmapKind::PredictedAp,
        )
        .unwrap();
        let ss = map(2, 1, vec![0.9, 0.9], Polarity::HigherIsBetter);
        let c = combine_maps(&ap, &ss).unwrap();
        assert!((c.values()[0] - 0.9).abs() < 1e-6);
        assert_eq!(c.values()[1], 0.0);
        let flat = Heatmap::new(
            2,
            1,
            vec![0.0, 0.0],
            Mask::new(2, 1, true),
            Polarity::LowerIsBetter,
            HeatmapKind::PredictedAp,
        )
        .unwrap();
        let ss2 = map(2, 1, vec![0.3, 0.6], Polarity::HigherIsBetter);
        assert_eq!(combine_maps(&flat, &ss2).unwrap().values(), ss2.values());
        let zero = map(2, 1, vec![0.0, 0.0], Polarity::HigherIsBetter);
        assert!(combine_maps(&ap, &zero)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.0));
        let other = map(3, 1, vec![0.0; 3], Polarity::HigherIsBetter);
        assert!(combine_maps(&ap, &other).is_err());
    }

    #[test]
    fn d2_constant_field_and_spike() {
        let f = DescriptorField::from_fn(12, 12, 2, |_, _| vec![0.6, 0.8]);
        let s = d2_scores(&f, None).unwrap();
        let first = s.values()[0];
        assert!(s.values().iter().all(|&v| v == first));
        let c = d2_detect(&f, KeypointBudget::Top(1), 11, None).unwrap();
        assert_eq!(c.points.coords, vec![[0.0, 0.0]]);

        let f = DescriptorField::from_fn(12, 12, 1, |x, y| {
            vec![if (x, y) == (7, 4) { 1.0 } else { 0.1 }]
        });
        let c = d2_detect(&f, KeypointBudget::Top(1), 11, None).unwrap();
        assert_eq!(c.points.coords, vec![[7.0, 4.0]]);
    }
}
