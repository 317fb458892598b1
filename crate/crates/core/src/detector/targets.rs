//! Descriptor-performance maps computed from a frozen descriptor network.

use super::heatmap::{Heatmap, HeatmapKind, Polarity};
use crate::augmentation::{point_is_valid, ViewBatch};
use crate::descriptor::{collect_samples, fast_ap, AnchorMode, DescriptorField, FastApConfig};
use crate::error::{Error, Result};
use crate::geometry::PlanarTransform;
use crate::nn::{DescriptorNet, Tensor};
use crate::raster::Mask;

/// Network output for the reference followed by every view.
pub fn describe_views(net: &DescriptorNet, batch: &ViewBatch) -> Result<Tensor> {
    net.forward(&Tensor::from_images(batch.images())?)
}

fn fields_of(out: &Tensor) -> Vec<DescriptorField> {
    (0..out.n())
        .map(|i| {
            DescriptorField::new(out.w(), out.h(), out.c(), out.item(i).to_vec(), true)
                .expect("tensor shape")
        })
        .collect()
}

/// Self-similarity map: at each reference pixel, the mean pairwise cosine
/// between its descriptor and the descriptors at its warped location in
/// every view where that location is valid.
pub fn ss_map(net: &DescriptorNet, batch: &ViewBatch) -> Result<Heatmap> {
    let out = describe_views(net, batch)?;
    let fields = fields_of(&out);
    ss_map_from_fields(&fields[0], &fields[1..], batch)
}

/// As [`ss_map`] with precomputed fields (`views[v]` belongs to
/// `batch.views[v]`).
pub fn ss_map_from_fields(
    reference: &DescriptorField,
    views: &[DescriptorField],
    batch: &ViewBatch,
) -> Result<Heatmap> {
    let (w, h) = reference.size();
    if views.len() != batch.views.len() || batch.reference.size() != (w, h) {
        return Err(Error::Shape(
            "descriptor fields do not match the batch".into(),
        ));
    }
    if views.iter().any(|f| f.dim() != reference.dim()) {
        return Err(Error::Shape("descriptor fields differ in dimension".into()));
    }
    let dim = reference.dim();
    let hw = w * h;
    let mut values = vec![0.0f32; hw];
    let mut valid = Mask::new(w, h, false);
    let mut members: Vec<Vec<f64>> = Vec::with_capacity(views.len() + 1);
    for y in 0..h {
        for x in 0..w {
            if !batch.roi.mask.get(x, y) {
                continue;
            }
            members.clear();
            members.push(unit(reference.at(x, y).iter().map(|&v| v as f64)));
            let p = [x as f64, y as f64];
            for (view, field) in batch.views.iter().zip(views) {
                let Some(q) = view.affine.apply(p) else {
                    continue;
                };
                if !point_is_valid(&view.validity, q) {
                    continue;
                }
                if let Some(d) = field.sample(q[0], q[1]) {
                    members.push(unit(d.iter().map(|&v| v as f64)));
                }
            }
            let m = members.len();
            if m < 2 {
                continue;
            }
            // fixed summation order keeps the map independent of view order
            members.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            let mut sum = vec![0.0f64; dim];
            for v in &members {
                for (s, a) in sum.iter_mut().zip(v) {
                    *s += a;
                }
            }
            let sq: f64 = sum.iter().map(|s| s * s).sum();
            let mf = m as f64;
            let ss = (sq - mf) / (mf * (mf - 1.0));
            values[y * w + x] = ss.clamp(-1.0, 1.0) as f32;
            valid.set(x, y, true);
        }
    }
    Heatmap::new(
        w,
        h,
        values,
        valid,
        Polarity::HigherIsBetter,
        HeatmapKind::Ss,
    )
}

fn unit(v: impl Iterator<Item = f64>) -> Vec<f64> {
    let v: Vec<f64> = v.collect();
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if n > 0.0 {
        v.into_iter().map(|a| a / n).collect()
    } else {
        v
    }
}

/// Sparse AP-loss map: `1 - AP` of each reference anchor against its valid
/// correspondences (positives) and all other sampled points (negatives).
pub fn ap_map(net: &DescriptorNet, batch: &ViewBatch, config: &FastApConfig) -> Result<Heatmap> {
    let out = describe_views(net, batch)?;
    ap_map_from_output(&out, batch, config)
}

pub fn ap_map_from_output(
    out: &Tensor,
    batch: &ViewBatch,
    config: &FastApConfig,
) -> Result<Heatmap> {
    let (w, h) = (out.w(), out.h());
    let samples = collect_samples(batch, out, AnchorMode::Reference)?;
    let res = fast_ap(&samples.set, config)?;
    let mut values = vec![0.0f32; w * h];
    let mut valid = Mask::new(w, h, false);
    for a in &res.per_anchor {
        // reference anchors occupy the first samples, in anchor order
        let p = batch.anchors.coords[a.sample];
        let (x, y) = (p[0].round() as usize, p[1].round() as usize);
        values[y * w + x] = (1.0 - a.ap) as f32;
        valid.set(x, y, true);
    }
    Heatmap::new(
        w,
        h,
        values,
        valid,
        Polarity::LowerIsBetter,
        HeatmapKind::Ap,
    )
}
