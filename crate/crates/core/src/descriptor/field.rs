use crate::error::{Error, Result};
use crate::geometry::PointSet;
use crate::nn::{DescriptorNet, Tensor};
use crate::raster::{bilinear_cell, Image};

/// Dense per-pixel descriptors stored as `dim` planes of `height x width`.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorField {
    width: usize,
    height: usize,
    dim: usize,
    values: Vec<f32>,
    normalized: bool,
}

impl DescriptorField {
    pub fn new(
        width: usize,
        height: usize,
        dim: usize,
        values: Vec<f32>,
        normalized: bool,
    ) -> Result<Self> {
        if values.len() != width * height * dim || width == 0 || height == 0 || dim == 0 {
            return Err(Error::Shape(format!(
                "descriptor field {width}x{height}x{dim} cannot hold {} values",
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            dim,
            values,
            normalized,
        })
    }

    /// Builds a field from a per-pixel closure returning a `dim` vector.
    pub fn from_fn(
        width: usize,
        height: usize,
        dim: usize,
        mut f: impl FnMut(usize, usize) -> Vec<f32>,
    ) -> Self {
        let mut values = vec![0.0; width * height * dim];
        let hw = width * height;
        for y in 0..height {
            for x in 0..width {
                let d = f(x, y);
                assert_eq!(d.len(), dim, "descriptor length");
                for (c, v) in d.into_iter().enumerate() {
                    values[c * hw + y * width + x] = v;
                }
            }
        }
        let mut field = Self {
            width,
            height,
            dim,
            values,
            normalized: false,
        };
        field.normalized = field.max_norm_error() <= 1e-5;
        field
    }

    pub(crate) fn from_tensor_item(t: &Tensor, i: usize) -> Self {
        Self {
            width: t.w(),
            height: t.h(),
            dim: t.c(),
            values: t.item(i).to_vec(),
            normalized: true,
        }
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

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let hw = self.width * self.height;
        &self.values[c * hw..(c + 1) * hw]
    }

    pub fn at(&self, x: usize, y: usize) -> Vec<f32> {
        let hw = self.width * self.height;
        let p = y * self.width + x;
        (0..self.dim).map(|c| self.values[c * hw + p]).collect()
    }

    /// Largest deviation of a per-pixel norm from 1.
    pub fn max_norm_error(&self) -> f64 {
        let hw = self.width * self.height;
        let mut sq = vec![0.0f64; hw];
        for c in 0..self.dim {
            for (s, &v) in sq.iter_mut().zip(&self.values[c * hw..(c + 1) * hw]) {
                *s += (v as f64) * (v as f64);
            }
        }
        sq.iter()
            .map(|s| (s.sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Renormalized bilinear sample at `(x, y)`.
    pub fn sample(&self, x: f64, y: f64) -> Option<Vec<f32>> {
        let tap = BilinearTap::new(x, y, self.width, self.height)?;
        let mut out = vec![0.0f32; self.dim];
        tap.gather(&self.values, self.width * self.height, &mut out);
        normalize(&mut out);
        Some(out)
    }
}

/// Four-neighbour interpolation weights into a planar grid.
#[derive(Clone, Copy, Debug)]
pub(crate) struct BilinearTap {
    pub idx: [usize; 4],
    pub w: [f32; 4],
}

impl BilinearTap {
    pub fn new(x: f64, y: f64, width: usize, height: usize) -> Option<Self> {
        let (x0, y0, fx, fy) = bilinear_cell(x, y, width, height)?;
        let x1 = (x0 + 1).min(width - 1);
        let y1 = (y0 + 1).min(height - 1);
        Some(Self {
            idx: [
                y0 * width + x0,
                y0 * width + x1,
                y1 * width + x0,
                y1 * width + x1,
            ],
            w: [
                ((1.0 - fx) * (1.0 - fy)) as f32,
                (fx * (1.0 - fy)) as f32,
                ((1.0 - fx) * fy) as f32,
                (fx * fy) as f32,
            ],
        })
    }

    pub fn gather(&self, planes: &[f32], hw: usize, out: &mut [f32]) {
        for (c, o) in out.iter_mut().enumerate() {
            let p = &planes[c * hw..(c + 1) * hw];
            *o = (0..4).map(|k| self.w[k] * p[self.idx[k]]).sum();
        }
    }

    pub fn scatter(&self, grad: &[f32], hw: usize, planes: &mut [f32]) {
        for (c, &g) in grad.iter().enumerate() {
            let p = &mut planes[c * hw..(c + 1) * hw];
            for k in 0..4 {
                p[self.idx[k]] += self.w[k] * g;
            }
        }
    }
}

/// Scales `v` to unit length; vectors already within rounding of unit
/// length are left untouched.
pub(crate) fn normalize(v: &mut [f32]) {
    let n = v.iter().map(|a| a * a).sum::<f32>().sqrt().max(1e-12);
    if (n - 1.0).abs() > 1e-6 {
        for a in v.iter_mut() {
            *a /= n;
        }
    }
}

/// Runs the network on one RGB image.
pub fn describe(net: &DescriptorNet, image: &Image) -> Result<DescriptorField> {
    Ok(describe_batch(net, std::slice::from_ref(image))?.remove(0))
}

pub fn describe_batch(net: &DescriptorNet, images: &[Image]) -> Result<Vec<DescriptorField>> {
    if let Some(img) = images
        .iter()
        .find(|i| i.channels() != DescriptorNet::INPUT_CHANNELS)
    {
        return Err(Error::Shape(format!(
            "descriptor network expects {} channels, got {}",
            DescriptorNet::INPUT_CHANNELS,
            img.channels()
        )));
    }
    let mut out = Vec::with_capacity(images.len());
    for img in images {
        let t = net.forward(&Tensor::from_images([img])?)?;
        out.push(DescriptorField::from_tensor_item(&t, 0));
    }
    Ok(out)
}

/// Bilinear interpolation at each point followed by renormalization.
/// Points outside the pixel-center extent are an error.
pub fn sample_descriptors(field: &DescriptorField, points: &PointSet) -> Result<Vec<Vec<f32>>> {
    points
        .coords
        .iter()
        .zip(&points.ids)
        .map(|(p, id)| {
            field.sample(p[0], p[1]).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "point {id} at ({:.3}, {:.3}) is outside the {}x{} descriptor field",
                    p[0], p[1], field.width, field.height
                ))
            })
        })
        .collect()
}
