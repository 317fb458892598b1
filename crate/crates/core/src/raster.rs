//! Planar float images and boolean masks.
//!
//! Images are stored channel-planar (`data[c * h * w + y * w + x]`) with
//! values in `[0, 1]`, which is the layout the network engine consumes
//! directly.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_planar(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "expected {} values for {width}x{height}x{channels}, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds an image by evaluating `f(channel, x, y)` at every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut img = Self::new(width, height, channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    img.data[(c * height + y) * width + x] = f(c, x, y);
                }
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.width * self.height;
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Bilinear sample of channel `c`; `None` outside `[0, w-1] x [0, h-1]`.
    pub fn sample_bilinear(&self, c: usize, x: f64, y: f64) -> Option<f32> {
        let (x0, y0, fx, fy) = bilinear_cell(x, y, self.width, self.height)?;
        let p = self.plane(c);
        let w = self.width;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let v00 = p[y0 * w + x0] as f64;
        let v10 = p[y0 * w + x1] as f64;
        let v01 = p[y1 * w + x0] as f64;
        let v11 = p[y1 * w + x1] as f64;
        let top = v00 + (v10 - v00) * fx;
        let bot = v01 + (v11 - v01) * fx;
        Some((top + (bot - top) * fy) as f32)
    }

    pub fn sample_nearest(&self, c: usize, x: f64, y: f64) -> Option<f32> {
        let (xi, yi) = nearest_pixel(x, y, self.width, self.height)?;
        Some(self.get(c, xi, yi))
    }

    /// Rec. 601 luminance for RGB, identity for single channel images.
    pub fn luminance(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let n = self.width * self.height;
        let mut out = vec![0.0f32; n];
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        for i in 0..n {
            out[i] = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
        }
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: out,
        }
    }

    /// Replicates a single channel into RGB.
    pub fn to_rgb(&self) -> Image {
        match self.channels {
            3 => self.clone(),
            1 => {
                let mut data = Vec::with_capacity(self.data.len() * 3);
                for _ in 0..3 {
                    data.extend_from_slice(&self.data);
                }
                Image {
                    width: self.width,
                    height: self.height,
                    channels: 3,
                    data,
                }
            }
            _ => self.clone(),
        }
    }

    /// Bilinear resize. Destination pixel `(x, y)` reads the source at
    /// `(x * src_w / dst_w, y * src_h / dst_h)`, the same scale convention
    /// used when keypoints are rescaled back to source resolution.
    pub fn resize(&self, width: usize, height: usize) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        Image::from_fn(width, height, self.channels, |c, x, y| {
            let fx = (x as f64 * sx).min((self.width - 1) as f64);
            let fy = (y as f64 * sy).min((self.height - 1) as f64);
            self.sample_bilinear(c, fx, fy).unwrap_or(0.0)
        })
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Loads an 8/16-bit PNG or JPEG as RGB in `[0, 1]`.
    pub fn load(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let dynimg = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let rgb = dynimg.to_rgb32f();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let raw = rgb.into_raw();
        Ok(Image::from_fn(w, h, 3, |c, x, y| raw[(y * w + x) * 3 + c]))
    }

    /// Saves as an 8-bit PNG (gray or RGB).
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let to8 = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let (w, h) = (self.width as u32, self.height as u32);
        let res = if self.channels == 1 {
            let buf: GrayImage = ImageBuffer::from_fn(w, h, |x, y| {
                Luma([to8(self.get(0, x as usize, y as usize))])
            });
            buf.save(path)
        } else {
            let buf = image::RgbImage::from_fn(w, h, |x, y| {
                let (x, y) = (x as usize, y as usize);
                image::Rgb([
                    to8(self.get(0, x, y)),
                    to8(self.get(1, x, y)),
                    to8(self.get(2, x, y)),
                ])
            });
            buf.save(path)
        };
        res.map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Returns `(x0, y0, fx, fy)` for a bilinear lookup, or `None` when the
/// coordinate lies outside the pixel-center extent of the grid.
#[inline]
pub(crate) fn bilinear_cell(
    x: f64,
    y: f64,
    width: usize,
    height: usize,
) -> Option<(usize, usize, f64, f64)> {
    const EPS: f64 = 1e-9;
    if !(x.is_finite() && y.is_finite()) {
        return None;
    }
    let maxx = (width - 1) as f64;
    let maxy = (height - 1) as f64;
    if x < -EPS || y < -EPS || x > maxx + EPS || y > maxy + EPS {
        return None;
    }
    let x = x.clamp(0.0, maxx);
    let y = y.clamp(0.0, maxy);
    let x0 = (x.floor() as usize).min(width.saturating_sub(2));
    let y0 = (y.floor() as usize).min(height.saturating_sub(2));
    Some((x0, y0, x - x0 as f64, y - y0 as f64))
}

#[inline]
pub(crate) fn nearest_pixel(x: f64, y: f64, width: usize, height: usize) -> Option<(usize, usize)> {
    if !(x.is_finite() && y.is_finite()) {
        return None;
    }
    let xi = x.round();
    let yi = y.round();
    if xi < 0.0 || yi < 0.0 || xi >= width as f64 || yi >= height as f64 {
        return None;
    }
    Some((xi as usize, yi as usize))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "mask data has {} entries, expected {}",
                data.len(),
                width * height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
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

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    /// Nearest-pixel lookup; out-of-bounds is `false`.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        nearest_pixel(x, y, self.width, self.height).is_some_and(|(xi, yi)| self.get(xi, yi))
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        if self.size() != other.size() {
            return Err(Error::Shape(format!(
                "mask sizes differ: {:?} vs {:?}",
                self.size(),
                other.size()
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a && b)
            .collect();
        Ok(Mask {
            width: self.width,
            height: self.height,
            data,
        })
    }

    /// Nearest-neighbor resize.
    pub fn resize(&self, width: usize, height: usize) -> Mask {
        if (width, height) == self.size() {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        Mask::from_fn(width, height, |x, y| {
            let xi = ((x as f64 * sx).round() as usize).min(self.width - 1);
            let yi = ((y as f64 * sy).round() as usize).min(self.height - 1);
            self.get(xi, yi)
        })
    }

    pub fn to_image(&self) -> Image {
        Image::from_fn(self.width, self.height, 1, |_, x, y| {
            if self.get(x, y) {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Single-channel PNG; any nonzero sample is inside.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Mask> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let gray = img.to_luma16();
        let (w, h) = (gray.width() as usize, gray.height() as usize);
        let data = gray.into_raw().into_iter().map(|v| v != 0).collect();
        Mask::from_vec(w, h, data)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let buf: GrayImage = ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([if self.get(x as usize, y as usize) {
                255
            } else {
                0
            }])
        });
        buf.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}
