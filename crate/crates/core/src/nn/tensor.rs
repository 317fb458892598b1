use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Image;

/// Dense NCHW float tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            shape: [n, c, h, w],
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "{shape:?} needs {} values, got {}",
                shape.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Stacks equally sized images into a batch.
    pub fn from_images<'a>(images: impl IntoIterator<Item = &'a Image>) -> Result<Self> {
        let mut data = Vec::new();
        let mut dims: Option<(usize, usize, usize)> = None;
        let mut n = 0;
        for img in images {
            let d = (img.channels(), img.height(), img.width());
            match dims {
                None => dims = Some(d),
                Some(prev) if prev != d => {
                    return Err(Error::Shape(format!(
                        "batch images differ: {prev:?} vs {d:?}"
                    )));
                }
                _ => {}
            }
            data.extend_from_slice(img.data());
            n += 1;
        }
        let (c, h, w) = dims.ok_or_else(|| Error::InvalidInput("empty image batch".into()))?;
        Ok(Self {
            shape: [n, c, h, w],
            data,
        })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }

    pub fn c(&self) -> usize {
        self.shape[1]
    }

    pub fn h(&self) -> usize {
        self.shape[2]
    }

    pub fn w(&self) -> usize {
        self.shape[3]
    }

    pub fn plane_len(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    pub fn item_len(&self) -> usize {
        self.shape[1] * self.plane_len()
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

    pub fn item(&self, i: usize) -> &[f32] {
        let l = self.item_len();
        &self.data[i * l..(i + 1) * l]
    }

    pub fn item_mut(&mut self, i: usize) -> &mut [f32] {
        let l = self.item_len();
        &mut self.data[i * l..(i + 1) * l]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Learnable parameter with its gradient accumulator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    #[serde(skip)]
    pub grad: Vec<f32>,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f32>) -> Self {
        let grad = vec![0.0; value.len()];
        Self {
            name: name.into(),
            shape,
            value,
            grad,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        if self.grad.len() != self.value.len() {
            self.grad = vec![0.0; self.value.len()];
        } else {
            self.grad.fill(0.0);
        }
    }
}

/// Row-major `C = A * B + beta * C` with explicit strides.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: usize,
    csa: usize,
    b: &[f32],
    rsb: usize,
    csb: usize,
    c: &mut [f32],
    beta: f32,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(a.len() >= (m - 1) * rsa + (k.max(1) - 1) * csa + 1 || k == 0);
    debug_assert!(c.len() >= m * n);
    // SAFETY: the strides and extents above address only elements inside
    // `a`, `b` and `c`; `c` does not alias the inputs.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Double-precision counterpart of [`sgemm`].
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn dgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: as for `sgemm`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
