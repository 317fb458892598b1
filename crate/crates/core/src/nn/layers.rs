//! Stateless layer kernels. Networks keep their own activations and call
//! the matching `*_backward` with them.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::{sgemm, Param, Tensor};

/// Stride-1 "same" convolution with odd square kernel and dilation.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub weight: Param,
    pub bias: Param,
}

impl Conv2d {
    /// He-normal weights, zero bias.
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        dilation: usize,
        gain: f32,
        rng: &mut R,
    ) -> Self {
        assert!(kernel % 2 == 1, "kernel must be odd");
        let fan_in = (in_ch * kernel * kernel) as f32;
        let std = gain * (2.0 / fan_in).sqrt();
        let normal = Normal::new(0.0f32, std).expect("positive std");
        let w: Vec<f32> = (0..out_ch * in_ch * kernel * kernel)
            .map(|_| normal.sample(rng))
            .collect();
        Self {
            in_ch,
            out_ch,
            kernel,
            dilation,
            weight: Param::new(
                format!("{name}.weight"),
                vec![out_ch, in_ch, kernel, kernel],
                w,
            ),
            bias: Param::new(format!("{name}.bias"), vec![out_ch], vec![0.0; out_ch]),
        }
    }

    fn col_rows(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.c(), self.in_ch, "conv input channels");
        let (n, h, w) = (x.n(), x.h(), x.w());
        let hw = h * w;
        let mut out = Tensor::zeros(n, self.out_ch, h, w);
        let k = self.col_rows();
        let mut col = if self.kernel == 1 {
            Vec::new()
        } else {
            vec![0.0f32; k * hw]
        };
        for i in 0..n {
            let src = x.item(i);
            let dst = out.item_mut(i);
            for (o, plane) in dst.chunks_mut(hw).enumerate() {
                plane.fill(self.bias.value[o]);
            }
            let b: &[f32] = if self.kernel == 1 {
                src
            } else {
                im2col(src, self.in_ch, h, w, self.kernel, self.dilation, &mut col);
                &col
            };
            sgemm(
                self.out_ch,
                k,
                hw,
                &self.weight.value,
                k,
                1,
                b,
                hw,
                1,
                dst,
                1.0,
            );
        }
        out
    }

    /// Accumulates weight/bias gradients; returns the input gradient when
    /// requested.
    pub fn backward(&mut self, x: &Tensor, grad_out: &Tensor, need_input: bool) -> Option<Tensor> {
        let (n, h, w) = (x.n(), x.h(), x.w());
        let hw = h * w;
        let k = self.col_rows();
        if self.weight.grad.len() != self.weight.value.len() {
            self.weight.zero_grad();
        }
        if self.bias.grad.len() != self.bias.value.len() {
            self.bias.zero_grad();
        }
        let mut grad_in = need_input.then(|| Tensor::zeros(n, self.in_ch, h, w));
        let mut col = if self.kernel == 1 {
            Vec::new()
        } else {
            vec![0.0f32; k * hw]
        };
        let mut gcol = vec![0.0f32; k * hw];
        for i in 0..n {
            let g = grad_out.item(i);
            for (o, plane) in g.chunks(hw).enumerate() {
                self.bias.grad[o] += plane.iter().sum::<f32>();
            }
            let b: &[f32] = if self.kernel == 1 {
                x.item(i)
            } else {
                im2col(
                    x.item(i),
                    self.in_ch,
                    h,
                    w,
                    self.kernel,
                    self.dilation,
                    &mut col,
                );
                &col
            };
            // dW += G (out x hw) * col^T (hw x k)
            sgemm(
                self.out_ch,
                hw,
                k,
                g,
                hw,
                1,
                b,
                1,
                hw,
                &mut self.weight.grad,
                1.0,
            );
            if let Some(gi) = grad_in.as_mut() {
                // dcol = W^T (k x out) * G (out x hw)
                sgemm(
                    k,
                    self.out_ch,
                    hw,
                    &self.weight.value,
                    1,
                    k,
                    g,
                    hw,
                    1,
                    &mut gcol,
                    0.0,
                );
                if self.kernel == 1 {
                    gi.item_mut(i).copy_from_slice(&gcol);
                } else {
                    col2im(
                        &gcol,
                        self.in_ch,
                        h,
                        w,
                        self.kernel,
                        self.dilation,
                        gi.item_mut(i),
                    );
                }
            }
        }
        grad_in
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Valid output x-range for a horizontal tap offset.
#[inline]
fn x_span(w: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (w as isize - off).clamp(0, w as isize) as usize;
    (lo.min(hi), hi)
}

fn im2col(src: &[f32], c: usize, h: usize, w: usize, k: usize, dil: usize, col: &mut [f32]) {
    let r = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &src[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            let oy = (ky as isize - r) * dil as isize;
            for kx in 0..k {
                let ox = (kx as isize - r) * dil as isize;
                let row = ((ci * k + ky) * k + kx) * hw;
                let dst = &mut col[row..row + hw];
                let (xlo, xhi) = x_span(w, ox);
                for y in 0..h {
                    let sy = y as isize + oy;
                    let drow = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        drow.fill(0.0);
                        continue;
                    }
                    let srow = &plane[sy as usize * w..(sy as usize + 1) * w];
                    drow[..xlo].fill(0.0);
                    drow[xhi..].fill(0.0);
                    if xlo < xhi {
                        let s0 = (xlo as isize + ox) as usize;
                        drow[xlo..xhi].copy_from_slice(&srow[s0..s0 + (xhi - xlo)]);
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f32], c: usize, h: usize, w: usize, k: usize, dil: usize, dst: &mut [f32]) {
    let r = (k / 2) as isize;
    let hw = h * w;
    dst.fill(0.0);
    for ci in 0..c {
        let plane = &mut dst[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            let oy = (ky as isize - r) * dil as isize;
            for kx in 0..k {
                let ox = (kx as isize - r) * dil as isize;
                let row = ((ci * k + ky) * k + kx) * hw;
                let src = &col[row..row + hw];
                let (xlo, xhi) = x_span(w, ox);
                if xlo >= xhi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + oy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s0 = (xlo as isize + ox) as usize;
                    let prow = &mut plane[sy as usize * w + s0..sy as usize * w + s0 + (xhi - xlo)];
                    let crow = &src[y * w + xlo..y * w + xhi];
                    for (p, &g) in prow.iter_mut().zip(crow) {
                        *p += g;
                    }
                }
            }
        }
    }
}

pub fn relu_inplace(t: &mut Tensor) {
    for v in t.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Masks `grad` by the positive entries of the ReLU output.
pub fn relu_backward(out: &Tensor, grad: &mut Tensor) {
    for (g, &o) in grad.data_mut().iter_mut().zip(out.data()) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn sigmoid_inplace(t: &mut Tensor) {
    for v in t.data_mut() {
        *v = 1.0 / (1.0 + (-*v).exp());
    }
}

pub fn sigmoid_backward(out: &Tensor, grad: &mut Tensor) {
    for (g, &o) in grad.data_mut().iter_mut().zip(out.data()) {
        *g *= o * (1.0 - o);
    }
}

const NORM_EPS: f32 = 1e-12;

/// Per-pixel L2 normalization across channels. Returns the output and the
/// per-pixel norms.
pub fn l2_normalize(x: &Tensor) -> (Tensor, Vec<f32>) {
    let (n, c, hw) = (x.n(), x.c(), x.plane_len());
    let mut out = x.clone();
    let mut norms = vec![0.0f32; n * hw];
    for i in 0..n {
        let item = out.item_mut(i);
        let nrm = &mut norms[i * hw..(i + 1) * hw];
        for ch in 0..c {
            for (s, &v) in nrm.iter_mut().zip(&item[ch * hw..(ch + 1) * hw]) {
                *s += v * v;
            }
        }
        for s in nrm.iter_mut() {
            *s = s.sqrt().max(NORM_EPS);
        }
        for ch in 0..c {
            for (v, &s) in item[ch * hw..(ch + 1) * hw].iter_mut().zip(nrm.iter()) {
                *v /= s;
            }
        }
    }
    (out, norms)
}

/// `g_x = (g - y (y . g)) / |x|`.
pub fn l2_normalize_backward(out: &Tensor, norms: &[f32], grad: &Tensor) -> Tensor {
    let (n, c, hw) = (out.n(), out.c(), out.plane_len());
    let mut gx = grad.clone();
    let mut dots = vec![0.0f32; hw];
    for i in 0..n {
        let y = out.item(i);
        let g = grad.item(i);
        dots.fill(0.0);
        for ch in 0..c {
            let ys = &y[ch * hw..(ch + 1) * hw];
            let gs = &g[ch * hw..(ch + 1) * hw];
            for p in 0..hw {
                dots[p] += ys[p] * gs[p];
            }
        }
        let nrm = &norms[i * hw..(i + 1) * hw];
        let gxi = gx.item_mut(i);
        for ch in 0..c {
            let ys = &y[ch * hw..(ch + 1) * hw];
            let dst = &mut gxi[ch * hw..(ch + 1) * hw];
            for p in 0..hw {
                dst[p] = (dst[p] - ys[p] * dots[p]) / nrm[p];
            }
        }
    }
    gx
}

/// 2x2 max pooling with floor semantics; returns argmax indices into the
/// input plane.
pub fn maxpool2(x: &Tensor) -> (Tensor, Vec<u32>) {
    let (n, c, h, w) = (x.n(), x.c(), x.h(), x.w());
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(n, c, oh, ow);
    let mut idx = vec![0u32; n * c * oh * ow];
    let mut o = 0;
    for i in 0..n {
        let item = x.item(i);
        for ch in 0..c {
            let plane = &item[ch * h * w..(ch + 1) * h * w];
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = (2 * y) * w + 2 * xx;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let j = (2 * y + dy) * w + 2 * xx + dx;
                        if plane[j] > plane[best] {
                            best = j;
                        }
                    }
                    out.data_mut()[o] = plane[best];
                    idx[o] = best as u32;
                    o += 1;
                }
            }
        }
    }
    (out, idx)
}

pub fn maxpool2_backward(grad: &Tensor, idx: &[u32], in_h: usize, in_w: usize) -> Tensor {
    let (n, c) = (grad.n(), grad.c());
    let mut gx = Tensor::zeros(n, c, in_h, in_w);
    let per = grad.plane_len();
    let inplane = in_h * in_w;
    for (o, &g) in grad.data().iter().enumerate() {
        let plane = o / per;
        gx.data_mut()[plane * inplane + idx[o] as usize] += g;
    }
    gx
}

/// Nearest 2x upsampling onto an explicit target size (edge replicated when
/// the target is odd).
pub fn upsample2(x: &Tensor, th: usize, tw: usize) -> Tensor {
    let (n, c, h, w) = (x.n(), x.c(), x.h(), x.w());
    let mut out = Tensor::zeros(n, c, th, tw);
    for i in 0..n * c {
        let src = &x.data()[i * h * w..(i + 1) * h * w];
        let dst = &mut out.data_mut()[i * th * tw..(i + 1) * th * tw];
        for y in 0..th {
            let sy = (y / 2).min(h - 1);
            for xx in 0..tw {
                dst[y * tw + xx] = src[sy * w + (xx / 2).min(w - 1)];
            }
        }
    }
    out
}

pub fn upsample2_backward(grad: &Tensor, h: usize, w: usize) -> Tensor {
    let (n, c, th, tw) = (grad.n(), grad.c(), grad.h(), grad.w());
    let mut gx = Tensor::zeros(n, c, h, w);
    for i in 0..n * c {
        let src = &grad.data()[i * th * tw..(i + 1) * th * tw];
        let dst = &mut gx.data_mut()[i * h * w..(i + 1) * h * w];
        for y in 0..th {
            let sy = (y / 2).min(h - 1);
            for xx in 0..tw {
                dst[sy * w + (xx / 2).min(w - 1)] += src[y * tw + xx];
            }
        }
    }
    gx
}

/// Channel concatenation `[a, b]`.
pub fn concat(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(
        (a.n(), a.h(), a.w()),
        (b.n(), b.h(), b.w()),
        "concat spatial mismatch"
    );
    let mut out = Tensor::zeros(a.n(), a.c() + b.c(), a.h(), a.w());
    for i in 0..a.n() {
        let dst = out.item_mut(i);
        let la = a.item_len();
        dst[..la].copy_from_slice(a.item(i));
        dst[la..].copy_from_slice(b.item(i));
    }
    out
}

pub fn split_channels(g: &Tensor, ca: usize) -> (Tensor, Tensor) {
    let (n, c, h, w) = (g.n(), g.c(), g.h(), g.w());
    let mut a = Tensor::zeros(n, ca, h, w);
    let mut b = Tensor::zeros(n, c - ca, h, w);
    let hw = h * w;
    for i in 0..n {
        let src = g.item(i);
        a.item_mut(i).copy_from_slice(&src[..ca * hw]);
        b.item_mut(i).copy_from_slice(&src[ca * hw..]);
    }
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn naive_conv(conv: &Conv2d, x: &Tensor) -> Tensor {
        let (n, h, w) = (x.n(), x.h(), x.w());
        let k = conv.kernel as isize;
        let r = k / 2;
        let d = conv.dilation as isize;
        let mut out = Tensor::zeros(n, conv.out_ch, h, w);
        for i in 0..n {
            for o in 0..conv.out_ch {
                for y in 0..h as isize {
                    for xx in 0..w as isize {
                        let mut acc = conv.bias.value[o] as f64;
                        for c in 0..conv.in_ch {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let sy = y + (ky - r) * d;
                                    let sx = xx + (kx - r) * d;
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                        continue;
                                    }
                                    let wv = conv.weight.value[((o * conv.in_ch + c)
                                        * conv.kernel
                                        + ky as usize)
                                        * conv.kernel
                                        + kx as usize];
                                    acc += wv as f64
                                        * x.item(i)[(c * h + sy as usize) * w + sx as usize] as f64;
                                }
                            }
                        }
                        let idx = ((o * h) + y as usize) * w + xx as usize;
                        out.item_mut(i)[idx] = acc as f32;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (k, d) in [(3, 1), (3, 2), (3, 3), (1, 1)] {
            let mut conv = Conv2d::new("c", 3, 4, k, d, 1.0, &mut rng);
            conv.bias.value = vec![0.1, -0.2, 0.3, 0.0];
            let x = rand_tensor(&mut rng, [2, 3, 7, 6]);
            let fast = conv.forward(&x);
            let slow = naive_conv(&conv, &x);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-4, "k{k} d{d}: {a} vs {b}");
            }
        }
    }

    // loss = sum(out * probe); its gradient is probe, so the backward pass
    // can be compared with finite differences of the forward pass.
    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = Conv2d::new("c", 2, 3, 3, 2, 1.0, &mut rng);
        let x = rand_tensor(&mut rng, [1, 2, 6, 5]);
        let out = conv.forward(&x);
        let probe = rand_tensor(&mut rng, out.shape());
        let loss = |c: &Conv2d, x: &Tensor| -> f64 {
            c.forward(x)
                .data()
                .iter()
                .zip(probe.data())
                .map(|(a, b)| (*a as f64) * (*b as f64))
                .sum()
        };
        conv.weight.zero_grad();
        conv.bias.zero_grad();
        let gx = conv.backward(&x, &probe, true).unwrap();
        let h = 1e-2f32;
        for idx in [0usize, 5, 17, 30] {
            let mut cp = conv.clone();
            cp.weight.value[idx] += h;
            let lp = loss(&cp, &x);
            cp.weight.value[idx] -= 2.0 * h;
            let lm = loss(&cp, &x);
            let fd = (lp - lm) / (2.0 * h as f64);
            assert!((fd - conv.weight.grad[idx] as f64).abs() < 1e-2, "w{idx}");
        }
        for idx in [0usize, 7, 29, 59] {
            let mut xp = x.clone();
            xp.data_mut()[idx] += h;
            let lp = loss(&conv, &xp);
            xp.data_mut()[idx] -= 2.0 * h;
            let lm = loss(&conv, &xp);
            let fd = (lp - lm) / (2.0 * h as f64);
            assert!((fd - gx.data()[idx] as f64).abs() < 1e-2, "x{idx}");
        }
        let bsum: f32 = probe.item(0)[..30].iter().sum();
        assert!((conv.bias.grad[0] - bsum).abs() < 1e-4);
    }

    #[test]
    fn normalize_and_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, [1, 4, 3, 3]);
        let (y, norms) = l2_normalize(&x);
        for p in 0..9 {
            let s: f32 = (0..4).map(|c| y.data()[c * 9 + p].powi(2)).sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
        let probe = rand_tensor(&mut rng, y.shape());
        let g = l2_normalize_backward(&y, &norms, &probe);
        let f = |x: &Tensor| -> f64 {
            l2_normalize(x)
                .0
                .data()
                .iter()
                .zip(probe.data())
                .map(|(a, b)| (*a as f64) * (*b as f64))
                .sum()
        };
        for idx in [0usize, 10, 20, 35] {
            let mut xp = x.clone();
            xp.data_mut()[idx] += 1e-3;
            let lp = f(&xp);
            xp.data_mut()[idx] -= 2e-3;
            let lm = f(&xp);
            let fd = (lp - lm) / 2e-3;
            assert!((fd - g.data()[idx] as f64).abs() < 5e-3);
        }
    }

    #[test]
    fn pool_upsample_concat_shapes_and_adjoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor(&mut rng, [1, 2, 5, 7]);
        let (p, idx) = maxpool2(&x);
        assert_eq!(p.shape(), [1, 2, 2, 3]);
        let gp = rand_tensor(&mut rng, p.shape());
        let gx = maxpool2_backward(&gp, &idx, 5, 7);
        let s1: f32 = gp.data().iter().sum();
        let s2: f32 = gx.data().iter().sum();
        assert!((s1 - s2).abs() < 1e-5);
        let u = upsample2(&p, 5, 7);
        assert_eq!(u.shape(), [1, 2, 5, 7]);
        assert_eq!(u.data()[0], p.data()[0]);
        // <up(p), g> == <p, up^T(g)>
        let g = rand_tensor(&mut rng, u.shape());
        let lhs: f32 = u.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let gt = upsample2_backward(&g, 2, 3);
        let rhs: f32 = p.data().iter().zip(gt.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-4);
        let cat = concat(&x, &u);
        assert_eq!(cat.c(), 4);
        let (a, b) = split_channels(&cat, 2);
        assert_eq!(a, x);
        assert_eq!(b, u);
    }
}
