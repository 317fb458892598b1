//! U-Net heatmap regressor with nearest-upsampling decoder and a sigmoid
//! head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    concat, maxpool2, maxpool2_backward, relu_backward, relu_inplace, sigmoid_backward,
    sigmoid_inplace, split_channels, upsample2, upsample2_backward, Conv2d,
};
use super::tensor::{Param, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UNetArch {
    pub in_channels: usize,
    pub base_channels: usize,
    /// Number of 2x poolings.
    pub depth: usize,
}

impl Default for UNetArch {
    fn default() -> Self {
        Self {
            in_channels: 3,
            base_channels: 32,
            depth: 4,
        }
    }
}

impl UNetArch {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.base_channels == 0 {
            return Err(Error::Config("unet channels must be positive".into()));
        }
        if self.depth > 8 {
            return Err(Error::Config("unet depth must be at most 8".into()));
        }
        Ok(())
    }

    /// Smallest input side that survives all poolings.
    pub fn min_side(&self) -> usize {
        1 << self.depth
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Block {
    a: Conv2d,
    b: Conv2d,
}

impl Block {
    fn new(name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            a: Conv2d::new(&format!("{name}.a"), cin, cout, 3, 1, 1.0, rng),
            b: Conv2d::new(&format!("{name}.b"), cout, cout, 3, 1, 1.0, rng),
        }
    }

    fn forward(&self, x: &Tensor) -> (Tensor, Tensor) {
        let mut mid = self.a.forward(x);
        relu_inplace(&mut mid);
        let mut out = self.b.forward(&mid);
        relu_inplace(&mut out);
        (mid, out)
    }

    fn backward(
        &mut self,
        x: &Tensor,
        mid: &Tensor,
        out: &Tensor,
        mut g: Tensor,
        need_input: bool,
    ) -> Option<Tensor> {
        relu_backward(out, &mut g);
        let mut g = self
            .b
            .backward(mid, &g, true)
            .expect("input grad requested");
        relu_backward(mid, &mut g);
        self.a.backward(x, &g, need_input)
    }
}

struct LevelTape {
    input: Tensor,
    mid: Tensor,
    out: Tensor,
}

struct DecTape {
    cat: Tensor,
    mid: Tensor,
    out: Tensor,
    skip_ch: usize,
}

pub struct UNetTape {
    enc: Vec<LevelTape>,
    pool_idx: Vec<(Vec<u32>, usize, usize)>,
    dec: Vec<DecTape>,
    out: Tensor,
}

impl UNetTape {
    pub fn output(&self) -> &Tensor {
        &self.out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UNet {
    arch: UNetArch,
    enc: Vec<Block>,
    dec: Vec<Block>,
    head: Conv2d,
}

impl UNet {
    pub fn new(arch: UNetArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = arch.base_channels;
        let mut enc = Vec::new();
        let mut cin = arch.in_channels;
        for lvl in 0..=arch.depth {
            let cout = b << lvl;
            enc.push(Block::new(&format!("enc{lvl}"), cin, cout, &mut rng));
            cin = cout;
        }
        let mut dec = Vec::new();
        for lvl in (0..arch.depth).rev() {
            let skip = b << lvl;
            let below = b << (lvl + 1);
            dec.push(Block::new(
                &format!("dec{lvl}"),
                skip + below,
                skip,
                &mut rng,
            ));
        }
        let head = Conv2d::new("head", b, 1, 1, 1, 0.1, &mut rng);
        Ok(Self {
            arch,
            enc,
            dec,
            head,
        })
    }

    pub fn arch(&self) -> &UNetArch {
        &self.arch
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.c() != self.arch.in_channels {
            return Err(Error::Shape(format!(
                "detector expects {} channels, got {}",
                self.arch.in_channels,
                x.c()
            )));
        }
        let m = self.arch.min_side();
        if x.h() < m || x.w() < m {
            return Err(Error::Shape(format!(
                "detector input must be at least {m}x{m}"
            )));
        }
        Ok(())
    }

    fn center(x: &Tensor) -> Tensor {
        let mut c = x.clone();
        for v in c.data_mut() {
            *v -= 0.5;
        }
        c
    }

    /// Returns `N x 1 x H x W` sigmoid scores.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_train(x)?.out)
    }

    pub fn forward_train(&self, x: &Tensor) -> Result<UNetTape> {
        self.check_input(x)?;
        let mut enc_t = Vec::new();
        let mut pool_idx = Vec::new();
        let mut cur = Self::center(x);
        for (lvl, block) in self.enc.iter().enumerate() {
            let (mid, out) = block.forward(&cur);
            let next = if lvl < self.arch.depth {
                let (p, idx) = maxpool2(&out);
                pool_idx.push((idx, out.h(), out.w()));
                Some(p)
            } else {
                None
            };
            enc_t.push(LevelTape {
                input: cur,
                mid,
                out,
            });
            match next {
                Some(p) => cur = p,
                None => break,
            }
        }
        let mut below = enc_t.last().expect("at least one level").out.clone();
        let mut dec_t = Vec::new();
        for (i, block) in self.dec.iter().enumerate() {
            let lvl = self.arch.depth - 1 - i;
            let skip = &enc_t[lvl].out;
            let up = upsample2(&below, skip.h(), skip.w());
            let cat = concat(skip, &up);
            let (mid, out) = block.forward(&cat);
            below = out.clone();
            dec_t.push(DecTape {
                cat,
                mid,
                out,
                skip_ch: skip.c(),
            });
        }
        let mut out = self.head.forward(&below);
        sigmoid_inplace(&mut out);
        Ok(UNetTape {
            enc: enc_t,
            pool_idx,
            dec: dec_t,
            out,
        })
    }

    /// Accumulates parameter gradients for `d loss / d output`.
    pub fn backward(&mut self, tape: UNetTape, grad_out: &Tensor) {
        let UNetTape {
            enc,
            pool_idx,
            dec,
            out,
        } = tape;
        let mut g = grad_out.clone();
        sigmoid_backward(&out, &mut g);
        let head_in = dec.last().map_or(&enc[0].out, |d| &d.out);
        let mut g = self
            .head
            .backward(head_in, &g, true)
            .expect("input grad requested");
        // gradients flowing into each encoder output through skip connections
        let mut skip_grads: Vec<Option<Tensor>> = (0..enc.len()).map(|_| None).collect();
        for (i, d) in dec.iter().enumerate().rev() {
            let lvl = self.arch.depth - 1 - i;
            let gcat = self.dec[i]
                .backward(&d.cat, &d.mid, &d.out, g, true)
                .expect("input grad requested");
            let (gskip, gup) = split_channels(&gcat, d.skip_ch);
            skip_grads[lvl] = Some(gskip);
            let below = if i == 0 {
                &enc[self.arch.depth].out
            } else {
                &dec[i - 1].out
            };
            g = upsample2_backward(&gup, below.h(), below.w());
        }
        // g is now the gradient w.r.t. the bottleneck output
        for lvl in (0..enc.len()).rev() {
            let mut gout = g;
            if let Some(s) = skip_grads[lvl].take() {
                for (a, b) in gout.data_mut().iter_mut().zip(s.data()) {
                    *a += b;
                }
            }
            let t = &enc[lvl];
            let gin = self.enc[lvl].backward(&t.input, &t.mid, &t.out, gout, lvl > 0);
            match gin {
                Some(gi) if lvl > 0 => {
                    let (idx, h, w) = &pool_idx[lvl - 1];
                    g = maxpool2_backward(&gi, idx, *h, *w);
                }
                _ => break,
            }
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = Vec::new();
        for b in self.enc.iter().chain(&self.dec) {
            v.extend(b.a.params());
            v.extend(b.b.params());
        }
        v.extend(self.head.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = Vec::new();
        for b in self.enc.iter_mut().chain(self.dec.iter_mut()) {
            v.extend(b.a.params_mut());
            v.extend(b.b.params_mut());
        }
        v.extend(self.head.params_mut());
        v
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn load_params(&mut self, params: &[Param]) -> Result<()> {
        super::l2net::load_into(self.params_mut(), params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(h: usize, w: usize) -> Tensor {
        Tensor::from_vec(
            [1, 3, h, w],
            (0..3 * h * w)
                .map(|i| ((i * 37) % 23) as f32 / 23.0)
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn odd_sizes_keep_resolution_and_range() {
        let net = UNet::new(
            UNetArch {
                in_channels: 3,
                base_channels: 4,
                depth: 2,
            },
            1,
        )
        .unwrap();
        let y = net.forward(&input(13, 10)).unwrap();
        assert_eq!(y.shape(), [1, 1, 13, 10]);
        assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn too_small_input_rejected() {
        let net = UNet::new(UNetArch::default(), 1).unwrap();
        assert!(net.forward(&input(8, 8)).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut net = UNet::new(
            UNetArch {
                in_channels: 3,
                base_channels: 3,
                depth: 2,
            },
            7,
        )
        .unwrap();
        let x = input(9, 8);
        let probe: Vec<f32> = (0..72).map(|i| ((i * 5) % 9) as f32 / 9.0 - 0.5).collect();
        let probe = Tensor::from_vec([1, 1, 9, 8], probe).unwrap();
        let loss = |n: &UNet| -> f64 {
            n.forward(&x)
                .unwrap()
                .data()
                .iter()
                .zip(probe.data())
                .map(|(a, b)| (*a as f64) * (*b as f64))
                .sum()
        };
        net.zero_grad();
        let tape = net.forward_train(&x).unwrap();
        net.backward(tape, &probe);
        let n_params = net.params().len();
        // first encoder conv, a decoder conv and the head
        for (pi, ei) in [(0usize, 3usize), (n_params - 4, 1), (n_params - 2, 0)] {
            let analytic = net.params()[pi].grad[ei] as f64;
            let mut plus = net.clone();
            plus.params_mut()[pi].value[ei] += 1e-2;
            let mut minus = net.clone();
            minus.params_mut()[pi].value[ei] -= 1e-2;
            let fd = (loss(&plus) - loss(&minus)) / 2e-2;
            assert!(
                (fd - analytic).abs() < 1e-3 + 2e-2 * analytic.abs(),
                "param {pi}[{ei}]: fd {fd} vs {analytic}"
            );
        }
    }
}
