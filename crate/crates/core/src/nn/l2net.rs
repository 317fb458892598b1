//! Fully convolutional L2-Net-style trunk. Strides are replaced by growing
//! dilations so the output stays at input resolution.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{l2_normalize, l2_normalize_backward, relu_backward, relu_inplace, Conv2d};
use super::tensor::{Param, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub out: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub relu: bool,
}

impl ConvSpec {
    pub const fn relu(out: usize, dilation: usize) -> Self {
        Self {
            out,
            kernel: 3,
            dilation,
            relu: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptorArch {
    pub layers: Vec<ConvSpec>,
}

impl DescriptorArch {
    /// Default profile: 32-32-64-64-128-128-128 widths with dilations
    /// 1-1-2-2-4-4-8 and a linear 1x1 projection to `dim`.
    pub fn l2net(dim: usize) -> Self {
        Self {
            layers: vec![
                ConvSpec::relu(32, 1),
                ConvSpec::relu(32, 1),
                ConvSpec::relu(64, 2),
                ConvSpec::relu(64, 2),
                ConvSpec::relu(128, 4),
                ConvSpec::relu(128, 4),
                ConvSpec::relu(128, 8),
                ConvSpec {
                    out: dim,
                    kernel: 1,
                    dilation: 1,
                    relu: false,
                },
            ],
        }
    }

    /// Small profile for desk-scale runs (receptive field 31 px).
    pub fn compact(dim: usize) -> Self {
        Self {
            layers: vec![
                ConvSpec::relu(16, 1),
                ConvSpec::relu(16, 2),
                ConvSpec::relu(32, 4),
                ConvSpec::relu(32, 8),
                ConvSpec {
                    out: dim,
                    kernel: 1,
                    dilation: 1,
                    relu: false,
                },
            ],
        }
    }

    pub fn dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out)
    }

    pub fn receptive_field(&self) -> usize {
        1 + self
            .layers
            .iter()
            .map(|l| (l.kernel - 1) * l.dilation)
            .sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config(
                "descriptor architecture has no layers".into(),
            ));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.kernel % 2 == 0 || l.out == 0 || l.dilation == 0 {
                return Err(Error::Config(format!(
                    "descriptor layer {i}: kernel must be odd, width and dilation positive"
                )));
            }
        }
        if self.dim() < 2 {
            return Err(Error::Config(
                "descriptor dimension must be at least 2".into(),
            ));
        }
        Ok(())
    }
}

/// Activations kept for the backward pass.
pub struct DescriptorTape {
    acts: Vec<Tensor>,
    out: Tensor,
    norms: Vec<f32>,
}

impl DescriptorTape {
    pub fn output(&self) -> &Tensor {
        &self.out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorNet {
    arch: DescriptorArch,
    convs: Vec<Conv2d>,
}

impl DescriptorNet {
    pub const INPUT_CHANNELS: usize = 3;

    pub fn new(arch: DescriptorArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut in_ch = Self::INPUT_CHANNELS;
        let mut convs = Vec::with_capacity(arch.layers.len());
        for (i, l) in arch.layers.iter().enumerate() {
            let gain = if l.relu {
                1.0
            } else {
                std::f32::consts::FRAC_1_SQRT_2
            };
            convs.push(Conv2d::new(
                &format!("conv{i}"),
                in_ch,
                l.out,
                l.kernel,
                l.dilation,
                gain,
                &mut rng,
            ));
            in_ch = l.out;
        }
        Ok(Self { arch, convs })
    }

    pub fn arch(&self) -> &DescriptorArch {
        &self.arch
    }

    pub fn dim(&self) -> usize {
        self.arch.dim()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.c() != Self::INPUT_CHANNELS {
            return Err(Error::Shape(format!(
                "descriptor network expects {} channels, got {}",
                Self::INPUT_CHANNELS,
                x.c()
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

    /// Inference: unit-norm descriptors, shape `N x dim x H x W`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut a = Self::center(x);
        for (conv, spec) in self.convs.iter().zip(&self.arch.layers) {
            a = conv.forward(&a);
            if spec.relu {
                relu_inplace(&mut a);
            }
        }
        Ok(l2_normalize(&a).0)
    }

    pub fn forward_train(&self, x: &Tensor) -> Result<DescriptorTape> {
        self.check_input(x)?;
        let mut acts = vec![Self::center(x)];
        for (conv, spec) in self.convs.iter().zip(&self.arch.layers) {
            let mut a = conv.forward(acts.last().expect("non-empty"));
            if spec.relu {
                relu_inplace(&mut a);
            }
            acts.push(a);
        }
        let (out, norms) = l2_normalize(acts.last().expect("non-empty"));
        Ok(DescriptorTape { acts, out, norms })
    }

    /// Accumulates parameter gradients for `d loss / d output`.
    pub fn backward(&mut self, tape: DescriptorTape, grad_out: &Tensor) {
        let DescriptorTape { acts, out, norms } = tape;
        let mut g = l2_normalize_backward(&out, &norms, grad_out);
        drop(out);
        for l in (0..self.convs.len()).rev() {
            if self.arch.layers[l].relu {
                relu_backward(&acts[l + 1], &mut g);
            }
            match self.convs[l].backward(&acts[l], &g, l > 0) {
                Some(gi) => g = gi,
                None => break,
            }
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        self.convs.iter().flat_map(|c| c.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.convs.iter_mut().flat_map(|c| c.params_mut()).collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Replaces parameter values; names and shapes must match.
    pub fn load_params(&mut self, params: &[Param]) -> Result<()> {
        load_into(self.params_mut(), params)
    }
}

pub(crate) fn load_into(mut dst: Vec<&mut Param>, src: &[Param]) -> Result<()> {
    if dst.len() != src.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter tensors, found {}",
            dst.len(),
            src.len()
        )));
    }
    for (d, s) in dst.iter_mut().zip(src) {
        if d.name != s.name || d.shape != s.shape || s.value.len() != d.value.len() {
            return Err(Error::Checkpoint(format!(
                "parameter mismatch: {} {:?} vs {} {:?}",
                d.name, d.shape, s.name, s.shape
            )));
        }
        d.value.copy_from_slice(&s.value);
        d.zero_grad();
    }
    Ok(())
}
