use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fastap::{fast_ap_with_gradient, FastApConfig, SampleSet};
use super::field::BilinearTap;
use crate::augmentation::{build_view_batch, BatchSpec, ViewBatch};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::{Adam, DescriptorArch, DescriptorNet, Tensor};
use crate::training::{
    check_dataset, JsonlWriter, LogRecord, LogSink, Seeds, TrainImage, TrainOutput,
};

pub const DESCRIPTOR_CHECKPOINT: &str = "descriptor.ckpt.json";
pub const DESCRIPTOR_LOG: &str = "descriptor_log.jsonl";

/// Which samples are scored as anchors during training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorMode {
    /// Every sampled point in every image.
    #[default]
    All,
    /// Reference-image points only.
    Reference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptorTrainConfig {
    pub arch: DescriptorArch,
    pub batch: BatchSpec,
    pub fastap: FastApConfig,
    pub lr: f64,
    pub epochs: usize,
    pub anchors: AnchorMode,
    pub seeds: Seeds,
}

impl Default for DescriptorTrainConfig {
    fn default() -> Self {
        Self {
            arch: DescriptorArch::l2net(128),
            batch: BatchSpec::default(),
            fastap: FastApConfig::default(),
            lr: 1e-4,
            epochs: 1000,
            anchors: AnchorMode::All,
            seeds: Seeds::default(),
        }
    }
}

impl DescriptorTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.batch.validate()?;
        self.fastap.validate()?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

pub struct DescriptorTraining {
    pub net: DescriptorNet,
    pub optimizer: Adam,
    pub log: Vec<LogRecord>,
    pub steps: usize,
}

/// Descriptors sampled from a batch together with what the backward pass
/// needs.
pub(crate) struct BatchSamples {
    pub set: SampleSet,
    /// Image index within the batch (0 = reference).
    pub image: Vec<usize>,
    taps: Vec<BilinearTap>,
    /// Interpolated vectors before renormalization.
    raw: Vec<f32>,
    norms: Vec<f32>,
}

/// Samples every reference anchor and every valid warped point from the
/// network output of a batch. Labels are anchor ids.
pub(crate) fn collect_samples(
    batch: &ViewBatch,
    out: &Tensor,
    mode: AnchorMode,
) -> Result<BatchSamples> {
    let dim = out.c();
    let (w, h) = (out.w(), out.h());
    let hw = w * h;
    let mut taps = Vec::new();
    let mut image = Vec::new();
    let mut labels = Vec::new();
    let mut push = |img: usize, p: [f64; 2], id: u64| -> Result<()> {
        let tap = BilinearTap::new(p[0], p[1], w, h)
            .ok_or_else(|| Error::InvalidInput(format!("point {id} outside image {img}")))?;
        taps.push(tap);
        image.push(img);
        labels.push(id);
        Ok(())
    };
    for (id, p) in batch.anchors.iter() {
        push(0, p, id)?;
    }
    for (v, pts) in batch.per_view_points.iter().enumerate() {
        for (i, (id, p)) in pts.iter().enumerate() {
            if batch.valid[v][i] {
                push(v + 1, p, id)?;
            }
        }
    }
    let n = taps.len();
    let mut raw = vec![0.0f32; n * dim];
    let mut norms = vec![0.0f32; n];
    let mut desc = vec![0.0f64; n * dim];
    for s in 0..n {
        let r = &mut raw[s * dim..(s + 1) * dim];
        taps[s].gather(out.item(image[s]), hw, r);
        let nrm = r.iter().map(|a| a * a).sum::<f32>().sqrt().max(1e-12);
        norms[s] = nrm;
        for (d, &v) in desc[s * dim..(s + 1) * dim].iter_mut().zip(r.iter()) {
            *d = (v / nrm) as f64;
        }
    }
    let mut count = std::collections::HashMap::<u64, usize>::new();
    for &l in &labels {
        *count.entry(l).or_default() += 1;
    }
    let anchors = (0..n)
        .filter(|&s| count[&labels[s]] > 1 && (mode == AnchorMode::All || image[s] == 0))
        .collect();
    Ok(BatchSamples {
        set: SampleSet::new(dim, desc, labels, anchors)?,
        image,
        taps,
        raw,
        norms,
    })
}

impl BatchSamples {
    /// Maps `d loss / d sampled descriptor` back onto the dense output.
    pub fn backward(&self, grad: &[f64], out_shape: [usize; 4]) -> Tensor {
        let [n, dim, h, w] = out_shape;
        let hw = h * w;
        let mut g = Tensor::zeros(n, dim, h, w);
        let mut gr = vec![0.0f32; dim];
        for s in 0..self.taps.len() {
            let nrm = self.norms[s];
            let raw = &self.raw[s * dim..(s + 1) * dim];
            let gs = &grad[s * dim..(s + 1) * dim];
            let dot: f64 = raw
                .iter()
                .zip(gs)
                .map(|(&r, &g)| (r / nrm) as f64 * g)
                .sum();
            for k in 0..dim {
                let y = (raw[k] / nrm) as f64;
                gr[k] = ((gs[k] - y * dot) / nrm as f64) as f32;
            }
            self.taps[s].scatter(&gr, hw, g.item_mut(self.image[s]));
        }
        g
    }
}

/// Trains a descriptor network from scratch. One step per image per epoch.
pub fn train_descriptor(
    data: &[TrainImage],
    config: &DescriptorTrainConfig,
    output: Option<&TrainOutput>,
) -> Result<DescriptorTraining> {
    config.validate()?;
    check_dataset(data)?;
    if let Some(img) = data
        .iter()
        .find(|d| d.image.channels() != DescriptorNet::INPUT_CHANNELS)
    {
        return Err(Error::Shape(format!("{}: expected an RGB image", img.name)));
    }
    let mut net = DescriptorNet::new(config.arch.clone(), config.seeds.sampling ^ 0x5eed)?;
    let mut opt = Adam::new(config.lr);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(config.seeds.augmentation);
    let mut sample_rng = ChaCha8Rng::seed_from_u64(config.seeds.sampling);
    let file = match output {
        Some(o) => Some(JsonlWriter::create(&o.dir.join(DESCRIPTOR_LOG))?),
        None => None,
    };
    let mut log = LogSink::new(file);
    let save = |net: &DescriptorNet, opt: &Adam, step: usize, epoch: usize| -> Result<()> {
        match output {
            Some(o) => Checkpoint::descriptor(net, step, epoch, Some(opt))
                .save(o.dir.join(DESCRIPTOR_CHECKPOINT)),
            None => Ok(()),
        }
    };

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut sample_rng);
        let mut sum = 0.0;
        for &i in &order {
            let item = &data[i];
            let batch = build_view_batch(
                &mut aug_rng,
                &mut sample_rng,
                &item.image,
                &item.roi,
                &config.batch,
            )?;
            let x = Tensor::from_images(batch.images())?;
            let tape = net.forward_train(&x)?;
            let samples = collect_samples(&batch, tape.output(), config.anchors)?;
            let (out, grad) = fast_ap_with_gradient(&samples.set, &config.fastap)?;
            if !out.loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                save(&net, &opt, step, epoch)?;
                return Err(Error::Diverged {
                    step,
                    loss: out.loss,
                });
            }
            let g = samples.backward(&grad, tape.output().shape());
            net.zero_grad();
            net.backward(tape, &g);
            if net
                .params()
                .iter()
                .any(|p| p.grad.iter().any(|v| !v.is_finite()))
            {
                save(&net, &opt, step, epoch)?;
                return Err(Error::Diverged {
                    step,
                    loss: f64::NAN,
                });
            }
            opt.step(&mut net.params_mut())?;
            step += 1;
            sum += out.loss;
            log.push(LogRecord::Step {
                epoch,
                step,
                loss: out.loss,
                count: out.per_anchor.len(),
            })?;
            if output.is_some_and(|o| o.due(step)) {
                save(&net, &opt, step, epoch)?;
            }
        }
        let mean_loss = sum / data.len() as f64;
        log::info!("descriptor epoch {epoch}: mean loss {mean_loss:.5}");
        log.push(LogRecord::Epoch { epoch, mean_loss })?;
    }
    save(&net, &opt, step, config.epochs)?;
    Ok(DescriptorTraining {
        net,
        optimizer: opt,
        log: log.into_records(),
        steps: step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augmentation::{HsvRanges, NoiseConfig, RoiMask, SamplingMode};
    use crate::descriptor::fast_ap;
    use crate::geometry::{AffineRanges, Interpolation, ParamRange};
    use crate::raster::Image;

    fn texture(seed: usize) -> Image {
        Image::from_fn(24, 24, 3, |c, x, y| {
            let v = ((x * (3 + seed) + y * 7 + c * 11 + (x * y) % 5) % 13) as f32 / 12.0;
            0.1 + 0.8 * v
        })
    }

    fn tiny_config() -> DescriptorTrainConfig {
        DescriptorTrainConfig {
            arch: DescriptorArch::compact(8),
            batch: BatchSpec {
                n_views: 2,
                affine: AffineRanges {
                    rotation_deg: ParamRange::symmetric(10.0),
                    ..AffineRanges::identity()
                },
                hsv: HsvRanges::identity(),
                noise: NoiseConfig::none(),
                point_count: 40,
                sampling: SamplingMode::Roi,
                interpolation: Interpolation::Bilinear,
            },
            fastap: FastApConfig::default(),
            lr: 1e-3,
            epochs: 1,
            anchors: AnchorMode::All,
            seeds: Seeds::default(),
        }
    }

    fn data(n: usize) -> Vec<TrainImage> {
        (0..n)
            .map(|i| TrainImage {
                name: format!("t{i}"),
                image: texture(i),
                roi: RoiMask::full(24, 24),
            })
            .collect()
    }

    #[test]
    fn sample_backward_matches_finite_differences() {
        let cfg = tiny_config();
        let net = DescriptorNet::new(cfg.arch.clone(), 1).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut s = ChaCha8Rng::seed_from_u64(2);
        let img = texture(0);
        let batch =
            build_view_batch(&mut a, &mut s, &img, &RoiMask::full(24, 24), &cfg.batch).unwrap();
        let out = net
            .forward(&Tensor::from_images(batch.images()).unwrap())
            .unwrap();
        let samples = collect_samples(&batch, &out, AnchorMode::All).unwrap();
        let (_, grad) = fast_ap_with_gradient(&samples.set, &cfg.fastap).unwrap();
        let g = samples.backward(&grad, out.shape());
        // perturb a dense output entry that one of the samples reads
        let tap = samples.taps[3];
        let k = samples.image[3] * out.item_len() + 2 * out.plane_len() + tap.idx[0];
        let loss_at = |delta: f32| {
            let mut o = out.clone();
            o.data_mut()[k] += delta;
            let s = collect_samples(&batch, &o, AnchorMode::All).unwrap();
            fast_ap(&s.set, &cfg.fastap).unwrap().loss
        };
        let h = 1e-3;
        let fd = (loss_at(h) - loss_at(-h)) / (2.0 * h as f64);
        let an = g.data()[k] as f64;
        assert!((fd - an).abs() < 1e-4 + 0.05 * an.abs(), "fd {fd} vs {an}");
    }

    #[test]
    fn smoke_run_writes_loadable_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let out = TrainOutput::new(dir.path(), 1);
        let res = train_descriptor(&data(2), &tiny_config(), Some(&out)).unwrap();
        assert_eq!(res.steps, 2);
        assert!(res.log.iter().all(|r| r.loss().is_finite()));
        let ck = Checkpoint::load(dir.path().join(DESCRIPTOR_CHECKPOINT)).unwrap();
        let net = ck.descriptor_net().unwrap();
        for (a, b) in net.params().iter().zip(res.net.params()) {
            assert_eq!(a.value, b.value);
        }
        let read = crate::training::read_log(dir.path().join(DESCRIPTOR_LOG)).unwrap();
        assert_eq!(read, res.log);
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(train_descriptor(&[], &tiny_config(), None).is_err());
    }
}
