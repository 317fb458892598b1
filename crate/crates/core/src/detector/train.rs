use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::heatmap::{Heatmap, TargetKind};
use super::targets::{ap_map_from_output, describe_views, ss_map_from_fields};
use crate::augmentation::{build_view_batch, BatchSpec, RoiMask};
use crate::checkpoint::Checkpoint;
use crate::descriptor::{DescriptorField, FastApConfig};
use crate::error::{Error, Result};
use crate::nn::{Adam, DescriptorNet, Tensor, UNet, UNetArch};
use crate::raster::Image;
use crate::training::{
    check_dataset, JsonlWriter, LogRecord, LogSink, Seeds, TrainImage, TrainOutput,
};

pub const DETECTOR_LOG: &str = "detector_log.jsonl";

pub fn detector_checkpoint_name(target: TargetKind) -> String {
    format!("detector_{target}.ckpt.json")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorTrainConfig {
    pub arch: UNetArch,
    pub target: TargetKind,
    pub batch: BatchSpec,
    pub fastap: FastApConfig,
    pub lr: f64,
    pub epochs: usize,
    pub seeds: Seeds,
}

impl Default for DetectorTrainConfig {
    fn default() -> Self {
        Self {
            arch: UNetArch::default(),
            target: TargetKind::Ss,
            batch: BatchSpec {
                point_count: 250,
                ..BatchSpec::default()
            },
            fastap: FastApConfig::default(),
            lr: 1e-4,
            epochs: 400,
            seeds: Seeds::default(),
        }
    }
}

impl DetectorTrainConfig {
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

/// A trained heatmap regressor and the map kind it predicts.
#[derive(Clone, Debug, PartialEq)]
pub struct Detector {
    pub net: UNet,
    pub target: TargetKind,
}

impl Detector {
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let (net, target) = Checkpoint::load(path)?.detector_net()?;
        Ok(Self { net, target })
    }
}

/// Dense prediction on `image`; validity is the RoI.
pub fn predict_heatmap(detector: &Detector, image: &Image, roi: &RoiMask) -> Result<Heatmap> {
    if roi.size() != image.size() {
        return Err(Error::Shape(format!(
            "image is {:?} but RoI is {:?}",
            image.size(),
            roi.size()
        )));
    }
    let out = detector.net.forward(&Tensor::from_images([image])?)?;
    let (w, h) = image.size();
    Heatmap::new(
        w,
        h,
        out.into_data(),
        roi.mask.clone(),
        detector.target.polarity(),
        detector.target.predicted_kind(),
    )
}

/// Mean squared error over valid pixels and its gradient.
pub fn masked_mse(pred: &[f32], target: &Heatmap) -> (f64, Vec<f32>, usize) {
    let count = target.validity.count();
    let mut grad = vec![0.0f32; pred.len()];
    if count == 0 {
        return (0.0, grad, 0);
    }
    let mut sum = 0.0f64;
    let scale = 2.0 / count as f64;
    for (i, (&m, (&p, &t))) in target
        .validity
        .data()
        .iter()
        .zip(pred.iter().zip(target.values()))
        .enumerate()
    {
        if m {
            let d = p as f64 - t as f64;
            sum += d * d;
            grad[i] = (scale * d) as f32;
        }
    }
    (sum / count as f64, grad, count)
}

/// Target map for one freshly augmented batch.
pub fn make_target(
    descriptor: &DescriptorNet,
    batch: &crate::augmentation::ViewBatch,
    target: TargetKind,
    fastap: &FastApConfig,
) -> Result<Heatmap> {
    let out = describe_views(descriptor, batch)?;
    match target {
        TargetKind::Ap => ap_map_from_output(&out, batch, fastap),
        TargetKind::Ss => {
            let fields: Vec<DescriptorField> = (0..out.n())
                .map(|i| {
                    DescriptorField::new(out.w(), out.h(), out.c(), out.item(i).to_vec(), true)
                })
                .collect::<Result<_>>()?;
            // the sigmoid head cannot reach negative similarity
            let m = ss_map_from_fields(&fields[0], &fields[1..], batch)?;
            let values = m.values().iter().map(|v| v.max(0.0)).collect();
            Heatmap::new(
                m.width(),
                m.height(),
                values,
                m.validity.clone(),
                m.polarity,
                m.kind,
            )
        }
    }
}

pub struct DetectorTraining {
    pub detector: Detector,
    pub optimizer: Adam,
    pub log: Vec<LogRecord>,
    pub steps: usize,
}

/// Regresses target maps of a frozen descriptor network from raw images.
pub fn train_detector(
    data: &[TrainImage],
    descriptor: &DescriptorNet,
    config: &DetectorTrainConfig,
    output: Option<&TrainOutput>,
) -> Result<DetectorTraining> {
    train_detector_with(data, config, output, |batch| {
        make_target(descriptor, batch, config.target, &config.fastap)
    })
}

/// Training loop with a caller-supplied target generator.
pub fn train_detector_with(
    data: &[TrainImage],
    config: &DetectorTrainConfig,
    output: Option<&TrainOutput>,
    mut target_of: impl FnMut(&crate::augmentation::ViewBatch) -> Result<Heatmap>,
) -> Result<DetectorTraining> {
    config.validate()?;
    check_dataset(data)?;
    let mut net = UNet::new(config.arch, config.seeds.sampling ^ 0xde7ec7)?;
    let mut opt = Adam::new(config.lr);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(config.seeds.augmentation);
    let mut sample_rng = ChaCha8Rng::seed_from_u64(config.seeds.sampling);
    let file = match output {
        Some(o) => Some(JsonlWriter::create(&o.dir.join(DETECTOR_LOG))?),
        None => None,
    };
    let mut log = LogSink::new(file);
    let ck_name = detector_checkpoint_name(config.target);
    let save = |net: &UNet, opt: &Adam, step: usize, epoch: usize| -> Result<()> {
        match output {
            Some(o) => Checkpoint::detector(net, config.target, step, epoch, Some(opt))
                .save(o.dir.join(&ck_name)),
            None => Ok(()),
        }
    };

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut sample_rng);
        let (mut sum, mut n) = (0.0, 0usize);
        for &i in &order {
            let item = &data[i];
            let batch = build_view_batch(
                &mut aug_rng,
                &mut sample_rng,
                &item.image,
                &item.roi,
                &config.batch,
            )?;
            let target = target_of(&batch)?;
            let tape = net.forward_train(&Tensor::from_images([&item.image])?)?;
            let (loss, grad, count) = masked_mse(tape.output().data(), &target);
            if count == 0 {
                log::warn!("{}: empty target mask, step skipped", item.name);
                continue;
            }
            if !loss.is_finite() {
                save(&net, &opt, step, epoch)?;
                return Err(Error::Diverged { step, loss });
            }
            let g = Tensor::from_vec(tape.output().shape(), grad)?;
            net.zero_grad();
            net.backward(tape, &g);
            opt.step(&mut net.params_mut())?;
            step += 1;
            sum += loss;
            n += 1;
            log.push(LogRecord::Step {
                epoch,
                step,
                loss,
                count,
            })?;
            if output.is_some_and(|o| o.due(step)) {
                save(&net, &opt, step, epoch)?;
            }
        }
        if n > 0 {
            let mean_loss = sum / n as f64;
            log::info!("detector epoch {epoch}: masked mse {mean_loss:.6}");
            log.push(LogRecord::Epoch { epoch, mean_loss })?;
        }
    }
    save(&net, &opt, step, config.epochs)?;
    Ok(DetectorTraining {
        detector: Detector {
            net,
            target: config.target,
        },
        optimizer: opt,
        log: log.into_records(),
        steps: step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augmentation::{HsvRanges, NoiseConfig, SamplingMode};
    use crate::detector::{HeatmapKind, Polarity};
    use crate::geometry::{AffineRanges, Interpolation};
    use crate::raster::Mask;

    fn small_config() -> DetectorTrainConfig {
        DetectorTrainConfig {
            arch: UNetArch {
                in_channels: 3,
                base_channels: 4,
                depth: 2,
            },
            target: TargetKind::Ss,
            batch: BatchSpec {
                n_views: 1,
                affine: AffineRanges::identity(),
                hsv: HsvRanges::identity(),
                noise: NoiseConfig::none(),
                point_count: 4,
                sampling: SamplingMode::Roi,
                interpolation: Interpolation::Bilinear,
            },
            fastap: FastApConfig::default(),
            lr: 1e-2,
            epochs: 200,
            seeds: Seeds::default(),
        }
    }

    fn image() -> TrainImage {
        TrainImage {
            name: "t".into(),
            image: Image::from_fn(16, 16, 3, |c, x, y| ((x + 2 * y + c) % 5) as f32 / 4.0),
            roi: RoiMask::full(16, 16),
        }
    }

    #[test]
    fn regresses_a_constant_target() {
        let cfg = small_config();
        let res = train_detector_with(&[image()], &cfg, None, |_| {
            Heatmap::new(
                16,
                16,
                vec![0.5; 256],
                Mask::new(16, 16, true),
                Polarity::HigherIsBetter,
                HeatmapKind::Ss,
            )
        })
        .unwrap();
        let item = image();
        let pred = predict_heatmap(&res.detector, &item.image, &item.roi).unwrap();
        assert!(
            pred.values().iter().all(|v| (v - 0.5).abs() < 0.02),
            "{:?}",
            &pred.values()[..8]
        );
    }

    #[test]
    fn masked_mse_is_zero_on_matching_prediction() {
        let t = Heatmap::new(
            2,
            2,
            vec![0.1, 0.2, 0.3, 0.4],
            Mask::from_fn(2, 2, |x, _| x == 0),
            Polarity::HigherIsBetter,
            HeatmapKind::Ss,
        )
        .unwrap();
        let (l, g, n) = masked_mse(&[0.1, 9.0, 0.3, -4.0], &t);
        assert_eq!((l, n), (0.0, 2));
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_step_smoke_with_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let desc = DescriptorNet::new(crate::nn::DescriptorArch::compact(4), 1).unwrap();
        let cfg = DetectorTrainConfig {
            epochs: 1,
            ..small_config()
        };
        let res = train_detector(
            &[image()],
            &desc,
            &cfg,
            Some(&TrainOutput::new(dir.path(), 0)),
        )
        .unwrap();
        assert_eq!(res.steps, 1);
        assert!(res.log[0].loss().is_finite());
        let back =
            Detector::load(dir.path().join(detector_checkpoint_name(TargetKind::Ss))).unwrap();
        assert_eq!(back.target, TargetKind::Ss);
        for (a, b) in back.net.params().iter().zip(res.detector.net.params()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn prediction_contract() {
        let det = Detector {
            net: UNet::new(small_config().arch, 3).unwrap(),
            target: TargetKind::Ap,
        };
        let item = image();
        let a = predict_heatmap(&det, &item.image, &item.roi).unwrap();
        assert_eq!(a.size(), (16, 16));
        assert_eq!(a.polarity, Polarity::LowerIsBetter);
        assert!(a.values().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(predict_heatmap(&det, &item.image, &item.roi).unwrap(), a);
        assert!(predict_heatmap(&det, &item.image, &RoiMask::full(8, 8)).is_err());
    }
}
