//! Desk-scale models shared by the examples. Trained networks are cached
//! under `$TMPDIR/unconked_examples` so later examples start instantly.

#![allow(dead_code)]

use std::path::PathBuf;
use std::time::Instant;

use unconked::augmentation::RoiMask;
use unconked::checkpoint::Checkpoint;
use unconked::descriptor::{train_descriptor, DescriptorTrainConfig};
use unconked::detector::{
    detector_checkpoint_name, train_detector, Detector, DetectorTrainConfig, KeypointBudget,
    TargetKind,
};
use unconked::nn::{DescriptorArch, DescriptorNet, UNetArch};
use unconked::registration::RegisterConfig;
use unconked::synthetic::{generate_fundus, VesselParams};
use unconked::training::{epoch_losses, TrainImage};

pub const SIDE: usize = 128;

pub fn out_dir() -> PathBuf {
    let d = std::env::temp_dir().join("unconked_examples");
    std::fs::create_dir_all(&d).expect("create example output directory");
    d
}

pub fn training_set() -> Vec<TrainImage> {
    let params = VesselParams::with_size(SIDE, SIDE);
    (0..16)
        .map(|i| {
            let f = generate_fundus(&params, 100 + i);
            TrainImage {
                name: format!("train_{i:02}"),
                image: f.image,
                roi: RoiMask::loaded(f.field).expect("generated field is non-empty"),
            }
        })
        .collect()
}

pub fn descriptor_config() -> DescriptorTrainConfig {
    let mut c = DescriptorTrainConfig {
        arch: DescriptorArch::compact(32),
        lr: 1e-3,
        epochs: 64,
        ..Default::default()
    };
    c.batch.n_views = 4;
    c.batch.point_count = 300;
    c
}

pub fn detector_config(target: TargetKind) -> DetectorTrainConfig {
    let mut c = DetectorTrainConfig {
        arch: UNetArch {
            in_channels: 3,
            base_channels: 8,
            depth: 2,
        },
        target,
        lr: 1e-3,
        epochs: 100,
        ..Default::default()
    };
    c.batch.n_views = 4;
    c.batch.point_count = 100;
    c
}

pub fn register_config() -> RegisterConfig {
    RegisterConfig {
        inference_size: SIDE,
        keypoints: KeypointBudget::Top(200),
        nms_window: 5,
        ..Default::default()
    }
}

/// Loads the cached descriptor or trains one (a few minutes on one core).
pub fn descriptor() -> unconked::Result<DescriptorNet> {
    let path = out_dir().join("descriptor.ckpt.json");
    if path.is_file() {
        return Checkpoint::load(&path)?.descriptor_net();
    }
    println!("training descriptor ...");
    let t = Instant::now();
    let run = train_descriptor(&training_set(), &descriptor_config(), None)?;
    let losses = epoch_losses(&run.log);
    println!(
        "  {} steps in {:.0} s, epoch loss {:.4} -> {:.4}",
        run.steps,
        t.elapsed().as_secs_f64(),
        losses.first().unwrap_or(&f64::NAN),
        losses.last().unwrap_or(&f64::NAN)
    );
    Checkpoint::descriptor(&run.net, run.steps, losses.len(), Some(&run.optimizer)).save(&path)?;
    Ok(run.net)
}

/// Loads the cached detector for `target` or trains one on `net`.
pub fn detector(net: &DescriptorNet, target: TargetKind) -> unconked::Result<Detector> {
    let path = out_dir().join(detector_checkpoint_name(target));
    if path.is_file() {
        return Detector::load(&path);
    }
    println!("training {target} detector ...");
    let t = Instant::now();
    let run = train_detector(&training_set(), net, &detector_config(target), None)?;
    println!(
        "  {} steps in {:.0} s",
        run.steps,
        t.elapsed().as_secs_f64()
    );
    Checkpoint::detector(&run.detector.net, target, run.steps, 0, None).save(&path)?;
    Ok(run.detector)
}
