//! Trains the dense descriptor with FastAP on procedural fundus images,
//! then checks how often a descriptor finds its own point across a
//! rotated, scaled and sheared view.
//!
//! ```text
//! cargo run --release --example train_descriptor
//! ```
//!
//! Writes `descriptor.ckpt.json` and `descriptor_log.jsonl` to
//! `$TMPDIR/unconked_examples`; the other examples reuse the checkpoint.

mod common;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unconked::descriptor::{describe, sample_descriptors, train_descriptor};
use unconked::evaluation::{make_synthetic_pair, PairMode, SyntheticPairConfig};
use unconked::geometry::{PlanarTransform, PointSet};
use unconked::nn::DescriptorNet;
use unconked::synthetic::{generate_fundus, VesselParams};
use unconked::training::{epoch_losses, TrainOutput};

/// Fraction of fixed points whose nearest moving descriptor is the true one.
fn nn_accuracy(net: &DescriptorNet, seed: u64) -> unconked::Result<f64> {
    let f = generate_fundus(&VesselParams::with_size(common::SIDE, common::SIDE), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pair = make_synthetic_pair(
        &mut rng,
        &f.image,
        &f.field,
        PairMode::Geometric,
        &SyntheticPairConfig::default(),
    )?;
    let (w, h) = pair.fixed.size();
    let (mut fixed, mut moving) = (Vec::new(), Vec::new());
    while fixed.len() < 200 {
        let p = [
            rng.random_range(0.0..w as f64),
            rng.random_range(0.0..h as f64),
        ];
        let Some(q) = pair.warp.apply(p) else {
            continue;
        };
        let inside = |m: &unconked::raster::Mask, p: [f64; 2]| {
            p[0] >= 0.0
                && p[1] >= 0.0
                && (p[0] as usize) < w
                && (p[1] as usize) < h
                && m.get(p[0] as usize, p[1] as usize)
        };
        if inside(&pair.fixed_roi, p) && inside(&pair.moving_roi, q) {
            fixed.push(p);
            moving.push(q);
        }
    }
    let da = sample_descriptors(&describe(net, &pair.fixed)?, &PointSet::from_coords(fixed))?;
    let db = sample_descriptors(
        &describe(net, &pair.moving)?,
        &PointSet::from_coords(moving),
    )?;
    let dist = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f32>();
    let correct = da
        .iter()
        .enumerate()
        .filter(|(i, a)| {
            (0..db.len()).min_by(|&j, &k| dist(a, &db[j]).total_cmp(&dist(a, &db[k]))) == Some(*i)
        })
        .count();
    Ok(correct as f64 / da.len() as f64)
}

fn main() -> unconked::Result<()> {
    let cfg = common::descriptor_config();
    let untrained = DescriptorNet::new(cfg.arch.clone(), cfg.seeds.sampling)?;

    let t = Instant::now();
    let run = train_descriptor(
        &common::training_set(),
        &cfg,
        Some(&TrainOutput::new(common::out_dir(), 256)),
    )?;
    println!("{} steps in {:.0} s", run.steps, t.elapsed().as_secs_f64());
    for (e, l) in epoch_losses(&run.log).iter().enumerate().step_by(8) {
        println!("  epoch {e:3}: 1 - mAP = {l:.4}");
    }

    for seed in [5001, 5002, 5003] {
        println!(
            "held-out pair {seed}: nearest-neighbour accuracy {:.2} untrained, {:.2} trained",
            nn_accuracy(&untrained, seed)?,
            nn_accuracy(&run.net, seed)?
        );
    }
    println!("run directory: {}", common::out_dir().display());
    Ok(())
}
