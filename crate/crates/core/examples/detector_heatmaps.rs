//! Describe-to-detect maps for one image: the AP and SS training targets
//! computed from a multiview batch, the trained detector's prediction and
//! the D2 score, each with its NMS keypoints.
//!
//! ```text
//! cargo run --release --example detector_heatmaps
//! ```
//!
//! Heatmaps are written as 16-bit PNG plus JSON metadata, keypoints as CSV.

mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use unconked::augmentation::{build_view_batch, RoiMask};
use unconked::descriptor::{describe, FastApConfig};
use unconked::detector::{
    ap_map, d2_scores, nms_select, predict_heatmap, ss_map, Heatmap, KeypointBudget, TargetKind,
};
use unconked::synthetic::{generate_fundus, VesselParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = common::descriptor()?;
    let detector = common::detector(&net, TargetKind::Ss)?;

    let f = generate_fundus(&VesselParams::with_size(common::SIDE, common::SIDE), 4242);
    let roi = RoiMask::loaded(f.field.clone())?;
    let spec = common::detector_config(TargetKind::Ss).batch;
    let batch = build_view_batch(
        &mut ChaCha8Rng::seed_from_u64(1),
        &mut ChaCha8Rng::seed_from_u64(2),
        &f.image,
        &roi,
        &spec,
    )?;

    let maps: Vec<(&str, Heatmap)> = vec![
        ("ap_target", ap_map(&net, &batch, &FastApConfig::default())?),
        ("ss_target", ss_map(&net, &batch)?),
        ("ss_predicted", predict_heatmap(&detector, &f.image, &roi)?),
        ("d2", d2_scores(&describe(&net, &f.image)?, Some(&f.field))?),
    ];

    let dir = common::out_dir().join("heatmaps");
    std::fs::create_dir_all(&dir)?;
    f.image.save_png(dir.join("image.png"))?;
    for (stem, map) in &maps {
        map.export(&dir, stem)?;
        let kp = nms_select(map, KeypointBudget::Top(100), 5)?;
        kp.write_csv(dir.join(format!("{stem}_keypoints.csv")))?;
        println!(
            "{stem:13} mean {:.3}  best {:.3}  {} keypoints",
            map.mean_valid().unwrap_or(f64::NAN),
            kp.scores.first().copied().unwrap_or(f32::NAN),
            kp.len()
        );
    }
    println!("written to {}", dir.display());
    Ok(())
}
