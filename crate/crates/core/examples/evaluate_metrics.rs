//! Full evaluation of color, geometric and full synthetic pairs with the
//! D2 keypoints: overlap and structural metrics, control-point success
//! curve, AUC and the keypoint-distance sweep, saved as JSON and SVG.
//!
//! ```text
//! cargo run --release --example evaluate_metrics
//! ```

mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use unconked::evaluation::{
    aggregate, evaluate_synthetic_pair, make_synthetic_triplet, plot, SyntheticPairConfig,
};
use unconked::registration::KeypointSource;
use unconked::synthetic::{generate_fundus, VesselParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = common::descriptor()?;
    let cfg = common::register_config();
    let params = VesselParams::with_size(common::SIDE, common::SIDE);
    let pair_cfg = SyntheticPairConfig {
        control_points: 1000,
        ..Default::default()
    };
    let sweep = [0.25, 0.5, 0.75, 1.0];
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut evals = Vec::new();
    let mut total = 0;
    for i in 0..4u64 {
        let f = generate_fundus(&params, 30_000 + i);
        for p in make_synthetic_triplet(&mut rng, &f.image, &f.field, &pair_cfg)? {
            let name = format!("{}_{i}", p.mode.as_str());
            let (e, _) =
                evaluate_synthetic_pair(name, &p, &net, KeypointSource::D2, &cfg, &sweep, 3 + i)?;
            evals.push(e);
            total += 1;
        }
    }
    let report = aggregate(&evals, total, 25)?;
    println!(
        "{}/{} registered; normalized IoU {:.3}, Dice {:.3}, SSIM {:.3}",
        report.pairs_registered,
        report.pairs_total,
        report.normalized.iou,
        report.normalized.dice,
        report.normalized.ssim
    );
    for (cat, s) in &report.by_category {
        println!(
            "  {cat:9} registered {}/{}, AUC {:.3}",
            s.registered,
            s.pairs,
            s.auc.unwrap_or(f64::NAN)
        );
    }

    let dir = common::out_dir().join("evaluation");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    if let Some(curve) = &report.success_curve {
        plot::write_success_curve(dir.join("success_curve.svg"), curve, "D2")?;
    }
    if let Some(sweep) = &report.keypoint_distance {
        plot::write_keypoint_distance(dir.join("keypoint_distance.svg"), sweep)?;
    }
    println!("written to {}", dir.display());
    Ok(())
}
