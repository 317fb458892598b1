//! Registers synthetic geometric pairs with the SS detector and compares
//! the estimated homography with the known one.
//!
//! ```text
//! cargo run --release --example register_synthetic
//! ```

mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use unconked::detector::TargetKind;
use unconked::evaluation::{
    make_synthetic_pair, registration_score, PairMode, SyntheticPairConfig,
};
use unconked::geometry::PlanarTransform;
use unconked::registration::{register_pair, KeypointSource};
use unconked::synthetic::{generate_fundus, VesselParams};

fn main() -> unconked::Result<()> {
    let net = common::descriptor()?;
    let detector = common::detector(&net, TargetKind::Ss)?;
    let cfg = common::register_config();
    let params = VesselParams::with_size(common::SIDE, common::SIDE);
    let mut rng = ChaCha8Rng::seed_from_u64(9);

    for i in 0..5u64 {
        let f = generate_fundus(&params, 10_000 + i);
        let pair = make_synthetic_pair(
            &mut rng,
            &f.image,
            &f.field,
            PairMode::Geometric,
            &SyntheticPairConfig::default(),
        )?;
        let out = register_pair(
            &pair.fixed,
            &pair.moving,
            (Some(&pair.fixed_roi), Some(&pair.moving_roi)),
            &net,
            KeypointSource::Heatmap(&detector),
            &cfg,
            3 + i,
        )?;
        let r = &out.result;
        print!(
            "pair {i}: rotation {:+6.1} deg, keypoints {:?}, {} matches, ",
            pair.affine_params.rotation_deg, r.keypoints_detected, r.matches_used
        );
        match &r.homography {
            Some(h) if r.success => {
                let s = registration_score(h, &pair.control_points, 25)?;
                let centre = [common::SIDE as f64 / 2.0; 2];
                let est = h.apply(centre).unwrap_or([f64::NAN; 2]);
                let truth = pair.true_transform.apply(centre).unwrap_or([f64::NAN; 2]);
                println!(
                    "{} inliers, control-point error {:.2} px; centre maps to ({:.1}, {:.1}), truth ({:.1}, {:.1})",
                    r.inlier_count, s.mean_error_px, est[0], est[1], truth[0], truth[1]
                );
            }
            _ => println!("failed: {}", r.failure.as_deref().unwrap_or("unknown")),
        }
    }
    Ok(())
}
