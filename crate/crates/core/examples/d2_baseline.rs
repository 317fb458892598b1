//! The SS detector against the D2 score computed directly on the
//! descriptor field, on the same synthetic pairs and RANSAC seeds.
//!
//! ```text
//! cargo run --release --example d2_baseline
//! ```

mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use unconked::detector::TargetKind;
use unconked::evaluation::{
    aggregate, evaluate_synthetic_pair, make_synthetic_pair, PairMode, SyntheticPairConfig,
};
use unconked::registration::KeypointSource;
use unconked::synthetic::{generate_fundus, VesselParams};

const PAIRS: u64 = 10;

fn main() -> unconked::Result<()> {
    let net = common::descriptor()?;
    let detector = common::detector(&net, TargetKind::Ss)?;
    let cfg = common::register_config();
    let params = VesselParams::with_size(common::SIDE, common::SIDE);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let pairs: Vec<_> = (0..PAIRS)
        .map(|i| {
            let f = generate_fundus(&params, 20_000 + i);
            make_synthetic_pair(
                &mut rng,
                &f.image,
                &f.field,
                PairMode::Geometric,
                &SyntheticPairConfig::default(),
            )
        })
        .collect::<unconked::Result<_>>()?;

    for source in [KeypointSource::Heatmap(&detector), KeypointSource::D2] {
        let mut evals = Vec::new();
        for (i, p) in pairs.iter().enumerate() {
            let (e, _) = evaluate_synthetic_pair(
                format!("pair_{i}"),
                p,
                &net,
                source,
                &cfg,
                &[],
                3 + i as u64,
            )?;
            evals.push(e);
        }
        let r = aggregate(&evals, pairs.len(), 25)?;
        println!(
            "{:3}: registered {}/{}, mean control-point error {:.2} px, AUC {:.3}",
            source.name(),
            r.pairs_registered,
            r.pairs_total,
            r.mean_control_error_px.unwrap_or(f64::NAN),
            r.auc.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
