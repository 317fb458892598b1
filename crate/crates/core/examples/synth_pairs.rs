//! Procedural fundus images and synthetic evaluation pairs written to disk.
//!
//! ```text
//! cargo run --release --example synth_pairs -- /tmp/unconked_pairs
//! ```

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use unconked::evaluation::{make_synthetic_triplet, SyntheticPairConfig};
use unconked::manifest::save_control_points;
use unconked::synthetic::{generate_fundus, VesselParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out: PathBuf = std::env::args_os()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("unconked_pairs"));
    std::fs::create_dir_all(&out)?;

    let params = VesselParams::with_size(256, 256);
    let cfg = SyntheticPairConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..3 {
        let f = generate_fundus(&params, i);
        f.image.save_png(out.join(format!("source_{i}.png")))?;
        let triplet = make_synthetic_triplet(&mut rng, &f.image, &f.field, &cfg)?;
        for p in triplet {
            let stem = format!("{}_{i}", p.mode.as_str());
            p.fixed.save_png(out.join(format!("{stem}_fixed.png")))?;
            p.moving.save_png(out.join(format!("{stem}_moving.png")))?;
            save_control_points(out.join(format!("{stem}_cp.txt")), &p.control_points)?;
            let a = &p.affine_params;
            println!(
                "{stem}: rotation {:+.1} deg, scale {:.3}, shear {:+.1} deg",
                a.rotation_deg, a.scale, a.shear_deg
            );
        }
    }
    println!("written to {}", out.display());
    Ok(())
}
