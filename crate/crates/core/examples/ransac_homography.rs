//! Robust homography estimation from correspondences with outliers.
//!
//! ```text
//! cargo run --release --example ransac_homography
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use unconked::geometry::{
    estimate_homography_ransac, Correspondence, Homography, PlanarTransform, RansacConfig,
};

fn main() {
    let truth = Homography::from_matrix([
        [0.95, -0.18, 14.0],
        [0.17, 0.97, -6.0],
        [1.0e-4, -5.0e-5, 1.0],
    ]);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let mut pairs = Vec::new();
    for _ in 0..150 {
        let p = [rng.random_range(0.0..512.0), rng.random_range(0.0..512.0)];
        let q = truth.apply(p).unwrap();
        pairs.push(Correspondence::new(
            p,
            [q[0] + noise.sample(&mut rng), q[1] + noise.sample(&mut rng)],
        ));
    }
    let inliers = pairs.len();
    for _ in 0..150 {
        let p = [rng.random_range(0.0..512.0), rng.random_range(0.0..512.0)];
        let q = [rng.random_range(0.0..512.0), rng.random_range(0.0..512.0)];
        pairs.push(Correspondence::new(p, q));
    }

    match estimate_homography_ransac(&pairs, &RansacConfig::default(), 3) {
        Ok(fit) => {
            let err = pairs[..inliers]
                .iter()
                .map(|c| {
                    let a = fit.homography.apply(c.src).unwrap();
                    let b = truth.apply(c.src).unwrap();
                    (a[0] - b[0]).hypot(a[1] - b[1])
                })
                .sum::<f64>()
                / inliers as f64;
            println!("estimated H: {}", fit.homography.to_row_major_string());
            println!(
                "{} inliers of {} correspondences; mean error against the true H {err:.3} px",
                fit.inliers.len(),
                pairs.len()
            );
        }
        Err(e) => println!("RANSAC failed: {e}"),
    }
}
