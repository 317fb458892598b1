//! FastAP on a toy descriptor set: soft AP per anchor next to the exact
//! ranking AP, and one gradient step that pulls positives together.
//!
//! ```text
//! cargo run --release --example fastap_ranking
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unconked::descriptor::{fast_ap, fast_ap_with_gradient, FastApConfig, SampleSet};

const DIM: usize = 8;

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Average precision of the exact ranking by distance.
fn ranking_ap(desc: &[f64], labels: &[u64], anchor: usize) -> f64 {
    let a = &desc[anchor * DIM..(anchor + 1) * DIM];
    let mut others: Vec<(f64, bool)> = (0..labels.len())
        .filter(|&j| j != anchor)
        .map(|j| {
            (
                dist(a, &desc[j * DIM..(j + 1) * DIM]),
                labels[j] == labels[anchor],
            )
        })
        .collect();
    others.sort_by(|x, y| x.0.total_cmp(&y.0));
    let (mut hits, mut sum) = (0.0, 0.0);
    for (rank, (_, pos)) in others.iter().enumerate() {
        if *pos {
            hits += 1.0;
            sum += hits / (rank + 1) as f64;
        }
    }
    sum / hits
}

fn main() -> unconked::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (groups, per_group) = (6, 3);
    let mut desc = Vec::new();
    let mut labels = Vec::new();
    for g in 0..groups {
        let mut center: Vec<f64> = (0..DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        normalize(&mut center);
        for _ in 0..per_group {
            let mut v: Vec<f64> = center
                .iter()
                .map(|c| c + rng.random_range(-0.4..0.4))
                .collect();
            normalize(&mut v);
            desc.extend(v);
            labels.push(g as u64);
        }
    }
    let anchors: Vec<usize> = (0..labels.len()).collect();

    for bins in [10, 100, 2000] {
        let set = SampleSet::new(DIM, desc.clone(), labels.clone(), anchors.clone())?;
        let out = fast_ap(&set, &FastApConfig { bins })?;
        let gap = out
            .per_anchor
            .iter()
            .map(|a| (a.ap - ranking_ap(&desc, &labels, a.sample)).abs())
            .fold(0.0, f64::max);
        println!(
            "Q = {bins:4}: mean soft AP {:.4}, max |soft - ranking| {gap:.4}",
            out.mean_ap()
        );
    }

    let cfg = FastApConfig::default();
    let mut x = desc.clone();
    for step in 0..5 {
        let set = SampleSet::new(DIM, x.clone(), labels.clone(), anchors.clone())?;
        let (out, grad) = fast_ap_with_gradient(&set, &cfg)?;
        println!("step {step}: loss {:.4}", out.loss);
        x.iter_mut().zip(&grad).for_each(|(v, g)| *v -= 0.5 * g);
        x.chunks_mut(DIM).for_each(normalize);
    }
    Ok(())
}
