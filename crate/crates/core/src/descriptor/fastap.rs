//! Histogram-binned average precision over Euclidean distances between unit
//! descriptors, with an analytic gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::dgemm;

/// Distances live in `[0, MAX_DISTANCE]` for unit vectors.
pub const MAX_DISTANCE: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FastApConfig {
    pub bins: usize,
}

impl Default for FastApConfig {
    fn default() -> Self {
        Self { bins: 10 }
    }
}

impl FastApConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::Config(format!(
                "fastap bins must be >= 2, got {}",
                self.bins
            )));
        }
        Ok(())
    }

    /// Bin spacing; also the half-width of the triangular kernel.
    pub fn delta(&self) -> f64 {
        MAX_DISTANCE / (self.bins - 1) as f64
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.bins).map(|j| j as f64 * self.delta()).collect()
    }
}

/// Labelled descriptors. Samples sharing a label are positives of each
/// other; every other sample is a negative. Only the listed anchors are
/// scored.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    dim: usize,
    descriptors: Vec<f64>,
    labels: Vec<u64>,
    anchors: Vec<usize>,
}

impl SampleSet {
    pub fn new(
        dim: usize,
        descriptors: Vec<f64>,
        labels: Vec<u64>,
        anchors: Vec<usize>,
    ) -> Result<Self> {
        if dim == 0 || descriptors.len() != dim * labels.len() {
            return Err(Error::Shape(format!(
                "{} values do not form {} descriptors of dimension {dim}",
                descriptors.len(),
                labels.len()
            )));
        }
        if let Some(&a) = anchors.iter().find(|&&a| a >= labels.len()) {
            return Err(Error::InvalidInput(format!(
                "anchor index {a} out of range"
            )));
        }
        Ok(Self {
            dim,
            descriptors,
            labels,
            anchors,
        })
    }

    /// Every sample acts as an anchor.
    pub fn all_anchors(dim: usize, descriptors: Vec<f64>, labels: Vec<u64>) -> Result<Self> {
        let anchors = (0..labels.len()).collect();
        Self::new(dim, descriptors, labels, anchors)
    }

    pub fn from_vectors<V: AsRef<[f32]>>(
        vectors: &[V],
        labels: Vec<u64>,
        anchors: Vec<usize>,
    ) -> Result<Self> {
        let dim = vectors.first().map_or(0, |v| v.as_ref().len());
        let mut d = Vec::with_capacity(dim * vectors.len());
        for v in vectors {
            if v.as_ref().len() != dim {
                return Err(Error::Shape("descriptors differ in length".into()));
            }
            d.extend(v.as_ref().iter().map(|&x| x as f64));
        }
        Self::new(dim, d, labels, anchors)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn descriptors(&self) -> &[f64] {
        &self.descriptors
    }

    pub fn descriptors_mut(&mut self) -> &mut [f64] {
        &mut self.descriptors
    }

    pub fn descriptor(&self, i: usize) -> &[f64] {
        &self.descriptors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[u64] {
        &self.labels
    }

    pub fn anchors(&self) -> &[usize] {
        &self.anchors
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnchorAp {
    /// Index into the sample set.
    pub sample: usize,
    pub ap: f64,
    pub positives: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FastApOutput {
    /// `1 - mean AP` over scored anchors.
    pub loss: f64,
    /// Scored anchors in the order given by the sample set.
    pub per_anchor: Vec<AnchorAp>,
    /// Anchors without positives or without negatives.
    pub excluded: Vec<usize>,
}

impl FastApOutput {
    pub fn mean_ap(&self) -> f64 {
        1.0 - self.loss
    }
}

pub fn fast_ap(samples: &SampleSet, config: &FastApConfig) -> Result<FastApOutput> {
    run(samples, config, false).map(|(o, _)| o)
}

/// Also returns `d loss / d descriptors`, laid out like the descriptors.
pub fn fast_ap_with_gradient(
    samples: &SampleSet,
    config: &FastApConfig,
) -> Result<(FastApOutput, Vec<f64>)> {
    run(samples, config, true).map(|(o, g)| (o, g.expect("gradient requested")))
}

const BLOCK: usize = 128;

fn run(
    samples: &SampleSet,
    config: &FastApConfig,
    want_grad: bool,
) -> Result<(FastApOutput, Option<Vec<f64>>)> {
    config.validate()?;
    let n = samples.len();
    let dim = samples.dim;
    let x = &samples.descriptors;
    let q = config.bins;
    let delta = config.delta();
    let sq: Vec<f64> = (0..n)
        .map(|i| samples.descriptor(i).iter().map(|v| v * v).sum())
        .collect();

    let mut label_count = std::collections::HashMap::<u64, usize>::new();
    for &l in &samples.labels {
        *label_count.entry(l).or_default() += 1;
    }

    let mut grad = want_grad.then(|| vec![0.0f64; n * dim]);
    let mut per_anchor = Vec::with_capacity(samples.anchors.len());
    let mut excluded = Vec::new();

    let mut gram = vec![0.0f64; BLOCK * n];
    let mut weights = if want_grad {
        vec![0.0f64; BLOCK * n]
    } else {
        Vec::new()
    };
    let mut block_x = vec![0.0f64; BLOCK * dim];
    let mut hp = vec![0.0f64; q];
    let mut hn = vec![0.0f64; q];
    let mut dp = vec![0.0f64; q];
    let mut dn = vec![0.0f64; q];

    for chunk in samples.anchors.chunks(BLOCK) {
        let b = chunk.len();
        for (r, &a) in chunk.iter().enumerate() {
            block_x[r * dim..(r + 1) * dim].copy_from_slice(samples.descriptor(a));
        }
        // gram[r, t] = x_a . x_t
        dgemm(b, dim, n, &block_x, dim, 1, x, 1, dim, &mut gram, 0.0);
        if want_grad {
            weights[..b * n].fill(0.0);
        }
        for (r, &a) in chunk.iter().enumerate() {
            let la = samples.labels[a];
            let m_pos = label_count[&la] - 1;
            let m_neg = n - label_count[&la];
            if m_pos == 0 || m_neg == 0 {
                excluded.push(a);
                continue;
            }
            let dist = |t: usize| (sq[a] + sq[t] - 2.0 * gram[r * n + t]).max(0.0).sqrt();
            hp.fill(0.0);
            hn.fill(0.0);
            for t in 0..n {
                if t == a {
                    continue;
                }
                let (j, f) = bin_of(dist(t), delta, q);
                let h = if samples.labels[t] == la {
                    &mut hp
                } else {
                    &mut hn
                };
                h[j] += 1.0 - f;
                h[j + 1] += f;
            }
            let inv_m = 1.0 / m_pos as f64;
            let (mut cp, mut c) = (0.0, 0.0);
            let mut ap = 0.0;
            for j in 0..q {
                cp += hp[j];
                c += hp[j] + hn[j];
                if c > 0.0 {
                    ap += hp[j] * cp / c;
                }
            }
            ap *= inv_m;
            per_anchor.push(AnchorAp {
                sample: a,
                ap,
                positives: m_pos,
            });

            if !want_grad {
                continue;
            }
            // suffix sums over bins with nonzero cumulative mass
            let mut cum_p = vec![0.0; q];
            let mut cum = vec![0.0; q];
            let (mut sp, mut s) = (0.0, 0.0);
            for j in 0..q {
                sp += hp[j];
                s += hp[j] + hn[j];
                cum_p[j] = sp;
                cum[j] = s;
            }
            let (mut s1, mut s2) = (0.0, 0.0);
            for k in (0..q).rev() {
                if cum[k] > 0.0 {
                    s1 += hp[k] / cum[k];
                    s2 += hp[k] * cum_p[k] / (cum[k] * cum[k]);
                    dp[k] = inv_m * (cum_p[k] / cum[k] + s1 - s2);
                } else {
                    dp[k] = 0.0;
                }
                dn[k] = -inv_m * s2;
            }
            let w = &mut weights[r * n..(r + 1) * n];
            for t in 0..n {
                if t == a {
                    continue;
                }
                let d = dist(t);
                if d <= 0.0 || d >= MAX_DISTANCE {
                    continue;
                }
                let (j, _) = bin_of(d, delta, q);
                let g = if samples.labels[t] == la { &dp } else { &dn };
                let dap_dd = (g[j + 1] - g[j]) / delta;
                // loss = 1 - mean(ap); the 1/A factor is applied at the end
                w[t] = -dap_dd / d;
            }
        }
        if let Some(grad) = grad.as_mut() {
            accumulate_block(
                grad,
                &weights[..b * n],
                &block_x[..b * dim],
                chunk,
                x,
                n,
                dim,
            );
        }
    }

    if per_anchor.is_empty() {
        return Err(Error::InvalidInput(
            "no anchor has at least one positive and one negative".into(),
        ));
    }
    if !excluded.is_empty() {
        log::warn!(
            "{} anchor(s) without positives or negatives excluded",
            excluded.len()
        );
    }
    let mean_ap = per_anchor.iter().map(|a| a.ap).sum::<f64>() / per_anchor.len() as f64;
    if let Some(g) = grad.as_mut() {
        let s = 1.0 / per_anchor.len() as f64;
        for v in g.iter_mut() {
            *v *= s;
        }
    }
    Ok((
        FastApOutput {
            loss: 1.0 - mean_ap,
            per_anchor,
            excluded,
        },
        grad,
    ))
}

/// Lower bin index and fractional position for a clamped distance.
#[inline]
fn bin_of(d: f64, delta: f64, q: usize) -> (usize, f64) {
    let u = d.clamp(0.0, MAX_DISTANCE) / delta;
    let j = (u.floor() as usize).min(q - 2);
    (j, (u - j as f64).clamp(0.0, 1.0))
}

/// With `d_at = |x_a - x_t|` and `w_at = dL/dd_at / d_at`:
/// `g_a += (sum_t w_at) x_a - sum_t w_at x_t` and `g_t += w_at (x_t - x_a)`.
fn accumulate_block(
    grad: &mut [f64],
    w: &[f64],
    block_x: &[f64],
    anchors: &[usize],
    x: &[f64],
    n: usize,
    dim: usize,
) {
    let b = anchors.len();
    let mut wx = vec![0.0f64; b * dim];
    dgemm(b, n, dim, w, n, 1, x, dim, 1, &mut wx, 0.0);
    for (r, &a) in anchors.iter().enumerate() {
        let rs: f64 = w[r * n..(r + 1) * n].iter().sum();
        let g = &mut grad[a * dim..(a + 1) * dim];
        for k in 0..dim {
            g[k] += rs * block_x[r * dim + k] - wx[r * dim + k];
        }
    }
    let mut colsum = vec![0.0f64; n];
    for r in 0..b {
        for (c, v) in colsum.iter_mut().zip(&w[r * n..(r + 1) * n]) {
            *c += v;
        }
    }
    let mut wtx = vec![0.0f64; n * dim];
    dgemm(n, b, dim, w, 1, n, block_x, dim, 1, &mut wtx, 0.0);
    for t in 0..n {
        if colsum[t] == 0.0 {
            continue;
        }
        let g = &mut grad[t * dim..(t + 1) * dim];
        let xt = &x[t * dim..(t + 1) * dim];
        let wt = &wtx[t * dim..(t + 1) * dim];
        for k in 0..dim {
            g[k] += colsum[t] * xt[k] - wt[k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(v: &[f64]) -> Vec<f64> {
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter().map(|a| a / n).collect()
    }

    #[test]
    fn perfect_separation_gives_zero_loss() {
        // two positives identical to the anchor, two antipodal negatives
        let d = [
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![-1.0, 0.0],
        ];
        let flat: Vec<f64> = d.concat();
        let s = SampleSet::new(2, flat, vec![0, 0, 0, 1, 2], vec![0]).unwrap();
        let out = fast_ap(&s, &FastApConfig { bins: 10 }).unwrap();
        assert!((out.per_anchor[0].ap - 1.0).abs() < 1e-12);
        assert!(out.loss.abs() < 1e-12);
    }

    #[test]
    fn reversed_pair_gives_half() {
        // distances on bin centers 8 and 2 so each item fills a single bin
        let cfg = FastApConfig { bins: 10 };
        let angle = |d: f64| 2.0 * (d / 2.0).asin();
        let p = angle(8.0 * cfg.delta());
        let n = angle(2.0 * cfg.delta());
        let flat = vec![1.0, 0.0, p.cos(), p.sin(), n.cos(), -n.sin()];
        let s = SampleSet::new(2, flat, vec![7, 7, 8], vec![0]).unwrap();
        let out = fast_ap(&s, &cfg).unwrap();
        assert!(
            (out.per_anchor[0].ap - 0.5).abs() < 1e-9,
            "{}",
            out.per_anchor[0].ap
        );
    }

    #[test]
    fn anchors_without_positives_are_excluded() {
        let flat = vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0];
        let s = SampleSet::all_anchors(2, flat, vec![0, 0, 1]).unwrap();
        let out = fast_ap(&s, &FastApConfig::default()).unwrap();
        assert_eq!(out.excluded, vec![2]);
        assert_eq!(out.per_anchor.len(), 2);
        let lonely = SampleSet::all_anchors(2, vec![1.0, 0.0, 0.0, 1.0], vec![0, 1]).unwrap();
        assert!(fast_ap(&lonely, &FastApConfig::default()).is_err());
    }

    #[test]
    fn bins_below_two_rejected() {
        assert!(FastApConfig { bins: 1 }.validate().is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dim = 4;
        let n = 9;
        let flat: Vec<f64> = (0..n)
            .flat_map(|_| {
                unit(
                    &(0..dim)
                        .map(|_| rng.random_range(-1.0..1.0))
                        .collect::<Vec<_>>(),
                )
            })
            .collect();
        let labels = vec![0, 0, 0, 1, 1, 2, 2, 2, 3];
        let set = SampleSet::all_anchors(dim, flat, labels).unwrap();
        let cfg = FastApConfig { bins: 10 };
        let (_, g) = fast_ap_with_gradient(&set, &cfg).unwrap();
        let h = 1e-6;
        for i in 0..n * dim {
            let mut p = set.clone();
            p.descriptors_mut()[i] += h;
            let mut m = set.clone();
            m.descriptors_mut()[i] -= h;
            let fd =
                (fast_ap(&p, &cfg).unwrap().loss - fast_ap(&m, &cfg).unwrap().loss) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() < 1e-5 + 1e-3 * g[i].abs(),
                "component {i}: fd {fd} vs {}",
                g[i]
            );
        }
    }

    #[test]
    fn blocking_does_not_change_results() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dim = 3;
        let n = BLOCK + 37;
        let flat: Vec<f64> = (0..n)
            .flat_map(|_| {
                unit(
                    &(0..dim)
                        .map(|_| rng.random_range(-1.0..1.0))
                        .collect::<Vec<_>>(),
                )
            })
            .collect();
        let labels: Vec<u64> = (0..n as u64).map(|i| i / 3).collect();
        let set = SampleSet::all_anchors(dim, flat.clone(), labels.clone()).unwrap();
        let cfg = FastApConfig::default();
        let (full, g) = fast_ap_with_gradient(&set, &cfg).unwrap();
        // anchors in reverse order land in different blocks
        let rev = SampleSet::new(dim, flat, labels, (0..n).rev().collect()).unwrap();
        let (r, gr) = fast_ap_with_gradient(&rev, &cfg).unwrap();
        assert!((full.loss - r.loss).abs() < 1e-12);
        for (a, b) in g.iter().zip(&gr) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
