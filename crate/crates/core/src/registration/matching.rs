use serde::{Deserialize, Serialize};

use crate::descriptor::MAX_DISTANCE;
use crate::error::{Error, Result};
use crate::geometry::PointSet;
use crate::nn::dgemm;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescriptorMatch {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
}

/// Matched keypoints. `pairs` index into `points_a` / `points_b`.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchSet {
    pub pairs: Vec<DescriptorMatch>,
    pub points_a: PointSet,
    pub points_b: PointSet,
}

impl MatchSet {
    pub fn new(
        pairs: Vec<DescriptorMatch>,
        points_a: PointSet,
        points_b: PointSet,
    ) -> Result<Self> {
        if pairs
            .iter()
            .any(|p| p.a >= points_a.len() || p.b >= points_b.len())
        {
            return Err(Error::InvalidInput(
                "match index outside its point set".into(),
            ));
        }
        Ok(Self {
            pairs,
            points_a,
            points_b,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `(point_a, point_b)` per pair.
    pub fn coordinates(&self) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
        self.pairs
            .iter()
            .map(|p| (self.points_a.coords[p.a], self.points_b.coords[p.b]))
    }

    /// Both point sets rescaled per axis.
    pub fn scaled(&self, scale_a: (f64, f64), scale_b: (f64, f64)) -> MatchSet {
        MatchSet {
            pairs: self.pairs.clone(),
            points_a: self.points_a.scaled(scale_a.0, scale_a.1),
            points_b: self.points_b.scaled(scale_b.0, scale_b.1),
        }
    }
}

fn flatten(d: &[Vec<f32>]) -> Result<(Vec<f64>, usize)> {
    let dim = d.first().map_or(0, Vec::len);
    if d.iter().any(|v| v.len() != dim) {
        return Err(Error::Shape("descriptors differ in length".into()));
    }
    Ok((
        d.iter().flat_map(|v| v.iter().map(|&x| x as f64)).collect(),
        dim,
    ))
}

/// Full Euclidean distance matrix, row-major `a.len() x b.len()`.
pub fn distance_matrix(a: &[Vec<f32>], b: &[Vec<f32>]) -> Result<Vec<f64>> {
    let (fa, da) = flatten(a)?;
    let (fb, db) = flatten(b)?;
    if !a.is_empty() && !b.is_empty() && da != db {
        return Err(Error::Shape(format!(
            "descriptor dimensions differ: {da} vs {db}"
        )));
    }
    let (n, m) = (a.len(), b.len());
    let mut g = vec![0.0f64; n * m];
    dgemm(n, da, m, &fa, da, 1, &fb, 1, da, &mut g, 0.0);
    let sa: Vec<f64> = fa
        .chunks(da.max(1))
        .map(|v| v.iter().map(|x| x * x).sum())
        .collect();
    let sb: Vec<f64> = fb
        .chunks(db.max(1))
        .map(|v| v.iter().map(|x| x * x).sum())
        .collect();
    for i in 0..n {
        for j in 0..m {
            let d2 = sa[i] + sb[j] - 2.0 * g[i * m + j];
            g[i * m + j] = d2.max(0.0).sqrt().min(MAX_DISTANCE);
        }
    }
    Ok(g)
}

/// Mutual nearest neighbours, sorted by ascending distance. Equal distances
/// resolve to the lower index. With `ratio`, a match also needs
/// `best < ratio * second_best` on the `a` side.
pub fn match_descriptors(
    a: &[Vec<f32>],
    b: &[Vec<f32>],
    ratio: Option<f64>,
) -> Result<Vec<DescriptorMatch>> {
    if a.is_empty() || b.is_empty() {
        return Ok(Vec::new());
    }
    let d = distance_matrix(a, b)?;
    let (n, m) = (a.len(), b.len());
    let mut best_b = vec![(0usize, f64::INFINITY, f64::INFINITY); n];
    let mut best_a = vec![(0usize, f64::INFINITY); m];
    for i in 0..n {
        for j in 0..m {
            let v = d[i * m + j];
            let e = &mut best_b[i];
            if v < e.1 {
                *e = (j, v, e.1);
            } else if v < e.2 {
                e.2 = v;
            }
            if v < best_a[j].1 {
                best_a[j] = (i, v);
            }
        }
    }
    let mut out: Vec<DescriptorMatch> = best_b
        .iter()
        .enumerate()
        .filter(|&(i, &(j, _, _))| best_a[j].0 == i)
        .filter(|&(_, &(_, d1, d2))| ratio.is_none_or(|r| d1 < r * d2))
        .map(|(i, &(j, v, _))| DescriptorMatch {
            a: i,
            b: j,
            distance: v,
        })
        .collect();
    out.sort_by(|x, y| x.distance.total_cmp(&y.distance).then(x.a.cmp(&y.a)));
    Ok(out)
}

/// The `m` closest pairs.
pub fn select_top_matches(matches: &MatchSet, m: usize) -> MatchSet {
    let mut pairs = matches.pairs.clone();
    pairs.sort_by(|x, y| x.distance.total_cmp(&y.distance).then(x.a.cmp(&y.a)));
    pairs.truncate(m);
    MatchSet {
        pairs,
        points_a: matches.points_a.clone(),
        points_b: matches.points_b.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn e(i: usize, d: usize) -> Vec<f32> {
        (0..d).map(|k| if k == i { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn identical_lists_match_identity() {
        let a: Vec<_> = (0..4).map(|i| e(i, 4)).collect();
        let m = match_descriptors(&a, &a, None).unwrap();
        assert_eq!(m.len(), 4);
        assert!(m.iter().all(|p| p.a == p.b && p.distance == 0.0));
    }

    #[test]
    fn permutation_case() {
        let a = vec![e(0, 2), e(1, 2)];
        let b = vec![e(1, 2), e(0, 2)];
        let m = match_descriptors(&a, &b, None).unwrap();
        let pairs: Vec<_> = m.iter().map(|p| (p.a, p.b)).collect();
        assert_eq!(pairs, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn swapping_roles_swaps_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut gen = |n: usize| -> Vec<Vec<f32>> {
            (0..n)
                .map(|_| {
                    let v: Vec<f32> = (0..6).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                    let s = v.iter().map(|x| x * x).sum::<f32>().sqrt();
                    v.into_iter().map(|x| x / s).collect()
                })
                .collect()
        };
        let a = gen(30);
        let b = gen(25);
        let mut ab: Vec<_> = match_descriptors(&a, &b, None)
            .unwrap()
            .iter()
            .map(|p| (p.a, p.b))
            .collect();
        let mut ba: Vec<_> = match_descriptors(&b, &a, None)
            .unwrap()
            .iter()
            .map(|p| (p.b, p.a))
            .collect();
        ab.sort();
        ba.sort();
        assert_eq!(ab, ba);
    }

    #[test]
    fn top_matches_sort_and_truncate() {
        let pairs = vec![
            DescriptorMatch {
                a: 0,
                b: 0,
                distance: 0.1,
            },
            DescriptorMatch {
                a: 1,
                b: 1,
                distance: 0.3,
            },
            DescriptorMatch {
                a: 2,
                b: 2,
                distance: 0.2,
            },
        ];
        let pts = PointSet::from_coords(vec![[0.0, 0.0]; 3]);
        let ms = MatchSet::new(pairs, pts.clone(), pts).unwrap();
        let top = select_top_matches(&ms, 2);
        let idx: Vec<_> = top.pairs.iter().map(|p| p.a).collect();
        assert_eq!(idx, vec![0, 2]);
        assert_eq!(select_top_matches(&ms, 10).len(), 3);
        assert_eq!(select_top_matches(&ms, 1).pairs[0].a, 0);
    }

    #[test]
    fn empty_inputs_give_no_matches() {
        assert!(match_descriptors(&[], &[e(0, 2)], None).unwrap().is_empty());
    }
}
