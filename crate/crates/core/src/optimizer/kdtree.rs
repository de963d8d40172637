use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, RecordSource};
use super::space::{ParamPoint, ParamSpace, DIMS};
use super::OptimizerError;

const K: usize = 7;

#[derive(Debug, Clone)]
struct Node {
    idx: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

/// Static k-d tree over normalized points with exact search.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; K]>,
    nodes: Vec<Node>,
    root: Option<usize>,
}

fn dist2(a: &[f64; K], b: &[f64; K]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// (distance², index) ordering; the lower index wins on equal distance.
fn closer(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

impl KdTree {
    pub fn build(points: Vec<[f64; K]>) -> Self {
        let mut tree = Self {
            nodes: Vec::with_capacity(points.len()),
            root: None,
            points,
        };
        let mut idx: Vec<usize> = (0..tree.points.len()).collect();
        tree.root = tree.build_rec(&mut idx, 0);
        tree
    }

    fn build_rec(&mut self, idx: &mut [usize], depth: usize) -> Option<usize> {
        if idx.is_empty() {
            return None;
        }
        let axis = depth % K;
        let pts = &self.points;
        idx.sort_by(|&a, &b| pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b)));
        let mid = idx.len() / 2;
        let node = self.nodes.len();
        self.nodes.push(Node {
            idx: idx[mid],
            axis,
            left: None,
            right: None,
        });
        let (lo, rest) = idx.split_at_mut(mid);
        let left = self.build_rec(lo, depth + 1);
        let right = self.build_rec(&mut rest[1..], depth + 1);
        self.nodes[node].left = left;
        self.nodes[node].right = right;
        Some(node)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and squared distance of the nearest point.
    pub fn nearest(&self, q: &[f64; K]) -> Option<(usize, f64)> {
        self.k_nearest(q, 1).into_iter().next()
    }

    /// Up to `k` nearest points by (distance, index), closest first.
    pub fn k_nearest(&self, q: &[f64; K], k: usize) -> Vec<(usize, f64)> {
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        if k > 0 {
            self.search(self.root, q, k, &mut best);
        }
        best.into_iter().map(|(d, i)| (i, d)).collect()
    }

    fn search(&self, node: Option<usize>, q: &[f64; K], k: usize, best: &mut Vec<(f64, usize)>) {
        let Some(n) = node else { return };
        let Node {
            idx,
            axis,
            left,
            right,
        } = self.nodes[n];
        let cand = (dist2(q, &self.points[idx]), idx);
        if best.len() < k || closer(cand, best[best.len() - 1]) {
            let pos = best
                .iter()
                .position(|&b| closer(cand, b))
                .unwrap_or(best.len());
            best.insert(pos, cand);
            best.truncate(k);
        }
        let diff = q[axis] - self.points[idx][axis];
        let (near, far) = if diff < 0.0 {
            (left, right)
        } else {
            (right, left)
        };
        self.search(near, q, k, best);
        if best.len() < k || diff * diff <= best[best.len() - 1].0 {
            self.search(far, q, k, best);
        }
    }
}

/// Anything that can score a proposed condition.
pub trait Objective: Send + Sync {
    fn score(&self, point: &ParamPoint) -> Result<f64, OptimizerError>;

    fn source(&self) -> RecordSource {
        RecordSource::Oracle
    }
}

/// Dataset-backed nearest-neighbor scorer in normalized space.
#[derive(Debug, Clone)]
pub struct NearestOracle {
    dataset: Dataset,
    tree: KdTree,
    /// Neighbors averaged with inverse-distance weights; 1 is plain lookup.
    pub k: usize,
}

impl NearestOracle {
    pub fn new(dataset: Dataset) -> Result<Self, OptimizerError> {
        if dataset.is_empty() {
            return Err(OptimizerError::EmptyDataset);
        }
        let tree = KdTree::build(
            dataset
                .records
                .iter()
                .map(|r| ParamSpace.normalize(&r.point))
                .collect(),
        );
        Ok(Self {
            dataset,
            tree,
            k: 1,
        })
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k.max(1);
        self
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn tree(&self) -> &KdTree {
        &self.tree
    }

    /// Dataset index of the nearest record.
    pub fn nearest_index(&self, point: &ParamPoint) -> usize {
        self.tree
            .nearest(&ParamSpace.normalize(point))
            .expect("non-empty tree")
            .0
    }
}

impl Objective for NearestOracle {
    fn score(&self, point: &ParamPoint) -> Result<f64, OptimizerError> {
        let q = ParamSpace.normalize(point);
        let hits = self.tree.k_nearest(&q, self.k);
        let score = |i: usize| self.dataset.records[i].pigment_score;
        if let Some(&(i, d)) = hits.first() {
            if self.k == 1 || d == 0.0 {
                return Ok(score(i));
            }
        }
        let (num, den) = hits.iter().fold((0.0, 0.0), |(n, w), &(i, d)| {
            let wi = 1.0 / d.sqrt();
            (n + wi * score(i), w + wi)
        });
        Ok(num / den)
    }
}

/// Smooth synthetic objective: one minus the mean squared normalized distance to a hidden optimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Surrogate {
    pub optimum: ParamPoint,
}

impl Surrogate {
    pub fn new(optimum: ParamPoint) -> Self {
        Self { optimum }
    }

    pub fn eval(&self, p: &ParamPoint) -> f64 {
        let d2 = dist2(
            &ParamSpace.normalize(p),
            &ParamSpace.normalize(&self.optimum),
        );
        1.0 - d2 / DIMS.len() as f64
    }
}

impl Objective for Surrogate {
    fn score(&self, point: &ParamPoint) -> Result<f64, OptimizerError> {
        Ok(self.eval(point))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::{synthetic_dataset, ExperimentRecord};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(points: &[[f64; K]], q: &[f64; K]) -> usize {
        let mut best = (f64::INFINITY, usize::MAX);
        for (i, p) in points.iter().enumerate() {
            let c = (dist2(q, p), i);
            if closer(c, best) {
                best = c;
            }
        }
        best.1
    }

    #[test]
    fn matches_linear_scan_with_duplicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut pts: Vec<[f64; K]> = (0..300)
            .map(|_| std::array::from_fn(|_| rng.random::<f64>()))
            .collect();
        pts.extend(pts.clone()[..40].iter().copied());
        let grid: Vec<[f64; K]> = (0..60)
            .map(|i| std::array::from_fn(|j| ((i + j) % 3) as f64 / 2.0))
            .collect();
        pts.extend(grid);
        let tree = KdTree::build(pts.clone());
        for _ in 0..500 {
            let q: [f64; K] = std::array::from_fn(|_| (rng.random_range(0..5) as f64) / 4.0);
            assert_eq!(tree.nearest(&q).unwrap().0, brute(&pts, &q));
        }
    }

    #[test]
    fn k_nearest_is_sorted_prefix_of_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pts: Vec<[f64; K]> = (0..200)
            .map(|_| std::array::from_fn(|_| rng.random::<f64>()))
            .collect();
        let tree = KdTree::build(pts.clone());
        let q = [0.5; K];
        let mut all: Vec<(f64, usize)> = pts
            .iter()
            .enumerate()
            .map(|(i, p)| (dist2(&q, p), i))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let got: Vec<usize> = tree.k_nearest(&q, 5).into_iter().map(|(i, _)| i).collect();
        assert_eq!(got, all[..5].iter().map(|x| x.1).collect::<Vec<_>>());
        assert!(KdTree::build(vec![]).nearest(&q).is_none());
    }

    #[test]
    fn exact_hit_returns_score() {
        let d = synthetic_dataset(50, 3, |p| p.ds / 100.0);
        let o = NearestOracle::new(d.clone()).unwrap();
        for r in &d.records {
            assert_eq!(o.score(&r.point).unwrap(), r.pigment_score);
        }
        assert_eq!(
            NearestOracle::new(Dataset::default()).unwrap_err(),
            OptimizerError::EmptyDataset
        );
    }

    #[test]
    fn idw_interpolates_between_neighbors() {
        let lo = ParamSpace.lower();
        let mut hi = lo;
        hi.pc = 505.0;
        let rec = |point, pigment_score| ExperimentRecord {
            point,
            pigment_score,
            source: RecordSource::Dataset,
        };
        let o = NearestOracle::new(Dataset::new(vec![rec(lo, 0.2), rec(hi, 0.6)]))
            .unwrap()
            .with_k(2);
        let mut mid = lo;
        mid.pc = 252.5;
        assert!((o.score(&mid).unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(o.score(&lo).unwrap(), 0.2);
    }

    #[test]
    fn surrogate_peaks_at_optimum() {
        let s = Surrogate::new(ParamSpace.lower());
        assert_eq!(s.eval(&ParamSpace.lower()), 1.0);
        assert_eq!(s.eval(&ParamSpace.upper()), 0.0);
    }
}
