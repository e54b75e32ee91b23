//! Random forest of CART trees for binary labels, predicting the positive
//! class probability.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features tried per split; `None` means `ceil(sqrt(F))`.
    pub max_features: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_trees: 100, max_depth: 8, min_samples_leaf: 2, max_features: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(p) => return p,
                Node::Split { feature, threshold, left, right } => {
                    i = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    trees: Vec<Tree>,
    n_features: usize,
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [u8],
    cfg: &'a ForestConfig,
    mtry: usize,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn grow(&mut self, idx: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let n = idx.len();
        let pos = idx.iter().filter(|&&i| self.y[i] == 1).count();
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(pos as f64 / n as f64));
        if pos == 0 || pos == n || depth >= self.cfg.max_depth || n < 2 * self.cfg.min_samples_leaf {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(idx, pos, rng) else {
            return id;
        };
        let split = partition(idx, |i| self.x[i][feature] <= threshold);
        let (l, r) = idx.split_at_mut(split);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = Node::Split { feature, threshold, left, right };
        id
    }

    fn best_split(&self, idx: &[usize], pos: usize, rng: &mut ChaCha8Rng) -> Option<(usize, f64)> {
        let n = idx.len();
        let n_features = self.x[0].len();
        let mut features: Vec<usize> = (0..n_features).collect();
        features.shuffle(rng);
        let parent = gini(pos, n);
        let min_leaf = self.cfg.min_samples_leaf.max(1);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order: Vec<(f64, u8)> = Vec::with_capacity(n);
        for &f in &features[..self.mtry] {
            order.clear();
            order.extend(idx.iter().map(|&i| (self.x[i][f], self.y[i])));
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_pos = 0;
            for k in 1..n {
                left_pos += usize::from(order[k - 1].1 == 1);
                if order[k - 1].0 == order[k].0 || k < min_leaf || n - k < min_leaf {
                    continue;
                }
                let (nl, nr) = (k as f64, (n - k) as f64);
                let child = (nl * gini(left_pos, k) + nr * gini(pos - left_pos, n - k)) / n as f64;
                let gain = parent - child;
                if gain > 1e-12 && best.is_none_or(|b| gain > b.0) {
                    best = Some((gain, f, 0.5 * (order[k - 1].0 + order[k].0)));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

/// Stable-enough in-place partition; returns the number of elements for
/// which `pred` holds (they come first).
fn partition(idx: &mut [usize], pred: impl Fn(usize) -> bool) -> usize {
    let mut k = 0;
    for j in 0..idx.len() {
        if pred(idx[j]) {
            idx.swap(k, j);
            k += 1;
        }
    }
    k
}

impl RandomForest {
    /// Fits on rows `x` (all the same length) with labels in {0, 1}.
    pub fn fit(x: &[Vec<f64>], y: &[u8], cfg: &ForestConfig) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::Empty("forest training set".into()));
        }
        if x.len() != y.len() {
            return Err(Error::shape(x.len(), y.len()));
        }
        let n_features = x[0].len();
        if n_features == 0 || x.iter().any(|r| r.len() != n_features) {
            return Err(Error::InvalidArgument("feature rows must be non-empty and equally long".into()));
        }
        if x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("forest features".into()));
        }
        if y.iter().any(|&v| v > 1) {
            return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
        }
        if !y.contains(&0) || !y.contains(&1) {
            return Err(Error::SingleClass("forest training labels".into()));
        }
        if cfg.n_trees == 0 {
            return Err(Error::Config("forest needs at least one tree".into()));
        }
        let mtry = cfg
            .max_features
            .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
            .clamp(1, n_features);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let n = x.len();
        let trees = (0..cfg.n_trees)
            .map(|_| {
                let mut boot: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let mut b = Builder { x, y, cfg, mtry, nodes: Vec::new() };
                b.grow(&mut boot, 0, &mut rng);
                Tree { nodes: b.nodes }
            })
            .collect();
        Ok(RandomForest { trees, n_features })
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Mean positive-class probability over trees.
    pub fn predict(&self, row: &[f64]) -> f64 {
        debug_assert_eq!(row.len(), self.n_features);
        self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64
    }
}
