//! Random regression forest: bootstrap-sampled CART trees with per-node
//! feature subsampling, leaf value = mean target.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Fraction of features examined at each split (at least one).
    pub feature_fraction: f64,
    /// Bootstrap sample size per tree; `None` draws as many as the data.
    pub max_samples: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 24,
            max_depth: 14,
            min_leaf: 3,
            feature_fraction: 0.5,
            max_samples: Some(8000),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Leaf { value: f64, count: usize },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                TreeNode::Leaf { value, .. } => return *value,
                TreeNode::Split { feature, threshold, left, right } => {
                    at = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Leaf { value, count } => Some((*value, *count)),
            TreeNode::Split { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub dim: usize,
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub trees: Vec<RegressionTree>,
}

impl ForestModel {
    /// Mean of the tree predictions.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, actual: x.len() });
        }
        Ok(self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64)
    }
}

struct Builder<'a> {
    xs: &'a [&'a [f64]],
    ys: &'a [f64],
    params: &'a ForestParams,
    n_features: usize,
    nodes: Vec<TreeNode>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    n_left: usize,
}

impl Builder<'_> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let value = idx.iter().map(|&i| self.ys[i]).sum::<f64>() / idx.len() as f64;
        self.nodes.push(TreeNode::Leaf { value, count: idx.len() });
        self.nodes.len() - 1
    }

    fn best_split(&self, idx: &mut [usize], rng: &mut impl Rng) -> Option<BestSplit> {
        let n = idx.len();
        let dim = self.xs[0].len();
        let total: f64 = idx.iter().map(|&i| self.ys[i]).sum();
        let min_leaf = self.params.min_leaf.max(1);
        // Score: sum_l^2 / n_l + sum_r^2 / n_r, maximised (equivalent to SSE).
        let parent = total * total / n as f64;
        let mut best: Option<(f64, BestSplit)> = None;
        for feature in sample(rng, dim, self.n_features).into_iter() {
            idx.sort_unstable_by(|&a, &b| self.xs[a][feature].total_cmp(&self.xs[b][feature]));
            let mut left = 0.0;
            for k in 0..n - 1 {
                left += self.ys[idx[k]];
                let n_left = k + 1;
                if n_left < min_leaf || n - n_left < min_leaf {
                    continue;
                }
                let (lo, hi) = (self.xs[idx[k]][feature], self.xs[idx[k + 1]][feature]);
                if lo >= hi {
                    continue;
                }
                let right = total - left;
                let score = left * left / n_left as f64 + right * right / (n - n_left) as f64;
                if score > parent + 1e-12 && best.as_ref().is_none_or(|(s, _)| score > *s) {
                    let threshold = lo + (hi - lo) / 2.0;
                    best = Some((score, BestSplit { feature, threshold, n_left }));
                }
            }
        }
        best.map(|(_, b)| b)
    }

    fn build(&mut self, idx: &mut [usize], depth: usize, rng: &mut impl Rng) -> usize {
        let min_leaf = self.params.min_leaf.max(1);
        let first = self.ys[idx[0]];
        let constant = idx.iter().all(|&i| self.ys[i] == first);
        if depth >= self.params.max_depth || idx.len() < 2 * min_leaf || constant {
            return self.leaf(idx);
        }
        let Some(split) = self.best_split(idx, rng) else {
            return self.leaf(idx);
        };
        idx.sort_unstable_by(|&a, &b| {
            self.xs[a][split.feature].total_cmp(&self.xs[b][split.feature])
        });
        debug_assert!(self.xs[idx[split.n_left - 1]][split.feature] <= split.threshold);
        let at = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { value: 0.0, count: 0 });
        let (l, r) = idx.split_at_mut(split.n_left);
        let left = self.build(l, depth + 1, rng);
        let right = self.build(r, depth + 1, rng);
        self.nodes[at] = TreeNode::Split { feature: split.feature, threshold: split.threshold, left, right };
        at
    }
}

/// Fits a forest on rows `xs` with targets `ys`. Tree `t` draws from its own
/// random stream `(seed, t)`, so results do not depend on thread count.
pub fn forest_fit(xs: &[Vec<f64>], ys: &[f64], params: &ForestParams) -> Result<ForestModel> {
    if xs.is_empty() {
        return Err(Error::invalid("forest training set is empty"));
    }
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch { expected: xs.len(), actual: ys.len() });
    }
    if params.n_trees == 0 {
        return Err(Error::invalid("forest needs at least one tree"));
    }
    let dim = xs[0].len();
    if dim == 0 {
        return Err(Error::invalid("forest features are empty"));
    }
    for x in xs {
        if x.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, actual: x.len() });
        }
    }
    if xs.iter().flatten().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::invalid("forest training set contains non-finite values"));
    }
    let rows: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let n = rows.len();
    let draw = params.max_samples.map_or(n, |m| m.min(n)).max(1);
    let n_features = ((dim as f64 * params.feature_fraction).round() as usize).clamp(1, dim);

    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(params.seed, t as u64);
            let mut idx: Vec<usize> = (0..draw).map(|_| rng.random_range(0..n)).collect();
            let mut b = Builder { xs: &rows, ys, params, n_features, nodes: Vec::new() };
            b.build(&mut idx, 0, &mut rng);
            RegressionTree { nodes: b.nodes }
        })
        .collect();
    Ok(ForestModel {
        dim,
        n_trees: params.n_trees,
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        trees,
    })
}
