//! CART decision tree with Gini impurity.
//!
//! Candidate thresholds are midpoints between consecutive distinct values of
//! each feature; `x[feature] <= threshold` goes left. The best split minimizes
//! weighted Gini, ties broken by lowest feature index then lowest threshold.
//! With min_split 2 and no depth cap the tree keeps splitting while any
//! feature still varies, so leaves are pure on consistent data even when no
//! single split lowers impurity (the two-step XOR case).

use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::Dataset;

#[derive(Debug, Clone)]
enum Node {
    Leaf { label: String },
    Split { feature: usize, threshold: f64, left: Box<Node>, right: Box<Node> },
}

#[derive(Debug, Clone)]
pub struct TreeModel {
    root: Node,
    dim: usize,
}

struct Builder<'a> {
    rows: &'a [(Vec<f64>, String)],
    max_depth: Option<usize>,
    min_split: usize,
}

impl TreeModel {
    pub fn fit(train: &Dataset, max_depth: Option<usize>, min_split: usize) -> Result<TreeModel> {
        if train.is_empty() {
            return Err(Error::Shape("cannot fit a tree on an empty set".into()));
        }
        let builder = Builder { rows: &train.rows, max_depth, min_split: min_split.max(2) };
        let indices: Vec<usize> = (0..train.len()).collect();
        Ok(TreeModel { root: builder.build(&indices, 0), dim: train.dim() })
    }

    pub fn input_dim(&self) -> usize {
        self.dim
    }

    pub fn predict(&self, x: &[f64]) -> &str {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { label } => return label,
                Node::Split { feature, threshold, left, right } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(node: &Node) -> usize {
            match node {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(left).max(walk(right)),
            }
        }
        walk(&self.root)
    }

    pub fn leaf_count(&self) -> usize {
        fn walk(node: &Node) -> usize {
            match node {
                Node::Leaf { .. } => 1,
                Node::Split { left, right, .. } => walk(left) + walk(right),
            }
        }
        walk(&self.root)
    }
}

struct BestSplit {
    gini: f64,
    feature: usize,
    threshold: f64,
}

impl<'a> Builder<'a> {
    fn build(&self, indices: &[usize], depth: usize) -> Node {
        let counts = self.label_counts(indices);
        if counts.len() == 1 {
            return Node::Leaf { label: counts.keys().next().unwrap().to_string() };
        }
        let depth_capped = self.max_depth.is_some_and(|cap| depth >= cap);
        if indices.len() < self.min_split || depth_capped {
            return self.majority_leaf(&counts);
        }
        match self.best_split(indices) {
            None => self.majority_leaf(&counts),
            Some(best) => {
                let (left, right): (Vec<usize>, Vec<usize>) = indices
                    .iter()
                    .partition(|i| self.rows[**i].0[best.feature] <= best.threshold);
                debug_assert!(!left.is_empty() && !right.is_empty());
                Node::Split {
                    feature: best.feature,
                    threshold: best.threshold,
                    left: Box::new(self.build(&left, depth + 1)),
                    right: Box::new(self.build(&right, depth + 1)),
                }
            }
        }
    }

    fn label_counts(&self, indices: &[usize]) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for i in indices {
            *counts.entry(self.rows[*i].1.as_str()).or_insert(0) += 1;
        }
        counts
    }

    fn majority_leaf(&self, counts: &BTreeMap<&str, usize>) -> Node {
        let best = counts.values().copied().max().unwrap_or(0);
        let label = counts
            .iter()
            .find(|(_, c)| **c == best)
            .map(|(l, _)| l.to_string())
            .unwrap_or_default();
        Node::Leaf { label }
    }

    /// Sweep each feature in sorted order, maintaining left/right label
    /// counts incrementally; O(d * n log n) per node.
    fn best_split(&self, indices: &[usize]) -> Option<BestSplit> {
        let n = indices.len() as f64;
        let dim = self.rows[0].0.len();
        let mut best: Option<BestSplit> = None;
        for feature in 0..dim {
            let mut sorted: Vec<usize> = indices.to_vec();
            sorted.sort_by(|a, b| {
                self.rows[*a].0[feature]
                    .partial_cmp(&self.rows[*b].0[feature])
                    .expect("finite features")
            });
            let mut left: BTreeMap<&str, f64> = BTreeMap::new();
            let mut right: BTreeMap<&str, f64> = BTreeMap::new();
            for i in &sorted {
                *right.entry(self.rows[*i].1.as_str()).or_insert(0.0) += 1.0;
            }
            let mut left_n = 0.0f64;
            for w in 0..sorted.len() - 1 {
                let idx = sorted[w];
                let label = self.rows[idx].1.as_str();
                *left.entry(label).or_insert(0.0) += 1.0;
                *right.get_mut(label).expect("label present on the right") -= 1.0;
                left_n += 1.0;
                let value = self.rows[idx].0[feature];
                let next = self.rows[sorted[w + 1]].0[feature];
                if next <= value {
                    continue; // not a boundary between distinct values
                }
                let threshold = value + (next - value) / 2.0;
                let right_n = n - left_n;
                let weighted =
                    (left_n * gini(&left, left_n) + right_n * gini(&right, right_n)) / n;
                let better = match &best {
                    None => true,
                    Some(b) => weighted < b.gini,
                };
                if better {
                    best = Some(BestSplit { gini: weighted, feature, threshold });
                }
            }
        }
        best
    }
}

fn gini(counts: &BTreeMap<&str, f64>, total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    1.0 - counts
        .values()
        .map(|c| {
            let p = c / total;
            p * p
        })
        .sum::<f64>()
}
