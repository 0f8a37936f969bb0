//! k-nearest-neighbors classifier, Euclidean metric over normalized features.
//!
//! Tie rules are pinned so predictions are reproducible: equal distances break
//! toward the lower training-row index, vote ties toward the lexicographically
//! smallest label.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::Dataset;

#[derive(Debug, Clone)]
pub struct KnnModel {
    k: usize,
    rows: Vec<(Vec<f64>, String)>,
    dim: usize,
}

impl KnnModel {
    pub fn fit(train: &Dataset, k: usize) -> Result<KnnModel> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        Ok(KnnModel { k, rows: train.rows.clone(), dim: train.dim() })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn input_dim(&self) -> usize {
        self.dim
    }

    pub fn predict(&self, x: &[f64]) -> &str {
        let mut scored: Vec<(f64, usize)> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, (row, _))| (squared_distance(x, row), i))
            .collect();
        scored.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .expect("finite distances")
                .then(a.1.cmp(&b.1))
        });
        let k = self.k.min(scored.len());
        let mut votes: BTreeMap<&str, usize> = BTreeMap::new();
        for (_, idx) in &scored[..k] {
            *votes.entry(self.rows[*idx].1.as_str()).or_insert(0) += 1;
        }
        let best = votes.values().copied().max().unwrap_or(0);
        // BTreeMap iterates labels in order, so the first max is the
        // lexicographically smallest winner.
        votes
            .iter()
            .find(|(_, c)| **c == best)
            .map(|(l, _)| *l)
            .expect("non-empty training set")
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(rows: Vec<(Vec<f64>, &str)>) -> Dataset {
        Dataset {
            feature_names: vec!["x".into(), "y".into()],
            rows: rows.into_iter().map(|(x, l)| (x, l.to_string())).collect(),
        }
    }

    #[test]
    fn one_nearest_neighbor_memorizes_training_points() {
        let ds = dataset(vec![
            (vec![0.0, 0.0], "a"),
            (vec![1.0, 1.0], "b"),
            (vec![2.0, 0.5], "c"),
        ]);
        let model = KnnModel::fit(&ds, 1).unwrap();
        for (x, label) in &ds.rows {
            assert_eq!(model.predict(x), label);
        }
    }

    #[test]
    fn vote_ties_break_to_smallest_label() {
        // Probe equidistant from one "b" and one "a": with k = 2 the vote is
        // tied and must go to "a".
        let ds = dataset(vec![(vec![-1.0, 0.0], "b"), (vec![1.0, 0.0], "a")]);
        let model = KnnModel::fit(&ds, 2).unwrap();
        assert_eq!(model.predict(&[0.0, 0.0]), "a");
    }

    #[test]
    fn distance_ties_prefer_earlier_rows() {
        let ds = dataset(vec![
            (vec![1.0, 0.0], "early"),
            (vec![-1.0, 0.0], "late"),
            (vec![5.0, 5.0], "far"),
        ]);
        let model = KnnModel::fit(&ds, 1).unwrap();
        assert_eq!(model.predict(&[0.0, 0.0]), "early");
    }
}
