//! Attack models: classifiers trained to identify computations from their
//! feature records, plus dataset plumbing (stratified splits, normalization,
//! adaptive retraining, reports).

pub mod knn;
pub mod mlp;
pub mod tree;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::FeatureRecord;

pub use knn::KnnModel;
pub use mlp::MlpModel;
pub use tree::TreeModel;

/// Feature rows with labels. Rows are raw until a [`Normalizer`] is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub rows: Vec<(Vec<f64>, String)>,
}

pub const FULL_FEATURES: [&str; 8] = [
    "num_in", "num_out", "in_bytes", "out_bytes", "time_ms", "cpu_ms", "mem_bytes", "cpu_util",
];

/// The reduced view drops the I/O features, leaving only resource telemetry.
pub const REDUCED_FEATURES: [&str; 4] = ["time_ms", "cpu_ms", "mem_bytes", "cpu_util"];

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    /// Sorted distinct labels.
    pub fn labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = self.rows.iter().map(|(_, l)| l.clone()).collect();
        labels.sort();
        labels.dedup();
        labels
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            rows: indices.iter().map(|i| self.rows[*i].clone()).collect(),
        }
    }

    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.feature_names != other.feature_names {
            return Err(Error::Shape("datasets disagree on feature order".into()));
        }
        let mut rows = self.rows.clone();
        rows.extend(other.rows.iter().cloned());
        Ok(Dataset { feature_names: self.feature_names.clone(), rows })
    }
}

/// Build a dataset from feature records. `cpu_util = cpu_ms / time_ms` is
/// appended as a derived feature; `reduced` keeps only resource telemetry.
pub fn records_to_dataset(records: &[FeatureRecord], reduced: bool) -> Dataset {
    let names: Vec<String> = if reduced {
        REDUCED_FEATURES.iter().map(|s| s.to_string()).collect()
    } else {
        FULL_FEATURES.iter().map(|s| s.to_string()).collect()
    };
    let rows = records
        .iter()
        .map(|r| {
            let util = if r.completion_time_ms > 0.0 {
                r.cpu_busy_ms / r.completion_time_ms
            } else {
                0.0
            };
            let features = if reduced {
                vec![r.completion_time_ms, r.cpu_busy_ms, r.peak_memory_bytes, util]
            } else {
                vec![
                    f64::from(r.num_inputs),
                    f64::from(r.num_outputs),
                    r.total_input_bytes as f64,
                    r.total_output_bytes as f64,
                    r.completion_time_ms,
                    r.cpu_busy_ms,
                    r.peak_memory_bytes,
                    util,
                ]
            };
            (features, r.class_label.clone())
        })
        .collect();
    Dataset { feature_names: names, rows }
}

/// Per-feature z-score statistics, fit on training data only. Population
/// standard deviation, so duplicating a dataset leaves the fit unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub stats: Vec<(f64, f64)>,
}

impl Normalizer {
    pub fn fit(ds: &Dataset) -> Normalizer {
        let n = ds.len().max(1) as f64;
        let dim = ds.dim();
        let mut stats = Vec::with_capacity(dim);
        for j in 0..dim {
            let mean = ds.rows.iter().map(|(x, _)| x[j]).sum::<f64>() / n;
            let var = ds.rows.iter().map(|(x, _)| (x[j] - mean).powi(2)).sum::<f64>() / n;
            stats.push((mean, var.sqrt()));
        }
        Normalizer { stats }
    }

    pub fn apply(&self, ds: &Dataset) -> Dataset {
        Dataset {
            feature_names: ds.feature_names.clone(),
            rows: ds
                .rows
                .iter()
                .map(|(x, l)| {
                    let z = x
                        .iter()
                        .zip(&self.stats)
                        .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { 0.0 })
                        .collect();
                    (z, l.clone())
                })
                .collect(),
        }
    }
}

/// A stratified split with normalization fit on the training half.
#[derive(Debug, Clone)]
pub struct StratifiedSplit {
    /// Normalized training rows.
    pub train: Dataset,
    /// Normalized test rows.
    pub test: Dataset,
    /// Row indices (into the source dataset) per side, for aligning other
    /// views of the same samples.
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub normalizer: Normalizer,
}

/// Per-class proportional split with a seeded shuffle.
pub fn split_stratified(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<StratifiedSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Split(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, (_, label)) in ds.rows.iter().enumerate() {
        by_class.entry(label).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_indices = Vec::new();
    let mut test_indices = Vec::new();
    for (label, mut indices) in by_class {
        if indices.len() < 2 {
            return Err(Error::Split(format!(
                "class {label:?} has {} row(s); need >= 2",
                indices.len()
            )));
        }
        indices.shuffle(&mut rng);
        let take = ((indices.len() as f64 * train_fraction).round() as usize)
            .clamp(1, indices.len() - 1);
        train_indices.extend_from_slice(&indices[..take]);
        test_indices.extend_from_slice(&indices[take..]);
    }
    train_indices.sort_unstable();
    test_indices.sort_unstable();
    let train_raw = ds.select(&train_indices);
    let test_raw = ds.select(&test_indices);
    let normalizer = Normalizer::fit(&train_raw);
    Ok(StratifiedSplit {
        train: normalizer.apply(&train_raw),
        test: normalizer.apply(&test_raw),
        train_indices,
        test_indices,
        normalizer,
    })
}

/// Model family plus hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Knn { k: usize },
    DecisionTree { max_depth: Option<usize>, min_split: usize },
    Mlp { hidden_units: usize, epochs: usize, learning_rate: f64 },
}

impl ModelKind {
    pub fn knn_default() -> Self {
        ModelKind::Knn { k: 5 }
    }
    pub fn tree_default() -> Self {
        ModelKind::DecisionTree { max_depth: None, min_split: 2 }
    }
    pub fn mlp_default() -> Self {
        ModelKind::Mlp { hidden_units: 32, epochs: 300, learning_rate: 0.05 }
    }

    pub fn short_name(&self) -> &'static str {
        match self {
            ModelKind::Knn { .. } => "knn",
            ModelKind::DecisionTree { .. } => "dt",
            ModelKind::Mlp { .. } => "mlp",
        }
    }

    pub fn from_short_name(name: &str) -> Result<Self> {
        match name {
            "knn" => Ok(Self::knn_default()),
            "dt" | "tree" => Ok(Self::tree_default()),
            "mlp" | "nn" => Ok(Self::mlp_default()),
            other => Err(Error::Config(format!("unknown model {other:?}"))),
        }
    }
}

/// A fitted attack model.
#[derive(Debug, Clone)]
pub enum AttackModel {
    Knn(KnnModel),
    Tree(TreeModel),
    Mlp(MlpModel),
}

impl AttackModel {
    pub fn input_dim(&self) -> usize {
        match self {
            AttackModel::Knn(m) => m.input_dim(),
            AttackModel::Tree(m) => m.input_dim(),
            AttackModel::Mlp(m) => m.input_dim(),
        }
    }

    pub fn predict(&self, features: &[f64]) -> &str {
        match self {
            AttackModel::Knn(m) => m.predict(features),
            AttackModel::Tree(m) => m.predict(features),
            AttackModel::Mlp(m) => m.predict(features),
        }
    }
}

/// Fit a model of the requested kind. Deterministic given `(kind, data, seed)`.
pub fn fit(kind: &ModelKind, train: &Dataset, seed: u64) -> Result<AttackModel> {
    if train.is_empty() {
        return Err(Error::Shape("training set is empty".into()));
    }
    Ok(match kind {
        ModelKind::Knn { k } => AttackModel::Knn(KnnModel::fit(train, *k)?),
        ModelKind::DecisionTree { max_depth, min_split } => {
            AttackModel::Tree(TreeModel::fit(train, *max_depth, *min_split)?)
        }
        ModelKind::Mlp { hidden_units, epochs, learning_rate } => AttackModel::Mlp(
            MlpModel::fit(train, *hidden_units, *epochs, *learning_rate, seed)?,
        ),
    })
}

/// Fraction of test rows whose prediction matches the ground truth.
pub fn evaluate(model: &AttackModel, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Shape("test set is empty".into()));
    }
    if test.dim() != model.input_dim() {
        return Err(Error::Shape(format!(
            "test dimensionality {} does not match model input {}",
            test.dim(),
            model.input_dim()
        )));
    }
    let hits = test
        .rows
        .iter()
        .filter(|(x, label)| model.predict(x) == label)
        .count();
    Ok(hits as f64 / test.len() as f64)
}

/// Refit on original + anonymized observations with labels unchanged.
pub fn adaptive_retrain(
    kind: &ModelKind,
    original: &Dataset,
    anonymized: &Dataset,
    seed: u64,
) -> Result<AttackModel> {
    let combined = if anonymized.is_empty() {
        original.clone()
    } else {
        original.concat(anonymized)?
    };
    fit(kind, &combined, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    /// counts[true][predicted]
    pub counts: Vec<Vec<u32>>,
}

pub fn confusion_matrix(model: &AttackModel, test: &Dataset) -> ConfusionMatrix {
    let labels = test.labels();
    let index: BTreeMap<&str, usize> =
        labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let mut counts = vec![vec![0u32; labels.len()]; labels.len()];
    for (x, truth) in &test.rows {
        let predicted = model.predict(x);
        if let (Some(t), Some(p)) = (index.get(truth.as_str()), index.get(predicted)) {
            counts[*t][*p] += 1;
        }
    }
    ConfusionMatrix { labels, counts }
}

/// Report for one fitted model on one evaluation set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelReport {
    pub kind: String,
    pub params: ModelKind,
    pub accuracy: f64,
    pub confusion_matrix: ConfusionMatrix,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset(rows_per_class: usize) -> Dataset {
        // Two well-separated clusters.
        let mut rows = Vec::new();
        for i in 0..rows_per_class {
            let t = i as f64;
            rows.push((vec![0.0 + t * 0.01, 1.0], "alpha".to_string()));
            rows.push((vec![5.0 + t * 0.01, -1.0], "beta".to_string()));
        }
        Dataset { feature_names: vec!["x".into(), "y".into()], rows }
    }

    #[test]
    fn stratified_split_is_proportional() {
        // 100 rows, 2 classes, fraction 0.7: 35/15 per class.
        let ds = toy_dataset(50);
        let split = split_stratified(&ds, 0.7, 3).unwrap();
        assert_eq!(split.train.len(), 70);
        assert_eq!(split.test.len(), 30);
        for label in ["alpha", "beta"] {
            let n = split.train.rows.iter().filter(|(_, l)| l == label).count();
            assert_eq!(n, 35);
        }
    }

    #[test]
    fn split_rejects_degenerate_fractions_and_classes() {
        let ds = toy_dataset(5);
        assert!(split_stratified(&ds, 0.0, 1).is_err());
        assert!(split_stratified(&ds, 1.0, 1).is_err());
        let mut single = toy_dataset(2);
        single.rows.push((vec![9.0, 9.0], "gamma".into()));
        assert!(split_stratified(&single, 0.5, 1).is_err());
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let ds = toy_dataset(20);
        let a = split_stratified(&ds, 0.7, 11).unwrap();
        let b = split_stratified(&ds, 0.7, 11).unwrap();
        assert_eq!(a.train_indices, b.train_indices);
        assert_eq!(a.test_indices, b.test_indices);
        let c = split_stratified(&ds, 0.7, 12).unwrap();
        assert_ne!(a.train_indices, c.train_indices);
    }

    #[test]
    fn normalization_never_sees_test_rows() {
        let ds = toy_dataset(20);
        let split = split_stratified(&ds, 0.7, 5).unwrap();
        // Metamorphic check: perturbing rows outside the training indices
        // leaves the fitted normalization unchanged.
        let mut perturbed = ds.clone();
        for i in &split.test_indices {
            for v in perturbed.rows[*i].0.iter_mut() {
                *v += 1000.0;
            }
        }
        let split2 = split_stratified(&perturbed, 0.7, 5).unwrap();
        assert_eq!(split.normalizer, split2.normalizer);
    }

    #[test]
    fn duplicate_dataset_keeps_population_normalization() {
        let ds = toy_dataset(10);
        let doubled = ds.concat(&ds).unwrap();
        assert_eq!(Normalizer::fit(&ds), Normalizer::fit(&doubled));
    }

    #[test]
    fn evaluate_guards_shapes() {
        let ds = toy_dataset(10);
        let model = fit(&ModelKind::knn_default(), &ds, 0).unwrap();
        let empty = Dataset { feature_names: ds.feature_names.clone(), rows: vec![] };
        assert!(matches!(evaluate(&model, &empty), Err(Error::Shape(_))));
        let narrow = Dataset {
            feature_names: vec!["x".into()],
            rows: vec![(vec![0.1], "alpha".into())],
        };
        assert!(matches!(evaluate(&model, &narrow), Err(Error::Shape(_))));
    }

    #[test]
    fn constant_predictor_scores_chance_on_balanced_data() {
        // A kNN trained on a single-class set predicts that class always.
        let mut one_class = toy_dataset(10);
        one_class.rows.retain(|(_, l)| l == "alpha");
        let model = fit(&ModelKind::knn_default(), &one_class, 0).unwrap();
        let balanced = toy_dataset(10);
        let acc = evaluate(&model, &balanced).unwrap();
        assert!((acc - 0.5).abs() < 1e-12);
    }

    #[test]
    fn adaptive_with_empty_anonymized_set_equals_plain_fit() {
        let ds = toy_dataset(10);
        let empty = Dataset { feature_names: ds.feature_names.clone(), rows: vec![] };
        let plain = fit(&ModelKind::knn_default(), &ds, 1).unwrap();
        let adaptive = adaptive_retrain(&ModelKind::knn_default(), &ds, &empty, 1).unwrap();
        for (x, _) in &ds.rows {
            assert_eq!(plain.predict(x), adaptive.predict(x));
        }
    }

    /// Probe oracle: on clustered data, doubling the training set leaves kNN
    /// predictions unchanged (the distance multiset is scaled).
    #[test]
    fn duplicated_training_set_preserves_knn_decisions() {
        let ds = toy_dataset(10);
        let plain = fit(&ModelKind::knn_default(), &ds, 1).unwrap();
        let doubled_model = adaptive_retrain(&ModelKind::knn_default(), &ds, &ds, 1).unwrap();
        let probes = vec![
            vec![0.05, 1.0],
            vec![5.05, -1.0],
            vec![-1.0, 1.2],
            vec![6.0, -0.8],
        ];
        for x in &probes {
            assert_eq!(plain.predict(x), doubled_model.predict(x));
        }
    }

    #[test]
    fn records_to_dataset_derives_utilization() {
        let record = FeatureRecord {
            class_label: "c".into(),
            num_inputs: 1,
            num_outputs: 2,
            total_input_bytes: 100,
            total_output_bytes: 64,
            completion_time_ms: 10.0,
            cpu_busy_ms: 8.0,
            peak_memory_bytes: 1000.0,
        };
        let full = records_to_dataset(&[record.clone()], false);
        assert_eq!(full.dim(), 8);
        assert!((full.rows[0].0[7] - 0.8).abs() < 1e-12);
        let reduced = records_to_dataset(&[record], true);
        assert_eq!(reduced.feature_names, REDUCED_FEATURES.to_vec());
        assert_eq!(reduced.dim(), 4);
    }
}
