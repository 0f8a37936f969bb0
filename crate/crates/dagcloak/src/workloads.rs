//! Synthetic workload library: class templates, dataset generation, and the
//! on-disk dataset format.
//!
//! The built-in suite holds 10 labeled classes. Several classes deliberately
//! share cpu/memory/size profiles and differ mainly in completion-time
//! structure, so identification rests heavily on the features the anonymizers
//! distort; class identity is still fully recoverable from undistorted runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ComputationGraph, DelayClass, NodeId, OpKind, Params};
use crate::payload::Payload;
use crate::seed;

/// One node of a class template; `deps` index into the template itself.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateNode {
    pub kind: OpKind,
    pub deps: Vec<usize>,
    pub params: Params,
}

impl TemplateNode {
    fn new(kind: OpKind, deps: &[usize]) -> Self {
        TemplateNode { kind, deps: deps.to_vec(), params: Params::new() }
    }

    fn with_param(kind: OpKind, deps: &[usize], key: &str, value: f64) -> Self {
        let mut params = Params::new();
        params.insert(key.to_string(), value);
        TemplateNode { kind, deps: deps.to_vec(), params }
    }
}

/// A labeled graph recipe plus its input-size distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadClass {
    pub name: String,
    pub delay_class: DelayClass,
    pub template: Vec<TemplateNode>,
    pub input_size_range: (usize, usize),
}

impl WorkloadClass {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::InvalidArgument("class name must be non-empty".into()));
        }
        let (min, max) = self.input_size_range;
        if min < 1 || min > max {
            return Err(Error::InvalidArgument(format!(
                "bad input size range [{min}, {max}] for {}",
                self.name
            )));
        }
        for (i, node) in self.template.iter().enumerate() {
            if node.deps.iter().any(|d| *d >= i) {
                return Err(Error::InvalidArgument(format!(
                    "template node {i} of {} depends forward",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Build the class graph (uncompiled).
    pub fn instantiate(&self) -> Result<ComputationGraph> {
        let mut g = ComputationGraph::new(self.name.clone(), self.delay_class)?;
        let mut ids: Vec<NodeId> = Vec::with_capacity(self.template.len());
        for node in &self.template {
            let deps: Vec<NodeId> = node.deps.iter().map(|d| ids[*d]).collect();
            ids.push(g.connect_nodes_with(node.kind.clone(), &deps, node.params.clone())?);
        }
        Ok(g)
    }

    /// Number of external inputs an instance consumes.
    pub fn source_count(&self) -> usize {
        self.template.iter().filter(|n| n.deps.is_empty()).count()
    }
}

/// One generated dataset instance: a graph and its external inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub class_label: String,
    pub graph: ComputationGraph,
    pub inputs: Vec<Payload>,
}

/// Generate `samples_per_class` instances per class. Instances of one class
/// share the template topology and differ in input bytes and sizes, drawn
/// uniformly from the class range under the seeded generator.
pub fn generate_dataset(
    spec: &[WorkloadClass],
    samples_per_class: usize,
    dataset_seed: u64,
) -> Result<Vec<Sample>> {
    if spec.is_empty() {
        return Err(Error::InvalidArgument("dataset spec must be non-empty".into()));
    }
    if samples_per_class < 1 {
        return Err(Error::InvalidArgument("samples_per_class must be >= 1".into()));
    }
    let mut names = std::collections::HashSet::new();
    for class in spec {
        class.validate()?;
        if !names.insert(&class.name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate class name {:?}",
                class.name
            )));
        }
    }
    let mut out = Vec::with_capacity(spec.len() * samples_per_class);
    for (ci, class) in spec.iter().enumerate() {
        let class_seed = seed::derive(dataset_seed, ci as u64);
        let sources = class.source_count();
        for si in 0..samples_per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(class_seed, si as u64));
            let (min, max) = class.input_size_range;
            let inputs = (0..sources)
                .map(|_| {
                    let len = rng.gen_range(min..=max);
                    let mut bytes = vec![0u8; len];
                    rng.fill(bytes.as_mut_slice());
                    Payload::new(bytes)
                })
                .collect();
            out.push(Sample {
                class_label: class.name.clone(),
                graph: class.instantiate()?,
                inputs,
            });
        }
    }
    Ok(out)
}

const DEFAULT_SIZE_RANGE: (usize, usize) = (2048, 16384);

/// The 10 built-in classes.
///
/// Structure, by family:
/// - `digest-*`: three length-preserving stages into a hash sink (diamond tail);
/// - `train-*`: two parallel preprocessing branches into a training kernel;
/// - `vision-*`: downsample, transform, split, then two evaluation stages;
/// - `pack-*`: compression pipelines with verify/restore tails.
pub fn default_class_suite() -> Vec<WorkloadClass> {
    use OpKind::*;
    let chain_into_hash = |a: OpKind, b: OpKind, c: OpKind| {
        vec![
            TemplateNode::new(a, &[]),
            TemplateNode::new(b, &[0]),
            TemplateNode::new(c, &[1]),
            TemplateNode::new(Hash, &[2, 1]),
        ]
    };
    let fan_into_train = |a: OpKind, b: OpKind, c: OpKind| {
        vec![
            TemplateNode::new(a, &[]),
            TemplateNode::new(b, &[0]),
            TemplateNode::new(c, &[0]),
            TemplateNode::new(Train, &[1, 2]),
        ]
    };
    let vision = |mid: OpKind| {
        vec![
            TemplateNode::with_param(Downsample, &[], "k", 2.0),
            TemplateNode::new(mid, &[0]),
            TemplateNode::with_param(Split, &[1], "parts", 2.0),
            TemplateNode::new(Evaluate, &[2]),
            TemplateNode::new(Evaluate, &[2, 3, 1]),
        ]
    };
    let class = |name: &str, delay: DelayClass, template: Vec<TemplateNode>| WorkloadClass {
        name: name.to_string(),
        delay_class: delay,
        template,
        input_size_range: DEFAULT_SIZE_RANGE,
    };
    vec![
        class(
            "digest-sort2",
            DelayClass::DelaySensitive,
            chain_into_hash(Sort, Sort, Encrypt),
        ),
        class(
            "digest-mixed",
            DelayClass::DelayTolerant,
            chain_into_hash(Sort, Encrypt, Normalize),
        ),
        class(
            "digest-norm2",
            DelayClass::DelayTolerant,
            chain_into_hash(Encrypt, Normalize, Normalize),
        ),
        class(
            "train-sort2",
            DelayClass::DelaySensitive,
            fan_into_train(Sort, Sort, Encrypt),
        ),
        class(
            "train-mixed",
            DelayClass::DelayTolerant,
            fan_into_train(Sort, Encrypt, Normalize),
        ),
        class(
            "train-norm2",
            DelayClass::DelayTolerant,
            fan_into_train(Encrypt, Normalize, Normalize),
        ),
        class("vision-sort", DelayClass::DelaySensitive, vision(Sort)),
        class("vision-norm", DelayClass::DelayTolerant, vision(Normalize)),
        class(
            "pack-verify",
            DelayClass::DelaySensitive,
            vec![
                TemplateNode::new(Compress, &[]),
                TemplateNode::new(Hash, &[0]),
                TemplateNode::new(Search, &[0, 1]),
            ],
        ),
        class(
            "pack-restore",
            DelayClass::DelayTolerant,
            vec![
                TemplateNode::new(Compress, &[]),
                TemplateNode::new(Decompress, &[0]),
                TemplateNode::new(Hash, &[0, 1]),
            ],
        ),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub class_label: String,
    pub graph: String,
    pub inputs: Vec<String>,
}

/// Write a dataset as manifest + per-class graph JSON + raw payload files
/// with `.len` sidecars carrying the logical length.
pub fn write_dataset(dir: &Path, samples: &[Sample]) -> Result<()> {
    std::fs::create_dir_all(dir.join("graphs"))?;
    let mut manifest: Vec<ManifestEntry> = Vec::with_capacity(samples.len());
    let mut graphs_written: BTreeMap<String, ()> = BTreeMap::new();
    let mut per_class_index: BTreeMap<String, usize> = BTreeMap::new();
    for sample in samples {
        let graph_rel = format!("graphs/{}.json", sample.class_label);
        if graphs_written.insert(sample.class_label.clone(), ()).is_none() {
            std::fs::write(
                dir.join(&graph_rel),
                serde_json::to_string_pretty(&sample.graph)?,
            )?;
        }
        let idx = per_class_index.entry(sample.class_label.clone()).or_insert(0);
        let input_dir = dir.join("inputs").join(&sample.class_label);
        std::fs::create_dir_all(&input_dir)?;
        let mut input_rels = Vec::with_capacity(sample.inputs.len());
        for (pi, payload) in sample.inputs.iter().enumerate() {
            let rel = format!("inputs/{}/{:04}_{:02}.bin", sample.class_label, idx, pi);
            std::fs::write(dir.join(&rel), payload.physical())?;
            std::fs::write(
                dir.join(format!("{rel}.len")),
                format!("{}\n", payload.logical_len()),
            )?;
            input_rels.push(rel);
        }
        *idx += 1;
        manifest.push(ManifestEntry {
            class_label: sample.class_label.clone(),
            graph: graph_rel,
            inputs: input_rels,
        });
    }
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let manifest: Vec<ManifestEntry> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut graph_cache: BTreeMap<String, ComputationGraph> = BTreeMap::new();
    let mut out = Vec::with_capacity(manifest.len());
    for entry in manifest {
        if !graph_cache.contains_key(&entry.graph) {
            let g: ComputationGraph =
                serde_json::from_str(&std::fs::read_to_string(dir.join(&entry.graph))?)?;
            graph_cache.insert(entry.graph.clone(), g);
        }
        let graph = graph_cache[&entry.graph].clone();
        let mut inputs = Vec::with_capacity(entry.inputs.len());
        for rel in &entry.inputs {
            let bytes = std::fs::read(dir.join(rel))?;
            let len_text = std::fs::read_to_string(dir.join(format!("{rel}.len")))?;
            let logical_len: usize = len_text
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad length sidecar for {rel}")))?;
            inputs.push(Payload::with_logical_len(bytes, logical_len)?);
        }
        out.push(Sample { class_label: entry.class_label, graph, inputs });
    }
    Ok(out)
}

/// Path of the dataset manifest inside a dataset directory.
pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_has_ten_classes_with_calibrated_stats() {
        let suite = default_class_suite();
        assert_eq!(suite.len(), 10);
        let mean_nodes: f64 = suite.iter().map(|c| c.template.len() as f64).sum::<f64>()
            / suite.len() as f64;
        assert!((3.5..=5.0).contains(&mean_nodes), "mean nodes {mean_nodes}");
        let mean_degree: f64 = suite
            .iter()
            .map(|c| {
                let edges: usize = c.template.iter().map(|n| n.deps.len()).sum();
                2.0 * edges as f64 / c.template.len() as f64
            })
            .sum::<f64>()
            / suite.len() as f64;
        assert!((2.0..=3.5).contains(&mean_degree), "mean degree {mean_degree}");
    }

    #[test]
    fn suite_covers_all_builtin_kinds() {
        let suite = default_class_suite();
        let mut kinds = std::collections::HashSet::new();
        for class in &suite {
            for node in &class.template {
                kinds.insert(node.kind.tag().to_string());
            }
        }
        for tag in [
            "sort", "search", "hash", "encrypt", "decrypt", "compress", "decompress",
            "downsample", "normalize", "split", "train", "evaluate",
        ] {
            assert!(kinds.contains(tag), "suite never uses {tag}");
        }
        assert!(!kinds.contains("fake"));
    }

    #[test]
    fn every_class_template_compiles() {
        for class in default_class_suite() {
            class.validate().unwrap();
            class.instantiate().unwrap().compile().unwrap();
        }
    }

    #[test]
    fn dataset_shape_matches_request() {
        let suite = default_class_suite();
        let samples = generate_dataset(&suite, 3, 42).unwrap();
        assert_eq!(samples.len(), 30);
        let labels: std::collections::HashSet<_> =
            samples.iter().map(|s| s.class_label.clone()).collect();
        assert_eq!(labels.len(), 10);
    }

    #[test]
    fn degenerate_range_pins_the_input_size() {
        let mut class = default_class_suite()[0].clone();
        class.input_size_range = (8, 8);
        let samples = generate_dataset(&[class], 1, 7).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].inputs[0].logical_len(), 8);
    }

    #[test]
    fn same_seed_means_identical_datasets() {
        let suite = default_class_suite();
        let a = generate_dataset(&suite, 2, 99).unwrap();
        let b = generate_dataset(&suite, 2, 99).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&suite, 2, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn dataset_roundtrips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let suite: Vec<WorkloadClass> = default_class_suite().into_iter().take(3).collect();
        let samples = generate_dataset(&suite, 2, 5).unwrap();
        write_dataset(dir.path(), &samples).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(samples.len(), loaded.len());
        for (a, b) in samples.iter().zip(loaded.iter()) {
            assert_eq!(a.class_label, b.class_label);
            assert_eq!(a.inputs, b.inputs);
            assert_eq!(a.graph.nodes, b.graph.nodes);
            assert_eq!(a.graph.edges, b.graph.edges);
        }
    }

    #[test]
    fn generation_rejects_bad_specs() {
        let suite = default_class_suite();
        assert!(generate_dataset(&[], 1, 0).is_err());
        assert!(generate_dataset(&suite, 0, 0).is_err());
        let dup = vec![suite[0].clone(), suite[0].clone()];
        assert!(generate_dataset(&dup, 1, 0).is_err());
    }
}
