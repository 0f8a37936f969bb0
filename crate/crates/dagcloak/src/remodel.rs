//! Remodeling: anonymize a single graph by attaching fake busy-work nodes and
//! padding externally visible input/output sizes, without touching logical
//! results.
//!
//! The anonymization level 1..=5 scales everything: the fake-node budget is
//! `ceil(level * |V| / 3)`, each fake node's cost is drawn from
//! `(0, level * mu / 5]` where `mu` is the mean modeled node cost, and padding
//! fractions are drawn from `(0, 0.2 * level]`. Fake nodes attach as leaves
//! off uniformly chosen real nodes, so they consume time and resources but
//! never sit on a path feeding a real output.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::CostModel;
use crate::error::{Error, Result};
use crate::exec::SinkOutput;
use crate::graph::{CompiledGraph, ComputationGraph, NodeId, OpKind, Params};
use crate::payload::Payload;
use crate::seed;

/// Node param carrying the input padding fraction on source nodes.
pub const PAD_IN_FRAC: &str = "pad_in_frac";
/// Node param carrying the output padding fraction on sink nodes.
pub const PAD_OUT_FRAC: &str = "pad_out_frac";

/// Padding bytes implied by a fraction of the logical length. At least one
/// byte so padded sizes never coincide with the truth.
pub fn padding_bytes(frac: f64, logical_len: usize) -> usize {
    ((frac * logical_len as f64).floor() as usize).max(1)
}

/// Which attacker-visible features an anonymization pass distorts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMask {
    pub pad_inputs: bool,
    pub pad_outputs: bool,
    pub anonymize_time: bool,
}

impl FeatureMask {
    pub fn all() -> Self {
        FeatureMask { pad_inputs: true, pad_outputs: true, anonymize_time: true }
    }
    pub fn none() -> Self {
        FeatureMask { pad_inputs: false, pad_outputs: false, anonymize_time: false }
    }
    pub fn input_only() -> Self {
        FeatureMask { pad_inputs: true, ..Self::none() }
    }
    pub fn output_only() -> Self {
        FeatureMask { pad_outputs: true, ..Self::none() }
    }
    pub fn both_paddings() -> Self {
        FeatureMask { pad_inputs: true, pad_outputs: true, anonymize_time: false }
    }
    pub fn time_only() -> Self {
        FeatureMask { anonymize_time: true, ..Self::none() }
    }
}

impl Default for FeatureMask {
    fn default() -> Self {
        Self::all()
    }
}

/// Operating mode and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Remodeling {
        level: u8,
    },
    Mixing {
        batch_size: usize,
        #[serde(default)]
        parallel: bool,
        #[serde(default = "default_workers")]
        workers: usize,
    },
    Hybrid {
        level: u8,
        batch_size: usize,
        #[serde(default)]
        parallel: bool,
        #[serde(default = "default_workers")]
        workers: usize,
    },
}

fn default_workers() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnonymizationPlan {
    pub mode: Mode,
    #[serde(default)]
    pub mask: FeatureMask,
    /// Mixing weight for delay-sensitive graphs.
    #[serde(default = "default_weight_sensitive")]
    pub weight_sensitive: f64,
    /// Mixing weight for delay-tolerant graphs.
    #[serde(default = "default_weight_tolerant")]
    pub weight_tolerant: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_weight_sensitive() -> f64 {
    3.0
}

fn default_weight_tolerant() -> f64 {
    1.0
}

impl AnonymizationPlan {
    pub fn remodeling(level: u8) -> Self {
        AnonymizationPlan {
            mode: Mode::Remodeling { level },
            mask: FeatureMask::all(),
            weight_sensitive: default_weight_sensitive(),
            weight_tolerant: default_weight_tolerant(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check_level = |level: u8| {
            if (1..=5).contains(&level) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!(
                    "anonymization level {level} outside 1..=5"
                )))
            }
        };
        match &self.mode {
            Mode::Remodeling { level } => check_level(*level)?,
            Mode::Mixing { batch_size, parallel, workers } => {
                if *batch_size < 1 {
                    return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
                }
                if *parallel && *workers < 2 {
                    return Err(Error::InvalidArgument("parallel mixing needs >= 2 workers".into()));
                }
            }
            Mode::Hybrid { level, batch_size, parallel, workers } => {
                check_level(*level)?;
                if *batch_size < 1 {
                    return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
                }
                if *parallel && *workers < 2 {
                    return Err(Error::InvalidArgument("parallel mixing needs >= 2 workers".into()));
                }
            }
        }
        if self.weight_sensitive <= 0.0 || self.weight_tolerant <= 0.0 {
            return Err(Error::InvalidArgument("mixing weights must be positive".into()));
        }
        Ok(())
    }
}

/// Where a remodeled graph came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub class_label: String,
    pub plan: AnonymizationPlan,
}

/// One sink port whose output carries removable padding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StripEntry {
    pub node: NodeId,
    pub port: usize,
    pub frac: f64,
}

pub type StripMap = Vec<StripEntry>;

/// A remodeled graph plus everything needed to undo its padding.
#[derive(Debug, Clone)]
pub struct AnonymizedGraph {
    pub graph: CompiledGraph,
    pub provenance: Provenance,
    pub strip_map: StripMap,
}

#[derive(Serialize, Deserialize)]
struct AnonymizedGraphJson {
    #[serde(flatten)]
    graph: ComputationGraph,
    provenance: Provenance,
    strip_map: StripMap,
}

impl AnonymizedGraph {
    pub fn to_json(&self) -> Result<String> {
        let doc = AnonymizedGraphJson {
            graph: self.graph.graph().clone(),
            provenance: self.provenance.clone(),
            strip_map: self.strip_map.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: AnonymizedGraphJson = serde_json::from_str(text)?;
        Ok(AnonymizedGraph {
            graph: doc.graph.compile()?,
            provenance: doc.provenance,
            strip_map: doc.strip_map,
        })
    }
}

/// Scaling context for the fake-node cost budget.
#[derive(Debug, Clone, Copy)]
pub struct RemodelContext<'a> {
    pub cost_model: &'a CostModel,
    /// Expected logical bytes per node input; actual sample sizes in the
    /// pipeline, a nominal constant otherwise.
    pub mean_input_bytes: u64,
}

impl Default for RemodelContext<'static> {
    fn default() -> Self {
        RemodelContext {
            cost_model: CostModel::builtin_static(),
            mean_input_bytes: 4096,
        }
    }
}

/// Remodel with the default cost context.
pub fn anonymize_remodel(
    cg: &CompiledGraph,
    level: u8,
    mask: FeatureMask,
    seed: u64,
) -> Result<AnonymizedGraph> {
    anonymize_remodel_with(cg, level, mask, seed, RemodelContext::default())
}

/// Remodel a compiled graph. Deterministic given `(graph, level, mask, seed)`.
pub fn anonymize_remodel_with(
    cg: &CompiledGraph,
    level: u8,
    mask: FeatureMask,
    seed: u64,
    ctx: RemodelContext<'_>,
) -> Result<AnonymizedGraph> {
    if !(1..=5).contains(&level) {
        return Err(Error::InvalidArgument(format!(
            "anonymization level {level} outside 1..=5"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graph = cg.graph().clone();
    graph.unseal();

    let real_count = graph.nodes.len();
    let sources: Vec<NodeId> = cg.source_nodes();
    let user_ports = cg.user_ports();
    let sink_nodes: Vec<NodeId> = {
        let mut ids: Vec<NodeId> = user_ports.iter().map(|(n, _)| *n).collect();
        ids.dedup();
        ids
    };

    if mask.anonymize_time {
        let fake_count = ((level as f64) * real_count as f64 / 3.0).ceil() as usize;
        let mu = ctx
            .cost_model
            .mean_node_time_ms(&graph.nodes[..real_count], ctx.mean_input_bytes);
        let cost_cap = (level as f64) * mu / 5.0;
        for _ in 0..fake_count {
            let host = NodeId(rng.gen_range(0..real_count));
            let cost_ms = cost_cap * (1.0 - rng.gen::<f64>()); // (0, cap]
            let mut params = Params::new();
            params.insert("cost_ms".into(), cost_ms);
            graph.push_node(OpKind::Fake, &[host], params);
        }
    }

    if mask.pad_inputs {
        for src in &sources {
            let frac = 0.2 * level as f64 * (1.0 - rng.gen::<f64>()); // (0, 0.2*level]
            graph.nodes[src.index()].params.insert(PAD_IN_FRAC.into(), frac);
        }
    }

    let mut strip_map = StripMap::new();
    if mask.pad_outputs {
        for sink in &sink_nodes {
            let frac = 0.2 * level as f64 * (1.0 - rng.gen::<f64>());
            graph.nodes[sink.index()].params.insert(PAD_OUT_FRAC.into(), frac);
            for (node, port) in user_ports.iter().filter(|(n, _)| n == sink) {
                strip_map.push(StripEntry { node: *node, port: *port, frac });
            }
        }
    }

    let compiled = graph.compile()?;
    Ok(AnonymizedGraph {
        graph: compiled,
        provenance: Provenance {
            class_label: cg.class_label().to_string(),
            plan: AnonymizationPlan {
                mode: Mode::Remodeling { level },
                mask,
                weight_sensitive: default_weight_sensitive(),
                weight_tolerant: default_weight_tolerant(),
                seed,
            },
        },
        strip_map,
    })
}

/// Remove output padding, restoring the exact logical payloads.
///
/// Every padded output must be matched by its strip entry; a mismatch between
/// the entry's implied padding and the payload means the outputs do not belong
/// to this map.
pub fn strip_outputs(outputs: &[SinkOutput], strip_map: &StripMap) -> Result<Vec<Payload>> {
    if strip_map.is_empty() {
        return Ok(outputs.iter().map(|o| o.payload.clone()).collect());
    }
    let mut stripped = Vec::with_capacity(outputs.len());
    for out in outputs {
        let entry = strip_map
            .iter()
            .find(|e| e.node == out.node && e.port == out.port);
        let mut payload = out.payload.clone();
        match entry {
            Some(e) => {
                let expected = padding_bytes(e.frac, payload.logical_len());
                if payload.logical_len() + expected != payload.physical_len() {
                    return Err(Error::Corruption(format!(
                        "output {}:{} carries {} padding bytes, strip map implies {}",
                        out.node,
                        out.port,
                        payload.padding_len(),
                        expected
                    )));
                }
                payload.strip();
            }
            None => {
                if payload.padding_len() != 0 {
                    return Err(Error::Corruption(format!(
                        "output {}:{} is padded but absent from the strip map",
                        out.node, out.port
                    )));
                }
            }
        }
        stripped.push(payload);
    }
    Ok(stripped)
}

/// A set of pre-built anonymized variants of one graph, so per-request
/// anonymization reduces to a pool lookup.
#[derive(Debug, Clone)]
pub struct PreAnonymizedPool {
    variants: Vec<AnonymizedGraph>,
}

impl PreAnonymizedPool {
    pub fn variants(&self) -> &[AnonymizedGraph] {
        &self.variants
    }

    pub fn len(&self) -> usize {
        self.variants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variants.is_empty()
    }

    /// Uniform draw keyed by the request seed.
    pub fn select(&self, request_seed: u64) -> &AnonymizedGraph {
        let idx = (seed::splitmix64(request_seed) % self.variants.len() as u64) as usize;
        &self.variants[idx]
    }
}

/// Build `pool_size` independently seeded remodeled variants of `cg`.
pub fn preanonymize_pool(
    cg: &CompiledGraph,
    plan: &AnonymizationPlan,
    pool_size: usize,
    pool_seed: u64,
) -> Result<PreAnonymizedPool> {
    if pool_size < 1 {
        return Err(Error::InvalidArgument("pool size must be >= 1".into()));
    }
    plan.validate()?;
    let level = match plan.mode {
        Mode::Remodeling { level } | Mode::Hybrid { level, .. } => level,
        Mode::Mixing { .. } => {
            return Err(Error::InvalidArgument(
                "pre-anonymization pools apply to remodeling plans".into(),
            ))
        }
    };
    let variants = (0..pool_size)
        .map(|i| anonymize_remodel(cg, level, plan.mask, seed::derive(pool_seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PreAnonymizedPool { variants })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::ClockMode;
    use crate::exec::execute_single;
    use crate::graph::{ComputationGraph, DelayClass};

    fn four_node_graph() -> CompiledGraph {
        let mut g = ComputationGraph::new("quad", DelayClass::DelayTolerant).unwrap();
        let a = g.connect_nodes(OpKind::Sort, &[]).unwrap();
        let b = g.connect_nodes(OpKind::Encrypt, &[a]).unwrap();
        let c = g.connect_nodes(OpKind::Normalize, &[a]).unwrap();
        g.connect_nodes(OpKind::Hash, &[b, c]).unwrap();
        g.compile().unwrap()
    }

    #[test]
    fn level_three_on_four_nodes_adds_four_fakes() {
        // ceil(3 * 4 / 3) = 4
        let cg = four_node_graph();
        let ag = anonymize_remodel(&cg, 3, FeatureMask::time_only(), 11).unwrap();
        let fakes = ag
            .graph
            .nodes()
            .iter()
            .filter(|n| n.kind == OpKind::Fake)
            .count();
        assert_eq!(fakes, 4);
        assert_eq!(ag.graph.node_count(), 8);
    }

    #[test]
    fn empty_mask_is_the_identity() {
        let cg = four_node_graph();
        let ag = anonymize_remodel(&cg, 4, FeatureMask::none(), 11).unwrap();
        assert_eq!(ag.graph.nodes(), cg.nodes());
        assert_eq!(ag.graph.edges(), cg.edges());
        assert!(ag.strip_map.is_empty());
    }

    #[test]
    fn level_out_of_range_is_rejected() {
        let cg = four_node_graph();
        assert!(anonymize_remodel(&cg, 0, FeatureMask::all(), 1).is_err());
        assert!(anonymize_remodel(&cg, 6, FeatureMask::all(), 1).is_err());
    }

    #[test]
    fn fake_count_formula_is_monotone_in_level() {
        let cg = four_node_graph();
        let mut prev = 0;
        for level in 1..=5 {
            let ag = anonymize_remodel(&cg, level, FeatureMask::time_only(), 3).unwrap();
            let fakes = ag.graph.node_count() - cg.node_count();
            assert_eq!(fakes, ((level as f64) * 4.0 / 3.0).ceil() as usize);
            assert!(fakes >= prev);
            prev = fakes;
        }
    }

    #[test]
    fn anonymized_graphs_recompile_cleanly() {
        let cg = four_node_graph();
        for seed in 0..20 {
            for level in 1..=5 {
                let ag = anonymize_remodel(&cg, level, FeatureMask::all(), seed).unwrap();
                // compile() already ran; fake nodes never feed real nodes.
                for e in ag.graph.edges() {
                    assert_ne!(ag.graph.node(e.producer()).kind, OpKind::Fake);
                }
            }
        }
    }

    #[test]
    fn remodel_preserves_logical_outputs() {
        let cg = four_node_graph();
        let clock = ClockMode::simulated_default();
        let input = [Payload::new((0..=255u8).cycle().take(500).collect())];
        let (base, _, _) = execute_single(&cg, &input, &clock, 9).unwrap();
        for level in 1..=5 {
            let ag = anonymize_remodel(&cg, level, FeatureMask::all(), 77 + level as u64).unwrap();
            let (outs, _, _) = execute_single(&ag.graph, &input, &clock, 9).unwrap();
            let stripped = strip_outputs(&outs, &ag.strip_map).unwrap();
            assert_eq!(stripped.len(), base.len());
            for (s, b) in stripped.iter().zip(base.iter()) {
                assert_eq!(s.logical(), b.payload.logical());
                assert_eq!(s.physical_len(), s.logical_len());
            }
        }
    }

    #[test]
    fn time_anonymization_strictly_inflates_the_span() {
        let cg = four_node_graph();
        let clock = ClockMode::simulated_default();
        let input = [Payload::new(vec![42; 600])];
        let (_, base, _) = execute_single(&cg, &input, &clock, 5).unwrap();
        let ag = anonymize_remodel(&cg, 2, FeatureMask::time_only(), 8).unwrap();
        let (_, anon, _) = execute_single(&ag.graph, &input, &clock, 5).unwrap();
        assert!(anon.completion_time_ms > base.completion_time_ms);
    }

    #[test]
    fn strip_rejects_mismatched_amounts() {
        let out = SinkOutput {
            node: NodeId(0),
            port: 0,
            payload: Payload::new(vec![1; 8]),
        };
        // frac 1.25 on 8 logical bytes implies 10 padding bytes; none present.
        let map = vec![StripEntry { node: NodeId(0), port: 0, frac: 1.25 }];
        assert!(matches!(
            strip_outputs(&[out], &map),
            Err(Error::Corruption(_))
        ));
    }

    #[test]
    fn strip_with_empty_map_is_identity() {
        let mut padded = Payload::new(vec![1, 2, 3]);
        padded.pad(4);
        let out = SinkOutput { node: NodeId(0), port: 0, payload: padded.clone() };
        let res = strip_outputs(&[out], &StripMap::new()).unwrap();
        assert_eq!(res[0], padded);
    }

    #[test]
    fn pool_variants_differ_and_select_is_uniformish() {
        let cg = four_node_graph();
        let plan = AnonymizationPlan::remodeling(2);
        let pool = preanonymize_pool(&cg, &plan, 3, 123).unwrap();
        assert_eq!(pool.len(), 3);
        let costs: Vec<Vec<f64>> = pool
            .variants()
            .iter()
            .map(|ag| {
                ag.graph
                    .nodes()
                    .iter()
                    .filter(|n| n.kind == OpKind::Fake)
                    .map(|n| n.param("cost_ms").unwrap())
                    .collect()
            })
            .collect();
        assert_ne!(costs[0], costs[1]);
        assert_ne!(costs[1], costs[2]);

        let single = preanonymize_pool(&cg, &plan, 1, 5).unwrap();
        for req in 0..10 {
            assert!(std::ptr::eq(single.select(req), &single.variants()[0]));
        }
    }

    #[test]
    fn anonymized_graph_json_roundtrips() {
        let cg = four_node_graph();
        let ag = anonymize_remodel(&cg, 3, FeatureMask::all(), 2).unwrap();
        let json = ag.to_json().unwrap();
        let back = AnonymizedGraph::from_json(&json).unwrap();
        assert_eq!(back.graph.nodes(), ag.graph.nodes());
        assert_eq!(back.strip_map, ag.strip_map);
        assert_eq!(back.provenance, ag.provenance);
    }

    #[test]
    fn plan_validation_catches_bad_parameters() {
        let mut plan = AnonymizationPlan::remodeling(3);
        plan.validate().unwrap();
        plan.weight_tolerant = 0.0;
        assert!(plan.validate().is_err());
        let bad_batch = AnonymizationPlan {
            mode: Mode::Mixing { batch_size: 0, parallel: false, workers: 4 },
            ..AnonymizationPlan::remodeling(1)
        };
        assert!(bad_batch.validate().is_err());
    }
}
