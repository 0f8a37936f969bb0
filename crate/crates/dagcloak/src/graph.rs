//! Computation graphs: DAG construction, validation, and traversal.
//!
//! A [`ComputationGraph`] is built incrementally with [`ComputationGraph::connect_nodes`]
//! and sealed by [`ComputationGraph::compile`], which runs Kahn's algorithm and
//! produces an immutable [`CompiledGraph`] that executors and anonymizers share.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense 0-based node identifier, assigned in insertion order.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// The operation a node performs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Sort,
    Search,
    Hash,
    Encrypt,
    Decrypt,
    Compress,
    Decompress,
    Downsample,
    Normalize,
    Split,
    Train,
    Evaluate,
    /// Anonymization-only busy work; never produced by user construction.
    Fake,
    Custom(String),
}

impl OpKind {
    /// Stable lowercase tag, used by the cost model and reports.
    pub fn tag(&self) -> &str {
        match self {
            OpKind::Sort => "sort",
            OpKind::Search => "search",
            OpKind::Hash => "hash",
            OpKind::Encrypt => "encrypt",
            OpKind::Decrypt => "decrypt",
            OpKind::Compress => "compress",
            OpKind::Decompress => "decompress",
            OpKind::Downsample => "downsample",
            OpKind::Normalize => "normalize",
            OpKind::Split => "split",
            OpKind::Train => "train",
            OpKind::Evaluate => "evaluate",
            OpKind::Fake => "fake",
            OpKind::Custom(_) => "custom",
        }
    }
}

/// Per-node scalar parameters (op knobs plus anonymization directives).
pub type Params = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: NodeId,
    pub kind: OpKind,
    #[serde(default)]
    pub params: Params,
    /// Declared input arity: dependency count, or 1 for source nodes, which
    /// read one external input payload each.
    pub inputs: usize,
    pub outputs: usize,
}

impl NodeSpec {
    pub fn param(&self, key: &str) -> Option<f64> {
        self.params.get(key).copied()
    }
}

/// Edge `(producer, consumer, port)`: the consumer's `port`-th input comes
/// from the producer. Which producer output port serves the edge is derived
/// from edge insertion order (see [`CompiledGraph::producer_ports`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge(pub NodeId, pub NodeId, pub usize);

impl Edge {
    pub fn producer(&self) -> NodeId {
        self.0
    }
    pub fn consumer(&self) -> NodeId {
        self.1
    }
    pub fn port(&self) -> usize {
        self.2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DelayClass {
    #[serde(rename = "sensitive")]
    DelaySensitive,
    #[serde(rename = "tolerant")]
    DelayTolerant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputationGraph {
    pub class_label: String,
    pub delay_class: DelayClass,
    pub nodes: Vec<NodeSpec>,
    pub edges: Vec<Edge>,
    #[serde(skip)]
    compiled: bool,
}

impl ComputationGraph {
    /// Create an empty, uncompiled graph.
    pub fn new(class_label: impl Into<String>, delay_class: DelayClass) -> Result<Self> {
        let class_label = class_label.into();
        if class_label.is_empty() {
            return Err(Error::InvalidArgument("class_label must be non-empty".into()));
        }
        Ok(ComputationGraph {
            class_label,
            delay_class,
            nodes: Vec::new(),
            edges: Vec::new(),
            compiled: false,
        })
    }

    pub fn is_compiled(&self) -> bool {
        self.compiled
    }

    pub fn node(&self, id: NodeId) -> &NodeSpec {
        &self.nodes[id.index()]
    }

    /// Append a node depending on `deps` and return its id.
    ///
    /// Source nodes (empty `deps`) read from the graph's external input
    /// payloads, one payload per source node in id order.
    pub fn connect_nodes(&mut self, kind: OpKind, deps: &[NodeId]) -> Result<NodeId> {
        self.connect_nodes_with(kind, deps, Params::new())
    }

    /// [`ComputationGraph::connect_nodes`] with op parameters attached.
    pub fn connect_nodes_with(
        &mut self,
        kind: OpKind,
        deps: &[NodeId],
        params: Params,
    ) -> Result<NodeId> {
        if self.compiled {
            return Err(Error::GraphSealed);
        }
        if kind == OpKind::Fake {
            return Err(Error::InvalidArgument(
                "fake nodes are reserved for anonymization".into(),
            ));
        }
        if let OpKind::Custom(name) = &kind {
            if name.is_empty() {
                return Err(Error::InvalidArgument("custom op name must be non-empty".into()));
            }
            let taken = self.nodes.iter().any(|n| match &n.kind {
                OpKind::Custom(existing) => existing == name,
                _ => false,
            });
            if taken {
                return Err(Error::InvalidArgument(format!(
                    "custom op name {name:?} already used in this graph"
                )));
            }
        }
        for dep in deps {
            if dep.index() >= self.nodes.len() {
                return Err(Error::InvalidArgument(format!("unknown dependency {dep}")));
            }
        }
        Ok(self.push_node(kind, deps, params))
    }

    /// Internal append without user-facing restrictions. The remodeling pass
    /// uses this to emit fake nodes.
    pub(crate) fn push_node(&mut self, kind: OpKind, deps: &[NodeId], params: Params) -> NodeId {
        let id = NodeId(self.nodes.len());
        let outputs = match kind {
            OpKind::Split => params.get("parts").map(|p| *p as usize).unwrap_or(2).max(1),
            _ => 1,
        };
        self.nodes.push(NodeSpec {
            id,
            kind,
            params,
            inputs: deps.len().max(1),
            outputs,
        });
        for (port, dep) in deps.iter().enumerate() {
            self.edges.push(Edge(*dep, id, port));
        }
        id
    }

    pub(crate) fn unseal(&mut self) {
        self.compiled = false;
    }

    /// Validate the DAG condition and seal the graph.
    ///
    /// Topological order is computed with Kahn's algorithm; ties are broken
    /// by smallest node id so schedules are reproducible.
    pub fn compile(mut self) -> Result<CompiledGraph> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidArgument("cannot compile an empty graph".into()));
        }
        let n = self.nodes.len();
        for e in &self.edges {
            if e.producer().index() >= n || e.consumer().index() >= n {
                return Err(Error::InvalidArgument(format!(
                    "edge ({}, {}) references a missing node",
                    e.producer(),
                    e.consumer()
                )));
            }
            if e.producer() == e.consumer() {
                return Err(Error::Cycle(e.producer()));
            }
        }

        let mut in_degree = vec![0usize; n];
        let mut successors: Vec<Vec<NodeId>> = vec![Vec::new(); n];
        let mut predecessors: Vec<Vec<NodeId>> = vec![Vec::new(); n];
        for e in &self.edges {
            in_degree[e.consumer().index()] += 1;
            successors[e.producer().index()].push(e.consumer());
            predecessors[e.consumer().index()].push(e.producer());
        }

        let mut heap: BinaryHeap<Reverse<usize>> = BinaryHeap::new();
        let mut remaining = in_degree.clone();
        for (i, d) in remaining.iter().enumerate() {
            if *d == 0 {
                heap.push(Reverse(i));
            }
        }
        let mut topo_order = Vec::with_capacity(n);
        while let Some(Reverse(i)) = heap.pop() {
            topo_order.push(NodeId(i));
            for s in &successors[i] {
                remaining[s.index()] -= 1;
                if remaining[s.index()] == 0 {
                    heap.push(Reverse(s.index()));
                }
            }
        }
        if topo_order.len() != n {
            return Err(Error::Cycle(find_cycle_node(&remaining, &predecessors)));
        }

        // Producer output port per edge: the k-th out-edge of a node reads
        // output min(k, outputs-1), so single-output nodes fan out freely.
        let mut seen_out = vec![0usize; n];
        let mut producer_ports = Vec::with_capacity(self.edges.len());
        for e in &self.edges {
            let p = e.producer().index();
            producer_ports.push(seen_out[p].min(self.nodes[p].outputs - 1));
            seen_out[p] += 1;
        }

        self.compiled = true;
        Ok(CompiledGraph {
            graph: self,
            topo_order,
            in_degree,
            successors,
            predecessors,
            producer_ports,
        })
    }
}

/// After Kahn's algorithm stalls, every node with remaining in-degree sits on
/// or downstream of a cycle; walking predecessors within that set for n steps
/// must land on the cycle itself.
fn find_cycle_node(remaining: &[usize], predecessors: &[Vec<NodeId>]) -> NodeId {
    let stuck: HashSet<usize> = remaining
        .iter()
        .enumerate()
        .filter(|(_, d)| **d > 0)
        .map(|(i, _)| i)
        .collect();
    let mut cur = *stuck.iter().min().expect("cycle reported without stuck nodes");
    let mut seen = HashSet::new();
    while seen.insert(cur) {
        cur = predecessors[cur]
            .iter()
            .map(|p| p.index())
            .find(|p| stuck.contains(p))
            .expect("stuck node without stuck predecessor");
    }
    NodeId(cur)
}

/// An immutable, validated graph, safe to share across workers.
#[derive(Debug, Clone)]
pub struct CompiledGraph {
    graph: ComputationGraph,
    topo_order: Vec<NodeId>,
    in_degree: Vec<usize>,
    successors: Vec<Vec<NodeId>>,
    predecessors: Vec<Vec<NodeId>>,
    producer_ports: Vec<usize>,
}

impl CompiledGraph {
    pub fn graph(&self) -> &ComputationGraph {
        &self.graph
    }

    pub fn class_label(&self) -> &str {
        &self.graph.class_label
    }

    pub fn delay_class(&self) -> DelayClass {
        self.graph.delay_class
    }

    pub fn node_count(&self) -> usize {
        self.graph.nodes.len()
    }

    pub fn node(&self, id: NodeId) -> &NodeSpec {
        self.graph.node(id)
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.graph.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.graph.edges
    }

    pub fn topo_order(&self) -> &[NodeId] {
        &self.topo_order
    }

    pub fn in_degree(&self) -> &[usize] {
        &self.in_degree
    }

    pub fn successors(&self, id: NodeId) -> &[NodeId] {
        &self.successors[id.index()]
    }

    pub fn predecessors(&self, id: NodeId) -> &[NodeId] {
        &self.predecessors[id.index()]
    }

    /// Output port of the producer serving each edge, aligned with `edges()`.
    pub fn producer_ports(&self) -> &[usize] {
        &self.producer_ports
    }

    /// Source nodes (no dependencies), in id order.
    pub fn source_nodes(&self) -> Vec<NodeId> {
        (0..self.node_count())
            .filter(|i| self.in_degree[*i] == 0)
            .map(NodeId)
            .collect()
    }

    /// Output ports visible outside the graph: ports with no real (non-fake)
    /// consumer. Fake nodes never feed real nodes, so attaching one to a sink
    /// does not demote the sink's output.
    pub fn external_ports(&self) -> Vec<(NodeId, usize)> {
        let mut consumed: HashSet<(usize, usize)> = HashSet::new();
        for (e, port) in self.graph.edges.iter().zip(&self.producer_ports) {
            if self.node(e.consumer()).kind != OpKind::Fake {
                consumed.insert((e.producer().index(), *port));
            }
        }
        let mut out = Vec::new();
        for node in &self.graph.nodes {
            for port in 0..node.outputs {
                if !consumed.contains(&(node.id.index(), port)) {
                    out.push((node.id, port));
                }
            }
        }
        out
    }

    /// External ports of real nodes: the outputs delivered back to the user.
    pub fn user_ports(&self) -> Vec<(NodeId, usize)> {
        self.external_ports()
            .into_iter()
            .filter(|(id, _)| self.node(*id).kind != OpKind::Fake)
            .collect()
    }

    /// In-edges of `id` with their producer output ports, sorted by consumer
    /// input port: the node's argument list.
    pub fn input_edges(&self, id: NodeId) -> Vec<(NodeId, usize)> {
        let mut ins: Vec<(usize, NodeId, usize)> = self
            .graph
            .edges
            .iter()
            .zip(&self.producer_ports)
            .filter(|(e, _)| e.consumer() == id)
            .map(|(e, pp)| (e.port(), e.producer(), *pp))
            .collect();
        ins.sort_by_key(|(port, _, _)| *port);
        ins.into_iter().map(|(_, p, pp)| (p, pp)).collect()
    }

    /// Nodes not in `done` whose every predecessor is in `done`, sorted by id.
    pub fn ready_frontier(&self, done: &HashSet<NodeId>) -> Vec<NodeId> {
        (0..self.node_count())
            .map(NodeId)
            .filter(|id| !done.contains(id))
            .filter(|id| self.predecessors(*id).iter().all(|p| done.contains(p)))
            .collect()
    }

    pub fn into_graph(self) -> ComputationGraph {
        self.graph
    }
}
