//! Graph execution, schedules, and attacker-visible feature records.
//!
//! Execution is split so the mixing scheduler can drive it: [`GraphRun`] holds
//! one graph's payload store and accounting, `prepare`/`commit` bracket a node
//! execution, and the caller decides when each node runs and on which worker.
//! [`execute_single`] is the one-worker case.
//!
//! A [`FeatureRecord`] is what a host-resident observer sees of a computation:
//! I/O counts and byte sizes (physical, padding included), the completion span
//! from first own-node start to last own-node finish, cpu busy time, and peak
//! memory. Under mixing the span absorbs foreign-node time; busy time never
//! does.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cost::{ClockMode, CostModel, NodeCost};
use crate::error::{Error, Result};
use crate::graph::{CompiledGraph, NodeId, OpKind, Params};
use crate::ops::run_op;
use crate::payload::Payload;
use crate::remodel::{padding_bytes, PAD_IN_FRAC, PAD_OUT_FRAC};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub class_label: String,
    pub num_inputs: u32,
    pub num_outputs: u32,
    pub total_input_bytes: u64,
    pub total_output_bytes: u64,
    pub completion_time_ms: f64,
    pub cpu_busy_ms: f64,
    pub peak_memory_bytes: f64,
}

/// One executed node instance in a (possibly mixed) batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub graph: usize,
    pub node: NodeId,
    pub worker: usize,
    pub start_ms: f64,
    pub end_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Schedule {
    pub entries: Vec<ScheduleEntry>,
}

const TIME_EPS: f64 = 1e-9;

impl Schedule {
    /// Check dependency order, exactly-once execution, and same-worker
    /// non-overlap against the batch definition. Independent of how the
    /// schedule was produced.
    pub fn validate(&self, batch: &[&CompiledGraph]) -> Result<()> {
        let mut seen: HashSet<(usize, NodeId)> = HashSet::new();
        for e in &self.entries {
            if e.graph >= batch.len() {
                return Err(Error::InvalidArgument(format!(
                    "schedule references graph {} outside the batch",
                    e.graph
                )));
            }
            if e.node.index() >= batch[e.graph].node_count() {
                return Err(Error::InvalidArgument(format!(
                    "schedule references unknown node {} of graph {}",
                    e.node, e.graph
                )));
            }
            if e.end_ms + TIME_EPS < e.start_ms {
                return Err(Error::InvalidArgument(format!(
                    "entry for {} ends before it starts",
                    e.node
                )));
            }
            if !seen.insert((e.graph, e.node)) {
                return Err(Error::InvalidArgument(format!(
                    "node {} of graph {} executed twice",
                    e.node, e.graph
                )));
            }
        }
        let expected: usize = batch.iter().map(|g| g.node_count()).sum();
        if seen.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "schedule covers {} of {} nodes",
                seen.len(),
                expected
            )));
        }

        let at = |g: usize, n: NodeId| {
            self.entries
                .iter()
                .find(|e| e.graph == g && e.node == n)
                .expect("presence checked above")
        };
        for (gi, cg) in batch.iter().enumerate() {
            for e in cg.edges() {
                let producer = at(gi, e.producer());
                let consumer = at(gi, e.consumer());
                if consumer.start_ms + TIME_EPS < producer.end_ms {
                    return Err(Error::InvalidArgument(format!(
                        "node {} of graph {gi} starts before its dependency {} ends",
                        e.consumer(),
                        e.producer()
                    )));
                }
            }
        }

        let mut by_worker: Vec<&ScheduleEntry> = self.entries.iter().collect();
        by_worker.sort_by(|a, b| {
            (a.worker, a.start_ms)
                .partial_cmp(&(b.worker, b.start_ms))
                .expect("schedule times are finite")
        });
        for pair in by_worker.windows(2) {
            if pair[0].worker == pair[1].worker
                && pair[1].start_ms + TIME_EPS < pair[0].end_ms
            {
                return Err(Error::InvalidArgument(format!(
                    "worker {} runs {} and {} concurrently",
                    pair[0].worker, pair[0].node, pair[1].node
                )));
            }
        }
        Ok(())
    }

    /// CSV dump `graph,node,worker,start_ms,end_ms`, ordered by start then
    /// worker.
    pub fn to_csv(&self) -> String {
        let mut rows: Vec<&ScheduleEntry> = self.entries.iter().collect();
        rows.sort_by(|a, b| {
            (a.start_ms, a.worker, a.graph, a.node)
                .partial_cmp(&(b.start_ms, b.worker, b.graph, b.node))
                .expect("schedule times are finite")
        });
        let mut out = String::from("graph,node,worker,start_ms,end_ms\n");
        for e in rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.graph,
                e.node.index(),
                e.worker,
                e.start_ms,
                e.end_ms
            ));
        }
        out
    }
}

/// Everything the observer sees of one graph except the schedule span.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphAccounting {
    pub class_label: String,
    pub num_inputs: u32,
    pub num_outputs: u32,
    pub total_input_bytes: u64,
    pub total_output_bytes: u64,
    pub cpu_busy_ms: f64,
    pub peak_memory_bytes: f64,
}

/// Merge per-graph accounting with schedule spans into feature records,
/// one per graph, in batch order.
pub fn collect_features(schedule: &Schedule, accounting: &[GraphAccounting]) -> Vec<FeatureRecord> {
    accounting
        .iter()
        .enumerate()
        .map(|(gi, acct)| {
            let mut first = f64::INFINITY;
            let mut last = 0.0f64;
            for e in schedule.entries.iter().filter(|e| e.graph == gi) {
                first = first.min(e.start_ms);
                last = last.max(e.end_ms);
            }
            let span = if first.is_finite() { last - first } else { 0.0 };
            FeatureRecord {
                class_label: acct.class_label.clone(),
                num_inputs: acct.num_inputs,
                num_outputs: acct.num_outputs,
                total_input_bytes: acct.total_input_bytes,
                total_output_bytes: acct.total_output_bytes,
                completion_time_ms: span,
                cpu_busy_ms: acct.cpu_busy_ms,
                peak_memory_bytes: acct.peak_memory_bytes,
            }
        })
        .collect()
}

/// Normalized overhead of an anonymized run against its baseline:
/// `(time_ratio, cpu_ratio, mem_ratio)`.
pub fn normalized_overheads(
    anon: &FeatureRecord,
    base: &FeatureRecord,
) -> Result<(f64, f64, f64)> {
    for (name, v) in [
        ("completion_time_ms", base.completion_time_ms),
        ("cpu_busy_ms", base.cpu_busy_ms),
        ("peak_memory_bytes", base.peak_memory_bytes),
    ] {
        if v <= 0.0 {
            return Err(Error::Division(name.into()));
        }
    }
    Ok((
        anon.completion_time_ms / base.completion_time_ms,
        anon.cpu_busy_ms / base.cpu_busy_ms,
        anon.peak_memory_bytes / base.peak_memory_bytes,
    ))
}

/// A user-visible output slot of a finished graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkOutput {
    pub node: NodeId,
    pub port: usize,
    pub payload: Payload,
}

/// A node ready to execute: everything needed to run it outside any lock.
pub(crate) struct PreparedNode {
    pub id: NodeId,
    pub kind: OpKind,
    pub params: Params,
    pub inputs: Vec<Payload>,
    pub node_seed: u64,
    pub logical_in: u64,
    pub physical_in: u64,
}

/// Mutable execution state of one graph inside a (possibly mixed) run.
pub(crate) struct GraphRun<'a> {
    cg: &'a CompiledGraph,
    seed: u64,
    external_inputs: Vec<Payload>,
    store: Vec<Vec<Option<Payload>>>,
    done: HashSet<NodeId>,
    frontier: BTreeSet<NodeId>,
    acct: GraphAccounting,
}

impl<'a> GraphRun<'a> {
    pub fn new(cg: &'a CompiledGraph, inputs: &[Payload], seed: u64) -> Result<Self> {
        let sources = cg.source_nodes();
        if inputs.len() != sources.len() {
            return Err(Error::Input(format!(
                "graph {:?} has {} source nodes but {} inputs were supplied",
                cg.class_label(),
                sources.len(),
                inputs.len()
            )));
        }
        // Input padding directives live on source nodes; apply them before
        // anything observes the sizes.
        let mut external_inputs = inputs.to_vec();
        for (src, payload) in sources.iter().zip(external_inputs.iter_mut()) {
            if let Some(frac) = cg.node(*src).param(PAD_IN_FRAC) {
                payload.pad(padding_bytes(frac, payload.logical_len()));
            }
        }
        let total_input_bytes = external_inputs.iter().map(|p| p.physical_len() as u64).sum();
        let store = cg
            .nodes()
            .iter()
            .map(|n| vec![None; n.outputs])
            .collect();
        let frontier: BTreeSet<NodeId> = sources.iter().copied().collect();
        Ok(GraphRun {
            cg,
            seed,
            external_inputs,
            store,
            done: HashSet::new(),
            frontier,
            acct: GraphAccounting {
                class_label: cg.class_label().to_string(),
                num_inputs: sources.len() as u32,
                num_outputs: 0,
                total_input_bytes,
                total_output_bytes: 0,
                cpu_busy_ms: 0.0,
                peak_memory_bytes: 0.0,
            },
        })
    }

    pub fn frontier(&self) -> &BTreeSet<NodeId> {
        &self.frontier
    }

    pub fn is_finished(&self) -> bool {
        self.done.len() == self.cg.node_count()
    }

    /// Gather a ready node's inputs and seed; panics if `id` is not ready.
    pub fn prepare(&self, id: NodeId) -> PreparedNode {
        assert!(self.frontier.contains(&id), "node {id} is not ready");
        let node = self.cg.node(id);
        let inputs: Vec<Payload> = if self.cg.predecessors(id).is_empty() {
            let source_index = self
                .cg
                .source_nodes()
                .iter()
                .position(|s| *s == id)
                .expect("ready source is a source");
            vec![self.external_inputs[source_index].clone()]
        } else {
            self.cg
                .input_edges(id)
                .iter()
                .map(|(producer, port)| {
                    self.store[producer.index()][*port]
                        .clone()
                        .expect("ready node has executed producers")
                })
                .collect()
        };
        let logical_in = inputs.iter().map(|p| p.logical_len() as u64).sum();
        let physical_in = inputs.iter().map(|p| p.physical_len() as u64).sum();
        PreparedNode {
            id,
            kind: node.kind.clone(),
            params: node.params.clone(),
            inputs,
            node_seed: seed::derive(self.seed, id.index() as u64),
            logical_in,
            physical_in,
        }
    }

    /// Take `id` off the frontier without completing it, so no other worker
    /// picks it while its body runs outside the lock.
    pub fn claim(&mut self, id: NodeId) {
        self.frontier.remove(&id);
    }

    /// Record a node's outputs and cost, unlock its successors.
    pub fn commit(&mut self, id: NodeId, mut outputs: Vec<Payload>, cost: &NodeCost) -> Result<()> {
        let node = self.cg.node(id);
        if outputs.len() != node.outputs {
            return Err(Error::Format(format!(
                "node {id} produced {} outputs, declared {}",
                outputs.len(),
                node.outputs
            )));
        }
        // Output padding applies to externally visible ports only.
        if let Some(frac) = node.param(PAD_OUT_FRAC) {
            let external: HashSet<usize> = self
                .cg
                .external_ports()
                .into_iter()
                .filter(|(n, _)| *n == id)
                .map(|(_, p)| p)
                .collect();
            for (port, payload) in outputs.iter_mut().enumerate() {
                if external.contains(&port) {
                    payload.pad(padding_bytes(frac, payload.logical_len()));
                }
            }
        }
        for (port, payload) in outputs.into_iter().enumerate() {
            self.store[id.index()][port] = Some(payload);
        }
        self.acct.cpu_busy_ms += cost.busy_ms;
        self.acct.peak_memory_bytes = self.acct.peak_memory_bytes.max(cost.mem_bytes);
        self.done.insert(id);
        self.frontier.remove(&id);
        for succ in self.cg.successors(id) {
            if !self.done.contains(succ)
                && self.cg.predecessors(*succ).iter().all(|p| self.done.contains(p))
            {
                self.frontier.insert(*succ);
            }
        }
        Ok(())
    }

    /// Close out the run: external-port accounting plus user-visible outputs.
    pub fn finish(mut self) -> Result<(Vec<SinkOutput>, GraphAccounting)> {
        if !self.is_finished() {
            return Err(Error::Input("graph run finished with pending nodes".into()));
        }
        let mut user_outputs = Vec::new();
        for (node, port) in self.cg.external_ports() {
            let payload = self.store[node.index()][port]
                .take()
                .expect("executed node has stored outputs");
            self.acct.num_outputs += 1;
            self.acct.total_output_bytes += payload.physical_len() as u64;
            if self.cg.node(node).kind != OpKind::Fake {
                user_outputs.push(SinkOutput { node, port, payload });
            }
        }
        Ok((user_outputs, self.acct))
    }
}

/// Execute one prepared node under the given clock.
///
/// Simulated mode charges the cost model; wall mode measures elapsed time
/// (and burns real time for fake nodes), with memory still model-estimated.
pub(crate) fn execute_prepared(prep: &PreparedNode, clock: &ClockMode) -> Result<(Vec<Payload>, NodeCost)> {
    match clock {
        ClockMode::Simulated(model) => {
            let outputs = run_op(&prep.kind, &prep.inputs, &prep.params, prep.node_seed)?;
            let node = synth_node(prep);
            Ok((outputs, model.node_cost(&node, prep.logical_in, prep.physical_in)))
        }
        ClockMode::WallClock => {
            let started = Instant::now();
            let outputs = run_op(&prep.kind, &prep.inputs, &prep.params, prep.node_seed)?;
            if prep.kind == OpKind::Fake {
                let cost_ms = prep.params.get("cost_ms").copied().unwrap_or(1.0);
                while started.elapsed().as_secs_f64() * 1e3 < cost_ms {
                    std::hint::spin_loop();
                }
            }
            let elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
            let node = synth_node(prep);
            let modeled =
                CostModel::builtin_static().node_cost(&node, prep.logical_in, prep.physical_in);
            Ok((
                outputs,
                NodeCost {
                    time_ms: elapsed_ms,
                    busy_ms: elapsed_ms,
                    mem_bytes: modeled.mem_bytes,
                },
            ))
        }
    }
}

fn synth_node(prep: &PreparedNode) -> crate::graph::NodeSpec {
    crate::graph::NodeSpec {
        id: prep.id,
        kind: prep.kind.clone(),
        params: prep.params.clone(),
        inputs: prep.inputs.len(),
        outputs: 1,
    }
}

/// Run a compiled graph alone on one worker.
///
/// Nodes run in topological order; in simulated mode the result is fully
/// deterministic given `(graph, inputs, seed)`.
pub fn execute_single(
    cg: &CompiledGraph,
    inputs: &[Payload],
    clock: &ClockMode,
    seed: u64,
) -> Result<(Vec<SinkOutput>, FeatureRecord, Schedule)> {
    let mut run = GraphRun::new(cg, inputs, seed)?;
    let mut schedule = Schedule::default();
    let mut now_ms = 0.0f64;
    let wall_started = Instant::now();
    while let Some(id) = run.frontier().iter().next().copied() {
        let prep = run.prepare(id);
        if matches!(clock, ClockMode::WallClock) {
            now_ms = wall_started.elapsed().as_secs_f64() * 1e3;
        }
        let (outputs, cost) = execute_prepared(&prep, clock)?;
        run.commit(id, outputs, &cost)?;
        schedule.entries.push(ScheduleEntry {
            graph: 0,
            node: id,
            worker: 0,
            start_ms: now_ms,
            end_ms: now_ms + cost.time_ms,
        });
        now_ms += cost.time_ms;
    }
    let (outputs, acct) = run.finish()?;
    let record = collect_features(&schedule, &[acct])
        .pop()
        .expect("one accounting entry yields one record");
    Ok((outputs, record, schedule))
}

pub const FEATURE_CSV_HEADER: &str = "label,num_in,num_out,in_bytes,out_bytes,time_ms,cpu_ms,mem_bytes";

/// Render records as CSV, one row per computation, in the given order.
pub fn features_to_csv(records: &[FeatureRecord]) -> String {
    let mut out = String::from(FEATURE_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.class_label,
            r.num_inputs,
            r.num_outputs,
            r.total_input_bytes,
            r.total_output_bytes,
            r.completion_time_ms,
            r.cpu_busy_ms,
            r.peak_memory_bytes
        ));
    }
    out
}

pub fn write_features_csv(path: &Path, records: &[FeatureRecord]) -> Result<()> {
    std::fs::write(path, features_to_csv(records))?;
    Ok(())
}

pub fn parse_features_csv(text: &str) -> Result<Vec<FeatureRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == FEATURE_CSV_HEADER => {}
        other => {
            return Err(Error::Format(format!(
                "bad feature CSV header: {other:?}"
            )))
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 8 {
            return Err(Error::Format(format!("row {} has {} columns", i + 2, cols.len())));
        }
        let f = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Format(format!("bad number {s:?} in row {}", i + 2)))
        };
        out.push(FeatureRecord {
            class_label: cols[0].to_string(),
            num_inputs: f(cols[1])? as u32,
            num_outputs: f(cols[2])? as u32,
            total_input_bytes: f(cols[3])? as u64,
            total_output_bytes: f(cols[4])? as u64,
            completion_time_ms: f(cols[5])?,
            cpu_busy_ms: f(cols[6])?,
            peak_memory_bytes: f(cols[7])?,
        });
    }
    Ok(out)
}

pub fn read_features_csv(path: &Path) -> Result<Vec<FeatureRecord>> {
    parse_features_csv(&std::fs::read_to_string(path)?)
}
