//! Mixing: interleave the node executions of independent graphs so per-graph
//! timing observations absorb foreign work.
//!
//! The next node always comes from [`pick_next`]: the graph is drawn with
//! probability `w_i / sum(w_j)` over graphs that still have ready nodes, and
//! within the chosen graph the lowest-id ready node runs. Randomness therefore
//! lives in exactly one tested distribution; everything else is deterministic.
//!
//! Sequential mixing serializes the batch on one worker. Parallel mixing runs
//! a worker pool; under the simulated clock the pool is itself simulated
//! (per-worker virtual clocks, node start = max(worker available, predecessor
//! ends)) so results stay reproducible, while the wall clock uses real threads
//! over one lock-guarded frontier.

use std::collections::HashMap;
use std::sync::{Condvar, Mutex};
use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cost::ClockMode;
use crate::error::{Error, Result};
use crate::exec::{
    collect_features, execute_prepared, FeatureRecord, GraphRun, Schedule, ScheduleEntry,
    SinkOutput,
};
use crate::graph::{CompiledGraph, DelayClass, NodeId};
use crate::remodel::AnonymizationPlan;

/// One graph entering a mixed batch.
#[derive(Debug, Clone)]
pub struct MixEntry<'a> {
    pub graph: &'a CompiledGraph,
    pub weight: f64,
    pub inputs: Vec<crate::payload::Payload>,
    /// Per-graph run seed; reusing a graph's unmixed seed reproduces its
    /// unmixed outputs exactly.
    pub seed: u64,
}

/// A batch of independent graphs to interleave.
#[derive(Debug, Clone)]
pub struct MixBatch<'a> {
    pub entries: Vec<MixEntry<'a>>,
    /// Scheduler seed driving the weighted random selection.
    pub seed: u64,
}

impl<'a> MixBatch<'a> {
    pub fn new(entries: Vec<MixEntry<'a>>, seed: u64) -> Self {
        MixBatch { entries, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::InvalidArgument("mix batch must contain >= 1 graph".into()));
        }
        for e in &self.entries {
            if !(e.weight > 0.0) {
                return Err(Error::InvalidArgument("mix weights must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.entries.len()
    }
}

/// Default weight for a graph's delay class under a plan.
pub fn weight_for(delay: DelayClass, plan: &AnonymizationPlan) -> f64 {
    match delay {
        DelayClass::DelaySensitive => plan.weight_sensitive,
        DelayClass::DelayTolerant => plan.weight_tolerant,
    }
}

/// Weighted random selection of the next node to execute.
///
/// Graph `i` is chosen with probability `weights[i] / sum` over graphs whose
/// frontier is non-empty; the lowest-id ready node of that graph is returned.
pub fn pick_next(
    frontiers: &[Vec<NodeId>],
    weights: &[f64],
    rng: &mut impl Rng,
) -> Result<(usize, NodeId)> {
    debug_assert_eq!(frontiers.len(), weights.len());
    let total: f64 = frontiers
        .iter()
        .zip(weights)
        .filter(|(f, _)| !f.is_empty())
        .map(|(_, w)| *w)
        .sum();
    if total <= 0.0 {
        return Err(Error::Exhausted);
    }
    let mut x = rng.gen::<f64>() * total;
    for (i, (frontier, w)) in frontiers.iter().zip(weights).enumerate() {
        if frontier.is_empty() {
            continue;
        }
        x -= w;
        if x < 0.0 {
            return Ok((i, frontier[0]));
        }
    }
    // Floating point underflow on the last candidate.
    let last = frontiers
        .iter()
        .enumerate()
        .rev()
        .find(|(_, f)| !f.is_empty())
        .expect("total > 0 implies a candidate");
    Ok((last.0, last.1[0]))
}

/// Result of a mixed run.
#[derive(Debug)]
pub struct MixOutcome {
    /// User-visible outputs per graph, in batch order.
    pub outputs: Vec<Vec<SinkOutput>>,
    pub records: Vec<FeatureRecord>,
    pub schedule: Schedule,
    /// Wall-clock time spent inside pick_next, attributed to the chosen graph.
    pub decision_cost_ms: Vec<f64>,
    /// Number of candidate-graph scans performed across all selections.
    pub decision_scans: u64,
}

fn snapshot_frontiers(runs: &[GraphRun<'_>]) -> Vec<Vec<NodeId>> {
    runs.iter()
        .map(|r| r.frontier().iter().copied().collect())
        .collect()
}

/// Interleave the batch on one worker.
pub fn mix_sequential(batch: &MixBatch<'_>, clock: &ClockMode) -> Result<MixOutcome> {
    batch.validate()?;
    let weights: Vec<f64> = batch.entries.iter().map(|e| e.weight).collect();
    let mut runs = batch
        .entries
        .iter()
        .map(|e| GraphRun::new(e.graph, &e.inputs, e.seed))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(batch.seed);
    let mut schedule = Schedule::default();
    let mut decision_cost_ms = vec![0.0; batch.size()];
    let mut decision_scans = 0u64;
    let mut now_ms = 0.0f64;
    let wall_start = Instant::now();
    loop {
        let frontiers = snapshot_frontiers(&runs);
        if frontiers.iter().all(|f| f.is_empty()) {
            break;
        }
        let picked_at = Instant::now();
        let (gi, node) = pick_next(&frontiers, &weights, &mut rng)?;
        decision_cost_ms[gi] += picked_at.elapsed().as_secs_f64() * 1e3;
        decision_scans += frontiers.iter().filter(|f| !f.is_empty()).count() as u64;

        let prep = runs[gi].prepare(node);
        if matches!(clock, ClockMode::WallClock) {
            now_ms = wall_start.elapsed().as_secs_f64() * 1e3;
        }
        let (outputs, cost) = execute_prepared(&prep, clock)?;
        runs[gi].commit(node, outputs, &cost)?;
        schedule.entries.push(ScheduleEntry {
            graph: gi,
            node,
            worker: 0,
            start_ms: now_ms,
            end_ms: now_ms + cost.time_ms,
        });
        now_ms += cost.time_ms;
    }
    finish(runs, schedule, decision_cost_ms, decision_scans)
}

/// Interleave the batch on `workers >= 2` workers.
pub fn mix_parallel(
    batch: &MixBatch<'_>,
    workers: usize,
    clock: &ClockMode,
) -> Result<MixOutcome> {
    batch.validate()?;
    if workers < 2 {
        return Err(Error::InvalidArgument("parallel mixing needs >= 2 workers".into()));
    }
    match clock {
        ClockMode::Simulated(_) => mix_parallel_simulated(batch, workers, clock),
        ClockMode::WallClock => mix_parallel_wall(batch, workers),
    }
}

/// Deterministic simulation of the worker pool: the worker with the smallest
/// virtual clock claims the next pick; a node starts once both its worker and
/// all its predecessors are available.
fn mix_parallel_simulated(
    batch: &MixBatch<'_>,
    workers: usize,
    clock: &ClockMode,
) -> Result<MixOutcome> {
    let weights: Vec<f64> = batch.entries.iter().map(|e| e.weight).collect();
    let mut runs = batch
        .entries
        .iter()
        .map(|e| GraphRun::new(e.graph, &e.inputs, e.seed))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(batch.seed);
    let mut schedule = Schedule::default();
    let mut decision_cost_ms = vec![0.0; batch.size()];
    let mut decision_scans = 0u64;
    let mut worker_free = vec![0.0f64; workers];
    let mut end_time: HashMap<(usize, NodeId), f64> = HashMap::new();
    loop {
        let frontiers = snapshot_frontiers(&runs);
        if frontiers.iter().all(|f| f.is_empty()) {
            break;
        }
        let worker = worker_free
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).expect("finite clocks").then(a.0.cmp(&b.0)))
            .map(|(i, _)| i)
            .expect("workers >= 2");

        let picked_at = Instant::now();
        let (gi, node) = pick_next(&frontiers, &weights, &mut rng)?;
        decision_cost_ms[gi] += picked_at.elapsed().as_secs_f64() * 1e3;
        decision_scans += frontiers.iter().filter(|f| !f.is_empty()).count() as u64;

        let preds_end = batch.entries[gi]
            .graph
            .predecessors(node)
            .iter()
            .map(|p| end_time[&(gi, *p)])
            .fold(0.0f64, f64::max);
        let prep = runs[gi].prepare(node);
        let (outputs, cost) = execute_prepared(&prep, clock)?;
        runs[gi].commit(node, outputs, &cost)?;
        let start = worker_free[worker].max(preds_end);
        let end = start + cost.time_ms;
        worker_free[worker] = end;
        end_time.insert((gi, node), end);
        schedule.entries.push(ScheduleEntry { graph: gi, node, worker, start_ms: start, end_ms: end });
    }
    finish(runs, schedule, decision_cost_ms, decision_scans)
}

struct WallState<'a, 'g> {
    runs: Vec<GraphRun<'g>>,
    weights: &'a [f64],
    rng: ChaCha8Rng,
    entries: Vec<ScheduleEntry>,
    decision_cost_ms: Vec<f64>,
    decision_scans: u64,
    in_flight: usize,
    failed: Option<Error>,
}

/// Real worker threads over one guarded frontier; node bodies run outside the
/// lock. A worker with nothing ready waits for the next completion event.
fn mix_parallel_wall(batch: &MixBatch<'_>, workers: usize) -> Result<MixOutcome> {
    let weights: Vec<f64> = batch.entries.iter().map(|e| e.weight).collect();
    let runs = batch
        .entries
        .iter()
        .map(|e| GraphRun::new(e.graph, &e.inputs, e.seed))
        .collect::<Result<Vec<_>>>()?;
    let state = Mutex::new(WallState {
        runs,
        weights: &weights,
        rng: ChaCha8Rng::seed_from_u64(batch.seed),
        entries: Vec::new(),
        decision_cost_ms: vec![0.0; batch.size()],
        decision_scans: 0,
        in_flight: 0,
        failed: None,
    });
    let cond = Condvar::new();
    let started = Instant::now();

    std::thread::scope(|scope| {
        for worker in 0..workers {
            scope.spawn(|| loop {
                let mut guard = state.lock().expect("mixing state lock");
                let (gi, node, prep) = loop {
                    if guard.failed.is_some() {
                        return;
                    }
                    let frontiers = snapshot_frontiers(&guard.runs);
                    if frontiers.iter().any(|f| !f.is_empty()) {
                        let picked_at = Instant::now();
                        let pick = pick_next(&frontiers, guard.weights, &mut guard.rng);
                        let scans = frontiers.iter().filter(|f| !f.is_empty()).count() as u64;
                        match pick {
                            Ok((gi, node)) => {
                                guard.decision_cost_ms[gi] +=
                                    picked_at.elapsed().as_secs_f64() * 1e3;
                                guard.decision_scans += scans;
                                let prep = guard.runs[gi].prepare(node);
                                guard.runs[gi].claim(node);
                                guard.in_flight += 1;
                                break (gi, node, prep);
                            }
                            Err(e) => {
                                guard.failed = Some(e);
                                cond.notify_all();
                                return;
                            }
                        }
                    } else if guard.in_flight == 0 {
                        // Nothing ready and nothing running: batch is done.
                        return;
                    } else {
                        guard = cond.wait(guard).expect("mixing state lock");
                    }
                };
                drop(guard);

                let start_ms = started.elapsed().as_secs_f64() * 1e3;
                let result = execute_prepared(&prep, &ClockMode::WallClock);
                let end_ms = started.elapsed().as_secs_f64() * 1e3;

                let mut guard = state.lock().expect("mixing state lock");
                guard.in_flight -= 1;
                match result {
                    Ok((outputs, cost)) => {
                        if let Err(e) = guard.runs[gi].commit(node, outputs, &cost) {
                            guard.failed = Some(e);
                        } else {
                            guard.entries.push(ScheduleEntry {
                                graph: gi,
                                node,
                                worker,
                                start_ms,
                                end_ms,
                            });
                        }
                    }
                    Err(e) => guard.failed = Some(e),
                }
                cond.notify_all();
            });
        }
    });

    let state = state.into_inner().expect("mixing state lock");
    if let Some(e) = state.failed {
        return Err(e);
    }
    let schedule = Schedule { entries: state.entries };
    finish(state.runs, schedule, state.decision_cost_ms, state.decision_scans)
}

fn finish(
    runs: Vec<GraphRun<'_>>,
    schedule: Schedule,
    decision_cost_ms: Vec<f64>,
    decision_scans: u64,
) -> Result<MixOutcome> {
    let mut outputs = Vec::with_capacity(runs.len());
    let mut accounting = Vec::with_capacity(runs.len());
    for run in runs {
        let (outs, acct) = run.finish()?;
        outputs.push(outs);
        accounting.push(acct);
    }
    let records = collect_features(&schedule, &accounting);
    Ok(MixOutcome { outputs, records, schedule, decision_cost_ms, decision_scans })
}

/// Per-graph scheduling overhead of mixing the batch sequentially: the
/// wall-clock cost of the pick_next decisions, attributed per graph.
pub fn anonymization_cost(batch: &MixBatch<'_>, clock: &ClockMode) -> Result<Vec<f64>> {
    Ok(mix_sequential(batch, clock)?.decision_cost_ms)
}
