//! Hybrid mode: remodel every graph of a batch, then mix the remodeled batch.
//! The order is fixed remodel -> mix; outputs come back stripped.

use std::time::Instant;

use crate::cost::ClockMode;
use crate::error::{Error, Result};
use crate::exec::{FeatureRecord, Schedule};
use crate::graph::CompiledGraph;
use crate::mixing::{mix_parallel, mix_sequential, weight_for, MixBatch, MixEntry};
use crate::payload::Payload;
use crate::remodel::{
    anonymize_remodel_with, strip_outputs, AnonymizationPlan, Mode, RemodelContext,
};
use crate::seed;

/// One graph entering a hybrid batch.
#[derive(Debug, Clone)]
pub struct HybridSample<'a> {
    pub graph: &'a CompiledGraph,
    pub inputs: Vec<Payload>,
    /// Run seed; reuse the graph's unmixed seed for output comparability.
    pub seed: u64,
}

#[derive(Debug)]
pub struct HybridOutcome {
    /// Stripped logical outputs per graph, in batch order.
    pub outputs: Vec<Vec<Payload>>,
    pub records: Vec<FeatureRecord>,
    pub schedule: Schedule,
    /// Wall-clock remodel transform time per graph.
    pub remodel_cost_ms: Vec<f64>,
    /// Wall-clock mixing decision time per graph.
    pub decision_cost_ms: Vec<f64>,
}

impl HybridOutcome {
    /// Total anonymization cost per graph: remodel plus mixing decisions.
    pub fn anonymize_cost_ms(&self) -> Vec<f64> {
        self.remodel_cost_ms
            .iter()
            .zip(&self.decision_cost_ms)
            .map(|(r, d)| r + d)
            .collect()
    }
}

/// Run a batch through remodel-then-mix under a hybrid plan.
pub fn run_hybrid(
    samples: &[HybridSample<'_>],
    plan: &AnonymizationPlan,
    clock: &ClockMode,
) -> Result<HybridOutcome> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("hybrid batch must be non-empty".into()));
    }
    plan.validate()?;
    let (level, parallel, workers) = match plan.mode {
        Mode::Hybrid { level, parallel, workers, .. } => (level, parallel, workers),
        _ => {
            return Err(Error::InvalidArgument(
                "run_hybrid expects a hybrid-mode plan".into(),
            ))
        }
    };

    let mut remodeled = Vec::with_capacity(samples.len());
    let mut remodel_cost_ms = Vec::with_capacity(samples.len());
    for (i, sample) in samples.iter().enumerate() {
        let mean_bytes = mean_input_bytes(&sample.inputs);
        let started = Instant::now();
        let ag = anonymize_remodel_with(
            sample.graph,
            level,
            plan.mask,
            seed::derive(plan.seed, i as u64),
            RemodelContext {
                cost_model: crate::cost::CostModel::builtin_static(),
                mean_input_bytes: mean_bytes,
            },
        )?;
        remodel_cost_ms.push(started.elapsed().as_secs_f64() * 1e3);
        remodeled.push(ag);
    }

    let entries: Vec<MixEntry<'_>> = remodeled
        .iter()
        .zip(samples)
        .map(|(ag, sample)| MixEntry {
            graph: &ag.graph,
            weight: weight_for(sample.graph.delay_class(), plan),
            inputs: sample.inputs.clone(),
            seed: sample.seed,
        })
        .collect();
    let batch = MixBatch::new(entries, seed::derive(plan.seed, 0xba7c8));
    let outcome = if parallel {
        mix_parallel(&batch, workers, clock)?
    } else {
        mix_sequential(&batch, clock)?
    };

    let mut outputs = Vec::with_capacity(samples.len());
    for (gi, outs) in outcome.outputs.iter().enumerate() {
        outputs.push(strip_outputs(outs, &remodeled[gi].strip_map)?);
    }
    Ok(HybridOutcome {
        outputs,
        records: outcome.records,
        schedule: outcome.schedule,
        remodel_cost_ms,
        decision_cost_ms: outcome.decision_cost_ms,
    })
}

fn mean_input_bytes(inputs: &[Payload]) -> u64 {
    if inputs.is_empty() {
        return 4096;
    }
    let total: u64 = inputs.iter().map(|p| p.logical_len() as u64).sum();
    total / inputs.len() as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::execute_single;
    use crate::graph::{ComputationGraph, DelayClass, OpKind};
    use crate::remodel::FeatureMask;

    fn sample_graph(label: &str) -> CompiledGraph {
        let mut g = ComputationGraph::new(label, DelayClass::DelayTolerant).unwrap();
        let a = g.connect_nodes(OpKind::Sort, &[]).unwrap();
        let b = g.connect_nodes(OpKind::Compress, &[a]).unwrap();
        g.connect_nodes(OpKind::Hash, &[a, b]).unwrap();
        g.compile().unwrap()
    }

    fn plan(level: u8, parallel: bool, mask: FeatureMask) -> AnonymizationPlan {
        AnonymizationPlan {
            mode: Mode::Hybrid { level, batch_size: 2, parallel, workers: 2 },
            mask,
            weight_sensitive: 3.0,
            weight_tolerant: 1.0,
            seed: 31,
        }
    }

    #[test]
    fn hybrid_preserves_logical_outputs() {
        let a = sample_graph("a");
        let b = sample_graph("b");
        let clock = ClockMode::simulated_default();
        let inputs_a = vec![Payload::new((0..200u16).map(|x| (x % 251) as u8).collect())];
        let inputs_b = vec![Payload::new(vec![3; 170])];
        let base_a = execute_single(&a, &inputs_a, &clock, 1).unwrap().0;
        let base_b = execute_single(&b, &inputs_b, &clock, 2).unwrap().0;
        for parallel in [false, true] {
            let outcome = run_hybrid(
                &[
                    HybridSample { graph: &a, inputs: inputs_a.clone(), seed: 1 },
                    HybridSample { graph: &b, inputs: inputs_b.clone(), seed: 2 },
                ],
                &plan(3, parallel, FeatureMask::all()),
                &clock,
            )
            .unwrap();
            for (stripped, base) in outcome.outputs[0].iter().zip(&base_a) {
                assert_eq!(stripped.logical(), base.payload.logical());
            }
            for (stripped, base) in outcome.outputs[1].iter().zip(&base_b) {
                assert_eq!(stripped.logical(), base.payload.logical());
            }
        }
    }

    #[test]
    fn degenerate_hybrid_equals_plain_execution() {
        let g = sample_graph("solo");
        let clock = ClockMode::simulated_default();
        let inputs = vec![Payload::new(vec![8; 128])];
        let (outs, record, _) = execute_single(&g, &inputs, &clock, 5).unwrap();
        let mut p = plan(2, false, FeatureMask::none());
        p.mode = Mode::Hybrid { level: 2, batch_size: 1, parallel: false, workers: 2 };
        let outcome = run_hybrid(
            &[HybridSample { graph: &g, inputs, seed: 5 }],
            &p,
            &clock,
        )
        .unwrap();
        assert_eq!(outcome.records[0], record);
        let base: Vec<&[u8]> = outs.iter().map(|o| o.payload.logical()).collect();
        let got: Vec<&[u8]> = outcome.outputs[0].iter().map(|p| p.logical()).collect();
        assert_eq!(got, base);
    }

    #[test]
    fn hybrid_busy_time_equals_remodeled_busy_time() {
        // Mixing adds span, never busy time: the hybrid record's cpu equals
        // the remodeled graph's solo cpu.
        let a = sample_graph("a");
        let b = sample_graph("b");
        let clock = ClockMode::simulated_default();
        let inputs = vec![Payload::new(vec![1; 300])];
        let p = plan(2, false, FeatureMask::all());
        let outcome = run_hybrid(
            &[
                HybridSample { graph: &a, inputs: inputs.clone(), seed: 1 },
                HybridSample { graph: &b, inputs: inputs.clone(), seed: 2 },
            ],
            &p,
            &clock,
        )
        .unwrap();
        let ag = anonymize_remodel_with(
            &a,
            2,
            FeatureMask::all(),
            seed::derive(p.seed, 0),
            RemodelContext {
                cost_model: crate::cost::CostModel::builtin_static(),
                mean_input_bytes: 300,
            },
        )
        .unwrap();
        let solo = execute_single(&ag.graph, &inputs, &clock, 1).unwrap().1;
        assert!((outcome.records[0].cpu_busy_ms - solo.cpu_busy_ms).abs() < 1e-9);
    }
}
