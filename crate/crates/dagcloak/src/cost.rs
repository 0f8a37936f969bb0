//! Simulated cost model and clock selection.
//!
//! The simulated clock makes every experiment reproducible on any machine:
//! per-kind node cost is `time_ms = base + per_byte * logical_input_bytes`,
//! cpu busy time is a per-kind fraction of that, and peak memory follows the
//! *physical* (padded) input bytes, since buffers hold padding even though the
//! computation never reads it. Fake nodes instead charge their `cost_ms`
//! parameter and a footprint proportional to it.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NodeSpec, OpKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KindCost {
    pub time_base_ms: f64,
    pub time_per_byte_ms: f64,
    pub cpu_fraction: f64,
    pub mem_base_bytes: f64,
    pub mem_per_byte: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub kinds: BTreeMap<String, KindCost>,
    pub fake_mem_bytes_per_ms: f64,
}

/// The modeled cost of one node execution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeCost {
    pub time_ms: f64,
    pub busy_ms: f64,
    pub mem_bytes: f64,
}

const BUILTIN: &str = include_str!("../data/cost_model.json");

impl CostModel {
    /// The defaults checked in at `data/cost_model.json`.
    pub fn builtin() -> Self {
        serde_json::from_str(BUILTIN).expect("builtin cost model parses")
    }

    /// Shared parsed copy of the builtin model.
    pub fn builtin_static() -> &'static CostModel {
        use std::sync::OnceLock;
        static MODEL: OnceLock<CostModel> = OnceLock::new();
        MODEL.get_or_init(CostModel::builtin)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let model: CostModel = serde_json::from_str(&text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        for (tag, k) in &self.kinds {
            if k.time_base_ms < 0.0
                || k.time_per_byte_ms < 0.0
                || k.mem_base_bytes < 0.0
                || k.mem_per_byte < 0.0
            {
                return Err(Error::Config(format!("negative cost coefficient for {tag}")));
            }
            if !(k.cpu_fraction > 0.0 && k.cpu_fraction <= 1.0) {
                return Err(Error::Config(format!(
                    "cpu_fraction for {tag} must lie in (0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn kind(&self, kind: &OpKind) -> &KindCost {
        self.kinds
            .get(kind.tag())
            .or_else(|| self.kinds.get("custom"))
            .expect("cost model covers the custom fallback")
    }

    /// Modeled cost of `node` given its input byte totals.
    pub fn node_cost(&self, node: &NodeSpec, logical_in: u64, physical_in: u64) -> NodeCost {
        let k = self.kind(&node.kind);
        let (time_ms, mem_bytes) = if node.kind == OpKind::Fake {
            let cost_ms = node.param("cost_ms").unwrap_or(k.time_base_ms).max(0.0);
            (
                cost_ms,
                k.mem_base_bytes + k.mem_per_byte * (cost_ms * self.fake_mem_bytes_per_ms),
            )
        } else {
            (
                k.time_base_ms + k.time_per_byte_ms * logical_in as f64,
                k.mem_base_bytes + k.mem_per_byte * physical_in as f64,
            )
        };
        NodeCost {
            time_ms,
            busy_ms: time_ms * k.cpu_fraction,
            mem_bytes,
        }
    }

    /// Mean modeled node time over a node set, assuming each real node sees
    /// `bytes_hint` logical input bytes. Used to scale fake-node budgets.
    pub fn mean_node_time_ms(&self, nodes: &[NodeSpec], bytes_hint: u64) -> f64 {
        let real: Vec<&NodeSpec> = nodes.iter().filter(|n| n.kind != OpKind::Fake).collect();
        if real.is_empty() {
            return 0.0;
        }
        let total: f64 = real
            .iter()
            .map(|n| {
                let k = self.kind(&n.kind);
                k.time_base_ms + k.time_per_byte_ms * bytes_hint as f64
            })
            .sum();
        total / real.len() as f64
    }
}

/// Time source for execution.
#[derive(Debug, Clone, PartialEq)]
pub enum ClockMode {
    /// Deterministic model-driven timing; the default for all experiments.
    Simulated(CostModel),
    /// Real elapsed time; useful for demos, not for reproducing trends.
    WallClock,
}

impl ClockMode {
    pub fn simulated_default() -> Self {
        ClockMode::Simulated(CostModel::builtin())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{NodeId, Params};

    fn node(kind: OpKind, params: Params) -> NodeSpec {
        NodeSpec {
            id: NodeId(0),
            kind,
            params,
            inputs: 1,
            outputs: 1,
        }
    }

    #[test]
    fn builtin_model_is_valid_and_covers_all_kinds() {
        let m = CostModel::builtin();
        m.validate().unwrap();
        for tag in [
            "sort", "search", "hash", "encrypt", "decrypt", "compress", "decompress",
            "downsample", "normalize", "split", "train", "evaluate", "fake", "custom",
        ] {
            assert!(m.kinds.contains_key(tag), "missing {tag}");
        }
    }

    #[test]
    fn node_cost_is_linear_in_logical_bytes() {
        let m = CostModel::builtin();
        let n = node(OpKind::Hash, Params::new());
        let c = m.node_cost(&n, 1000, 1000);
        assert!((c.time_ms - (2.0 + 0.002 * 1000.0)).abs() < 1e-12);
        assert!((c.busy_ms - c.time_ms).abs() < 1e-12); // hash cpu_fraction = 1.0
    }

    #[test]
    fn padding_moves_memory_but_not_time() {
        let m = CostModel::builtin();
        let n = node(OpKind::Sort, Params::new());
        let plain = m.node_cost(&n, 1000, 1000);
        let padded = m.node_cost(&n, 1000, 1500);
        assert_eq!(plain.time_ms, padded.time_ms);
        assert!(padded.mem_bytes > plain.mem_bytes);
    }

    #[test]
    fn fake_cost_comes_from_its_parameter() {
        let m = CostModel::builtin();
        let mut params = Params::new();
        params.insert("cost_ms".into(), 12.5);
        let n = node(OpKind::Fake, params);
        let c = m.node_cost(&n, 999, 999);
        assert!((c.time_ms - 12.5).abs() < 1e-12);
        assert!(c.mem_bytes > 65536.0);
    }

    #[test]
    fn unknown_custom_kinds_fall_back() {
        let m = CostModel::builtin();
        let n = node(OpKind::Custom("blur".into()), Params::new());
        let c = m.node_cost(&n, 100, 100);
        assert!(c.time_ms > 0.0);
    }
}
