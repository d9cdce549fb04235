//! Trace replay with audits and the statistics it reports.

use dyntree::hierarchy::HierConfig;
use dyntree::optimal_tree::{DynError, DynTree};
use dyntree::oracles::{max_excess, Op};
use dyntree::quantizer::entropy;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Audit {
    Off,
    Final,
    EveryOp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Structure {
    Flat,
    Hier,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub structure: Structure,
    pub f: u32,
    pub audit: Audit,
    pub c: f64,
}

impl RunConfig {
    pub fn hier_config(&self) -> HierConfig {
        match self.structure {
            Structure::Flat => HierConfig::flat(),
            Structure::Hier => HierConfig { f: self.f },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunError {
    #[error("record {record}: {source}")]
    Domain { record: usize, source: DynError },
    #[error(transparent)]
    Config(DynError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub structure: Structure,
    pub f: u32,
    pub n: usize,
    #[serde(rename = "W")]
    pub total_weight: u64,
    #[serde(rename = "H")]
    pub entropy: f64,
    pub total_comparisons: u64,
    pub comparisons_per_w: f64,
    /// `W·H/W`, the entropy lower bound per access.
    pub entropy_per_w: f64,
    pub excess_max: f64,
    pub excess_mean: f64,
    pub structural_ops: u64,
    pub work: u64,
    pub rebuilds: u64,
    /// Comparisons per record at the 10th, 20th, ..., 100th percentile.
    pub depth_deciles: Vec<u32>,
    pub audit: Audit,
    pub c_audit: f64,
    /// Smallest integer constant the audited snapshots would have passed.
    pub smallest_passing_c: Option<f64>,
    pub violation: Option<String>,
}

/// Replays `ops` from an empty structure. Audit failures end the replay and
/// are reported in `violation`; domain errors are returned.
pub fn run(ops: &[Op], cfg: RunConfig) -> Result<StatsReport, RunError> {
    let mut tree: DynTree<u64> = DynTree::new(cfg.hier_config()).map_err(RunError::Config)?;
    let mut depths = Vec::with_capacity(ops.len());
    let mut excess_max = f64::NEG_INFINITY;
    let mut excess_sum = 0.0;
    let mut excess_count = 0u64;
    let mut structural_ops = 0;
    let mut work = 0;
    let mut worst_audited: Option<f64> = None;
    let mut violation = None;
    let mut audit_here = |tree: &DynTree<u64>, full: bool| -> Option<String> {
        if let Some((_, e)) = max_excess(&tree.snapshot_dump()) {
            worst_audited = Some(worst_audited.map_or(e, |w: f64| w.max(e)));
        }
        let r = if full {
            tree.audit(cfg.c)
        } else {
            tree.audit_depths(cfg.c)
        };
        r.err().map(|e| e.to_string())
    };
    for (i, &op) in ops.iter().enumerate() {
        let before = match op {
            Op::Access(k) => tree
                .get(&k)
                .map(|r| (r.weight(), tree.total_weight(), tree.len())),
            _ => None,
        };
        let stats = match op {
            Op::Access(k) => tree.access(&k),
            Op::Insert(k) => tree.insert_element(k),
            Op::Decrement(k) => tree.decrement(&k),
            Op::Delete(k) => tree.delete_element(&k),
            Op::Search(k) => tree.search(&k).map(|(_, s)| s),
        }
        .map_err(|source| RunError::Domain {
            record: i + 1,
            source,
        })?;
        depths.push(stats.comparisons);
        structural_ops += stats.structural_ops;
        work += stats.work;
        if let Some((w, big_w, n)) = before {
            let bound = (big_w as f64 / w as f64).log2().min((n as f64).log2());
            let e = stats.comparisons as f64 - bound;
            excess_max = excess_max.max(e);
            excess_sum += e;
            excess_count += 1;
        }
        if cfg.audit == Audit::EveryOp {
            if let Some(v) = audit_here(&tree, true) {
                violation = Some(format!("record {}: {v}", i + 1));
                break;
            }
        }
    }
    if cfg.audit == Audit::Final && violation.is_none() {
        violation = audit_here(&tree, true).map(|v| format!("final: {v}"));
    }
    let weights: Vec<u64> = tree.elements().iter().map(|r| r.weight()).collect();
    let h = if weights.is_empty() {
        0.0
    } else {
        entropy(&weights).expect("positive weights")
    };
    let big_w = tree.total_weight();
    let total_comparisons: u64 = depths.iter().map(|&d| d as u64).sum();
    depths.sort_unstable();
    let depth_deciles = if depths.is_empty() {
        Vec::new()
    } else {
        (1..=10)
            .map(|d| depths[(d * depths.len()).div_ceil(10) - 1])
            .collect()
    };
    let per_w = |x: f64| if big_w == 0 { 0.0 } else { x / big_w as f64 };
    Ok(StatsReport {
        structure: cfg.structure,
        f: cfg.hier_config().f,
        n: tree.len(),
        total_weight: big_w,
        entropy: h,
        total_comparisons,
        comparisons_per_w: per_w(total_comparisons as f64),
        entropy_per_w: per_w(big_w as f64 * h),
        excess_max: if excess_count == 0 { 0.0 } else { excess_max },
        excess_mean: if excess_count == 0 {
            0.0
        } else {
            excess_sum / excess_count as f64
        },
        structural_ops,
        work,
        rebuilds: tree.rebuilds(),
        depth_deciles,
        audit: cfg.audit,
        c_audit: cfg.c,
        smallest_passing_c: worst_audited.map(|w| w.ceil().max(0.0)),
        violation,
    })
}
