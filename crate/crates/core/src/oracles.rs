//! Brute-force references for differential and property tests.
//!
//! [`ReferenceDictionary`] is a sorted vector and shares nothing with the
//! tree modules. The ε checks work on the text dumps of a tree rather than
//! on its memory layout.

use crate::optimal_tree::{DynError, DynTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Search(u64),
    Access(u64),
    Insert(u64),
    Decrement(u64),
    Delete(u64),
}

impl Op {
    pub fn key(&self) -> u64 {
        match *self {
            Op::Search(k) | Op::Access(k) | Op::Insert(k) | Op::Decrement(k) | Op::Delete(k) => k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    NotFound,
    DuplicateKey,
    UseDelete,
    WeightAboveOne,
}

/// Everything a caller can see after one operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub outcome: Outcome,
    /// Weight of the operation's key afterwards, if present.
    pub weight: Option<u64>,
    pub n: usize,
    pub total_weight: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReferenceDictionary {
    entries: Vec<(u64, u64)>,
}

impl ReferenceDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_weight(&self) -> u64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn get(&self, key: u64) -> Option<u64> {
        self.entries.iter().find(|e| e.0 == key).map(|e| e.1)
    }

    pub fn entries(&self) -> &[(u64, u64)] {
        &self.entries
    }

    pub fn apply(&mut self, op: Op) -> Observation {
        let key = op.key();
        let pos = self.entries.iter().position(|e| e.0 == key);
        let outcome = match (op, pos) {
            (Op::Insert(_), Some(_)) => Outcome::DuplicateKey,
            (Op::Insert(_), None) => {
                let at = self.entries.iter().take_while(|e| e.0 < key).count();
                self.entries.insert(at, (key, 1));
                Outcome::Ok
            }
            (_, None) => Outcome::NotFound,
            (Op::Search(_), Some(_)) => Outcome::Ok,
            (Op::Access(_), Some(i)) => {
                self.entries[i].1 += 1;
                Outcome::Ok
            }
            (Op::Decrement(_), Some(i)) => {
                if self.entries[i].1 == 1 {
                    Outcome::UseDelete
                } else {
                    self.entries[i].1 -= 1;
                    Outcome::Ok
                }
            }
            (Op::Delete(_), Some(i)) => {
                if self.entries[i].1 != 1 {
                    Outcome::WeightAboveOne
                } else {
                    self.entries.remove(i);
                    Outcome::Ok
                }
            }
        };
        Observation {
            outcome,
            weight: self.get(key),
            n: self.len(),
            total_weight: self.total_weight(),
        }
    }
}

/// Expected observations for `ops` replayed from an empty dictionary.
pub fn reference_apply(ops: &[Op]) -> Vec<Observation> {
    let mut d = ReferenceDictionary::new();
    ops.iter().map(|&op| d.apply(op)).collect()
}

/// Applies `op` to a real tree and reports what the reference would show.
pub fn observe(tree: &mut DynTree<u64>, op: Op) -> Result<Observation, DynError> {
    let r = match op {
        Op::Search(k) => tree.search(&k).map(|_| ()),
        Op::Access(k) => tree.access(&k).map(|_| ()),
        Op::Insert(k) => tree.insert_element(k).map(|_| ()),
        Op::Decrement(k) => tree.decrement(&k).map(|_| ()),
        Op::Delete(k) => tree.delete_element(&k).map(|_| ()),
    };
    let outcome = match r {
        Ok(()) => Outcome::Ok,
        Err(DynError::NotFound) => Outcome::NotFound,
        Err(DynError::DuplicateKey) => Outcome::DuplicateKey,
        Err(DynError::UseDelete) => Outcome::UseDelete,
        Err(DynError::WeightAboveOne(_)) => Outcome::WeightAboveOne,
        Err(e) => return Err(e),
    };
    Ok(Observation {
        outcome,
        weight: tree.get(&op.key()).map(|r| r.weight()),
        n: tree.len(),
        total_weight: tree.total_weight(),
    })
}

/// One line of a snapshot dump.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElementLine {
    pub key: String,
    pub weight: u64,
    pub quantized: u64,
    pub run_start: u64,
    pub run_len: u64,
    pub eps_height: u32,
    pub eps_depth: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeLine {
    pub depth: u32,
    pub leaf_start: u64,
    pub leaf_count: u64,
    pub children: Vec<usize>,
}

/// A parsed pair of snapshot and shape dumps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub elements: Vec<ElementLine>,
    pub nodes: Vec<ShapeLine>,
    /// Height of every node, derived from the child lists.
    pub heights: Vec<u32>,
    /// `(key, preorder index of its ε)`.
    pub eps: Vec<(String, usize)>,
}

fn num<T: std::str::FromStr>(tok: Option<&str>, line: usize) -> Result<T, String> {
    tok.ok_or_else(|| format!("line {line}: missing field"))?
        .parse()
        .map_err(|_| format!("line {line}: bad number"))
}

impl Snapshot {
    pub fn parse(snapshot: &str, shape: &str) -> Result<Snapshot, String> {
        let mut elements = Vec::new();
        for (i, line) in snapshot.lines().enumerate() {
            let mut t = line.split_whitespace();
            let key = t
                .next()
                .ok_or_else(|| format!("line {}: empty", i + 1))?
                .to_string();
            elements.push(ElementLine {
                key,
                weight: num(t.next(), i + 1)?,
                quantized: num(t.next(), i + 1)?,
                run_start: num(t.next(), i + 1)?,
                run_len: num(t.next(), i + 1)?,
                eps_height: num(t.next(), i + 1)?,
                eps_depth: num(t.next(), i + 1)?,
            });
        }
        let mut nodes = Vec::new();
        let mut eps = Vec::new();
        for (i, line) in shape.lines().enumerate() {
            let mut t = line.split_whitespace();
            match t.next() {
                Some("node") => {
                    let depth = num(t.next(), i + 1)?;
                    let leaf_start = num(t.next(), i + 1)?;
                    let leaf_count = num(t.next(), i + 1)?;
                    let children = t.map(|c| num(Some(c), i + 1)).collect::<Result<_, _>>()?;
                    nodes.push(ShapeLine {
                        depth,
                        leaf_start,
                        leaf_count,
                        children,
                    });
                }
                Some("eps") => {
                    let key = t
                        .next()
                        .ok_or_else(|| format!("line {}: missing key", i + 1))?;
                    eps.push((key.to_string(), num(t.next(), i + 1)?));
                }
                _ => return Err(format!("line {}: unknown record", i + 1)),
            }
        }
        let mut heights = vec![0u32; nodes.len()];
        for i in (0..nodes.len()).rev() {
            for &c in &nodes[i].children {
                if c <= i || c >= nodes.len() {
                    return Err(format!("node {i}: child {c} is not a later node"));
                }
                heights[i] = heights[i].max(heights[c] + 1);
            }
        }
        Ok(Snapshot {
            elements,
            nodes,
            heights,
            eps,
        })
    }

    pub fn element(&self, key: &str) -> Option<&ElementLine> {
        self.elements.iter().find(|e| e.key == key)
    }

    /// Preorder index of the ε the tree reports for `key`.
    pub fn epsilon_index(&self, key: &str) -> Option<usize> {
        self.eps.iter().find(|e| e.0 == key).map(|e| e.1)
    }
}

/// Which nodes count as ε candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeightRule {
    /// Height exactly `⌊log₂ w'⌋`.
    Exact,
    /// Any height.
    Any,
}

/// Every node (by preorder index) whose leaves all lie in the run of `key`
/// and whose height satisfies `rule`.
pub fn exhaustive_epsilon_search(snap: &Snapshot, key: &str, rule: HeightRule) -> Vec<usize> {
    let Some(e) = snap.element(key) else {
        return Vec::new();
    };
    let want = 63 - e.quantized.max(1).leading_zeros();
    let (lo, hi) = (e.run_start, e.run_start + e.run_len);
    (0..snap.nodes.len())
        .filter(|&i| {
            let n = &snap.nodes[i];
            n.leaf_start >= lo
                && n.leaf_start + n.leaf_count <= hi
                && (rule == HeightRule::Any || snap.heights[i] == want)
        })
        .collect()
}

/// First step where the depth bound broke.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthExcess {
    pub step: usize,
    pub key: String,
    /// `depth − min(log₂(W/w), log₂ n)`.
    pub excess: f64,
}

/// Largest `depth(ε) − min(log₂(W/w), log₂ n)` over a snapshot dump.
pub fn max_excess(snapshot: &str) -> Option<(String, f64)> {
    let snap = Snapshot::parse(snapshot, "").ok()?;
    let total: u64 = snap.elements.iter().map(|e| e.weight).sum();
    let log_n = (snap.elements.len() as f64).log2();
    snap.elements
        .iter()
        .map(|e| {
            let bound = (total as f64 / e.weight as f64).log2().min(log_n);
            (e.key.clone(), e.eps_depth as f64 - bound)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
}

/// Replays `trace` from empty, checking the depth bound with constant `c`
/// after every step. Domain errors in the trace are skipped like the
/// reference would.
pub fn depth_trace_audit(trace: &[Op], tree: DynTree<u64>, c: f64) -> Result<(), DepthExcess> {
    let mut tree = tree;
    for (step, &op) in trace.iter().enumerate() {
        observe(&mut tree, op).map_err(|e| DepthExcess {
            step,
            key: e.to_string(),
            excess: f64::INFINITY,
        })?;
        if let Some((key, excess)) = max_excess(&tree.snapshot_dump()) {
            if excess > c + 1e-9 {
                return Err(DepthExcess { step, key, excess });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::HierConfig;

    #[test]
    fn reference_basics() {
        assert!(reference_apply(&[]).is_empty());
        let obs = reference_apply(&[Op::Insert(3), Op::Search(3)]);
        assert_eq!(obs[1].outcome, Outcome::Ok);
        assert_eq!(obs[1].weight, Some(1));
        let obs = reference_apply(&[
            Op::Insert(3),
            Op::Insert(3),
            Op::Decrement(3),
            Op::Access(3),
            Op::Delete(3),
            Op::Decrement(3),
            Op::Delete(3),
            Op::Search(3),
        ]);
        let outcomes: Vec<Outcome> = obs.iter().map(|o| o.outcome).collect();
        assert_eq!(
            outcomes,
            vec![
                Outcome::Ok,
                Outcome::DuplicateKey,
                Outcome::UseDelete,
                Outcome::Ok,
                Outcome::WeightAboveOne,
                Outcome::Ok,
                Outcome::Ok,
                Outcome::NotFound
            ]
        );
        assert_eq!(obs[3].total_weight, 2);
    }

    fn four_keys() -> DynTree<u64> {
        DynTree::build_in_phase(
            vec![(1, 2), (2, 3), (3, 8), (4, 1)],
            HierConfig::flat(),
            12,
            6,
        )
        .unwrap()
    }

    #[test]
    fn four_key_candidates() {
        let t = four_keys();
        let snap = Snapshot::parse(&t.snapshot_dump(), &t.shape_dump()).unwrap();
        assert_eq!(snap.nodes.len(), 31);
        // w' = 1: candidates are exactly the two leaves of the run
        let c1 = exhaustive_epsilon_search(&snap, "1", HeightRule::Exact);
        assert_eq!(c1.len(), 2);
        assert!(c1
            .iter()
            .all(|&i| snap.nodes[i].leaf_count == 1 && snap.nodes[i].leaf_start < 2));
        let c3 = exhaustive_epsilon_search(&snap, "3", HeightRule::Exact);
        let e3 = snap.epsilon_index("3").unwrap();
        assert!(c3.contains(&e3));
        assert_eq!(snap.nodes[e3].depth, 2);
        assert_eq!(snap.heights[e3], 2);
    }

    #[test]
    fn single_element_depth_audit() {
        let t = DynTree::new(HierConfig::flat()).unwrap();
        let trace: Vec<Op> = std::iter::once(Op::Insert(0))
            .chain((0..20).map(|_| Op::Access(0)))
            .collect();
        // log n = 0 and the lone ε sits one level below the root
        assert!(depth_trace_audit(&trace, t.clone(), 1.0).is_ok());
        assert_eq!(depth_trace_audit(&trace, t, 0.0).unwrap_err().excess, 1.0);
    }

    #[test]
    fn zero_constant_fails_on_uniform() {
        let trace: Vec<Op> = (0..64)
            .map(Op::Insert)
            .chain((0..640).map(|i| Op::Access(i % 64)))
            .collect();
        let t = DynTree::new(HierConfig::flat()).unwrap();
        assert!(depth_trace_audit(&trace, t.clone(), 8.0).is_ok());
        assert!(depth_trace_audit(&trace, t, 0.0).is_err());
    }

    #[test]
    fn parse_errors() {
        assert!(Snapshot::parse("1 2 x 0 2 0 1\n", "").is_err());
        assert!(Snapshot::parse("", "bogus\n").is_err());
        assert!(Snapshot::parse("", "node 0 0 1 0\n").is_err());
    }
}
