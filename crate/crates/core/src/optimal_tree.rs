//! The dynamic almost-optimal dictionary.
//!
//! Element `eᵢ` with quantized weight `w'ᵢ` owns a contiguous run of `2w'ᵢ`
//! pseudo-leaves in a k-neighbor tree (optionally decomposed into macro- and
//! mini-trees, see [`crate::hierarchy`]). The node `εᵢ` chosen inside its run
//! carries a mark; marked nodes are the leaves of the logical search tree.
//! Routing uses, at each node, the key of the rightmost marked node in the
//! left subtree.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt::Display;

use slotmap::{new_key_type, SlotMap};
use thiserror::Error;

use crate::hierarchy::{floor_log2, Cost, HierConfig, Level, NodeRef, ShapeNode, Store, Turn};
use crate::quantizer::{phase_should_end, phase_should_shrink, quantize, PhaseState};

new_key_type! {
    pub struct ElemId;
    pub struct PseudoId;
}

/// Additive constant of the depth audit for the flat structure.
pub const C_AUDIT: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DynError {
    #[error("cannot build from an empty element list")]
    EmptyBuild,
    #[error("keys must be strictly increasing (position {0})")]
    KeyOrder(usize),
    #[error("weights must be at least 1 (position {0})")]
    ZeroWeight(usize),
    #[error("key not found")]
    NotFound,
    #[error("key already present")]
    DuplicateKey,
    #[error("weight is 1; use delete_element")]
    UseDelete,
    #[error("weight is {0}; only weight-1 elements can be deleted")]
    WeightAboveOne(u64),
    #[error("recursion depth {0} exceeds the supported maximum")]
    BadConfig(u32),
    #[error("structure corrupt: {0}")]
    StructureCorrupt(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AuditError {
    #[error("{0}")]
    Structure(String),
    #[error("element {key}: depth {depth} exceeds bound {bound:.3}")]
    DepthBound { key: String, depth: u32, bound: f64 },
}

#[derive(Debug, Clone)]
pub struct ElementRecord<K> {
    key: K,
    weight: u64,
    quantized: u64,
    run: Vec<PseudoId>,
    eps: Option<NodeRef>,
}

impl<K> ElementRecord<K> {
    pub fn key(&self) -> &K {
        &self.key
    }

    pub fn weight(&self) -> u64 {
        self.weight
    }

    pub fn quantized(&self) -> u64 {
        self.quantized
    }

    pub fn run_len(&self) -> usize {
        self.run.len()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AccessStats {
    /// Router comparisons spent finding the element (one per level).
    pub comparisons: u32,
    pub epsilon_depth: u32,
    /// Node relinks and creations performed by this call.
    pub structural_ops: u64,
    /// Every node touched by this call, aggregate refreshes and ε
    /// relocation included.
    pub work: u64,
    /// Phase rebuilds so far.
    pub rebuilds: u64,
}

/// Where an element's ε-node sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpsilonInfo {
    /// Depth in the combined tree.
    pub depth: u32,
    /// Height within the k-neighbor tree that holds the node (a macro-tree
    /// or a mini-tree when hierarchical).
    pub height: u32,
}

#[derive(Debug, Clone)]
pub struct DynTree<K> {
    elements: SlotMap<ElemId, ElementRecord<K>>,
    owner: SlotMap<PseudoId, ElemId>,
    store: Option<Store>,
    phase: Option<PhaseState>,
    config: HierConfig,
    rebuilds: u64,
    retired: Cost,
    locate_work: u64,
}

impl<K: Ord + Clone> DynTree<K> {
    pub fn new(config: HierConfig) -> Result<Self, DynError> {
        if config.f > HierConfig::MAX_F {
            return Err(DynError::BadConfig(config.f));
        }
        Ok(DynTree {
            elements: SlotMap::with_key(),
            owner: SlotMap::with_key(),
            store: None,
            phase: None,
            config,
            rebuilds: 0,
            retired: Cost::default(),
            locate_work: 0,
        })
    }

    /// Flat structure over `(key, weight)` pairs in increasing key order.
    pub fn build(items: Vec<(K, u64)>) -> Result<Self, DynError> {
        Self::build_with(items, HierConfig::flat())
    }

    pub fn build_with(items: Vec<(K, u64)>, config: HierConfig) -> Result<Self, DynError> {
        let mut t = Self::checked(&items, config)?;
        let order = t.adopt(items);
        t.layout(&order, None);
        Ok(t)
    }

    /// Builds as if mid-phase: quantization uses the frozen scale `W0/n0`
    /// instead of the current totals.
    pub fn build_in_phase(
        items: Vec<(K, u64)>,
        config: HierConfig,
        w0: u64,
        n0: u64,
    ) -> Result<Self, DynError> {
        let phase =
            PhaseState::new(w0, n0).map_err(|e| DynError::StructureCorrupt(e.to_string()))?;
        let mut t = Self::checked(&items, config)?;
        let order = t.adopt(items);
        t.layout(&order, Some(phase));
        Ok(t)
    }

    fn checked(items: &[(K, u64)], config: HierConfig) -> Result<Self, DynError> {
        if items.is_empty() {
            return Err(DynError::EmptyBuild);
        }
        for (i, (_, w)) in items.iter().enumerate() {
            if *w == 0 {
                return Err(DynError::ZeroWeight(i));
            }
        }
        for (i, pair) in items.windows(2).enumerate() {
            if pair[0].0 >= pair[1].0 {
                return Err(DynError::KeyOrder(i + 1));
            }
        }
        Self::new(config)
    }

    fn adopt(&mut self, items: Vec<(K, u64)>) -> Vec<ElemId> {
        items
            .into_iter()
            .map(|(key, weight)| {
                self.elements.insert(ElementRecord {
                    key,
                    weight,
                    quantized: 0,
                    run: Vec::new(),
                    eps: None,
                })
            })
            .collect()
    }

    pub fn config(&self) -> HierConfig {
        self.config
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn total_weight(&self) -> u64 {
        self.phase.map_or(0, |p| p.total_weight)
    }

    pub fn phase(&self) -> Option<PhaseState> {
        self.phase
    }

    pub fn rebuilds(&self) -> u64 {
        self.rebuilds
    }

    /// Node operations spent since construction, rebuilds included.
    pub fn total_cost(&self) -> Cost {
        let live = self.store.as_ref().map_or(Cost::default(), Store::cost);
        self.retired
            + live
            + Cost {
                work: self.locate_work,
                relinks: 0,
            }
    }

    /// Depth of the deepest pseudo-leaf.
    pub fn height(&self) -> u32 {
        self.store.as_ref().map_or(0, Store::height)
    }

    pub fn pseudo_leaf_count(&self) -> u64 {
        self.store.as_ref().map_or(0, Store::leaf_count)
    }

    pub fn group_count(&self) -> usize {
        self.store.as_ref().map_or(0, Store::group_count)
    }

    /// Elements in key order.
    pub fn elements(&self) -> Vec<&ElementRecord<K>> {
        self.order()
            .into_iter()
            .map(|e| &self.elements[e])
            .collect()
    }

    fn order(&self) -> Vec<ElemId> {
        let Some(store) = &self.store else {
            return Vec::new();
        };
        let mut out: Vec<ElemId> = Vec::with_capacity(self.elements.len());
        for p in store.leaves() {
            let e = self.owner[p];
            if out.last() != Some(&e) {
                out.push(e);
            }
        }
        out
    }

    /// Lays out fresh runs for `order` and starts a new phase.
    fn layout(&mut self, order: &[ElemId], frozen: Option<PhaseState>) {
        if let Some(old) = self.store.take() {
            self.retired += old.cost();
        }
        self.owner.clear();
        if order.is_empty() {
            self.phase = None;
            return;
        }
        let total: u64 = order.iter().map(|&e| self.elements[e].weight).sum();
        let phase = match frozen {
            Some(mut p) => {
                p.total_weight = total;
                p.elements = order.len() as u64;
                p
            }
            None => PhaseState::new(total, order.len() as u64).expect("weights are positive"),
        };
        let mut pids = Vec::new();
        for &e in order {
            let q = quantize(self.elements[e].weight, &phase);
            let run: Vec<PseudoId> = (0..2 * q).map(|_| self.owner.insert(e)).collect();
            pids.extend_from_slice(&run);
            let rec = &mut self.elements[e];
            rec.quantized = q;
            rec.run = run;
            rec.eps = None;
        }
        let level = Level {
            f: self.config.f,
            n_hint: order.len() as u64,
        };
        self.store = Some(Store::build(&pids, level));
        self.phase = Some(phase);
        for &e in order {
            self.place(e);
        }
    }

    fn rebuild(&mut self) {
        let order = self.order();
        self.layout(&order, None);
        self.rebuilds += 1;
    }

    fn place(&mut self, e: ElemId) {
        let store = self.store.as_mut().expect("non-empty");
        let (r, loc) = store.locate(&self.elements[e].run);
        self.locate_work += loc.cost;
        store.set_mark(&r, Some(e));
        self.elements[e].eps = Some(r);
    }

    fn unplace(&mut self, e: ElemId) {
        if let Some(r) = self.elements[e].eps.take() {
            self.store.as_mut().expect("non-empty").clear_mark_if(&r, e);
        }
    }

    /// Re-locates ε for every element owning a touched pseudo-leaf.
    fn repair(&mut self, touched: &[PseudoId], extra: Option<ElemId>) {
        let mut affected: Vec<ElemId> = touched
            .iter()
            .filter_map(|&p| self.owner.get(p).copied())
            .collect();
        affected.extend(extra);
        let mut seen = HashSet::with_capacity(affected.len());
        affected.retain(|e| seen.insert(*e));
        let store = self.store.as_mut().expect("non-empty");
        let mut moved = Vec::with_capacity(affected.len());
        for e in affected {
            let (r, loc) = store.locate(&self.elements[e].run);
            self.locate_work += loc.cost;
            let old = self.elements[e].eps.take();
            if old.as_ref() == Some(&r) && store.mark_at(&r) == Some(e) {
                self.elements[e].eps = old;
                continue;
            }
            if let Some(old) = old {
                store.clear_mark_if(&old, e);
            }
            moved.push((e, r));
        }
        for (e, r) in moved {
            store.set_mark(&r, Some(e));
            self.elements[e].eps = Some(r);
        }
    }

    /// Walks the logical tree. `turn` sees the key of the rightmost logical
    /// leaf in the left subtree at every node where both subtrees hold one.
    pub fn route<E>(
        &self,
        mut turn: impl FnMut(&K) -> Result<Turn, E>,
    ) -> Result<Option<(&ElementRecord<K>, u32)>, E> {
        let Some(store) = &self.store else {
            return Ok(None);
        };
        let elements = &self.elements;
        let found = store.descend(&mut |m: ElemId| turn(&elements[m].key))?;
        Ok(found.map(|(e, d)| (&elements[e], d)))
    }

    /// Lands on the first element with key ≥ `key`, or on the last element.
    fn descend_to(&self, key: &K) -> Option<(ElemId, u32)> {
        let store = self.store.as_ref()?;
        let elements = &self.elements;
        let found: Result<_, std::convert::Infallible> = store.descend(&mut |m: ElemId| {
            Ok(if *key <= elements[m].key {
                Turn::Left
            } else {
                Turn::Right
            })
        });
        found.expect("infallible")
    }

    fn find(&self, key: &K) -> Result<(ElemId, u32), DynError> {
        match self.descend_to(key) {
            Some((e, d)) if self.elements[e].key == *key => Ok((e, d)),
            _ => Err(DynError::NotFound),
        }
    }

    pub fn search(&self, key: &K) -> Result<(&ElementRecord<K>, AccessStats), DynError> {
        let (e, d) = self.find(key)?;
        let stats = AccessStats {
            comparisons: d,
            epsilon_depth: d,
            structural_ops: 0,
            work: 0,
            rebuilds: self.rebuilds,
        };
        Ok((&self.elements[e], stats))
    }

    pub fn get(&self, key: &K) -> Option<&ElementRecord<K>> {
        self.find(key).ok().map(|(e, _)| &self.elements[e])
    }

    /// Adds one to the weight of `key`.
    pub fn access(&mut self, key: &K) -> Result<AccessStats, DynError> {
        let (e, d) = self.find(key)?;
        let before = self.total_cost();
        let phase = self.phase.as_mut().expect("non-empty");
        phase.total_weight += 1;
        let rec = &mut self.elements[e];
        rec.weight += 1;
        let q = quantize(rec.weight, phase);
        if q > rec.quantized {
            debug_assert_eq!(q, rec.quantized + 1);
            rec.quantized = q;
            let anchor = *rec.run.last().expect("runs are non-empty");
            let a = self.owner.insert(e);
            let b = self.owner.insert(e);
            let mut touched = Vec::new();
            let store = self.store.as_mut().expect("non-empty");
            store.insert_after(Some(anchor), a, &mut touched);
            store.insert_after(Some(a), b, &mut touched);
            self.elements[e].run.extend([a, b]);
            self.repair(&touched, Some(e));
        }
        self.finish_growth();
        Ok(self.stats(d, before))
    }

    pub fn insert_element(&mut self, key: K) -> Result<AccessStats, DynError> {
        if self.store.is_none() {
            let before = self.total_cost();
            let e = self.elements.insert(ElementRecord {
                key,
                weight: 1,
                quantized: 0,
                run: Vec::new(),
                eps: None,
            });
            self.layout(&[e], None);
            return Ok(self.stats(0, before));
        }
        let (succ, d) = self.descend_to(&key).expect("non-empty");
        let pred = match key.cmp(&self.elements[succ].key) {
            Ordering::Equal => return Err(DynError::DuplicateKey),
            Ordering::Greater => Some(succ),
            Ordering::Less => {
                let first = self.elements[succ].run[0];
                self.store
                    .as_ref()
                    .expect("non-empty")
                    .prev_leaf(first)
                    .map(|p| self.owner[p])
            }
        };
        let before = self.total_cost();
        let phase = self.phase.as_mut().expect("non-empty");
        phase.total_weight += 1;
        phase.elements += 1;
        let q = quantize(1, phase);
        debug_assert_eq!(q, 1);
        let e = self.elements.insert(ElementRecord {
            key,
            weight: 1,
            quantized: q,
            run: Vec::new(),
            eps: None,
        });
        let anchor = pred.map(|p| *self.elements[p].run.last().expect("runs are non-empty"));
        let a = self.owner.insert(e);
        let b = self.owner.insert(e);
        let mut touched = Vec::new();
        let store = self.store.as_mut().expect("non-empty");
        store.insert_after(anchor, a, &mut touched);
        store.insert_after(Some(a), b, &mut touched);
        self.elements[e].run = vec![a, b];
        self.repair(&touched, Some(e));
        self.finish_growth();
        Ok(self.stats(d, before))
    }

    /// Subtracts one from the weight of `key`, which must be at least 2.
    pub fn decrement(&mut self, key: &K) -> Result<AccessStats, DynError> {
        let (e, d) = self.find(key)?;
        if self.elements[e].weight == 1 {
            return Err(DynError::UseDelete);
        }
        let before = self.total_cost();
        let phase = self.phase.as_mut().expect("non-empty");
        phase.total_weight -= 1;
        let rec = &mut self.elements[e];
        rec.weight -= 1;
        let q = quantize(rec.weight, phase);
        if q < rec.quantized {
            debug_assert_eq!(q + 1, rec.quantized);
            rec.quantized = q;
            let b = rec.run.pop().expect("run has 2w' leaves");
            let a = rec.run.pop().expect("run has 2w' leaves");
            self.unplace(e);
            let mut touched = Vec::new();
            let store = self.store.as_mut().expect("non-empty");
            store.delete(b, &mut touched);
            store.delete(a, &mut touched);
            self.owner.remove(a);
            self.owner.remove(b);
            self.repair(&touched, Some(e));
        }
        self.finish_shrink();
        Ok(self.stats(d, before))
    }

    /// Removes `key`, whose weight must be 1.
    pub fn delete_element(&mut self, key: &K) -> Result<AccessStats, DynError> {
        let (e, d) = self.find(key)?;
        let w = self.elements[e].weight;
        if w != 1 {
            return Err(DynError::WeightAboveOne(w));
        }
        let before = self.total_cost();
        if self.elements.len() == 1 {
            self.elements.remove(e);
            self.layout(&[], None);
            return Ok(self.stats(d, before));
        }
        let phase = self.phase.as_mut().expect("non-empty");
        phase.total_weight -= 1;
        phase.elements -= 1;
        self.unplace(e);
        let rec = self.elements.remove(e).expect("found above");
        let mut touched = Vec::new();
        let store = self.store.as_mut().expect("non-empty");
        for &p in rec.run.iter().rev() {
            store.delete(p, &mut touched);
        }
        for &p in &rec.run {
            self.owner.remove(p);
        }
        self.repair(&touched, None);
        self.finish_shrink();
        Ok(self.stats(d, before))
    }

    fn finish_growth(&mut self) {
        if self.phase.is_some_and(|p| phase_should_end(&p)) {
            self.rebuild();
        }
    }

    fn finish_shrink(&mut self) {
        if self.phase.is_some_and(|p| phase_should_shrink(&p)) {
            self.rebuild();
        }
    }

    fn stats(&self, depth: u32, before: Cost) -> AccessStats {
        let spent = self.total_cost() - before;
        AccessStats {
            comparisons: depth,
            epsilon_depth: depth,
            structural_ops: spent.relinks,
            work: spent.work,
            rebuilds: self.rebuilds,
        }
    }

    /// Recomputes the ε-node of `key` from its run and checks that every
    /// leaf below it belongs to the run.
    pub fn find_epsilon(&self, key: &K) -> Result<EpsilonInfo, DynError> {
        let (e, _) = self.find(key)?;
        let store = self.store.as_ref().expect("non-empty");
        let rec = &self.elements[e];
        let (r, _) = store.locate(&rec.run);
        let run: HashSet<PseudoId> = rec.run.iter().copied().collect();
        if !store.leaves_under(&r).iter().all(|p| run.contains(p)) {
            return Err(DynError::StructureCorrupt(
                "ε-node has a leaf outside its element's run".into(),
            ));
        }
        let (depth, height) = store.depth_of(&r);
        Ok(EpsilonInfo { depth, height })
    }

    /// Current ε placement of `key`, as maintained by the updates.
    pub fn epsilon(&self, key: &K) -> Result<EpsilonInfo, DynError> {
        let (e, _) = self.find(key)?;
        let r = self.elements[e].eps.as_ref().expect("placed");
        let (depth, height) = self.store.as_ref().expect("non-empty").depth_of(r);
        Ok(EpsilonInfo { depth, height })
    }

    /// Largest `depth(εᵢ) − min(log₂(W/wᵢ), log₂ n)` and the element that
    /// attains it.
    pub fn max_depth_excess(&self) -> Result<Option<(&K, u32, f64)>, AuditError> {
        let Some(store) = &self.store else {
            return Ok(None);
        };
        let big_w = self.total_weight() as f64;
        let log_n = (self.elements.len() as f64).log2();
        let mut worst: Option<(&K, u32, f64)> = None;
        for rec in self.elements.values() {
            let r = rec
                .eps
                .as_ref()
                .ok_or_else(|| AuditError::Structure("element without ε".into()))?;
            let (depth, _) = store.depth_of(r);
            let excess = depth as f64 - (big_w / rec.weight as f64).log2().min(log_n);
            if worst.is_none_or(|w| excess > w.2) {
                worst = Some((&rec.key, depth, excess));
            }
        }
        Ok(worst)
    }

    /// `depth(εᵢ) ≤ min(log₂(W/wᵢ), log₂ n) + c` for every element. Cheap
    /// enough to run after every operation.
    pub fn audit_depths(&self, c: f64) -> Result<(), AuditError>
    where
        K: std::fmt::Debug,
    {
        match self.max_depth_excess()? {
            Some((key, depth, excess)) if excess > c + 1e-9 => Err(AuditError::DepthBound {
                key: format!("{key:?}"),
                depth,
                bound: depth as f64 - excess + c,
            }),
            _ => Ok(()),
        }
    }

    /// Full audit: tree invariants, runs, quantization, ε placement, routing
    /// and the depth bound with additive constant `c`.
    pub fn audit(&self, c: f64) -> Result<(), AuditError>
    where
        K: std::fmt::Debug,
    {
        let bad = |m: String| Err(AuditError::Structure(m));
        let Some(store) = &self.store else {
            if !self.elements.is_empty() || !self.owner.is_empty() || self.phase.is_some() {
                return bad("empty store with live elements".into());
            }
            return Ok(());
        };
        store.check().map_err(AuditError::Structure)?;
        let phase = self.phase.expect("non-empty");
        let order = self.order();
        if order.len() != self.elements.len() {
            return bad(format!(
                "{} runs for {} elements",
                order.len(),
                self.elements.len()
            ));
        }
        if phase.elements != order.len() as u64 {
            return bad("phase element count is stale".into());
        }
        let total: u64 = self.elements.values().map(|r| r.weight).sum();
        if phase.total_weight != total {
            return bad("phase total weight is stale".into());
        }
        let leaves = store.leaves();
        if leaves.len() != self.owner.len() {
            return bad("owner index holds dead pseudo-leaves".into());
        }
        let mut at = 0usize;
        for (i, &e) in order.iter().enumerate() {
            let rec = &self.elements[e];
            if i > 0 && self.elements[order[i - 1]].key >= rec.key {
                return bad(format!("element {i}: keys out of order"));
            }
            if rec.quantized != quantize(rec.weight, &phase) {
                return bad(format!("element {i}: stale quantized weight"));
            }
            if rec.run.len() as u64 != 2 * rec.quantized {
                return bad(format!(
                    "element {i}: run length {} for w' = {}",
                    rec.run.len(),
                    rec.quantized
                ));
            }
            if leaves.get(at..at + rec.run.len()) != Some(&rec.run[..]) {
                return bad(format!("element {i}: run is not contiguous in leaf order"));
            }
            at += rec.run.len();
            let r = match &rec.eps {
                Some(r) => r,
                None => return bad(format!("element {i}: no ε")),
            };
            if store.mark_at(r) != Some(e) {
                return bad(format!("element {i}: ε does not carry its mark"));
            }
            if store.locate(&rec.run).0 != *r {
                return bad(format!("element {i}: ε is not the located node"));
            }
            let run: HashSet<PseudoId> = rec.run.iter().copied().collect();
            if !store.leaves_under(r).iter().all(|p| run.contains(p)) {
                return bad(format!("element {i}: ε has a leaf outside the run"));
            }
            if self.config.f == 0 && store.depth_of(r).1 != floor_log2(rec.quantized) {
                return bad(format!("element {i}: ε height differs from ⌊log w'⌋"));
            }
        }
        let (_, index) = store.flatten();
        let marks = index.keys().filter(|r| store.mark_at(r).is_some()).count();
        if marks != order.len() {
            return bad(format!("{marks} marked nodes for {} elements", order.len()));
        }
        for &e in &order {
            match self.descend_to(&self.elements[e].key) {
                Some((got, _)) if got == e => {}
                _ => {
                    return bad(format!(
                        "key {:?} does not route to its ε",
                        self.elements[e].key
                    ))
                }
            }
        }
        self.audit_depths(c)
    }
}

impl<K: Ord + Clone + Display> DynTree<K> {
    /// One line per element in key order:
    /// `key w w' run_start run_len eps_height eps_depth`, plus the top-level
    /// group holding ε (`-` for a macro-tree node) when decomposed.
    pub fn snapshot_dump(&self) -> String {
        let Some(store) = &self.store else {
            return String::new();
        };
        let mut out = String::new();
        let mut start = 0usize;
        for e in self.order() {
            let rec = &self.elements[e];
            let r = rec.eps.as_ref().expect("placed");
            let (depth, height) = store.depth_of(r);
            out.push_str(&format!(
                "{} {} {} {} {} {} {}",
                rec.key,
                rec.weight,
                rec.quantized,
                start,
                rec.run.len(),
                height,
                depth
            ));
            if self.config.f > 0 {
                match store.top_group_index(r) {
                    Some(g) => out.push_str(&format!(" {g}")),
                    None => out.push_str(" -"),
                }
            }
            out.push('\n');
            start += rec.run.len();
        }
        out
    }

    /// The combined tree in preorder, one `node <depth> <leaf_start>
    /// <leaf_count> <children...>` line per node (children as preorder
    /// indices), then one `eps <key> <index>` line per element.
    pub fn shape_dump(&self) -> String {
        let Some(store) = &self.store else {
            return String::new();
        };
        let (shape, index) = store.flatten();
        let mut out = String::new();
        for ShapeNode {
            depth,
            leaf_start,
            leaf_count,
            children,
        } in &shape
        {
            out.push_str(&format!("node {depth} {leaf_start} {leaf_count}"));
            for c in children {
                out.push_str(&format!(" {c}"));
            }
            out.push('\n');
        }
        for e in self.order() {
            let rec = &self.elements[e];
            let i = index[rec.eps.as_ref().expect("placed")];
            out.push_str(&format!("eps {} {i}\n", rec.key));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four_keys() -> DynTree<u32> {
        // tau = 12/6 = 2 so (2, 3, 8, 1) quantizes to (1, 2, 4, 1)
        DynTree::build_in_phase(
            vec![(1, 2), (2, 3), (3, 8), (4, 1)],
            HierConfig::flat(),
            12,
            6,
        )
        .unwrap()
    }

    #[test]
    fn four_key_layout() {
        let t = four_keys();
        t.audit(C_AUDIT).unwrap();
        assert_eq!(t.pseudo_leaf_count(), 16);
        let runs: Vec<usize> = t.elements().iter().map(|r| r.run_len()).collect();
        assert_eq!(runs, vec![2, 4, 8, 2]);
        let heights: Vec<u32> = (1..=4).map(|k| t.epsilon(&k).unwrap().height).collect();
        assert_eq!(heights, vec![0, 1, 2, 0]);
        assert_eq!(t.epsilon(&3).unwrap().depth, 2);
        assert_eq!(t.search(&3).unwrap().1.comparisons, 2);
        assert_eq!(
            t.snapshot_dump(),
            "1 2 1 0 2 0 4\n2 3 2 2 4 1 3\n3 8 4 6 8 2 2\n4 1 1 14 2 0 4\n"
        );
    }

    #[test]
    fn single_element_sits_below_root() {
        // w' = 1 gives two pseudo-leaves and a height-0 ε under the root
        let t = DynTree::build(vec![(7u32, 5)]).unwrap();
        assert_eq!(
            t.epsilon(&7).unwrap(),
            EpsilonInfo {
                depth: 1,
                height: 0
            }
        );
        assert_eq!(t.search(&7).unwrap().1.comparisons, 1);
        t.audit(1.0).unwrap();
        assert!(t.audit(0.0).is_err());
    }

    #[test]
    fn build_errors() {
        assert_eq!(
            DynTree::<u32>::build(vec![]).unwrap_err(),
            DynError::EmptyBuild
        );
        assert_eq!(
            DynTree::build(vec![(2u32, 1), (1, 1)]).unwrap_err(),
            DynError::KeyOrder(1)
        );
        assert_eq!(
            DynTree::build(vec![(1u32, 1), (1, 1)]).unwrap_err(),
            DynError::KeyOrder(1)
        );
        assert_eq!(
            DynTree::build(vec![(1u32, 0)]).unwrap_err(),
            DynError::ZeroWeight(0)
        );
        assert!(DynTree::<u32>::new(HierConfig { f: 9 }).is_err());
    }

    #[test]
    fn search_misses() {
        let t = four_keys();
        assert_eq!(t.search(&0).unwrap_err(), DynError::NotFound);
        assert_eq!(t.search(&5).unwrap_err(), DynError::NotFound);
        let e: DynTree<u32> = DynTree::new(HierConfig::flat()).unwrap();
        assert_eq!(e.search(&0).unwrap_err(), DynError::NotFound);
    }

    #[test]
    fn access_grows_run_at_boundary() {
        let mut t = four_keys();
        // tau = 2: w = 2 keeps w' = 1, w = 3 lifts it to 2
        t.access(&4).unwrap();
        assert_eq!(t.get(&4).unwrap().run_len(), 2);
        t.access(&4).unwrap();
        assert_eq!(t.get(&4).unwrap().run_len(), 4);
        t.audit(C_AUDIT).unwrap();
    }

    #[test]
    fn insert_then_delete_restores_leaves() {
        let mut t = four_keys();
        let before: Vec<(u32, u64, usize)> = t
            .elements()
            .iter()
            .map(|r| (r.key, r.weight, r.run_len()))
            .collect();
        t.insert_element(0).unwrap();
        t.audit(C_AUDIT).unwrap();
        assert_eq!(t.elements()[0].key, 0);
        t.delete_element(&0).unwrap();
        t.audit(C_AUDIT).unwrap();
        let after: Vec<(u32, u64, usize)> = t
            .elements()
            .iter()
            .map(|r| (r.key, r.weight, r.run_len()))
            .collect();
        assert_eq!(before, after);
        assert_eq!(t.rebuilds(), 0);
    }

    #[test]
    fn update_errors() {
        let mut t = four_keys();
        assert_eq!(t.insert_element(3).unwrap_err(), DynError::DuplicateKey);
        assert_eq!(t.decrement(&4).unwrap_err(), DynError::UseDelete);
        assert_eq!(
            t.delete_element(&3).unwrap_err(),
            DynError::WeightAboveOne(8)
        );
        assert_eq!(t.access(&9).unwrap_err(), DynError::NotFound);
    }

    #[test]
    fn empty_round_trip() {
        let mut t: DynTree<u32> = DynTree::new(HierConfig::default()).unwrap();
        t.insert_element(5).unwrap();
        assert_eq!(t.len(), 1);
        t.audit(1.0).unwrap();
        t.delete_element(&5).unwrap();
        assert!(t.is_empty());
        t.audit(0.0).unwrap();
    }

    #[test]
    fn phase_ends_on_doubling() {
        let mut t = DynTree::build(vec![(1u32, 4), (2, 4)]).unwrap();
        for _ in 0..7 {
            t.access(&1).unwrap();
        }
        assert_eq!(t.rebuilds(), 0);
        t.access(&1).unwrap();
        assert_eq!(t.rebuilds(), 1);
        assert_eq!(t.phase().unwrap().w0(), 16);
        t.audit(C_AUDIT).unwrap();
    }

    #[test]
    fn decrement_shrinks_run() {
        let mut t = four_keys();
        // key 3: w = 8, w' = 4; w = 7 -> ceil(3.5) = 4, w = 6 -> 3
        t.decrement(&3).unwrap();
        assert_eq!(t.get(&3).unwrap().run_len(), 8);
        t.decrement(&3).unwrap();
        assert_eq!(t.get(&3).unwrap().run_len(), 6);
        t.audit(C_AUDIT).unwrap();
    }

    #[test]
    fn hierarchical_mixed_ops_audit() {
        for f in 0..=2 {
            let mut t: DynTree<u32> = DynTree::new(HierConfig { f }).unwrap();
            let mut x = 12345u64;
            for _ in 0..3000 {
                x = x
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                let key = ((x >> 33) % 200) as u32;
                let op = (x >> 20) % 10;
                let r = match (t.get(&key).map(|r| r.weight()), op) {
                    (None, _) => t.insert_element(key).map(|_| ()),
                    (Some(1), 0) => t.delete_element(&key).map(|_| ()),
                    (Some(w), 1) if w > 1 => t.decrement(&key).map(|_| ()),
                    _ => t.access(&key).map(|_| ()),
                };
                r.unwrap();
                t.audit(12.0 + 4.0 * f as f64)
                    .unwrap_or_else(|err| panic!("f = {f}: {err}"));
            }
        }
    }
}
