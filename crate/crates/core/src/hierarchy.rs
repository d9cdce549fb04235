//! Macro-tree / mini-tree decomposition of the pseudo-leaf tree.
//!
//! Pseudo-leaves are cut into contiguous groups of `lo..hi` leaves
//! (`lo = ⌈log₂ n⌉²`, `hi = 2·lo`). Every group is stored in its own
//! mini-tree, and a k-neighbor macro-tree is built over the groups: the
//! j-th macro-leaf stands for the root of the j-th mini-tree. A mini-tree is
//! itself a [`Store`] one recursion level down, so `f` levels of bootstrapping
//! nest the same structure `f` times; `f = 0` is a single flat tree.
//!
//! Pseudo-leaf insertions touch one mini-tree. A group that reaches `hi`
//! leaves is split in two, which inserts one macro-leaf; a group that drops
//! below `lo` is merged with a neighbor (and re-split if that overflows).

use std::collections::HashMap;

use slotmap::{new_key_type, SecondaryMap, SlotMap};
use smallvec::SmallVec;

use crate::kneighbor::{Anchor, KTree, NodeId};
use crate::optimal_tree::{ElemId, PseudoId};

new_key_type! {
    pub struct GroupId;
}

/// Recursion depth of the decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HierConfig {
    pub f: u32,
}

impl Default for HierConfig {
    fn default() -> Self {
        HierConfig { f: 1 }
    }
}

impl HierConfig {
    pub const MAX_F: u32 = 3;

    pub fn flat() -> Self {
        HierConfig { f: 0 }
    }
}

pub(crate) fn ceil_log2(n: u64) -> u32 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros()
    }
}

pub(crate) fn floor_log2(n: u64) -> u32 {
    debug_assert!(n >= 1);
    63 - n.leading_zeros()
}

/// Sizing of one level, derived from the number of items it was built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Level {
    pub f: u32,
    pub n_hint: u64,
}

impl Level {
    pub fn k(&self) -> usize {
        ceil_log2(self.n_hint).max(2) as usize
    }

    /// Group size bounds `(lo, hi)`.
    pub fn bounds(&self) -> (u64, u64) {
        let l = ceil_log2(self.n_hint) as u64;
        let lo = (l * l).max(2);
        (lo, 2 * lo)
    }

    fn inner(&self) -> Level {
        Level {
            f: self.f - 1,
            n_hint: self.bounds().1,
        }
    }
}

/// Node operations spent: every touch (`work`) and the subset that changes
/// parent/child links or creates nodes (`relinks`).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Cost {
    pub work: u64,
    pub relinks: u64,
}

impl std::ops::Add for Cost {
    type Output = Cost;
    fn add(self, o: Cost) -> Cost {
        Cost {
            work: self.work + o.work,
            relinks: self.relinks + o.relinks,
        }
    }
}

impl std::ops::Sub for Cost {
    type Output = Cost;
    fn sub(self, o: Cost) -> Cost {
        Cost {
            work: self.work - o.work,
            relinks: self.relinks - o.relinks,
        }
    }
}

impl std::ops::AddAssign for Cost {
    fn add_assign(&mut self, o: Cost) {
        *self = *self + o;
    }
}

fn tree_cost<P: Copy, M: Copy + PartialEq>(t: &KTree<P, M>) -> Cost {
    Cost {
        work: t.work(),
        relinks: t.relinks(),
    }
}

/// Location of a node anywhere in the combined tree: the groups to descend
/// through, then a node of the flat tree or macro-tree reached there.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NodeRef {
    pub(crate) path: SmallVec<[GroupId; 2]>,
    pub(crate) node: NodeId,
}

impl NodeRef {
    fn leaf_of(node: NodeId) -> Self {
        NodeRef {
            path: SmallVec::new(),
            node,
        }
    }

    fn under(mut self, group: GroupId) -> Self {
        self.path.insert(0, group);
        self
    }
}

/// What a located node looks like from the top.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Located {
    pub depth: u32,
    /// Height inside the tree (flat, mini or macro) that owns the node.
    pub height: u32,
    /// Node operations spent locating it.
    pub cost: u64,
}

#[derive(Debug, Clone)]
pub(crate) struct Group {
    store: Store,
    macro_leaf: NodeId,
}

#[derive(Debug, Clone)]
pub(crate) struct Nested {
    level: Level,
    macro_tree: KTree<GroupId, ElemId>,
    groups: SlotMap<GroupId, Group>,
    group_of: SecondaryMap<PseudoId, GroupId>,
    acc: Cost,
}

#[derive(Debug, Clone)]
pub(crate) enum Store {
    Flat {
        tree: KTree<PseudoId, ElemId>,
        node_of: SecondaryMap<PseudoId, NodeId>,
    },
    Nested(Box<Nested>),
}

/// Direction taken at a node of the logical tree where both subtrees hold
/// logical leaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Turn {
    Left,
    Right,
}

/// One node of a flattened combined tree, in preorder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeNode {
    pub depth: u32,
    pub leaf_start: u64,
    pub leaf_count: u64,
    pub children: Vec<usize>,
}

impl Store {
    pub fn build(pids: &[PseudoId], level: Level) -> Store {
        assert!(!pids.is_empty());
        if level.f == 0 {
            let tree = KTree::bulk_build(pids.iter().copied(), level.k()).expect("non-empty");
            let mut node_of = SecondaryMap::new();
            for l in tree.leaves() {
                node_of.insert(tree.payload(l), l);
            }
            return Store::Flat { tree, node_of };
        }
        let (lo, hi) = level.bounds();
        let total = pids.len() as u64;
        // as few groups as possible: each starts near `lo` and can double
        let count = (total / lo).max(1);
        debug_assert!(total.div_ceil(count) < hi || count == 1);
        let inner = level.inner();
        let mut groups: SlotMap<GroupId, Group> = SlotMap::with_key();
        let mut group_of = SecondaryMap::new();
        let mut order = Vec::with_capacity(count as usize);
        let mut start = 0usize;
        for j in 0..count {
            let end = ((j + 1) * total / count) as usize;
            let chunk = &pids[start..end];
            let store = Store::build(chunk, inner);
            let gid = groups.insert(Group {
                store,
                macro_leaf: NodeId::default(),
            });
            for &p in chunk {
                group_of.insert(p, gid);
            }
            order.push(gid);
            start = end;
        }
        let macro_tree = KTree::bulk_build(order.iter().copied(), level.k()).expect("non-empty");
        for l in macro_tree.leaves() {
            groups[macro_tree.payload(l)].macro_leaf = l;
        }
        let acc = groups
            .values()
            .fold(Cost::default(), |a, g| a + g.store.cost());
        Store::Nested(Box::new(Nested {
            level,
            macro_tree,
            groups,
            group_of,
            acc,
        }))
    }

    /// Cumulative node operations spent in this store.
    pub fn cost(&self) -> Cost {
        match self {
            Store::Flat { tree, .. } => tree_cost(tree),
            Store::Nested(n) => tree_cost(&n.macro_tree) + n.acc,
        }
    }

    pub fn leaf_count(&self) -> u64 {
        match self {
            Store::Flat { tree, .. } => tree.leaf_count(),
            Store::Nested(n) => n.groups.values().map(|g| g.store.leaf_count()).sum(),
        }
    }

    pub fn root_mark(&self) -> Option<ElemId> {
        match self {
            Store::Flat { tree, .. } => tree.last_mark(tree.root()),
            Store::Nested(n) => n.macro_tree.last_mark(n.macro_tree.root()),
        }
    }

    /// Depth of the deepest pseudo-leaf.
    pub fn height(&self) -> u32 {
        match self {
            Store::Flat { tree, .. } => tree.height(),
            Store::Nested(n) => {
                n.macro_tree.height()
                    + n.groups
                        .values()
                        .map(|g| g.store.height())
                        .max()
                        .unwrap_or(0)
            }
        }
    }

    pub fn group_count(&self) -> usize {
        match self {
            Store::Flat { .. } => 1,
            Store::Nested(n) => n.groups.len(),
        }
    }

    pub fn leaves(&self) -> Vec<PseudoId> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<PseudoId>) {
        match self {
            Store::Flat { tree, .. } => out.extend(tree.payloads()),
            Store::Nested(n) => {
                for gid in n.macro_tree.payloads() {
                    n.groups[gid].store.collect_leaves(out);
                }
            }
        }
    }

    pub fn first_leaf(&self) -> PseudoId {
        match self {
            Store::Flat { tree, .. } => tree.payload(tree.first_leaf()),
            Store::Nested(n) => n.groups[n.macro_tree.payload(n.macro_tree.first_leaf())]
                .store
                .first_leaf(),
        }
    }

    pub fn last_leaf(&self) -> PseudoId {
        match self {
            Store::Flat { tree, .. } => tree.payload(tree.last_leaf()),
            Store::Nested(n) => n.groups[n.macro_tree.payload(n.macro_tree.last_leaf())]
                .store
                .last_leaf(),
        }
    }

    pub fn prev_leaf(&self, pid: PseudoId) -> Option<PseudoId> {
        match self {
            Store::Flat { tree, node_of } => {
                tree.left_neighbor(node_of[pid]).map(|l| tree.payload(l))
            }
            Store::Nested(n) => {
                let gid = n.group_of[pid];
                let g = &n.groups[gid];
                g.store.prev_leaf(pid).or_else(|| {
                    n.macro_tree
                        .left_neighbor(g.macro_leaf)
                        .map(|l| n.groups[n.macro_tree.payload(l)].store.last_leaf())
                })
            }
        }
    }

    pub fn next_leaf(&self, pid: PseudoId) -> Option<PseudoId> {
        match self {
            Store::Flat { tree, node_of } => {
                tree.right_neighbor(node_of[pid]).map(|l| tree.payload(l))
            }
            Store::Nested(n) => {
                let gid = n.group_of[pid];
                let g = &n.groups[gid];
                g.store.next_leaf(pid).or_else(|| {
                    n.macro_tree
                        .right_neighbor(g.macro_leaf)
                        .map(|l| n.groups[n.macro_tree.payload(l)].store.first_leaf())
                })
            }
        }
    }

    /// Inserts `pid` right after `anchor` (or before everything). Pseudo-leaves
    /// whose owners may need a fresh logical leaf are appended to `touched`.
    pub fn insert_after(
        &mut self,
        anchor: Option<PseudoId>,
        pid: PseudoId,
        touched: &mut Vec<PseudoId>,
    ) {
        if let Some(a) = anchor {
            touched.push(a);
            if let Some(b) = self.next_leaf(a) {
                touched.push(b);
            }
        } else {
            touched.push(self.first_leaf());
        }
        self.insert_inner(anchor, pid, touched);
    }

    fn insert_inner(
        &mut self,
        anchor: Option<PseudoId>,
        pid: PseudoId,
        touched: &mut Vec<PseudoId>,
    ) {
        match self {
            Store::Flat { tree, node_of } => {
                let at = match anchor {
                    Some(a) => Anchor::After(node_of[a]),
                    None => Anchor::BeforeAll,
                };
                let (x, report) = tree
                    .insert_leaf_after(at, pid)
                    .expect("anchor is a live leaf");
                node_of.insert(pid, x);
                for (l, r) in tree.affected_leaf_spans(&report) {
                    touched.push(tree.payload(l));
                    touched.push(tree.payload(r));
                }
            }
            Store::Nested(n) => {
                let gid = match anchor {
                    Some(a) => n.group_of[a],
                    None => n.macro_tree.payload(n.macro_tree.first_leaf()),
                };
                n.group_of.insert(pid, gid);
                let store = &mut n.groups[gid].store;
                let before = store.cost();
                store.insert_inner(anchor, pid, touched);
                n.acc += store.cost() - before;
                n.sync_ext(gid);
                if n.groups[gid].store.leaf_count() >= n.level.bounds().1 {
                    n.split(gid, touched);
                }
            }
        }
    }

    /// Removes `pid`. The store must keep at least one leaf.
    pub fn delete(&mut self, pid: PseudoId, touched: &mut Vec<PseudoId>) {
        touched.extend(self.prev_leaf(pid));
        touched.extend(self.next_leaf(pid));
        self.delete_inner(pid, touched);
    }

    fn delete_inner(&mut self, pid: PseudoId, touched: &mut Vec<PseudoId>) {
        match self {
            Store::Flat { tree, node_of } => {
                let leaf = node_of.remove(pid).expect("live pseudo-leaf");
                let report = tree.delete_leaf(leaf).expect("store keeps one leaf");
                for (l, r) in tree.affected_leaf_spans(&report) {
                    touched.push(tree.payload(l));
                    touched.push(tree.payload(r));
                }
            }
            Store::Nested(n) => {
                let gid = n.group_of.remove(pid).expect("live pseudo-leaf");
                if n.groups[gid].store.leaf_count() == 1 {
                    n.drop_group(gid, touched);
                    return;
                }
                let store = &mut n.groups[gid].store;
                let before = store.cost();
                store.delete_inner(pid, touched);
                n.acc += store.cost() - before;
                n.sync_ext(gid);
                let (lo, _) = n.level.bounds();
                if n.groups.len() > 1 && n.groups[gid].store.leaf_count() < lo {
                    n.merge(gid, touched);
                }
            }
        }
    }

    /// Finds a node all of whose leaves lie in the contiguous `run`, as
    /// shallow as the decomposition allows. In a flat tree this is the
    /// ancestor at height `⌊log₂ x⌋` of the x-th leaf, `x = ⌊(|run|+1)/2⌋`.
    pub fn locate(&self, run: &[PseudoId]) -> (NodeRef, Located) {
        debug_assert!(!run.is_empty());
        match self {
            Store::Flat { tree, node_of } => {
                let c = run.len() as u64;
                let x = c.div_ceil(2);
                let h = floor_log2(x).min(tree.height());
                let node = tree
                    .ancestor_at_height(node_of[run[x as usize - 1]], h)
                    .expect("height within tree");
                let found = Located {
                    depth: tree.height() - h,
                    height: h,
                    cost: h as u64 + 1,
                };
                (NodeRef::leaf_of(node), found)
            }
            Store::Nested(n) => n.locate(run),
        }
    }

    pub fn set_mark(&mut self, at: &NodeRef, mark: Option<ElemId>) {
        self.set_mark_at(&at.path, at.node, mark);
    }

    fn set_mark_at(&mut self, path: &[GroupId], node: NodeId, mark: Option<ElemId>) {
        match self {
            Store::Flat { tree, .. } => {
                debug_assert!(path.is_empty());
                tree.set_mark(node, mark);
            }
            Store::Nested(n) => match path.split_first() {
                None => n.macro_tree.set_mark(node, mark),
                Some((&gid, rest)) => {
                    let store = &mut n.groups[gid].store;
                    let before = store.cost();
                    store.set_mark_at(rest, node, mark);
                    n.acc += store.cost() - before;
                    n.sync_ext(gid);
                }
            },
        }
    }

    /// Clears the mark at `at` if the node still exists and carries `owner`.
    pub fn clear_mark_if(&mut self, at: &NodeRef, owner: ElemId) {
        if self.mark_at(at) == Some(owner) {
            self.set_mark(at, None);
        }
    }

    /// Current mark of a possibly stale reference.
    pub fn mark_at(&self, at: &NodeRef) -> Option<ElemId> {
        let mut store = self;
        for &gid in &at.path {
            match store {
                Store::Nested(n) => store = &n.groups.get(gid)?.store,
                Store::Flat { .. } => return None,
            }
        }
        match store {
            Store::Flat { tree, .. } => {
                tree.contains(at.node).then(|| tree.mark(at.node)).flatten()
            }
            Store::Nested(n) => n
                .macro_tree
                .contains(at.node)
                .then(|| n.macro_tree.mark(at.node))
                .flatten(),
        }
    }

    /// Pseudo-leaves under `at`, in order.
    pub fn leaves_under(&self, at: &NodeRef) -> Vec<PseudoId> {
        let mut store = self;
        for &gid in &at.path {
            match store {
                Store::Nested(n) => store = &n.groups[gid].store,
                Store::Flat { .. } => unreachable!("path deeper than the store"),
            }
        }
        let mut out = Vec::new();
        match store {
            Store::Flat { tree, .. } => collect_flat(tree, at.node, &mut out),
            Store::Nested(n) => {
                let mut gids = Vec::new();
                collect_flat(&n.macro_tree, at.node, &mut gids);
                for gid in gids {
                    n.groups[gid].store.collect_leaves(&mut out);
                }
            }
        }
        out
    }

    /// Depth of `at` in the combined tree and its height in its own tree.
    pub fn depth_of(&self, at: &NodeRef) -> (u32, u32) {
        let mut store = self;
        let mut depth = 0;
        for &gid in &at.path {
            match store {
                Store::Nested(n) => {
                    depth += n.macro_tree.height();
                    store = &n.groups[gid].store;
                }
                Store::Flat { .. } => unreachable!("path deeper than the store"),
            }
        }
        let tree_height = |h: u32, node_h: u32| (h - node_h, node_h);
        let (d, h) = match store {
            Store::Flat { tree, .. } => tree_height(tree.height(), tree.node_height(at.node)),
            Store::Nested(n) => {
                tree_height(n.macro_tree.height(), n.macro_tree.node_height(at.node))
            }
        };
        (depth + d, h)
    }

    /// Index (in macro order, top level) of the group holding `at`, or `None`
    /// for a macro-tree node or a flat store.
    pub fn top_group_index(&self, at: &NodeRef) -> Option<usize> {
        match self {
            Store::Flat { .. } => None,
            Store::Nested(n) => {
                let gid = *at.path.first()?;
                n.macro_tree.payloads().iter().position(|&g| g == gid)
            }
        }
    }

    /// Walks the logical tree from the root. `turn` is consulted only where
    /// both subtrees hold logical leaves and receives the rightmost logical
    /// leaf of the left subtree. Returns the logical leaf reached and its
    /// depth.
    pub fn descend<E>(
        &self,
        turn: &mut impl FnMut(ElemId) -> Result<Turn, E>,
    ) -> Result<Option<(ElemId, u32)>, E> {
        let mut depth = 0;
        let found = self.descend_from(&mut depth, turn)?;
        Ok(found.map(|e| (e, depth)))
    }

    fn descend_from<E>(
        &self,
        depth: &mut u32,
        turn: &mut impl FnMut(ElemId) -> Result<Turn, E>,
    ) -> Result<Option<ElemId>, E> {
        match self {
            Store::Flat { tree, .. } => Ok(walk(tree, depth, turn)?
                .map(|(_, m)| m)
                .and_then(|m| m.ok())),
            Store::Nested(n) => match walk(&n.macro_tree, depth, turn)? {
                None => Ok(None),
                Some((_, Ok(e))) => Ok(Some(e)),
                Some((leaf, Err(()))) => {
                    let gid = n.macro_tree.payload(leaf);
                    n.groups[gid].store.descend_from(depth, turn)
                }
            },
        }
    }

    /// Preorder shape of the combined tree plus the preorder index of every
    /// node reference that can hold a logical leaf.
    pub fn flatten(&self) -> (Vec<ShapeNode>, HashMap<NodeRef, usize>) {
        let mut shape = Vec::new();
        let mut index = HashMap::new();
        let mut next_leaf = 0u64;
        self.flatten_into(0, &[], &mut shape, &mut index, &mut next_leaf);
        (shape, index)
    }

    fn flatten_into(
        &self,
        depth: u32,
        prefix: &[GroupId],
        shape: &mut Vec<ShapeNode>,
        index: &mut HashMap<NodeRef, usize>,
        next_leaf: &mut u64,
    ) -> usize {
        match self {
            Store::Flat { tree, .. } => flatten_tree(
                tree,
                tree.root(),
                depth,
                prefix,
                shape,
                index,
                next_leaf,
                &mut |_, _, _, _, _| None,
            ),
            Store::Nested(n) => flatten_tree(
                &n.macro_tree,
                n.macro_tree.root(),
                depth,
                prefix,
                shape,
                index,
                next_leaf,
                &mut |leaf, depth, shape, index, next_leaf| {
                    let gid = n.macro_tree.payload(leaf);
                    let mut p: SmallVec<[GroupId; 2]> = prefix.iter().copied().collect();
                    p.push(gid);
                    Some(
                        n.groups[gid]
                            .store
                            .flatten_into(depth, &p, shape, index, next_leaf),
                    )
                },
            ),
        }
    }

    /// Structural audit of every tree plus the group discipline.
    pub fn check(&self) -> Result<(), String> {
        match self {
            Store::Flat { tree, node_of } => {
                tree.check_invariants().map_err(|v| v.to_string())?;
                if node_of.len() as u64 != tree.leaf_count() {
                    return Err("pseudo-leaf index size differs from leaf count".into());
                }
                for l in tree.leaves() {
                    if node_of.get(tree.payload(l)) != Some(&l) {
                        return Err("pseudo-leaf index is stale".into());
                    }
                }
                Ok(())
            }
            Store::Nested(n) => n.check(),
        }
    }
}

/// Follows a tree from its root while no mark is hit. Stops at a marked node
/// (`Ok(mark)`) or at an unmarked leaf (`Err(())`, the caller descends into
/// whatever hangs below it).
#[allow(clippy::type_complexity)]
fn walk<P: Copy, E>(
    tree: &KTree<P, ElemId>,
    depth: &mut u32,
    turn: &mut impl FnMut(ElemId) -> Result<Turn, E>,
) -> Result<Option<(NodeId, Result<ElemId, ()>)>, E> {
    let mut cur = tree.root();
    if tree.last_mark(cur).is_none() {
        return Ok(None);
    }
    loop {
        if let Some(m) = tree.mark(cur) {
            return Ok(Some((cur, Ok(m))));
        }
        match tree.children(cur) {
            [] => return Ok(Some((cur, Err(())))),
            [only] => cur = *only,
            [left, right] => {
                cur = match (tree.last_mark(*left), tree.last_mark(*right)) {
                    (None, _) => *right,
                    (_, None) => *left,
                    (Some(m), Some(_)) => match turn(m)? {
                        Turn::Left => *left,
                        Turn::Right => *right,
                    },
                }
            }
            _ => unreachable!("nodes have at most two children between updates"),
        }
        *depth += 1;
    }
}

fn collect_flat<P: Copy, M: Copy + PartialEq>(tree: &KTree<P, M>, node: NodeId, out: &mut Vec<P>) {
    let first = tree.leftmost_leaf(node);
    let last = tree.rightmost_leaf(node);
    let mut cur = first;
    loop {
        out.push(tree.payload(cur));
        if cur == last {
            break;
        }
        cur = tree.right_neighbor(cur).expect("span is contiguous");
    }
}

type Expand<'a> = dyn FnMut(NodeId, u32, &mut Vec<ShapeNode>, &mut HashMap<NodeRef, usize>, &mut u64) -> Option<usize>
    + 'a;

#[allow(clippy::too_many_arguments)]
fn flatten_tree<P: Copy>(
    tree: &KTree<P, ElemId>,
    node: NodeId,
    depth: u32,
    prefix: &[GroupId],
    shape: &mut Vec<ShapeNode>,
    index: &mut HashMap<NodeRef, usize>,
    next_leaf: &mut u64,
    expand: &mut Expand<'_>,
) -> usize {
    let here = NodeRef {
        path: prefix.iter().copied().collect(),
        node,
    };
    if tree.children(node).is_empty() {
        if let Some(i) = expand(node, depth, shape, index, next_leaf) {
            index.insert(here, i);
            return i;
        }
        let i = shape.len();
        shape.push(ShapeNode {
            depth,
            leaf_start: *next_leaf,
            leaf_count: 1,
            children: Vec::new(),
        });
        *next_leaf += 1;
        index.insert(here, i);
        return i;
    }
    let i = shape.len();
    let start = *next_leaf;
    shape.push(ShapeNode {
        depth,
        leaf_start: start,
        leaf_count: 0,
        children: Vec::new(),
    });
    index.insert(here, i);
    let kids: Vec<NodeId> = tree.children(node).to_vec();
    let mut child_ix = Vec::with_capacity(kids.len());
    for c in kids {
        child_ix.push(flatten_tree(
            tree,
            c,
            depth + 1,
            prefix,
            shape,
            index,
            next_leaf,
            expand,
        ));
    }
    shape[i].children = child_ix;
    shape[i].leaf_count = *next_leaf - start;
    i
}

impl Nested {
    fn sync_ext(&mut self, gid: GroupId) {
        let g = &self.groups[gid];
        let ext = g.store.root_mark();
        self.macro_tree.set_ext(g.macro_leaf, ext);
    }

    fn macro_touched(&self, report: &crate::kneighbor::MovedReport, touched: &mut Vec<PseudoId>) {
        for (l, r) in self.macro_tree.affected_leaf_spans(report) {
            touched.push(self.groups[self.macro_tree.payload(l)].store.first_leaf());
            touched.push(self.groups[self.macro_tree.payload(r)].store.last_leaf());
        }
    }

    fn rebuild_group(&mut self, gid: GroupId, pids: &[PseudoId]) {
        let store = Store::build(pids, self.level.inner());
        self.acc += store.cost();
        for &p in pids {
            self.group_of.insert(p, gid);
        }
        self.groups[gid].store = store;
        self.sync_ext(gid);
    }

    fn split(&mut self, gid: GroupId, touched: &mut Vec<PseudoId>) {
        let leaves = self.groups[gid].store.leaves();
        touched.extend_from_slice(&leaves);
        let (left, right) = leaves.split_at(leaves.len() / 2);
        self.rebuild_group(gid, left);
        let placeholder = Store::build(&right[..1], Level { f: 0, n_hint: 1 });
        let new = self.groups.insert(Group {
            store: placeholder,
            macro_leaf: NodeId::default(),
        });
        let (leaf, report) = self
            .macro_tree
            .insert_leaf_after(Anchor::After(self.groups[gid].macro_leaf), new)
            .expect("group leaf is live");
        self.groups[new].macro_leaf = leaf;
        self.rebuild_group(new, right);
        self.macro_touched(&report, touched);
    }

    fn merge(&mut self, gid: GroupId, touched: &mut Vec<PseudoId>) {
        let leaf = self.groups[gid].macro_leaf;
        let (a, b) = match self.macro_tree.right_neighbor(leaf) {
            Some(r) => (gid, self.macro_tree.payload(r)),
            None => {
                let l = self
                    .macro_tree
                    .left_neighbor(leaf)
                    .expect("more than one group");
                (self.macro_tree.payload(l), gid)
            }
        };
        let mut leaves = self.groups[a].store.leaves();
        leaves.extend(self.groups[b].store.leaves());
        touched.extend_from_slice(&leaves);
        self.remove_macro_leaf(b, touched);
        self.rebuild_group(a, &leaves);
        if leaves.len() as u64 >= self.level.bounds().1 {
            self.split(a, touched);
        }
    }

    fn drop_group(&mut self, gid: GroupId, touched: &mut Vec<PseudoId>) {
        self.remove_macro_leaf(gid, touched);
    }

    fn remove_macro_leaf(&mut self, gid: GroupId, touched: &mut Vec<PseudoId>) {
        let leaf = self.groups[gid].macro_leaf;
        let report = self
            .macro_tree
            .delete_leaf(leaf)
            .expect("more than one group");
        self.groups.remove(gid);
        self.macro_touched(&report, touched);
    }

    fn locate(&self, run: &[PseudoId]) -> (NodeRef, Located) {
        let first = self.group_of[run[0]];
        let last = self.group_of[*run.last().unwrap()];
        let macro_h = self.macro_tree.height();
        let size = |g: GroupId| self.groups[g].store.leaf_count() as usize;
        let inner = |g: GroupId, part: &[PseudoId]| {
            let (r, mut loc) = self.groups[g].store.locate(part);
            loc.depth += macro_h;
            (r.under(g), loc)
        };
        if first == last {
            if run.len() == size(first) {
                let loc = Located {
                    depth: macro_h,
                    height: 0,
                    cost: 1,
                };
                return (NodeRef::leaf_of(self.groups[first].macro_leaf), loc);
            }
            return inner(first, run);
        }
        let a = run.partition_point(|p| self.group_of[*p] == first);
        let b = run.partition_point(|p| self.group_of[*p] != last);
        let first_full = a == size(first);
        let last_full = run.len() - b == size(last);
        let mut cost = 2 * (usize::BITS - run.len().leading_zeros()) as u64;

        // macro-leaves of fully owned groups
        let mut full = Vec::new();
        let mut cur = if first_full {
            Some(self.groups[first].macro_leaf)
        } else {
            self.macro_tree
                .right_neighbor(self.groups[first].macro_leaf)
        };
        let stop = self.groups[last].macro_leaf;
        while let Some(l) = cur {
            if l == stop {
                if last_full {
                    full.push(l);
                }
                break;
            }
            full.push(l);
            cur = self.macro_tree.right_neighbor(l);
        }
        cost += full.len() as u64;

        let mut best: Option<(NodeRef, Located)> = None;
        let mut consider = |cand: (NodeRef, Located)| {
            if best.as_ref().is_none_or(|b| cand.1.depth < b.1.depth) {
                best = Some(cand);
            }
        };
        if !full.is_empty() {
            let c = full.len() as u64;
            let x = c.div_ceil(2);
            let h = floor_log2(x).min(macro_h);
            let node = self
                .macro_tree
                .ancestor_at_height(full[x as usize - 1], h)
                .expect("height within macro-tree");
            cost += h as u64;
            consider((
                NodeRef::leaf_of(node),
                Located {
                    depth: macro_h - h,
                    height: h,
                    cost: 0,
                },
            ));
        }
        if !first_full {
            let c = inner(first, &run[..a]);
            cost += c.1.cost;
            consider(c);
        }
        if !last_full {
            let c = inner(last, &run[b..]);
            cost += c.1.cost;
            consider(c);
        }
        let (r, mut loc) = best.expect("a run spanning two groups has a candidate");
        loc.cost = cost;
        (r, loc)
    }

    fn check(&self) -> Result<(), String> {
        self.macro_tree
            .check_invariants()
            .map_err(|v| format!("macro-tree: {v}"))?;
        let (lo, hi) = self.level.bounds();
        let order = self.macro_tree.payloads();
        if order.len() != self.groups.len() {
            return Err("macro-tree leaves differ from the group set".into());
        }
        let mut total = 0usize;
        for (i, &gid) in order.iter().enumerate() {
            let g = self
                .groups
                .get(gid)
                .ok_or("macro-leaf names a dead group")?;
            if self.macro_tree.payload(g.macro_leaf) != gid {
                return Err(format!("group {i}: macro-leaf handle is stale"));
            }
            g.store.check().map_err(|e| format!("group {i}: {e}"))?;
            let size = g.store.leaf_count();
            if size >= hi || (order.len() > 1 && size < lo) {
                return Err(format!("group {i}: size {size} outside [{lo}, {hi})"));
            }
            let leaves = g.store.leaves();
            total += leaves.len();
            if leaves.iter().any(|p| self.group_of.get(*p) != Some(&gid)) {
                return Err(format!("group {i}: group index is stale"));
            }
        }
        if total != self.group_of.len() {
            return Err("group index holds dead pseudo-leaves".into());
        }
        Ok(())
    }
}
