//! Balanced leaf tree with all leaves at one depth (a k-neighbor tree).
//!
//! Every internal node has one or two children. A node with a single child
//! (a *1-node*) must have a right neighbor on its level, and its `min(k, l)`
//! nearest right neighbors must all have two children. Insertion either
//! shifts children towards a nearby 1-node (a single `Move`) or splits the
//! overflowing node and recurses upwards; deletion is the mirror image.
//!
//! Nodes carry two maintained aggregates: `leaf_count`, and `last_mark`, the
//! mark of the rightmost marked node in the subtree. Owners use marks to tag
//! the logical leaves of the search tree built on top of this one.

use std::fmt::Write as _;

use slotmap::{new_key_type, SlotMap};
use smallvec::SmallVec;
use thiserror::Error;

new_key_type! {
    /// Stable identity of a tree node. Survives every relink.
    pub struct NodeId;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("cannot build a tree from an empty leaf sequence")]
    EmptyBuild,
    #[error("handle does not refer to a live leaf of this tree")]
    InvalidHandle,
    #[error("deleting the last leaf would leave the tree empty")]
    WouldEmpty,
    #[error("height {requested} is above the root (tree height {height})")]
    OutOfRange { requested: u32, height: u32 },
}

/// Where a new leaf goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Anchor {
    BeforeAll,
    After(NodeId),
}

/// One parent change. `old_parent == None` marks a freshly created node,
/// `new_parent == None` a freed node (or a node that became the root).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Moved {
    pub node: NodeId,
    pub old_parent: Option<NodeId>,
    pub new_parent: Option<NodeId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MovedReport {
    pub moved: Vec<Moved>,
    /// Number of `Move` procedures executed.
    pub moves: u32,
}

impl MovedReport {
    pub fn is_empty(&self) -> bool {
        self.moved.is_empty()
    }

    fn push(&mut self, node: NodeId, old_parent: Option<NodeId>, new_parent: Option<NodeId>) {
        self.moved.push(Moved {
            node,
            old_parent,
            new_parent,
        });
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub condition: String,
    /// Child indices from the root down to the offending node.
    pub path: Vec<usize>,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} at path {:?}", self.condition, self.path)
    }
}

#[derive(Debug, Clone)]
struct Node<P, M> {
    parent: Option<NodeId>,
    children: SmallVec<[NodeId; 3]>,
    left: Option<NodeId>,
    right: Option<NodeId>,
    height: u32,
    leaf_count: u64,
    payload: Option<P>,
    mark: Option<M>,
    ext: Option<M>,
    last_mark: Option<M>,
}

impl<P, M> Node<P, M> {
    fn new(height: u32, payload: Option<P>) -> Self {
        Node {
            parent: None,
            children: SmallVec::new(),
            left: None,
            right: None,
            height,
            leaf_count: u64::from(height == 0),
            payload,
            mark: None,
            ext: None,
            last_mark: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Left,
    Right,
}

/// A k-neighbor tree over leaves carrying payload `P`, with optional node
/// marks of type `M`.
#[derive(Debug, Clone)]
pub struct KTree<P, M = ()> {
    nodes: SlotMap<NodeId, Node<P, M>>,
    root: NodeId,
    k: usize,
    moves: u64,
    work: u64,
    relinks: u64,
}

/// `⌊log n / log(2 − 1/(k+1)) + 1⌋`, the height ceiling of any k-neighbor
/// tree with `n_leaves` leaves.
pub fn height_bound(n_leaves: u64, k: usize) -> u32 {
    assert!(n_leaves >= 1 && k >= 1);
    if n_leaves == 1 {
        return 1;
    }
    // base = (2k+1)/(k+1); find the largest j with base^j <= n.
    let num = 2 * k as u128 + 1;
    let den = k as u128 + 1;
    let base = num as f64 / den as f64;
    let est = ((n_leaves as f64).log2() / base.log2()).floor().max(0.0) as u32;
    let fits = |j: u32| -> bool {
        // base^j <= n  <=>  num^j <= n * den^j
        let mut lhs: u128 = 1;
        let mut rhs: u128 = n_leaves as u128;
        for _ in 0..j {
            match (lhs.checked_mul(num), rhs.checked_mul(den)) {
                (Some(a), Some(b)) => {
                    lhs = a;
                    rhs = b;
                }
                _ => return j as f64 * base.log2() <= (n_leaves as f64).log2(),
            }
        }
        lhs <= rhs
    };
    let mut j = est;
    while j > 0 && !fits(j) {
        j -= 1;
    }
    while fits(j + 1) {
        j += 1;
    }
    j + 1
}

impl<P: Copy, M: Copy + PartialEq> KTree<P, M> {
    /// Builds a tree over `payloads` in order. Every level is paired off
    /// left to right; when a level has an odd number of nodes, its leftmost
    /// parent takes a single child, so the tree has height `⌈log₂ count⌉`.
    pub fn bulk_build<I>(payloads: I, k: usize) -> Result<Self, TreeError>
    where
        I: IntoIterator<Item = P>,
    {
        assert!(k >= 1, "neighbor radius must be positive");
        let mut nodes = SlotMap::with_key();
        let mut level: Vec<NodeId> = payloads
            .into_iter()
            .map(|p| nodes.insert(Node::new(0, Some(p))))
            .collect();
        if level.is_empty() {
            return Err(TreeError::EmptyBuild);
        }
        let mut work = level.len() as u64;
        link_level(&mut nodes, &level);
        let mut height = 0;
        while level.len() > 1 {
            height += 1;
            let mut parents = Vec::with_capacity(level.len().div_ceil(2));
            let mut rest: &[NodeId] = &level;
            if level.len() % 2 == 1 {
                parents.push(make_parent(&mut nodes, height, &rest[..1]));
                rest = &rest[1..];
            }
            for pair in rest.chunks(2) {
                parents.push(make_parent(&mut nodes, height, pair));
            }
            work += parents.len() as u64;
            link_level(&mut nodes, &parents);
            level = parents;
        }
        Ok(KTree {
            nodes,
            root: level[0],
            k,
            moves: 0,
            work,
            relinks: work,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn height(&self) -> u32 {
        self.nodes[self.root].height
    }

    pub fn leaf_count(&self) -> u64 {
        self.nodes[self.root].leaf_count
    }

    /// Cumulative number of `Move` procedures executed.
    pub fn move_count(&self) -> u64 {
        self.moves
    }

    /// Cumulative node operations (relinks, node creations and aggregate
    /// recomputations). Callers diff it around an update.
    pub fn work(&self) -> u64 {
        self.work
    }

    /// Cumulative parent/child link changes and node creations.
    pub fn relinks(&self) -> u64 {
        self.relinks
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.nodes.contains_key(node)
    }

    pub fn is_leaf(&self, node: NodeId) -> bool {
        self.nodes.get(node).is_some_and(|n| n.height == 0)
    }

    pub fn node_height(&self, node: NodeId) -> u32 {
        self.nodes[node].height
    }

    /// Depth below the root; all leaves share the same depth.
    pub fn depth(&self, node: NodeId) -> u32 {
        self.height() - self.nodes[node].height
    }

    pub fn parent(&self, node: NodeId) -> Option<NodeId> {
        self.nodes[node].parent
    }

    pub fn children(&self, node: NodeId) -> &[NodeId] {
        &self.nodes[node].children
    }

    pub fn node_leaf_count(&self, node: NodeId) -> u64 {
        self.nodes[node].leaf_count
    }

    pub fn payload(&self, leaf: NodeId) -> P {
        self.nodes[leaf]
            .payload
            .expect("payload requested for an internal node")
    }

    pub fn mark(&self, node: NodeId) -> Option<M> {
        self.nodes[node].mark
    }

    /// Mark of the rightmost marked node in the subtree of `node`.
    pub fn last_mark(&self, node: NodeId) -> Option<M> {
        self.nodes[node].last_mark
    }

    pub fn right_neighbor(&self, node: NodeId) -> Option<NodeId> {
        self.nodes[node].right
    }

    pub fn left_neighbor(&self, node: NodeId) -> Option<NodeId> {
        self.nodes[node].left
    }

    pub fn first_leaf(&self) -> NodeId {
        self.leftmost_leaf(self.root)
    }

    pub fn last_leaf(&self) -> NodeId {
        self.rightmost_leaf(self.root)
    }

    pub fn leftmost_leaf(&self, mut node: NodeId) -> NodeId {
        while let Some(&c) = self.nodes[node].children.first() {
            node = c;
        }
        node
    }

    pub fn rightmost_leaf(&self, mut node: NodeId) -> NodeId {
        while let Some(&c) = self.nodes[node].children.last() {
            node = c;
        }
        node
    }

    /// Leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.leaf_count() as usize);
        let mut cur = Some(self.first_leaf());
        while let Some(c) = cur {
            out.push(c);
            cur = self.nodes[c].right;
        }
        out
    }

    pub fn payloads(&self) -> Vec<P> {
        self.leaves().into_iter().map(|l| self.payload(l)).collect()
    }

    pub fn ancestor_at_height(&self, leaf: NodeId, h: u32) -> Result<NodeId, TreeError> {
        let node = self.nodes.get(leaf).ok_or(TreeError::InvalidHandle)?;
        if node.height != 0 {
            return Err(TreeError::InvalidHandle);
        }
        if h > self.height() {
            return Err(TreeError::OutOfRange {
                requested: h,
                height: self.height(),
            });
        }
        let mut cur = leaf;
        for _ in 0..h {
            cur = self.nodes[cur].parent.expect("non-root node has a parent");
        }
        Ok(cur)
    }

    /// Sets (or clears) the mark of `node` and refreshes aggregates above it.
    pub fn set_mark(&mut self, node: NodeId, mark: Option<M>) {
        self.nodes[node].mark = mark;
        self.refresh(vec![node]);
    }

    /// Sets the aggregate a leaf contributes on behalf of whatever hangs
    /// below it (a nested tree, for instance).
    pub fn set_ext(&mut self, leaf: NodeId, ext: Option<M>) {
        debug_assert_eq!(self.nodes[leaf].height, 0);
        self.nodes[leaf].ext = ext;
        self.refresh(vec![leaf]);
    }

    pub fn insert_leaf_after(
        &mut self,
        anchor: Anchor,
        payload: P,
    ) -> Result<(NodeId, MovedReport), TreeError> {
        let mut report = MovedReport::default();
        let x = self.nodes.insert(Node::new(0, Some(payload)));
        self.work += 1;
        self.relinks += 1;
        let (left, parent, index) = match anchor {
            Anchor::After(a) => {
                if !self.is_leaf(a) {
                    self.nodes.remove(x);
                    return Err(TreeError::InvalidHandle);
                }
                match self.nodes[a].parent {
                    Some(p) => {
                        let i = self.child_index(p, a) + 1;
                        (Some(a), Some(p), i)
                    }
                    None => (Some(a), None, 1),
                }
            }
            Anchor::BeforeAll => {
                let first = self.first_leaf();
                (None, self.nodes[first].parent, 0)
            }
        };
        // level links
        let right = match left {
            Some(a) => self.nodes[a].right,
            None => Some(self.first_leaf()),
        };
        self.nodes[x].left = left;
        self.nodes[x].right = right;
        if let Some(l) = left {
            self.nodes[l].right = Some(x);
        }
        if let Some(r) = right {
            self.nodes[r].left = Some(x);
        }

        let mut dirty = Vec::new();
        match parent {
            None => {
                // single-leaf tree: grow a root above both leaves
                let old = self.root;
                let kids: [NodeId; 2] = if index == 0 { [x, old] } else { [old, x] };
                let r = self.nodes.insert(Node::new(1, None));
                self.relinks += 1;
                for c in kids {
                    self.attach(r, c, None);
                    report.push(c, None, Some(r));
                }
                self.root = r;
                dirty.push(r);
            }
            Some(p) => {
                self.attach(p, x, Some(index));
                report.push(x, None, Some(p));
                self.fix_overflow(p, &mut report, &mut dirty);
            }
        }
        self.refresh(dirty);
        Ok((x, report))
    }

    pub fn delete_leaf(&mut self, leaf: NodeId) -> Result<MovedReport, TreeError> {
        if !self.is_leaf(leaf) {
            return Err(TreeError::InvalidHandle);
        }
        if leaf == self.root {
            return Err(TreeError::WouldEmpty);
        }
        let mut report = MovedReport::default();
        let mut dirty = Vec::new();
        let p = self.nodes[leaf].parent.expect("non-root leaf has a parent");
        self.free_node(leaf, &mut report);
        dirty.push(p);
        self.fix_underflow(p, &mut report, &mut dirty);
        self.refresh(dirty);
        Ok(report)
    }

    /// Pairs of (leftmost, rightmost) leaves spanning every live node the
    /// report moved: exactly the leaves whose ancestor chains changed.
    pub fn affected_leaf_spans(&self, report: &MovedReport) -> Vec<(NodeId, NodeId)> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for m in &report.moved {
            if m.new_parent.is_none() && m.node != self.root {
                continue;
            }
            if !self.nodes.contains_key(m.node) || !seen.insert(m.node) {
                continue;
            }
            if self.nodes[m.node].leaf_count == 0 {
                continue;
            }
            out.push((self.leftmost_leaf(m.node), self.rightmost_leaf(m.node)));
        }
        out
    }

    /// Full structural audit; returns the first violation found.
    pub fn check_invariants(&self) -> Result<(), Violation> {
        let root = &self.nodes[self.root];
        if root.parent.is_some() {
            return Err(violation("root has a parent", vec![]));
        }
        // DFS collecting levels left to right; paths are rebuilt only on failure.
        let mut levels: Vec<Vec<NodeId>> = vec![Vec::new(); root.height as usize + 1];
        let mut stack = vec![self.root];
        let mut reached = 0usize;
        while let Some(id) = stack.pop() {
            reached += 1;
            let n = &self.nodes[id];
            if n.height == 0 {
                if !n.children.is_empty() || n.payload.is_none() {
                    return Err(violation(
                        "leaf has children or lacks a payload",
                        self.path_of(id),
                    ));
                }
                if n.leaf_count != 1 {
                    return Err(violation(
                        "leaf_count of a leaf must be 1",
                        self.path_of(id),
                    ));
                }
                let want = n.mark.or(n.ext);
                if n.last_mark != want {
                    return Err(violation("stale mark aggregate", self.path_of(id)));
                }
            } else {
                if n.children.is_empty() || n.children.len() > 2 {
                    return Err(violation(
                        "internal node must have 1 or 2 children",
                        self.path_of(id),
                    ));
                }
                let mut sum = 0;
                for &c in &n.children {
                    let cn = &self.nodes[c];
                    if cn.parent != Some(id) {
                        return Err(violation(
                            "child does not point back to parent",
                            self.path_of(id),
                        ));
                    }
                    if cn.height + 1 != n.height {
                        return Err(violation("leaves are not at equal depth", self.path_of(id)));
                    }
                    sum += cn.leaf_count;
                }
                if sum != n.leaf_count {
                    return Err(violation(
                        "leaf_count differs from sum over children",
                        self.path_of(id),
                    ));
                }
                let want = n.mark.or_else(|| {
                    n.children
                        .iter()
                        .rev()
                        .find_map(|&c| self.nodes[c].last_mark)
                });
                if n.last_mark != want {
                    return Err(violation("stale mark aggregate", self.path_of(id)));
                }
                stack.extend(n.children.iter().rev());
            }
            levels[(root.height - n.height) as usize].push(id);
        }
        if reached != self.nodes.len() {
            return Err(violation("unreachable nodes are still allocated", vec![]));
        }
        for level in &levels {
            for (i, &id) in level.iter().enumerate() {
                let n = &self.nodes[id];
                let want_left = i.checked_sub(1).map(|j| level[j]);
                let want_right = level.get(i + 1).copied();
                if n.left != want_left || n.right != want_right {
                    return Err(violation(
                        "level links disagree with subtree order",
                        self.path_of(id),
                    ));
                }
                if n.height > 0 && n.children.len() == 1 {
                    let l = level.len() - i - 1;
                    if l == 0 {
                        return Err(violation(
                            "condition (2): a 1-node has no right neighbor",
                            self.path_of(id),
                        ));
                    }
                    let span = self.k.min(l);
                    if level[i + 1..=i + span]
                        .iter()
                        .any(|&q| self.nodes[q].children.len() != 2)
                    {
                        return Err(violation(
                            "condition (3): a 1-node has a 1-node among its k nearest right neighbors",
                            self.path_of(id),
                        ));
                    }
                }
            }
        }
        let bound = height_bound(root.leaf_count, self.k);
        if root.height > bound {
            return Err(violation(
                &format!("height {} exceeds bound {}", root.height, bound),
                vec![],
            ));
        }
        Ok(())
    }

    /// One line per level, root first: `(leaf_count,children)` tuples.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let mut level = vec![self.root];
        while !level.is_empty() {
            let parts: Vec<String> = level
                .iter()
                .map(|&id| {
                    let n = &self.nodes[id];
                    format!("({},{})", n.leaf_count, n.children.len())
                })
                .collect();
            let _ = writeln!(out, "{}", parts.join(" "));
            level = level
                .iter()
                .flat_map(|&id| self.nodes[id].children.iter().copied())
                .collect();
        }
        out
    }

    /// Child-to-parent map over all live nodes.
    pub fn parent_map(&self) -> std::collections::HashMap<NodeId, Option<NodeId>> {
        self.nodes.iter().map(|(id, n)| (id, n.parent)).collect()
    }

    // ---- internals ----

    /// Child indices from the root down to `node`, following parent links.
    fn path_of(&self, mut node: NodeId) -> Vec<usize> {
        let mut path = Vec::new();
        while let Some(p) = self.nodes[node].parent {
            if path.len() > self.nodes[self.root].height as usize {
                break;
            }
            path.push(
                self.nodes[p]
                    .children
                    .iter()
                    .position(|&c| c == node)
                    .unwrap_or(usize::MAX),
            );
            node = p;
        }
        path.reverse();
        path
    }

    fn child_index(&self, parent: NodeId, child: NodeId) -> usize {
        self.nodes[parent]
            .children
            .iter()
            .position(|&c| c == child)
            .expect("child is listed under its parent")
    }

    fn attach(&mut self, parent: NodeId, child: NodeId, index: Option<usize>) {
        let kids = &mut self.nodes[parent].children;
        match index {
            Some(i) => kids.insert(i, child),
            None => kids.push(child),
        }
        self.nodes[child].parent = Some(parent);
        self.work += 1;
        self.relinks += 1;
    }

    fn detach(&mut self, parent: NodeId, child: NodeId) {
        let i = self.child_index(parent, child);
        self.nodes[parent].children.remove(i);
        self.nodes[child].parent = None;
        self.work += 1;
        self.relinks += 1;
    }

    /// Unlinks a childless node from its level and its parent and frees it.
    fn free_node(&mut self, id: NodeId, report: &mut MovedReport) {
        let (left, right, parent) = {
            let n = &self.nodes[id];
            debug_assert!(n.children.is_empty());
            (n.left, n.right, n.parent)
        };
        if let Some(l) = left {
            self.nodes[l].right = right;
        }
        if let Some(r) = right {
            self.nodes[r].left = left;
        }
        if let Some(p) = parent {
            self.detach(p, id);
        }
        report.push(id, parent, None);
        self.nodes.remove(id);
    }

    fn neighbor(&self, id: NodeId, side: Side) -> Option<NodeId> {
        match side {
            Side::Left => self.nodes[id].left,
            Side::Right => self.nodes[id].right,
        }
    }

    /// Nearest node within distance `k` of `p` having exactly one child.
    /// Ties go right.
    fn find_one_node(&mut self, p: NodeId) -> Option<(NodeId, Side)> {
        let mut l = self.nodes[p].left;
        let mut r = self.nodes[p].right;
        for _ in 0..self.k {
            self.work += 1;
            if let Some(rid) = r {
                if self.nodes[rid].children.len() == 1 {
                    return Some((rid, Side::Right));
                }
                r = self.nodes[rid].right;
            }
            if let Some(lid) = l {
                if self.nodes[lid].children.len() == 1 {
                    return Some((lid, Side::Left));
                }
                l = self.nodes[lid].left;
            }
            if l.is_none() && r.is_none() {
                break;
            }
        }
        None
    }

    /// Shifts one child per node along the level from `from` towards `to`
    /// (which lies on side `side` of `from`): each node hands its outermost
    /// child on that side to the next node.
    fn shift(
        &mut self,
        from: NodeId,
        to: NodeId,
        side: Side,
        report: &mut MovedReport,
        dirty: &mut Vec<NodeId>,
    ) {
        let mut cur = from;
        dirty.push(cur);
        while cur != to {
            let next = self
                .neighbor(cur, side)
                .expect("shift target lies on this level");
            let child = match side {
                Side::Right => *self.nodes[cur].children.last().unwrap(),
                Side::Left => self.nodes[cur].children[0],
            };
            self.detach(cur, child);
            match side {
                Side::Right => self.attach(next, child, Some(0)),
                Side::Left => self.attach(next, child, None),
            }
            report.push(child, Some(cur), Some(next));
            dirty.push(next);
            cur = next;
        }
    }

    fn fix_overflow(&mut self, mut p: NodeId, report: &mut MovedReport, dirty: &mut Vec<NodeId>) {
        dirty.push(p);
        while self.nodes[p].children.len() > 2 {
            if let Some((q, side)) = self.find_one_node(p) {
                self.shift(p, q, side, report, dirty);
                self.moves += 1;
                report.moves += 1;
                return;
            }
            // split: a new 1-node takes p's leftmost child
            let h = self.nodes[p].height;
            let p2 = self.nodes.insert(Node::new(h, None));
            self.work += 1;
            self.relinks += 1;
            let c = self.nodes[p].children[0];
            self.detach(p, c);
            self.attach(p2, c, None);
            report.push(c, Some(p), Some(p2));
            let left = self.nodes[p].left;
            self.nodes[p2].left = left;
            self.nodes[p2].right = Some(p);
            self.nodes[p].left = Some(p2);
            if let Some(l) = left {
                self.nodes[l].right = Some(p2);
            }
            dirty.push(p2);
            match self.nodes[p].parent {
                None => {
                    let r = self.nodes.insert(Node::new(h + 1, None));
                    self.relinks += 1;
                    self.attach(r, p2, None);
                    self.attach(r, p, None);
                    report.push(p2, None, Some(r));
                    report.push(p, None, Some(r));
                    self.root = r;
                    dirty.push(r);
                    return;
                }
                Some(pp) => {
                    let i = self.child_index(pp, p);
                    self.attach(pp, p2, Some(i));
                    report.push(p2, None, Some(pp));
                    p = pp;
                    dirty.push(p);
                }
            }
        }
    }

    fn fix_underflow(&mut self, mut p: NodeId, report: &mut MovedReport, dirty: &mut Vec<NodeId>) {
        loop {
            match self.nodes[p].children.len() {
                0 => {
                    let pp = self.nodes[p]
                        .parent
                        .expect("an emptied node is never the root");
                    self.free_node(p, report);
                    p = pp;
                    dirty.push(p);
                }
                1 if p == self.root => {
                    while self.nodes[self.root].children.len() == 1 {
                        let old = self.root;
                        let c = self.nodes[old].children[0];
                        self.detach(old, c);
                        report.push(c, Some(old), None);
                        self.free_node(old, report);
                        self.root = c;
                    }
                    return;
                }
                1 => {
                    if let Some((q, side)) = self.find_one_node(p) {
                        // empty q into p, then drop q
                        let back = match side {
                            Side::Left => Side::Right,
                            Side::Right => Side::Left,
                        };
                        self.shift(q, p, back, report, dirty);
                        self.moves += 1;
                        report.moves += 1;
                        let pq = self.nodes[q].parent.expect("non-root node has a parent");
                        self.free_node(q, report);
                        p = pq;
                        dirty.push(p);
                    } else if self.nodes[p].right.is_none() {
                        // rightmost 1-node: take a child from the left
                        // neighbor, which becomes the candidate 1-node
                        let l = self.nodes[p].left.expect("non-root level has two nodes");
                        self.shift(l, p, Side::Right, report, dirty);
                        p = l;
                    } else {
                        return;
                    }
                }
                _ => return,
            }
        }
    }

    /// Recomputes aggregates bottom-up from the given structurally changed
    /// nodes, stopping along any path whose aggregate did not change.
    fn refresh(&mut self, mut dirty: Vec<NodeId>) {
        dirty.retain(|&d| self.nodes.contains_key(d));
        if dirty.is_empty() {
            return;
        }
        let mut by_height: std::collections::BTreeMap<u32, Vec<NodeId>> = Default::default();
        for d in dirty {
            by_height.entry(self.nodes[d].height).or_default().push(d);
        }
        while let Some((h, mut batch)) = by_height.pop_first() {
            batch.sort_unstable();
            batch.dedup();
            for id in batch {
                if !self.nodes.contains_key(id) {
                    continue;
                }
                self.work += 1;
                let n = &self.nodes[id];
                let (count, last) = if n.height == 0 {
                    (1, n.mark.or(n.ext))
                } else {
                    let count = n.children.iter().map(|&c| self.nodes[c].leaf_count).sum();
                    let last = n.mark.or_else(|| {
                        n.children
                            .iter()
                            .rev()
                            .find_map(|&c| self.nodes[c].last_mark)
                    });
                    (count, last)
                };
                let n = &mut self.nodes[id];
                let changed = n.leaf_count != count || n.last_mark != last;
                n.leaf_count = count;
                n.last_mark = last;
                if changed {
                    if let Some(p) = n.parent {
                        by_height.entry(h + 1).or_default().push(p);
                    }
                }
            }
        }
    }
}

fn violation(condition: &str, path: Vec<usize>) -> Violation {
    Violation {
        condition: condition.to_string(),
        path,
    }
}

fn link_level<P, M>(nodes: &mut SlotMap<NodeId, Node<P, M>>, level: &[NodeId]) {
    for w in level.windows(2) {
        nodes[w[0]].right = Some(w[1]);
        nodes[w[1]].left = Some(w[0]);
    }
}

fn make_parent<P, M>(
    nodes: &mut SlotMap<NodeId, Node<P, M>>,
    height: u32,
    kids: &[NodeId],
) -> NodeId {
    let mut parent = Node::new(height, None);
    parent.children.extend_from_slice(kids);
    parent.leaf_count = kids.iter().map(|&c| nodes[c].leaf_count).sum();
    let id = nodes.insert(parent);
    for &c in kids {
        nodes[c].parent = Some(id);
    }
    id
}
