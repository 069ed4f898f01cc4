//! The persisted proximity graph: one CSR block per hierarchy level, per-node
//! levels, an entry point and a soft-delete bitset.
//!
//! Graphs are mutated as adjacency lists ([`AdjacencyGraph`]) and frozen into
//! [`PrunedGraph`] for storage and querying.

mod bitset;
mod format;

pub use bitset::DeleteSet;
pub use format::{
    load, read_deleted, read_graph, save, write_deleted, write_graph, DELETED_MAGIC, GRAPH_MAGIC,
    GRAPH_VERSION,
};

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Read access shared by frozen graphs, build-time adjacency lists and the
/// update overlay.
pub trait GraphView {
    fn node_count(&self) -> usize;
    fn entry_point(&self) -> Option<u32>;
    /// Highest populated level (0 for flat graphs and empty graphs).
    fn top_level(&self) -> usize;
    fn level(&self, id: u32) -> usize;
    fn neighbors(&self, id: u32, level: usize) -> &[u32];
    fn is_deleted(&self, id: u32) -> bool;
    fn max_degree(&self) -> usize;
}

/// Structural mutation shared by the build-time graph and the update overlay.
pub trait GraphMut: GraphView {
    /// Appends a node with no edges; the first node, or any node above the
    /// current top level, becomes the entry point.
    fn push_node(&mut self, level: usize) -> u32;
    fn set_neighbors(&mut self, id: u32, level: usize, list: Vec<u32>);
}

/// One level of the hierarchy in CSR form. Level 0 is dense over all nodes;
/// upper levels list their member ids (ascending) explicitly.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CsrLayer {
    pub(crate) nodes: Option<Vec<u32>>,
    pub(crate) offsets: Vec<u64>,
    pub(crate) neighbors: Vec<u32>,
}

impl CsrLayer {
    fn slot(&self, id: u32) -> Option<usize> {
        match &self.nodes {
            None => ((id as usize) + 1 < self.offsets.len()).then_some(id as usize),
            Some(nodes) => nodes.binary_search(&id).ok(),
        }
    }

    #[inline]
    pub fn neighbors(&self, id: u32) -> &[u32] {
        match self.slot(id) {
            Some(i) => &self.neighbors[self.offsets[i] as usize..self.offsets[i + 1] as usize],
            None => &[],
        }
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn member_count(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn members(&self) -> Box<dyn Iterator<Item = u32> + '_> {
        match &self.nodes {
            None => Box::new(0..self.member_count() as u32),
            Some(nodes) => Box::new(nodes.iter().copied()),
        }
    }
}

/// Frozen, compact graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrunedGraph {
    pub(crate) max_degree: usize,
    pub(crate) levels: Vec<u8>,
    pub(crate) entry: Option<u32>,
    pub(crate) layers: Vec<CsrLayer>,
    pub(crate) deleted: DeleteSet,
}

impl PrunedGraph {
    pub fn empty(max_degree: usize) -> Self {
        AdjacencyGraph::new(max_degree).freeze()
    }

    /// Builds a flat graph directly from base-layer lists.
    pub fn from_lists(max_degree: usize, lists: &[Vec<u32>]) -> Result<Self> {
        let mut g = AdjacencyGraph::new(max_degree);
        for list in lists {
            let id = g.push_node(0);
            g.set_neighbors(id, 0, list.clone());
        }
        let frozen = g.freeze();
        frozen.validate()?;
        Ok(frozen)
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn layers(&self) -> &[CsrLayer] {
        &self.layers
    }

    pub fn levels(&self) -> &[u8] {
        &self.levels
    }

    pub fn deleted(&self) -> &DeleteSet {
        &self.deleted
    }

    pub fn degree(&self, id: u32) -> usize {
        self.neighbors(id, 0).len()
    }

    /// Total stored neighbor ids over every level.
    pub fn edge_count(&self) -> usize {
        self.layers.iter().map(|l| l.edge_count()).sum()
    }

    pub fn base_edge_count(&self) -> usize {
        self.layers.first().map_or(0, |l| l.edge_count())
    }

    /// Flags `id` inactive. The adjacency is untouched. Returns whether the
    /// flag changed.
    pub fn mark_deleted(&mut self, id: u32) -> Result<bool> {
        if id as usize >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "node {id} out of range (n = {})",
                self.len()
            )));
        }
        Ok(self.deleted.insert(id))
    }

    pub fn is_deleted_checked(&self, id: u32) -> Result<bool> {
        if id as usize >= self.len() {
            return Err(Error::InvalidArgument(format!("node {id} out of range")));
        }
        Ok(self.deleted.contains(id))
    }

    pub fn deleted_fraction(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.deleted.count() as f64 / self.len() as f64
        }
    }

    pub fn replace_deleted(&mut self, deleted: DeleteSet) -> Result<()> {
        if deleted.len() != self.len() {
            return Err(Error::format(
                "deleted bitset",
                format!("length {} does not match node count {}", deleted.len(), self.len()),
            ));
        }
        self.deleted = deleted;
        Ok(())
    }

    /// Checks every structural invariant of the CSR representation.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let bad = |msg: String| Err(Error::Format {
            section: "graph validation",
            detail: msg,
        });
        if self.deleted.len() != n {
            return bad(format!("delete set covers {} of {n} nodes", self.deleted.len()));
        }
        if n > 0 && self.layers.is_empty() {
            return bad("no base layer".into());
        }
        let top = self.levels.iter().copied().max().unwrap_or(0) as usize;
        if n > 0 && self.layers.len() != top + 1 {
            return bad(format!("{} layers for top level {top}", self.layers.len()));
        }
        match self.entry {
            None if n > 0 => return bad("missing entry point".into()),
            Some(e) if e as usize >= n => return bad(format!("entry point {e} out of range")),
            Some(e) if self.levels[e as usize] as usize != top => {
                return bad(format!("entry point {e} is not on the top level"))
            }
            _ => {}
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let members: Vec<u32> = match &layer.nodes {
                None => {
                    if l != 0 {
                        return bad(format!("layer {l} must list its members"));
                    }
                    (0..n as u32).collect()
                }
                Some(nodes) => nodes.clone(),
            };
            if layer.offsets.len() != members.len() + 1 {
                return bad(format!("layer {l}: offsets length {}", layer.offsets.len()));
            }
            if layer.offsets[0] != 0 {
                return bad(format!("layer {l}: first offset nonzero"));
            }
            if layer.offsets.windows(2).any(|w| w[0] > w[1]) {
                return bad(format!("layer {l}: offsets decrease"));
            }
            if *layer.offsets.last().unwrap() as usize != layer.neighbors.len() {
                return bad(format!("layer {l}: final offset != neighbor count"));
            }
            if members.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("layer {l}: member ids not strictly ascending"));
            }
            let expected_members = self.levels.iter().filter(|&&lv| lv as usize >= l).count();
            if members.len() != expected_members {
                return bad(format!("layer {l}: {} members, expected {expected_members}", members.len()));
            }
            let mut seen = std::collections::HashSet::new();
            for (i, &v) in members.iter().enumerate() {
                if v as usize >= n || (self.levels[v as usize] as usize) < l {
                    return bad(format!("layer {l}: node {v} does not belong"));
                }
                let list = &layer.neighbors[layer.offsets[i] as usize..layer.offsets[i + 1] as usize];
                if list.len() > self.max_degree {
                    return bad(format!("node {v} level {l}: degree {} > {}", list.len(), self.max_degree));
                }
                seen.clear();
                for &u in list {
                    if u as usize >= n {
                        return bad(format!("node {v} level {l}: neighbor {u} out of range"));
                    }
                    if u == v {
                        return bad(format!("node {v} level {l}: self loop"));
                    }
                    if (self.levels[u as usize] as usize) < l {
                        return bad(format!("node {v} level {l}: neighbor {u} below level"));
                    }
                    if !seen.insert(u) {
                        return bad(format!("node {v} level {l}: duplicate neighbor {u}"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn thaw(&self) -> AdjacencyGraph {
        let mut g = AdjacencyGraph::new(self.max_degree);
        for &lv in &self.levels {
            g.push_node(lv as usize);
        }
        for (l, layer) in self.layers.iter().enumerate() {
            for v in layer.members() {
                g.links[v as usize][l] = layer.neighbors(v).to_vec();
            }
        }
        g.entry = self.entry;
        g.deleted = self.deleted.clone();
        g
    }
}

impl GraphView for PrunedGraph {
    fn node_count(&self) -> usize {
        self.len()
    }
    fn entry_point(&self) -> Option<u32> {
        self.entry
    }
    fn top_level(&self) -> usize {
        self.layers.len().saturating_sub(1)
    }
    fn level(&self, id: u32) -> usize {
        self.levels[id as usize] as usize
    }
    #[inline]
    fn neighbors(&self, id: u32, level: usize) -> &[u32] {
        match self.layers.get(level) {
            Some(layer) => layer.neighbors(id),
            None => &[],
        }
    }
    fn is_deleted(&self, id: u32) -> bool {
        self.deleted.contains(id)
    }
    fn max_degree(&self) -> usize {
        self.max_degree
    }
}

/// Mutable adjacency-list graph used during construction and updates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyGraph {
    max_degree: usize,
    levels: Vec<u8>,
    /// node → per-level neighbor lists (`0..=level`)
    links: Vec<Vec<Vec<u32>>>,
    entry: Option<u32>,
    deleted: DeleteSet,
}

impl AdjacencyGraph {
    pub fn new(max_degree: usize) -> Self {
        Self {
            max_degree,
            levels: Vec::new(),
            links: Vec::new(),
            entry: None,
            deleted: DeleteSet::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn set_max_degree(&mut self, m: usize) {
        self.max_degree = m;
    }

    /// Appends a node with no edges. The first node, or any node above the
    /// current top level, becomes the entry point.
    pub fn push_node(&mut self, level: usize) -> u32 {
        let id = self.levels.len() as u32;
        assert!(level < u8::MAX as usize, "level too large");
        self.levels.push(level as u8);
        self.links.push(vec![Vec::new(); level + 1]);
        self.deleted.push(false);
        match self.entry {
            None => self.entry = Some(id),
            Some(e) if level > self.levels[e as usize] as usize => self.entry = Some(id),
            _ => {}
        }
        id
    }

    pub fn set_neighbors(&mut self, id: u32, level: usize, list: Vec<u32>) {
        self.links[id as usize][level] = list;
    }

    pub fn neighbors_mut(&mut self, id: u32, level: usize) -> &mut Vec<u32> {
        &mut self.links[id as usize][level]
    }

    pub fn set_entry(&mut self, id: Option<u32>) {
        self.entry = id;
    }

    pub fn deleted_mut(&mut self) -> &mut DeleteSet {
        &mut self.deleted
    }

    pub fn freeze(&self) -> PrunedGraph {
        let n = self.len();
        let top = self.levels.iter().copied().max().map_or(0, |l| l as usize);
        let mut layers = Vec::with_capacity(top + 1);
        if n > 0 {
            for l in 0..=top {
                let members: Vec<u32> = (0..n as u32)
                    .filter(|&v| self.levels[v as usize] as usize >= l)
                    .collect();
                let mut offsets = Vec::with_capacity(members.len() + 1);
                let mut neighbors = Vec::new();
                offsets.push(0u64);
                for &v in &members {
                    neighbors.extend_from_slice(&self.links[v as usize][l]);
                    offsets.push(neighbors.len() as u64);
                }
                layers.push(CsrLayer {
                    nodes: (l > 0).then_some(members),
                    offsets,
                    neighbors,
                });
            }
        }
        PrunedGraph {
            max_degree: self.max_degree,
            levels: self.levels.clone(),
            entry: self.entry,
            layers,
            deleted: self.deleted.clone(),
        }
    }
}

impl GraphMut for AdjacencyGraph {
    fn push_node(&mut self, level: usize) -> u32 {
        AdjacencyGraph::push_node(self, level)
    }
    fn set_neighbors(&mut self, id: u32, level: usize, list: Vec<u32>) {
        AdjacencyGraph::set_neighbors(self, id, level, list)
    }
}

impl GraphView for AdjacencyGraph {
    fn node_count(&self) -> usize {
        self.len()
    }
    fn entry_point(&self) -> Option<u32> {
        self.entry
    }
    fn top_level(&self) -> usize {
        self.entry.map_or(0, |e| self.levels[e as usize] as usize)
    }
    fn level(&self, id: u32) -> usize {
        self.levels[id as usize] as usize
    }
    #[inline]
    fn neighbors(&self, id: u32, level: usize) -> &[u32] {
        self.links[id as usize]
            .get(level)
            .map_or(&[][..], |l| l.as_slice())
    }
    fn is_deleted(&self, id: u32) -> bool {
        self.deleted.contains(id)
    }
    fn max_degree(&self) -> usize {
        self.max_degree
    }
}

/// Degree and byte accounting of a graph. Each stored neighbor id costs 4 bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphStats {
    pub n: usize,
    pub n_active: usize,
    /// Mean base-layer out-degree.
    pub avg_degree: f64,
    /// Base-layer out-degree → node count.
    pub degree_histogram: BTreeMap<usize, usize>,
    pub max_degree: usize,
    pub base_bytes: u64,
    /// Bytes spent on neighbor ids above level 0.
    pub upper_bytes: u64,
    /// All neighbor ids over all levels × 4.
    pub metadata_bytes: u64,
}

pub const EDGE_BYTES: u64 = 4;

pub fn degree_stats<G: GraphView + ?Sized>(g: &G) -> GraphStats {
    let n = g.node_count();
    let mut hist = BTreeMap::new();
    let mut base = 0u64;
    let mut upper = 0u64;
    let mut n_active = 0;
    let mut max_deg = 0;
    for v in 0..n as u32 {
        let d = g.neighbors(v, 0).len();
        *hist.entry(d).or_insert(0) += 1;
        base += d as u64;
        max_deg = max_deg.max(d);
        for l in 1..=g.level(v) {
            upper += g.neighbors(v, l).len() as u64;
        }
        if !g.is_deleted(v) {
            n_active += 1;
        }
    }
    GraphStats {
        n,
        n_active,
        avg_degree: if n == 0 { 0.0 } else { base as f64 / n as f64 },
        degree_histogram: hist,
        max_degree: max_deg,
        base_bytes: base * EDGE_BYTES,
        upper_bytes: upper * EDGE_BYTES,
        metadata_bytes: (base + upper) * EDGE_BYTES,
    }
}

/// Fraction of active nodes reachable from the entry point over level-0 edges.
pub fn reachable_fraction<G: GraphView + ?Sized>(g: &G) -> f64 {
    let n = g.node_count();
    let Some(entry) = g.entry_point() else {
        return 0.0;
    };
    let mut seen = vec![false; n];
    let mut stack = vec![entry];
    seen[entry as usize] = true;
    while let Some(v) = stack.pop() {
        for &u in g.neighbors(v, 0) {
            if !seen[u as usize] {
                seen[u as usize] = true;
                stack.push(u);
            }
        }
    }
    let active = (0..n as u32).filter(|&v| !g.is_deleted(v)).count();
    if active == 0 {
        return 1.0;
    }
    let hit = (0..n as u32).filter(|&v| seen[v as usize] && !g.is_deleted(v)).count();
    hit as f64 / active as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn cycle3() -> PrunedGraph {
        PrunedGraph::from_lists(4, &[vec![1], vec![2], vec![0]]).unwrap()
    }

    #[test]
    fn stats_of_edgeless_graph() {
        let g = PrunedGraph::from_lists(4, &vec![vec![]; 5]).unwrap();
        let s = degree_stats(&g);
        assert_eq!(s.avg_degree, 0.0);
        assert_eq!(s.metadata_bytes, 0);
        assert_eq!(s.n_active, 5);
    }

    #[test]
    fn stats_of_cycle() {
        let s = degree_stats(&cycle3());
        assert_eq!(s.avg_degree, 1.0);
        assert_eq!(s.metadata_bytes, 12);
        assert_eq!(s.metadata_bytes, cycle3().edge_count() as u64 * 4);
        assert_eq!(s.degree_histogram.get(&1), Some(&3));
    }

    #[test]
    fn validation_catches_violations() {
        assert!(PrunedGraph::from_lists(4, &[vec![0]]).is_err(), "self loop");
        assert!(PrunedGraph::from_lists(4, &[vec![1, 1], vec![]]).is_err(), "dup");
        assert!(PrunedGraph::from_lists(4, &[vec![5]]).is_err(), "range");
        assert!(PrunedGraph::from_lists(1, &[vec![1, 2], vec![], vec![]]).is_err(), "degree cap");
    }

    #[test]
    fn delete_flags() {
        let mut g = PrunedGraph::from_lists(2, &vec![vec![]; 1000]).unwrap();
        assert!(g.mark_deleted(3).unwrap());
        assert!(g.is_deleted(3));
        assert!(!g.mark_deleted(3).unwrap(), "idempotent");
        for id in 100..149 {
            g.mark_deleted(id).unwrap();
        }
        assert!((g.deleted_fraction() - 0.05).abs() < 1e-12);
        assert!(g.mark_deleted(1000).is_err());
        assert!(g.is_deleted_checked(1000).is_err());
    }

    #[test]
    fn deleted_nodes_stay_traversable() {
        let mut g = cycle3();
        g.mark_deleted(1).unwrap();
        assert_eq!(g.neighbors(1, 0), &[2]);
        assert_eq!(reachable_fraction(&g), 1.0);
    }

    #[test]
    fn hierarchy_freeze_thaw() {
        let mut a = AdjacencyGraph::new(3);
        let n0 = a.push_node(0);
        let n1 = a.push_node(2);
        let n2 = a.push_node(1);
        a.set_neighbors(n0, 0, vec![n1, n2]);
        a.set_neighbors(n1, 0, vec![n0]);
        a.set_neighbors(n1, 1, vec![n2]);
        a.set_neighbors(n2, 1, vec![n1]);
        let g = a.freeze();
        g.validate().unwrap();
        assert_eq!(g.entry_point(), Some(n1));
        assert_eq!(g.top_level(), 2);
        assert_eq!(g.neighbors(n1, 1), &[n2]);
        assert_eq!(g.neighbors(n0, 1), &[] as &[u32]);
        assert_eq!(g.neighbors(n1, 2), &[] as &[u32]);
        assert_eq!(g.thaw().freeze(), g);
        let s = degree_stats(&g);
        assert_eq!(s.upper_bytes, 8);
        assert_eq!(s.base_bytes, 12);
    }
}
