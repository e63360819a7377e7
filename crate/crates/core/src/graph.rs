//! Undirected game arenas: storage, JSON ingestion, generators and hop
//! distances.
//!
//! Agents move along edges or stay put, so every action set is a *closed*
//! neighborhood. Self-loops are never stored; the stay move comes from
//! [`Graph::closed`].

use std::collections::VecDeque;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PegError, Result};

pub type NodeId = usize;

/// Hop distance marker for unreachable nodes. Never observed on a validated
/// graph, which is connected.
pub const UNREACHABLE: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub struct Graph {
    adjacency: Vec<Vec<NodeId>>,
    closed: Vec<Vec<NodeId>>,
    coords: Option<Vec<[f64; 2]>>,
    id: u64,
    all_pairs: OnceLock<Vec<u32>>,
}

/// On-disk graph schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphFile {
    pub nodes: Vec<usize>,
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coords: Option<Vec<[f64; 2]>>,
}

impl Graph {
    /// Builds a validated graph from an edge list over nodes `0..n`.
    ///
    /// Rejects self-loops, duplicate edges (in either orientation), unknown
    /// endpoints and disconnected graphs.
    pub fn from_edges(n: usize, edges: &[(NodeId, NodeId)], coords: Option<Vec<[f64; 2]>>) -> Result<Graph> {
        if n == 0 {
            return Err(PegError::Validation("graph has no nodes".into()));
        }
        if let Some(c) = &coords {
            if c.len() != n {
                return Err(PegError::Validation(format!("{} coordinates for {} nodes", c.len(), n)));
            }
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(PegError::Validation(format!("edge ({u},{v}) references a node outside 0..{n}")));
            }
            if u == v {
                return Err(PegError::Validation(format!("self-loop at node {u}")));
            }
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for (u, list) in adjacency.iter_mut().enumerate() {
            list.sort_unstable();
            if let Some(w) = list.windows(2).find(|w| w[0] == w[1]) {
                return Err(PegError::Validation(format!("duplicate edge ({u},{})", w[0])));
            }
        }
        let g = Graph::from_sorted_adjacency(adjacency, coords);
        let reached = g.bfs_from(0).iter().filter(|&&d| d != UNREACHABLE).count();
        if reached != n {
            return Err(PegError::Validation(format!(
                "graph is disconnected ({reached} of {n} nodes reachable from node 0)"
            )));
        }
        Ok(g)
    }

    fn from_sorted_adjacency(adjacency: Vec<Vec<NodeId>>, coords: Option<Vec<[f64; 2]>>) -> Graph {
        let closed = adjacency
            .iter()
            .enumerate()
            .map(|(v, adj)| {
                let mut c = Vec::with_capacity(adj.len() + 1);
                let split = adj.partition_point(|&u| u < v);
                c.extend_from_slice(&adj[..split]);
                c.push(v);
                c.extend_from_slice(&adj[split..]);
                c
            })
            .collect();
        let id = content_hash(&adjacency);
        Graph { adjacency, closed, coords, id, all_pairs: OnceLock::new() }
    }

    /// Parses and validates the JSON graph schema.
    pub fn load_json(bytes: &[u8]) -> Result<Graph> {
        let file: GraphFile = serde_json::from_slice(bytes).map_err(|e| PegError::Parse(e.to_string()))?;
        Graph::from_file(file)
    }

    pub fn from_file(file: GraphFile) -> Result<Graph> {
        let n = file.nodes.len();
        let mut seen = vec![false; n];
        for &id in &file.nodes {
            if id >= n || seen[id] {
                return Err(PegError::Validation(format!("node ids must be exactly 0..{n} (offending id {id})")));
            }
            seen[id] = true;
        }
        let edges: Vec<_> = file.edges.iter().map(|e| (e[0], e[1])).collect();
        Graph::from_edges(n, &edges, file.coords)
    }

    pub fn to_file(&self) -> GraphFile {
        GraphFile {
            nodes: (0..self.n()).collect(),
            edges: self.edges().map(|(u, v)| [u, v]).collect(),
            coords: self.coords.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("graph serializes")
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    /// Content hash of the node count and the edge set.
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn coords(&self) -> Option<&[[f64; 2]]> {
        self.coords.as_deref()
    }

    #[inline]
    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        &self.adjacency[v]
    }

    /// `{v} ∪ adjacency[v]`, ascending. Panics if `v` is out of range.
    #[inline]
    pub fn closed(&self, v: NodeId) -> &[NodeId] {
        &self.closed[v]
    }

    /// Checked variant of [`Graph::closed`].
    pub fn closed_neighbors(&self, v: NodeId) -> Result<&[NodeId]> {
        self.check_node(v)?;
        Ok(&self.closed[v])
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.adjacency[v].len()
    }

    pub fn check_node(&self, v: NodeId) -> Result<()> {
        if v < self.n() {
            Ok(())
        } else {
            Err(PegError::Index { node: v, n: self.n() })
        }
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(u, adj)| adj.iter().filter(move |&&v| v > u).map(move |&v| (u, v)))
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn average_degree(&self) -> f64 {
        2.0 * self.edge_count() as f64 / self.n() as f64
    }

    /// Unweighted shortest-path hop counts from `source`.
    pub fn bfs_distances(&self, source: NodeId) -> Result<Vec<u32>> {
        self.check_node(source)?;
        Ok(self.bfs_from(source))
    }

    fn bfs_from(&self, source: NodeId) -> Vec<u32> {
        let mut dist = vec![UNREACHABLE; self.n()];
        let mut queue = VecDeque::new();
        dist[source] = 0;
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                if dist[v] == UNREACHABLE {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    fn all_pairs(&self) -> &[u32] {
        self.all_pairs
            .get_or_init(|| crate::par::map_range(self.n(), |s| self.bfs_from(s)).into_iter().flatten().collect())
    }

    /// Hop distance between two nodes, from a lazily built all-pairs table.
    #[inline]
    pub fn distance(&self, u: NodeId, v: NodeId) -> u32 {
        self.all_pairs()[u * self.n() + v]
    }

    /// Row of the all-pairs table: hop distances from `u` to every node.
    pub fn distances_from(&self, u: NodeId) -> &[u32] {
        let n = self.n();
        &self.all_pairs()[u * n..(u + 1) * n]
    }

    pub fn diameter(&self) -> u32 {
        self.all_pairs().iter().copied().max().unwrap_or(0)
    }

    /// Every node within `radius` hops of some source (multi-source BFS).
    pub fn within(&self, sources: impl IntoIterator<Item = NodeId>, radius: u32) -> NodeSet {
        let mut dist = vec![UNREACHABLE; self.n()];
        let mut queue = VecDeque::new();
        let mut out = NodeSet::new(self.n());
        for s in sources {
            if dist[s] == UNREACHABLE {
                dist[s] = 0;
                out.insert(s);
                queue.push_back(s);
            }
        }
        while let Some(u) = queue.pop_front() {
            if dist[u] == radius {
                continue;
            }
            for &v in &self.adjacency[u] {
                if dist[v] == UNREACHABLE {
                    dist[v] = dist[u] + 1;
                    out.insert(v);
                    queue.push_back(v);
                }
            }
        }
        out
    }
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.adjacency == other.adjacency && self.coords == other.coords
    }
}

fn content_hash(adjacency: &[Vec<NodeId>]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let mut feed = |x: u64| {
        for b in x.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
    };
    feed(adjacency.len() as u64);
    for (u, adj) in adjacency.iter().enumerate() {
        for &v in adj.iter().filter(|&&v| v > u) {
            feed(u as u64);
            feed(v as u64);
        }
    }
    h
}

/// 4-connected `rows × cols` lattice; node id = `row * cols + col`.
pub fn generate_grid(rows: usize, cols: usize) -> Result<Graph> {
    if rows == 0 || cols == 0 || rows * cols < 2 {
        return Err(PegError::Size(format!("grid {rows}x{cols} needs at least two nodes")));
    }
    let mut edges = Vec::new();
    let mut coords = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let v = r * cols + c;
            coords.push([c as f64, r as f64]);
            if c + 1 < cols {
                edges.push((v, v + 1));
            }
            if r + 1 < rows {
                edges.push((v, v + cols));
            }
        }
    }
    Graph::from_edges(rows * cols, &edges, Some(coords))
}

/// Path `0 - 1 - … - (n-1)`.
pub fn generate_path(n: usize) -> Result<Graph> {
    if n < 2 {
        return Err(PegError::Size(format!("path needs at least two nodes, got {n}")));
    }
    let edges: Vec<_> = (1..n).map(|v| (v - 1, v)).collect();
    Graph::from_edges(n, &edges, None)
}

/// Cycle on `n ≥ 3` nodes.
pub fn generate_cycle(n: usize) -> Result<Graph> {
    if n < 3 {
        return Err(PegError::Size(format!("cycle needs at least three nodes, got {n}")));
    }
    let edges: Vec<_> = (0..n).map(|v| (v, (v + 1) % n)).collect();
    Graph::from_edges(n, &edges, None)
}

const GEOMETRIC_RETRIES: usize = 64;

/// Random geometric graph on the unit square, connected by construction.
///
/// Points are redrawn up to a bounded number of times; if no draw is
/// connected the last one is augmented with the shortest edges joining its
/// components.
pub fn generate_geometric(n: usize, radius: f64, seed: u64) -> Result<Graph> {
    if n < 2 {
        return Err(PegError::Size(format!("geometric graph needs at least two nodes, got {n}")));
    }
    if !(radius.is_finite() && radius > 0.0) {
        return Err(PegError::Generation(format!("radius must be positive, got {radius}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r2 = radius * radius;
    let mut last = None;
    for _ in 0..GEOMETRIC_RETRIES {
        let points: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if sq_dist(points[u], points[v]) <= r2 {
                    edges.push((u, v));
                }
            }
        }
        let mut components = UnionFind::new(n);
        for &(u, v) in &edges {
            components.union(u, v);
        }
        if components.count == 1 {
            return Graph::from_edges(n, &edges, Some(points));
        }
        last = Some((points, edges, components));
    }
    let (points, mut edges, mut components) = last.expect("at least one draw");
    // Kruskal over cross-component pairs joins components by shortest links.
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if components.find(u) != components.find(v) {
                candidates.push((sq_dist(points[u], points[v]), u, v));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    for (_, u, v) in candidates {
        if components.union(u, v) {
            edges.push((u, v));
            if components.count == 1 {
                break;
            }
        }
    }
    if components.count != 1 {
        return Err(PegError::Generation("could not connect geometric graph".into()));
    }
    Graph::from_edges(n, &edges, Some(points))
}

fn sq_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

struct UnionFind {
    parent: Vec<usize>,
    count: usize,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect(), count: n }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        self.count -= 1;
        true
    }
}

/// Fixed-capacity bitset over the node ids of one graph.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NodeSet {
    words: Vec<u64>,
    capacity: usize,
}

impl NodeSet {
    pub fn new(capacity: usize) -> Self {
        NodeSet { words: vec![0; capacity.div_ceil(64)], capacity }
    }

    pub fn singleton(capacity: usize, v: NodeId) -> Self {
        let mut s = NodeSet::new(capacity);
        s.insert(v);
        s
    }

    pub fn full(capacity: usize) -> Self {
        let mut s = NodeSet::new(capacity);
        for v in 0..capacity {
            s.insert(v);
        }
        s
    }

    pub fn from_nodes(capacity: usize, nodes: impl IntoIterator<Item = NodeId>) -> Self {
        let mut s = NodeSet::new(capacity);
        for v in nodes {
            s.insert(v);
        }
        s
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    #[inline]
    pub fn insert(&mut self, v: NodeId) -> bool {
        assert!(v < self.capacity, "node {v} outside set of capacity {}", self.capacity);
        let (w, b) = (v / 64, 1u64 << (v % 64));
        let fresh = self.words[w] & b == 0;
        self.words[w] |= b;
        fresh
    }

    #[inline]
    pub fn remove(&mut self, v: NodeId) {
        if v < self.capacity {
            self.words[v / 64] &= !(1u64 << (v % 64));
        }
    }

    #[inline]
    pub fn contains(&self, v: NodeId) -> bool {
        v < self.capacity && self.words[v / 64] & (1u64 << (v % 64)) != 0
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn clear(&mut self) {
        self.words.iter_mut().for_each(|w| *w = 0);
    }

    pub fn iter(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.words.iter().enumerate().flat_map(|(i, &word)| {
            let mut w = word;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let bit = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(i * 64 + bit)
            })
        })
    }

    pub fn is_subset(&self, other: &NodeSet) -> bool {
        self.words.iter().zip(other.words.iter().chain(std::iter::repeat(&0))).all(|(a, b)| a & !b == 0)
    }

    /// `{u : u ∈ closed(v) for some v in self}`.
    pub fn closed_expansion(&self, g: &Graph) -> NodeSet {
        let mut out = NodeSet::new(self.capacity);
        for v in self.iter() {
            for &u in g.closed(v) {
                out.insert(u);
            }
        }
        out
    }
}
