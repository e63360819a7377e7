//! Worst-case capture-distance tables over joint states.
//!
//! A joint state is `m` pursuer positions plus one evader position. The
//! table stores, for every joint state, the number of steps optimal
//! pursuers need to force capture against an optimal evader (or
//! [`INFINITY`] when capture cannot be forced). It is filled by a backward
//! breadth-first expansion from the terminal states.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{PegError, Result};
use crate::graph::{Graph, NodeId};
use crate::par;

/// Sentinel for "capture cannot be forced".
pub const INFINITY: u16 = u16::MAX;

/// Default cap on `n^(m+1)` table entries.
pub const DEFAULT_BUDGET: u64 = 1 << 31;

/// When the game ends: some pursuer within `radius()` hops of the evader.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum CaptureSpec {
    Colocated,
    #[default]
    Adjacent,
    Radius(u8),
}

impl CaptureSpec {
    pub fn radius(self) -> u32 {
        match self {
            CaptureSpec::Colocated => 0,
            CaptureSpec::Adjacent => 1,
            CaptureSpec::Radius(k) => k as u32,
        }
    }

    /// `(mode, radius)` bytes of the table file header.
    fn to_code(self) -> (u8, u8) {
        match self {
            CaptureSpec::Colocated => (0, 0),
            CaptureSpec::Adjacent => (1, 1),
            CaptureSpec::Radius(k) => (2, k),
        }
    }

    fn from_code(mode: u8, radius: u8) -> Result<Self> {
        match (mode, radius) {
            (0, 0) => Ok(CaptureSpec::Colocated),
            (1, 1) => Ok(CaptureSpec::Adjacent),
            (2, k) => Ok(CaptureSpec::Radius(k)),
            _ => Err(PegError::Format(format!("bad capture mode {mode}/{radius}"))),
        }
    }

    /// Same termination predicate (`adjacent ≡ radius:1`, `colocated ≡ radius:0`).
    pub fn equivalent(self, other: CaptureSpec) -> bool {
        self.radius() == other.radius()
    }
}

impl fmt::Display for CaptureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CaptureSpec::Colocated => f.write_str("colocated"),
            CaptureSpec::Adjacent => f.write_str("adjacent"),
            CaptureSpec::Radius(k) => write!(f, "radius:{k}"),
        }
    }
}

impl FromStr for CaptureSpec {
    type Err = PegError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "colocated" => Ok(CaptureSpec::Colocated),
            "adjacent" => Ok(CaptureSpec::Adjacent),
            _ => s
                .strip_prefix("radius:")
                .and_then(|k| k.parse::<u8>().ok())
                .map(CaptureSpec::Radius)
                .ok_or_else(|| PegError::Config(format!("bad capture spec `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JointState {
    pub pursuers: Vec<NodeId>,
    pub evader: NodeId,
}

impl JointState {
    pub fn new(pursuers: impl Into<Vec<NodeId>>, evader: NodeId) -> Self {
        JointState { pursuers: pursuers.into(), evader }
    }

    pub fn m(&self) -> usize {
        self.pursuers.len()
    }

    pub fn validate(&self, g: &Graph) -> Result<()> {
        if self.pursuers.is_empty() {
            return Err(PegError::Dimension("joint state needs at least one pursuer".into()));
        }
        for &v in self.pursuers.iter().chain(std::iter::once(&self.evader)) {
            g.check_node(v)?;
        }
        Ok(())
    }
}

/// Bijection between joint states and flat table offsets:
/// `(Σ_i pursuers[i]·n^i)·n + evader`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateIndex {
    n: usize,
    m: usize,
}

impl StateIndex {
    pub fn new(n: usize, m: usize) -> Self {
        StateIndex { n, m }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// `n^m`.
    pub fn pursuer_states(&self) -> usize {
        self.n.pow(self.m as u32)
    }

    /// `n^(m+1)`.
    pub fn len(&self) -> usize {
        self.pursuer_states() * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn pursuer_index(&self, pursuers: &[NodeId]) -> usize {
        pursuers.iter().rev().fold(0, |acc, &p| acc * self.n + p)
    }

    #[inline]
    pub fn encode(&self, pursuers: &[NodeId], evader: NodeId) -> usize {
        self.pursuer_index(pursuers) * self.n + evader
    }

    pub fn encode_state(&self, s: &JointState) -> usize {
        self.encode(&s.pursuers, s.evader)
    }

    /// Writes the pursuer tuple of pursuer index `p` into `out`.
    #[inline]
    pub fn decode_pursuers(&self, mut p: usize, out: &mut [NodeId]) {
        for slot in out.iter_mut() {
            *slot = p % self.n;
            p /= self.n;
        }
    }

    pub fn decode(&self, idx: usize) -> JointState {
        let mut pursuers = vec![0; self.m];
        self.decode_pursuers(idx / self.n, &mut pursuers);
        JointState { pursuers, evader: idx % self.n }
    }
}

/// Reusable enumerator over the joint closed neighborhood of a pursuer
/// tuple, in lexicographic order (pursuer 0 most significant, each
/// component ascending).
#[derive(Debug, Default)]
pub struct JointMoves {
    cursor: Vec<usize>,
    current: Vec<NodeId>,
    strides: Vec<usize>,
}

impl JointMoves {
    pub fn new() -> Self {
        Self::default()
    }

    /// Calls `f(pursuer_index, positions)` for every joint move.
    pub fn for_each<F: FnMut(usize, &[NodeId])>(&mut self, g: &Graph, from: &[NodeId], mut f: F) {
        let m = from.len();
        let n = g.n();
        self.cursor.clear();
        self.cursor.resize(m, 0);
        self.current.clear();
        self.strides.clear();
        let mut stride = 1;
        let mut idx = 0;
        for &p in from {
            let first = g.closed(p)[0];
            self.current.push(first);
            self.strides.push(stride);
            idx += first * stride;
            stride *= n;
        }
        loop {
            f(idx, &self.current);
            let mut k = m;
            loop {
                if k == 0 {
                    return;
                }
                k -= 1;
                let list = g.closed(from[k]);
                idx -= self.current[k] * self.strides[k];
                self.cursor[k] += 1;
                if self.cursor[k] < list.len() {
                    self.current[k] = list[self.cursor[k]];
                    idx += self.current[k] * self.strides[k];
                    break;
                }
                self.cursor[k] = 0;
                self.current[k] = list[0];
                idx += self.current[k] * self.strides[k];
            }
        }
    }
}

/// Number of joint moves available from `from`.
pub fn joint_move_count(g: &Graph, from: &[NodeId]) -> usize {
    from.iter().map(|&p| g.closed(p).len()).product()
}

/// True iff some pursuer is within the capture radius of the evader.
pub fn terminal(g: &Graph, cap: CaptureSpec, s: &JointState) -> bool {
    let r = cap.radius();
    s.pursuers.iter().any(|&p| g.distance(p, s.evader) <= r)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceTable {
    index: StateIndex,
    capture: CaptureSpec,
    graph_hash: u64,
    entries: Vec<u16>,
}

/// Counters gathered while solving.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolveStats {
    pub states: usize,
    pub terminal: usize,
    pub popped: usize,
    pub max_finite: u16,
    pub infinite: usize,
}

/// Fills the capture-distance table for `m` pursuers on `g`.
pub fn solve(g: &Graph, m: usize, cap: CaptureSpec, budget: u64) -> Result<DistanceTable> {
    solve_with_stats(g, m, cap, budget).map(|(t, _)| t)
}

pub fn solve_with_stats(g: &Graph, m: usize, cap: CaptureSpec, budget: u64) -> Result<(DistanceTable, SolveStats)> {
    solve_inner(g, m, cap, budget, INFINITY - 1)
}

/// Checks `n^(m+1)` against `budget` (and the 32-bit queue index space).
pub fn check_budget(n: usize, m: usize, budget: u64) -> Result<usize> {
    if m == 0 {
        return Err(PegError::Dimension("need at least one pursuer".into()));
    }
    let entries = (n as u128).checked_pow(m as u32 + 1).unwrap_or(u128::MAX);
    if entries > budget as u128 || entries > u32::MAX as u128 {
        return Err(PegError::Budget { entries, budget });
    }
    Ok(entries as usize)
}

fn solve_inner(
    g: &Graph,
    m: usize,
    cap: CaptureSpec,
    budget: u64,
    max_finite: u16,
) -> Result<(DistanceTable, SolveStats)> {
    let total = check_budget(g.n(), m, budget)?;
    let n = g.n();
    let index = StateIndex::new(n, m);
    let radius = cap.radius();

    // Terminal seeding is embarrassingly parallel over pursuer tuples.
    let rows = par::map_range(index.pursuer_states(), |p| {
        let mut pursuers = vec![0; m];
        index.decode_pursuers(p, &mut pursuers);
        (0..n)
            .map(|e| if pursuers.iter().any(|&q| g.distance(q, e) <= radius) { 0 } else { INFINITY })
            .collect::<Vec<u16>>()
    });
    let mut entries: Vec<u16> = Vec::with_capacity(total);
    for row in rows {
        entries.extend_from_slice(&row);
    }

    let mut queue: Vec<u32> = entries.iter().enumerate().filter(|(_, &d)| d == 0).map(|(i, _)| i as u32).collect();
    let terminal_count = queue.len();
    let mut head = 0;
    let mut last_popped = 0u16;
    let mut pursuers = vec![0; m];
    let mut moves = JointMoves::new();

    while head < queue.len() {
        let idx = queue[head] as usize;
        head += 1;
        let d = entries[idx];
        assert!(d >= last_popped, "queue order violated: {d} after {last_popped}");
        last_popped = d;
        let p = idx / n;
        let e = idx % n;
        let row = p * n;
        index.decode_pursuers(p, &mut pursuers);
        for &ne in g.closed(e) {
            // Every evader reply from `ne` (including staying) must already
            // be resolved at a value no larger than `d`.
            if g.closed(ne).iter().any(|&x| entries[row + x] > d) {
                continue;
            }
            let mut overflow = false;
            moves.for_each(g, &pursuers, |np, _| {
                let j = np * n + ne;
                if entries[j] == INFINITY {
                    if d >= max_finite {
                        overflow = true;
                        return;
                    }
                    entries[j] = d + 1;
                    queue.push(j as u32);
                }
            });
            if overflow {
                return Err(PegError::Overflow);
            }
        }
    }

    let stats = SolveStats {
        states: total,
        terminal: terminal_count,
        popped: head,
        max_finite: last_popped,
        infinite: total - head,
    };
    let table = DistanceTable { index, capture: cap, graph_hash: g.id(), entries };
    Ok((table, stats))
}

const MAGIC: &[u8; 4] = b"PEGD";
const VERSION: u16 = 1;
/// Bytes before the entry array.
pub const HEADER_LEN: usize = 4 + 2 + 4 + 2 + 1 + 1 + 8;

impl DistanceTable {
    /// Assembles a table from raw parts; used by tests and alternative solvers.
    pub fn from_parts(g: &Graph, m: usize, capture: CaptureSpec, entries: Vec<u16>) -> Result<Self> {
        let index = StateIndex::new(g.n(), m);
        if entries.len() != index.len() {
            return Err(PegError::Dimension(format!("{} entries for a table of {}", entries.len(), index.len())));
        }
        Ok(DistanceTable { index, capture, graph_hash: g.id(), entries })
    }

    pub fn n(&self) -> usize {
        self.index.n
    }

    pub fn m(&self) -> usize {
        self.index.m
    }

    pub fn capture(&self) -> CaptureSpec {
        self.capture
    }

    pub fn graph_hash(&self) -> u64 {
        self.graph_hash
    }

    pub fn index(&self) -> StateIndex {
        self.index
    }

    pub fn entries(&self) -> &[u16] {
        &self.entries
    }

    /// Memory held by the entry array.
    pub fn entry_bytes(&self) -> usize {
        self.entries.len() * std::mem::size_of::<u16>()
    }

    #[inline]
    pub fn get(&self, idx: usize) -> u16 {
        self.entries[idx]
    }

    #[inline]
    pub fn at(&self, pursuer_index: usize, evader: NodeId) -> u16 {
        self.entries[pursuer_index * self.index.n + evader]
    }

    /// Table value of a joint state; [`INFINITY`] when capture cannot be forced.
    pub fn lookup(&self, s: &JointState) -> Result<u16> {
        self.check_state(s)?;
        Ok(self.entries[self.index.encode_state(s)])
    }

    pub fn check_state(&self, s: &JointState) -> Result<()> {
        if s.pursuers.len() != self.index.m {
            return Err(PegError::Dimension(format!(
                "state has {} pursuers, table has {}",
                s.pursuers.len(),
                self.index.m
            )));
        }
        let n = self.index.n;
        if let Some(&bad) = s.pursuers.iter().chain([&s.evader]).find(|&&v| v >= n) {
            return Err(PegError::Dimension(format!("node {bad} outside table of {n} nodes")));
        }
        Ok(())
    }

    /// Ensures the table was solved for `g`.
    pub fn check_graph(&self, g: &Graph) -> Result<()> {
        if self.graph_hash != g.id() || self.index.n != g.n() {
            return Err(PegError::HashMismatch { expected: self.graph_hash, actual: g.id() });
        }
        Ok(())
    }

    pub fn max_finite(&self) -> u16 {
        self.entries.iter().copied().filter(|&d| d != INFINITY).max().unwrap_or(0)
    }

    pub fn infinite_count(&self) -> usize {
        self.entries.iter().filter(|&&d| d == INFINITY).count()
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        let (mode, radius) = self.capture.to_code();
        let mut header = Vec::with_capacity(HEADER_LEN);
        header.extend_from_slice(MAGIC);
        header.extend_from_slice(&VERSION.to_le_bytes());
        header.extend_from_slice(&(self.index.n as u32).to_le_bytes());
        header.extend_from_slice(&(self.index.m as u16).to_le_bytes());
        header.push(mode);
        header.push(radius);
        header.extend_from_slice(&self.graph_hash.to_le_bytes());
        w.write_all(&header)?;
        let mut body = Vec::with_capacity(self.entries.len() * 2);
        for &d in &self.entries {
            body.extend_from_slice(&d.to_le_bytes());
        }
        w.write_all(&body)?;
        w.flush()?;
        Ok(())
    }

    /// Reads a table file and binds it to `g`.
    pub fn load<R: Read>(mut r: R, g: &Graph) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN];
        r.read_exact(&mut header).map_err(|e| PegError::Format(format!("short header: {e}")))?;
        if &header[0..4] != MAGIC {
            return Err(PegError::Format("bad magic".into()));
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != VERSION {
            return Err(PegError::Format(format!("unsupported version {version}")));
        }
        let n = u32::from_le_bytes(header[6..10].try_into().unwrap()) as usize;
        let m = u16::from_le_bytes([header[10], header[11]]) as usize;
        let capture = CaptureSpec::from_code(header[12], header[13])?;
        let graph_hash = u64::from_le_bytes(header[14..22].try_into().unwrap());
        if graph_hash != g.id() || n != g.n() {
            return Err(PegError::HashMismatch { expected: graph_hash, actual: g.id() });
        }
        let total = check_budget(n, m, u64::MAX).map_err(|e| PegError::Format(e.to_string()))?;
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() != total * 2 {
            return Err(PegError::Format(format!("expected {} entry bytes, found {}", total * 2, body.len())));
        }
        let entries = body.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
        Ok(DistanceTable { index: StateIndex::new(n, m), capture, graph_hash, entries })
    }
}
