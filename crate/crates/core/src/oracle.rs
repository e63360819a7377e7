//! Brute-force references for the capture-distance table.
//!
//! Nothing here shares move enumeration with [`crate::solver`]: the oracle
//! builds joint moves as explicit Cartesian products and evaluates the
//! minimax recurrence by whole-table sweeps or by exhaustive game-tree
//! search.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{PegError, Result};
use crate::graph::{Graph, NodeId};
use crate::par::{self, Execution};
use crate::solver::{check_budget, CaptureSpec, DistanceTable, JointState, StateIndex, INFINITY};

/// Default state budget for the oracle (it is quadratic-ish in the table size).
pub const ORACLE_BUDGET: u64 = 1 << 22;

/// Fixed point of the minimax recurrence, computed by sweeps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleTable {
    pub n: usize,
    pub m: usize,
    pub capture: CaptureSpec,
    pub graph_hash: u64,
    pub entries: Vec<u16>,
    /// Sweeps performed, including the final one that changed nothing.
    pub sweeps: usize,
}

/// Every joint move from `from` as an explicit list.
pub fn joint_product(g: &Graph, from: &[NodeId]) -> Vec<Vec<NodeId>> {
    let mut out = vec![Vec::new()];
    for &p in from {
        let mut next = Vec::new();
        for prefix in &out {
            for &q in g.closed(p) {
                let mut v = prefix.clone();
                v.push(q);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

fn is_terminal(g: &Graph, radius: u32, s: &JointState) -> bool {
    s.pursuers.iter().any(|&p| g.bfs_distances(p).expect("valid node")[s.evader] <= radius)
}

/// `1 + min over joint moves of max over evader replies` of `values`,
/// saturating at [`INFINITY`].
fn backup(g: &Graph, index: &StateIndex, values: &[u16], s: &JointState) -> u16 {
    let best = joint_product(g, &s.pursuers)
        .iter()
        .map(|np| {
            g.closed(s.evader)
                .iter()
                .map(|&ne| values[index.encode(np, ne)])
                .max()
                .expect("closed neighborhood is nonempty")
        })
        .min()
        .expect("joint product is nonempty");
    if best == INFINITY {
        INFINITY
    } else {
        best + 1
    }
}

/// Terminal states start at 0 and all others at infinity; every sweep
/// recomputes each non-terminal entry from the previous sweep's values
/// until nothing changes.
pub fn marking_fixpoint(g: &Graph, m: usize, cap: CaptureSpec) -> Result<OracleTable> {
    marking_fixpoint_with(g, m, cap, ORACLE_BUDGET, Execution::Parallel)
}

pub fn marking_fixpoint_with(
    g: &Graph,
    m: usize,
    cap: CaptureSpec,
    budget: u64,
    exec: Execution,
) -> Result<OracleTable> {
    let total = check_budget(g.n(), m, budget)?;
    let index = StateIndex::new(g.n(), m);
    let radius = cap.radius();
    let terminal: Vec<bool> = par::map_range_with(exec, total, |i| is_terminal(g, radius, &index.decode(i)));
    let mut values: Vec<u16> = terminal.iter().map(|&t| if t { 0 } else { INFINITY }).collect();
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        let next: Vec<u16> = par::map_range_with(exec, total, |i| {
            if terminal[i] {
                0
            } else {
                backup(g, &index, &values, &index.decode(i)).min(values[i])
            }
        });
        debug_assert!(next.iter().zip(&values).all(|(a, b)| a <= b));
        if next == values {
            break;
        }
        values = next;
    }
    Ok(OracleTable { n: g.n(), m, capture: cap, graph_hash: g.id(), entries: values, sweeps })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TableDiff {
    pub index: usize,
    pub pursuers: Vec<NodeId>,
    pub evader: NodeId,
    pub table: u16,
    pub oracle: u16,
}

/// Every index where the two tables disagree; empty means equal.
pub fn assert_equal(t: &DistanceTable, o: &OracleTable) -> Result<Vec<TableDiff>> {
    if t.n() != o.n || t.m() != o.m || !t.capture().equivalent(o.capture) || t.graph_hash() != o.graph_hash {
        return Err(PegError::Dimension(format!(
            "table (n={}, m={}, {}, {:016x}) vs oracle (n={}, m={}, {}, {:016x})",
            t.n(),
            t.m(),
            t.capture(),
            t.graph_hash(),
            o.n,
            o.m,
            o.capture,
            o.graph_hash
        )));
    }
    let index = t.index();
    Ok(t.entries()
        .iter()
        .zip(&o.entries)
        .enumerate()
        .filter(|(_, (a, b))| a != b)
        .map(|(i, (&a, &b))| {
            let s = index.decode(i);
            TableDiff { index: i, pursuers: s.pursuers, evader: s.evader, table: a, oracle: b }
        })
        .collect())
}

/// Result of a depth-limited game-tree search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum HorizonValue {
    Exact(u32),
    Beyond,
}

/// Exhaustive asynchronous-move game value within `horizon` plies:
/// pursuers move jointly to minimize, then the evader, seeing that move,
/// maximizes. Capture is checked after both sides have moved.
pub fn horizon_minimax(g: &Graph, cap: CaptureSpec, s: &JointState, horizon: u32) -> Result<HorizonValue> {
    s.validate(g)?;
    let cost = (g.n() as u128).pow(s.m() as u32 + 1) * (horizon as u128 + 1);
    if cost > 50_000_000 {
        return Err(PegError::Budget { entries: cost, budget: 50_000_000 });
    }
    let mut memo = HashMap::new();
    Ok(search(g, cap.radius(), s, horizon, &mut memo))
}

fn search(
    g: &Graph,
    radius: u32,
    s: &JointState,
    h: u32,
    memo: &mut HashMap<(JointState, u32), HorizonValue>,
) -> HorizonValue {
    if is_terminal(g, radius, s) {
        return HorizonValue::Exact(0);
    }
    if h == 0 {
        return HorizonValue::Beyond;
    }
    let key = (s.clone(), h);
    if let Some(&v) = memo.get(&key) {
        return v;
    }
    let mut best = HorizonValue::Beyond;
    for np in joint_product(g, &s.pursuers) {
        let mut worst = HorizonValue::Exact(0);
        for &ne in g.closed(s.evader) {
            let child = JointState::new(np.clone(), ne);
            worst = worst.max(search(g, radius, &child, h - 1, memo));
            if worst == HorizonValue::Beyond {
                break;
            }
        }
        best = best.min(worst);
    }
    let value = match best {
        HorizonValue::Exact(d) => HorizonValue::Exact(d + 1),
        HorizonValue::Beyond => HorizonValue::Beyond,
    };
    memo.insert(key, value);
    value
}

/// States whose positive value breaks `D = 1 + min_moves max_replies D`.
pub fn recurrence_violations(g: &Graph, t: &DistanceTable) -> Vec<usize> {
    let index = t.index();
    let n = g.n();
    par::map_range(index.pursuer_states(), |p| {
        let mut pursuers = vec![0; t.m()];
        index.decode_pursuers(p, &mut pursuers);
        let moves = joint_product(g, &pursuers);
        let move_idx: Vec<usize> = moves.iter().map(|np| index.pursuer_index(np)).collect();
        (0..n)
            .filter(|&e| {
                let d = t.at(p, e);
                if d == 0 {
                    return false;
                }
                let best =
                    move_idx.iter().map(|&q| g.closed(e).iter().map(|&ne| t.at(q, ne)).max().unwrap()).min().unwrap();
                let expect = if best == INFINITY { INFINITY } else { best + 1 };
                d != expect
            })
            .map(|e| p * n + e)
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect()
}
