//! Feasible-position set and belief over the evader's location.
//!
//! Per timestep the tracker expands the previous feasible set by one evader
//! move, removes every currently observed node (the evader was not seen
//! there), and pushes belief mass through an opponent model. A detection
//! collapses both to the observed node.

use serde::{Deserialize, Serialize};

use crate::error::{PegError, Result};
use crate::graph::{Graph, NodeId, NodeSet};
use crate::policy::{evader_async, TieBreak};
use crate::solver::{DistanceTable, JointState};

/// Detection radius of every pursuer plus static sensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel {
    pub range: u32,
    pub sensors: Vec<NodeId>,
}

impl ObservationModel {
    pub fn new(range: u32) -> Self {
        ObservationModel { range, sensors: Vec::new() }
    }

    pub fn with_sensors(range: u32, sensors: Vec<NodeId>) -> Self {
        ObservationModel { range, sensors }
    }
}

/// Nodes within `range` hops of any pursuer or sensor.
pub fn observed_set(g: &Graph, pursuers: &[NodeId], om: &ObservationModel) -> NodeSet {
    g.within(pursuers.iter().chain(&om.sensors).copied(), om.range)
}

/// What the pursuers knew and did during the step being tracked.
#[derive(Debug, Clone, Copy)]
pub struct MoveContext<'a> {
    pub pursuers_before: &'a [NodeId],
    pub pursuers_after: &'a [NodeId],
}

/// Transition kernel `ν(v, ·)` over the closed neighborhood of `v`.
pub trait OpponentModel: Sync {
    /// Probability that an evader at `from` moves to `to`.
    fn prob(&self, g: &Graph, from: NodeId, to: NodeId, ctx: &MoveContext<'_>) -> f64;
}

/// Uniform over the closed neighborhood.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformOpponent;

impl OpponentModel for UniformOpponent {
    fn prob(&self, g: &Graph, from: NodeId, to: NodeId, _ctx: &MoveContext<'_>) -> f64 {
        if g.closed(from).binary_search(&to).is_ok() {
            1.0 / g.closed(from).len() as f64
        } else {
            0.0
        }
    }
}

/// The asynchronous table evader with lowest-index ties, reconstructed from
/// the pursuers' own announced move. Exact for deterministic pursuers.
pub struct KnownAsyncEvader<'t> {
    pub table: &'t DistanceTable,
}

impl OpponentModel for KnownAsyncEvader<'_> {
    fn prob(&self, g: &Graph, from: NodeId, to: NodeId, ctx: &MoveContext<'_>) -> f64 {
        let s = JointState::new(ctx.pursuers_before.to_vec(), from);
        match evader_async(g, self.table, &s, ctx.pursuers_after, &mut TieBreak::LowestIndex) {
            Ok(choice) if choice == to => 1.0,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    pub pos: NodeSet,
    /// Indexed by node id; zero outside `pos`, sums to one.
    pub belief: Vec<f64>,
}

/// Wire form: `{"pos":[ids...], "belief":[[id,mass]...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefSnapshot {
    pub pos: Vec<NodeId>,
    pub belief: Vec<(NodeId, f64)>,
}

impl BeliefState {
    /// The evader's starting node is revealed: point mass there.
    pub fn init(g: &Graph, evader: NodeId) -> Result<Self> {
        g.check_node(evader)?;
        Ok(Self::point(g.n(), evader))
    }

    fn point(n: usize, v: NodeId) -> Self {
        let mut belief = vec![0.0; n];
        belief[v] = 1.0;
        BeliefState { pos: NodeSet::singleton(n, v), belief }
    }

    pub fn snapshot(&self) -> BeliefSnapshot {
        BeliefSnapshot {
            pos: self.pos.iter().collect(),
            belief: self.pos.iter().filter(|&v| self.belief[v] > 0.0).map(|v| (v, self.belief[v])).collect(),
        }
    }

    /// One tracking step after the pursuers moved to `pursuers_after` and
    /// the evader moved to `evader`. `evader` is only tested for membership
    /// in the observed set.
    pub fn update(
        &self,
        g: &Graph,
        pursuers_after: &[NodeId],
        om: &ObservationModel,
        evader: NodeId,
        opp: &dyn OpponentModel,
        ctx: &MoveContext<'_>,
    ) -> Result<BeliefState> {
        self.update_span(g, pursuers_after, om, evader, opp, ctx, 1)
    }

    /// Like [`BeliefState::update`], but accounts for `moves` evader moves
    /// since the last update (used when updates are skipped). Only the
    /// current observed set is removed.
    #[allow(clippy::too_many_arguments)]
    pub fn update_span(
        &self,
        g: &Graph,
        pursuers_after: &[NodeId],
        om: &ObservationModel,
        evader: NodeId,
        opp: &dyn OpponentModel,
        ctx: &MoveContext<'_>,
        moves: usize,
    ) -> Result<BeliefState> {
        let observed = observed_set(g, pursuers_after, om);
        if observed.contains(evader) {
            return Ok(Self::point(g.n(), evader));
        }
        let n = g.n();
        let mut pos = self.pos.clone();
        let mut belief = self.belief.clone();
        for step in 0..moves.max(1) {
            let mut next_pos = NodeSet::new(n);
            let mut next = vec![0.0; n];
            let last = step + 1 == moves.max(1);
            for v in pos.iter() {
                let mass = belief[v];
                for &s in g.closed(v) {
                    if last && observed.contains(s) {
                        continue;
                    }
                    next_pos.insert(s);
                    if mass > 0.0 {
                        next[s] += opp.prob(g, v, s, ctx) * mass;
                    }
                }
            }
            pos = next_pos;
            belief = next;
        }
        if pos.is_empty() {
            return Err(PegError::TrackerCollapse("feasible set is empty".into()));
        }
        let total: f64 = belief.iter().sum();
        if total.is_nan() || total <= 0.0 {
            return Err(PegError::TrackerCollapse("belief mass vanished".into()));
        }
        belief.iter_mut().for_each(|b| *b /= total);
        Ok(BeliefState { pos, belief })
    }
}
