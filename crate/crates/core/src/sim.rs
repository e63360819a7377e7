//! Episode engine and batch evaluator.
//!
//! Each timestep: the pursuers decide on their current information and
//! announce a joint move; the evader responds (asynchronous evaders see the
//! announcement); capture is checked on the post-move state; then the
//! tracker absorbs the new observation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::belief::{
    observed_set, BeliefSnapshot, BeliefState, KnownAsyncEvader, MoveContext, ObservationModel, OpponentModel,
    UniformOpponent,
};
use crate::error::{PegError, Result};
use crate::graph::{Graph, NodeId};
use crate::par::{self, Execution};
use crate::policy::{
    evader_async, evader_sync, is_legal_joint_move, pursuer_belief, pursuer_minimax, pursuer_pos, random_evader,
    random_pursuers, shortest_path_pursuer, PolicyId, PursuerAction, TieBreak,
};
use crate::solver::{terminal, CaptureSpec, DistanceTable, JointState, StateIndex, INFINITY};

pub const DEFAULT_MAX_STEPS: usize = 128;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum TieBreakMode {
    #[default]
    Lowest,
    /// Pursuers break ties toward standing still; the evader keeps lowest
    /// index.
    StayFirst,
    Seeded,
}

impl TieBreakMode {
    pub fn name(self) -> &'static str {
        match self {
            TieBreakMode::Lowest => "lowest",
            TieBreakMode::StayFirst => "stay",
            TieBreakMode::Seeded => "seeded",
        }
    }
}

impl std::str::FromStr for TieBreakMode {
    type Err = PegError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lowest" => Ok(TieBreakMode::Lowest),
            "stay" => Ok(TieBreakMode::StayFirst),
            "seeded" => Ok(TieBreakMode::Seeded),
            other => Err(PegError::Config(format!("unknown tie-break `{other}` (lowest|stay|seeded)"))),
        }
    }
}

/// Opponent model used by the tracker.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum OpponentKind {
    #[default]
    Uniform,
    /// The table's asynchronous evader (exact against deterministic pursuers).
    KnownAsync,
}

#[derive(Debug, Clone)]
pub struct EpisodeConfig<'a> {
    pub graph: &'a Graph,
    pub table: Option<&'a DistanceTable>,
    pub m: usize,
    pub capture: CaptureSpec,
    pub obs: ObservationModel,
    pub pursuer: PolicyId,
    pub evader: PolicyId,
    pub max_steps: usize,
    pub seed: u64,
    /// Starts need every pursuer strictly farther than this from the
    /// evader. `None` means the observation range.
    pub min_start_separation: Option<u32>,
    pub require_finite_d: bool,
    /// The tracker absorbs observations every `update_period` steps.
    pub update_period: usize,
    pub tiebreak: TieBreakMode,
    pub opponent: OpponentKind,
    pub record_trace: bool,
    /// Fixed start instead of a sampled one.
    pub start: Option<JointState>,
}

impl<'a> EpisodeConfig<'a> {
    /// Defaults: adjacent capture, range 2, belief pursuers against the
    /// asynchronous table evader, 128 steps.
    pub fn new(graph: &'a Graph, table: Option<&'a DistanceTable>, m: usize) -> Self {
        EpisodeConfig {
            graph,
            table,
            m,
            capture: table.map(|t| t.capture()).unwrap_or_default(),
            obs: ObservationModel::new(2),
            pursuer: PolicyId::DpBelief,
            evader: PolicyId::DpAsyncEvader,
            max_steps: DEFAULT_MAX_STEPS,
            seed: 0,
            min_start_separation: None,
            require_finite_d: false,
            update_period: 1,
            tiebreak: TieBreakMode::Lowest,
            opponent: OpponentKind::Uniform,
            record_trace: true,
            start: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(PegError::Config("max_steps must be at least 1".into()));
        }
        if self.m == 0 {
            return Err(PegError::Config("need at least one pursuer".into()));
        }
        if self.update_period == 0 {
            return Err(PegError::Config("update period must be at least 1".into()));
        }
        if !self.pursuer.is_pursuer_policy() {
            return Err(PegError::Config(format!("`{}` is not a pursuer policy", self.pursuer)));
        }
        if !self.evader.is_evader_policy() {
            return Err(PegError::Config(format!("`{}` is not an evader policy", self.evader)));
        }
        for &s in &self.obs.sensors {
            self.graph.check_node(s)?;
        }
        let needs_table = self.pursuer.needs_table()
            || self.evader.needs_table()
            || self.require_finite_d
            || self.opponent == OpponentKind::KnownAsync;
        match self.table {
            Some(t) => {
                t.check_graph(self.graph)?;
                if t.m() != self.m {
                    return Err(PegError::Dimension(format!("table has m={}, config m={}", t.m(), self.m)));
                }
                if !t.capture().equivalent(self.capture) {
                    return Err(PegError::Config(format!(
                        "table solved for capture {}, config uses {}",
                        t.capture(),
                        self.capture
                    )));
                }
            }
            None if needs_table => {
                return Err(PegError::Config("these policies need a solved table".into()));
            }
            None => {}
        }
        if let Some(s) = &self.start {
            s.validate(self.graph)?;
            if s.m() != self.m {
                return Err(PegError::Dimension("start state pursuer count differs from m".into()));
            }
        }
        Ok(())
    }

    fn separation(&self) -> u32 {
        self.min_start_separation.unwrap_or(self.obs.range)
    }

    fn valid_start(&self, s: &JointState) -> bool {
        let sep = self.separation();
        s.pursuers.iter().all(|&p| self.graph.distance(p, s.evader) > sep)
            && !terminal(self.graph, self.capture, s)
            && (!self.require_finite_d || self.table.is_some_and(|t| t.lookup(s).is_ok_and(|d| d != INFINITY)))
    }
}

const REJECTION_TRIES: usize = 10_000;
const ENUMERATION_LIMIT: usize = 1 << 26;

/// Uniform draw over joint states satisfying the start constraints.
pub fn sample_initial<R: Rng + ?Sized>(cfg: &EpisodeConfig<'_>, rng: &mut R) -> Result<JointState> {
    let n = cfg.graph.n();
    for _ in 0..REJECTION_TRIES {
        let pursuers: Vec<NodeId> = (0..cfg.m).map(|_| rng.gen_range(0..n)).collect();
        let s = JointState::new(pursuers, rng.gen_range(0..n));
        if cfg.valid_start(&s) {
            return Ok(s);
        }
    }
    // Rare valid starts: enumerate and draw directly.
    let index = StateIndex::new(n, cfg.m);
    if index.len() > ENUMERATION_LIMIT {
        return Err(PegError::NoValidStart);
    }
    let valid: Vec<usize> = (0..index.len()).filter(|&i| cfg.valid_start(&index.decode(i))).collect();
    if valid.is_empty() {
        return Err(PegError::NoValidStart);
    }
    Ok(index.decode(valid[rng.gen_range(0..valid.len())]))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceStep {
    pub t: usize,
    pub pursuers: Vec<NodeId>,
    pub evader: NodeId,
    pub observed: bool,
    #[serde(flatten)]
    pub tracker: BeliefSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeResult {
    pub captured: bool,
    pub steps: usize,
    pub start: JointState,
    /// One entry per timestep including the start; empty unless recorded.
    pub trace: Vec<TraceStep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    pub captured: bool,
    pub observed: bool,
}

enum Opponent<'t> {
    Uniform(UniformOpponent),
    Known(KnownAsyncEvader<'t>),
}

impl Opponent<'_> {
    fn model(&self) -> &dyn OpponentModel {
        match self {
            Opponent::Uniform(u) => u,
            Opponent::Known(k) => k,
        }
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A live episode.
pub struct Episode<'a> {
    cfg: EpisodeConfig<'a>,
    start: JointState,
    state: JointState,
    tracker: BeliefState,
    opponent: Opponent<'a>,
    pursuer_rng: ChaCha8Rng,
    evader_rng: ChaCha8Rng,
    pursuer_tb: TieBreak,
    evader_tb: TieBreak,
    t: usize,
    since_update: usize,
    captured: bool,
    observed: bool,
    trace: Vec<TraceStep>,
}

impl<'a> Episode<'a> {
    pub fn new(cfg: EpisodeConfig<'a>) -> Result<Self> {
        cfg.validate()?;
        let start = match &cfg.start {
            Some(s) => s.clone(),
            None => sample_initial(&cfg, &mut stream_rng(cfg.seed, 0))?,
        };
        let (pursuer_tb, evader_tb) = match cfg.tiebreak {
            TieBreakMode::Lowest => (TieBreak::LowestIndex, TieBreak::LowestIndex),
            TieBreakMode::StayFirst => (TieBreak::StayFirst, TieBreak::LowestIndex),
            TieBreakMode::Seeded => (
                TieBreak::SeededUniform(Box::new(stream_rng(cfg.seed, 3))),
                TieBreak::SeededUniform(Box::new(stream_rng(cfg.seed, 4))),
            ),
        };
        let opponent = match (cfg.opponent, cfg.table) {
            (OpponentKind::KnownAsync, Some(table)) => Opponent::Known(KnownAsyncEvader { table }),
            _ => Opponent::Uniform(UniformOpponent),
        };
        let tracker = BeliefState::init(cfg.graph, start.evader)?;
        let observed = observed_set(cfg.graph, &start.pursuers, &cfg.obs).contains(start.evader);
        let mut ep = Episode {
            pursuer_rng: stream_rng(cfg.seed, 1),
            evader_rng: stream_rng(cfg.seed, 2),
            captured: terminal(cfg.graph, cfg.capture, &start),
            cfg,
            state: start.clone(),
            start,
            tracker,
            opponent,
            pursuer_tb,
            evader_tb,
            t: 0,
            since_update: 0,
            observed,
            trace: Vec::new(),
        };
        ep.record();
        Ok(ep)
    }

    fn record(&mut self) {
        if self.cfg.record_trace {
            self.trace.push(TraceStep {
                t: self.t,
                pursuers: self.state.pursuers.clone(),
                evader: self.state.evader,
                observed: self.observed,
                tracker: self.tracker.snapshot(),
            });
        }
    }

    pub fn state(&self) -> &JointState {
        &self.state
    }

    pub fn tracker(&self) -> &BeliefState {
        &self.tracker
    }

    pub fn config(&self) -> &EpisodeConfig<'a> {
        &self.cfg
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn observed(&self) -> bool {
        self.observed
    }

    pub fn captured(&self) -> bool {
        self.captured
    }

    /// Captured, or out of steps.
    pub fn done(&self) -> bool {
        self.captured || self.t >= self.cfg.max_steps
    }

    fn table(&self) -> Result<&'a DistanceTable> {
        self.cfg.table.ok_or_else(|| PegError::Config("policy needs a table".into()))
    }

    /// The configured pursuer policy's move for the current timestep.
    pub fn pursuer_decision(&mut self) -> Result<PursuerAction> {
        let g = self.cfg.graph;
        let sp = &self.state.pursuers;
        match self.cfg.pursuer {
            PolicyId::DpMinimax => pursuer_minimax(g, self.table()?, &self.state, &mut self.pursuer_tb),
            PolicyId::DpPos => pursuer_pos(g, self.table()?, sp, &self.tracker.pos, &mut self.pursuer_tb),
            PolicyId::DpBelief => pursuer_belief(g, self.table()?, sp, &self.tracker.belief, &mut self.pursuer_tb),
            PolicyId::ShortestPath => Ok(shortest_path_pursuer(g, &self.state)),
            PolicyId::Random => Ok(random_pursuers(g, sp, &mut self.pursuer_rng)),
            PolicyId::Stay => Ok(sp.clone()),
            other => Err(PegError::Config(format!("`{other}` is not a pursuer policy"))),
        }
    }

    fn evader_response(&mut self, announced: &[NodeId]) -> Result<NodeId> {
        let g = self.cfg.graph;
        match self.cfg.evader {
            PolicyId::DpAsyncEvader => evader_async(g, self.table()?, &self.state, announced, &mut self.evader_tb),
            // Decides on the pre-move state; the announcement is not visible.
            PolicyId::DpSyncEvader => evader_sync(g, self.table()?, &self.state, &mut self.evader_tb),
            PolicyId::Random => Ok(random_evader(g, self.state.evader, &mut self.evader_rng)),
            PolicyId::Stay => Ok(self.state.evader),
            other => Err(PegError::Config(format!("`{other}` is not an evader policy"))),
        }
    }

    /// Applies a pursuer joint move, lets the evader respond, checks capture
    /// and updates the tracker.
    pub fn advance(&mut self, action: &[NodeId]) -> Result<StepOutcome> {
        if self.done() {
            return Err(PegError::Config("episode is over".into()));
        }
        let g = self.cfg.graph;
        if !is_legal_joint_move(g, &self.state.pursuers, action) {
            return Err(PegError::IllegalMove(format!("{:?} is not reachable from {:?}", action, self.state.pursuers)));
        }
        let evader = self.evader_response(action)?;
        if g.closed(self.state.evader).binary_search(&evader).is_err() {
            return Err(PegError::IllegalMove(format!("evader move {} -> {evader}", self.state.evader)));
        }
        let before = std::mem::replace(&mut self.state.pursuers, action.to_vec());
        self.state.evader = evader;
        self.t += 1;
        self.since_update += 1;
        self.captured = terminal(g, self.cfg.capture, &self.state);
        self.observed = observed_set(g, &self.state.pursuers, &self.cfg.obs).contains(evader);
        if self.t.is_multiple_of(self.cfg.update_period) {
            let ctx = MoveContext { pursuers_before: &before, pursuers_after: &self.state.pursuers };
            self.tracker = self.tracker.update_span(
                g,
                &self.state.pursuers,
                &self.cfg.obs,
                evader,
                self.opponent.model(),
                &ctx,
                self.since_update,
            )?;
            self.since_update = 0;
        }
        self.record();
        Ok(StepOutcome { captured: self.captured, observed: self.observed })
    }

    /// One full timestep under the configured pursuer policy.
    pub fn step(&mut self) -> Result<StepOutcome> {
        let action = self.pursuer_decision()?;
        self.advance(&action)
    }

    pub fn run(mut self) -> Result<EpisodeResult> {
        while !self.done() {
            self.step()?;
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> EpisodeResult {
        EpisodeResult { captured: self.captured, steps: self.t, start: self.start, trace: self.trace }
    }
}

pub fn run_episode(cfg: &EpisodeConfig<'_>) -> Result<EpisodeResult> {
    Episode::new(cfg.clone())?.run()
}

/// Counter-based split of the master seed; episode `i` gets the same seed
/// regardless of execution order.
pub fn episode_seed(master: u64, i: u64) -> u64 {
    let mut z = master ^ i.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub pursuer: String,
    pub evader: String,
    pub range: u32,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Mean steps over captured episodes.
    pub mean_capture_steps: Option<f64>,
    pub seed: u64,
}

impl EvalReport {
    /// One row, shaped like a results table line.
    pub fn table_row(&self) -> String {
        format!(
            "{:<16} {:<16} {:>5} {:>8} {:>9} {:>7.2} {:>10}",
            self.pursuer,
            self.evader,
            self.range,
            self.episodes,
            self.successes,
            self.success_rate,
            self.mean_capture_steps.map_or("-".to_string(), |m| format!("{m:.2}"))
        )
    }

    pub fn table_header() -> String {
        format!(
            "{:<16} {:<16} {:>5} {:>8} {:>9} {:>7} {:>10}",
            "pursuer", "evader", "range", "episodes", "successes", "rate", "mean-steps"
        )
    }
}

/// Runs `episodes` independently seeded episodes and aggregates them.
/// Episode `i` uses `episode_seed(cfg.seed, i)`, so two configurations with
/// the same master seed face the same starts.
pub fn evaluate(cfg: &EpisodeConfig<'_>, episodes: usize, exec: Execution) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(PegError::Config("need at least one episode".into()));
    }
    cfg.validate()?;
    let outcomes = par::map_range_with(exec, episodes, |i| {
        let mut c = cfg.clone();
        c.seed = episode_seed(cfg.seed, i as u64);
        c.record_trace = false;
        run_episode(&c).map(|r| (r.captured, r.steps))
    });
    let mut successes = 0;
    let mut steps = 0;
    for o in outcomes {
        let (captured, s) = o?;
        if captured {
            successes += 1;
            steps += s;
        }
    }
    Ok(EvalReport {
        pursuer: cfg.pursuer.to_string(),
        evader: cfg.evader.to_string(),
        range: cfg.obs.range,
        episodes,
        successes,
        success_rate: successes as f64 / episodes as f64,
        mean_capture_steps: (successes > 0).then(|| steps as f64 / successes as f64),
        seed: cfg.seed,
    })
}
