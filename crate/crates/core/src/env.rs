//! JSON-lines episode server.
//!
//! One request per input line, one response per output line. Every response
//! carries `seq`, counting requests from 0 (malformed ones included). The
//! server hosts the evader; the client moves the pursuers.
//!
//! ```text
//! {"cmd":"graphs"}
//! {"cmd":"reset","graph_id":"grid10","seed":7}
//! {"cmd":"step","actions":[11,45]}
//! {"cmd":"close"}
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::belief::ObservationModel;
use crate::error::{PegError, Result};
use crate::graph::{Graph, NodeId};
use crate::policy::{pursuer_belief, PolicyId, TieBreak};
use crate::sim::{Episode, EpisodeConfig, TieBreakMode, DEFAULT_MAX_STEPS};
use crate::solver::{solve, CaptureSpec, DistanceTable, JointState};

/// Graphs the server can host, each with its solved table.
#[derive(Default)]
pub struct Registry {
    entries: BTreeMap<String, (Graph, DistanceTable)>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, graph: Graph, table: DistanceTable) -> Result<()> {
        table.check_graph(&graph)?;
        self.entries.insert(id.into(), (graph, table));
        Ok(())
    }

    /// Every `<id>.json` graph in `dir`. A sibling `<id>.pegd` table is used
    /// when present; otherwise the graph is solved here.
    pub fn load_dir(dir: &Path, m: usize, capture: CaptureSpec, budget: u64) -> Result<Self> {
        let mut reg = Registry::new();
        let mut paths: Vec<_> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
        paths.sort();
        for path in paths {
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| PegError::Config(format!("unusable file name {}", path.display())))?
                .to_string();
            let graph = Graph::load_json(&fs::read(&path)?)?;
            let table_path = path.with_extension("pegd");
            let table = if table_path.exists() {
                let t = DistanceTable::load(fs::File::open(&table_path)?, &graph)?;
                if t.m() != m || !t.capture().equivalent(capture) {
                    return Err(PegError::Config(format!(
                        "{} was solved for m={} capture {}, server wants m={m} capture {capture}",
                        table_path.display(),
                        t.m(),
                        t.capture()
                    )));
                }
                t
            } else {
                solve(&graph, m, capture, budget)?
            };
            reg.insert(id, graph, table)?;
        }
        if reg.entries.is_empty() {
            return Err(PegError::Config(format!("no graph files in {}", dir.display())));
        }
        Ok(reg)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get(&self, id: &str) -> Option<(&Graph, &DistanceTable)> {
        self.entries.get(id).map(|(g, t)| (g, t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub m: usize,
    pub capture: CaptureSpec,
    pub range: u32,
    pub evader: PolicyId,
    pub max_steps: usize,
    pub min_start_separation: Option<u32>,
    pub update_period: usize,
    pub tiebreak: TieBreakMode,
    /// Attach the belief policy's action to every observation.
    pub guidance: bool,
    /// Always reveal the evader (for centralized critics).
    pub privileged: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            m: 2,
            capture: CaptureSpec::Adjacent,
            range: 2,
            evader: PolicyId::DpAsyncEvader,
            max_steps: DEFAULT_MAX_STEPS,
            min_start_separation: None,
            update_period: 1,
            tiebreak: TieBreakMode::Lowest,
            guidance: false,
            privileged: false,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "cmd", rename_all = "lowercase")]
enum Request {
    Reset {
        graph_id: Option<String>,
        seed: Option<u64>,
        #[serde(default)]
        options: ResetOptions,
    },
    Step {
        actions: Vec<NodeId>,
    },
    Graphs,
    Close,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResetOptions {
    start: Option<JointState>,
    max_steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ErrorKind {
    ProtocolError,
    IllegalAction,
    UnknownGraph,
}

/// What the pursuers are allowed to know.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observation {
    pub t: usize,
    pub pursuers: Vec<NodeId>,
    pub pos: Vec<NodeId>,
    pub belief: Vec<(NodeId, f64)>,
    pub observed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evader: Option<NodeId>,
    /// Closed neighborhood of each pursuer.
    pub legal_actions: Vec<Vec<NodeId>>,
    /// `n` rows of width `m + 2`: hop distance to each pursuer over the
    /// diameter, the feasible-set bit, the belief mass.
    pub features: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_action: Option<Vec<NodeId>>,
}

/// Per-node features: distances to each pursuer (over the diameter), the
/// feasible-set bit and the belief mass.
pub fn node_features(g: &Graph, pursuers: &[NodeId], pos: &[NodeId], belief: &[f64]) -> Vec<Vec<f64>> {
    let scale = g.diameter().max(1) as f64;
    let mut in_pos = vec![false; g.n()];
    for &v in pos {
        in_pos[v] = true;
    }
    (0..g.n())
        .map(|v| {
            let mut row: Vec<f64> = pursuers.iter().map(|&p| g.distance(p, v) as f64 / scale).collect();
            row.push(if in_pos[v] { 1.0 } else { 0.0 });
            row.push(belief[v]);
            row
        })
        .collect()
}

/// Request/response state machine behind [`serve`].
pub struct Server<'r> {
    registry: &'r Registry,
    cfg: ServerConfig,
    seq: u64,
    resets: u64,
    graph_id: Option<String>,
    seed: u64,
    episode: Option<Episode<'r>>,
    closed: bool,
}

impl<'r> Server<'r> {
    pub fn new(registry: &'r Registry, cfg: ServerConfig) -> Result<Self> {
        if registry.is_empty() {
            return Err(PegError::Config("registry has no graphs".into()));
        }
        if !cfg.evader.is_evader_policy() {
            return Err(PegError::Config(format!("`{}` is not an evader policy", cfg.evader)));
        }
        for (id, (_, t)) in &registry.entries {
            if t.m() != cfg.m || !t.capture().equivalent(cfg.capture) {
                return Err(PegError::Config(format!("table for `{id}` does not match m={} {}", cfg.m, cfg.capture)));
            }
        }
        Ok(Server { registry, cfg, seq: 0, resets: 0, graph_id: None, seed: 0, episode: None, closed: false })
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Answers one request line.
    pub fn handle(&mut self, line: &str) -> Value {
        let seq = self.seq;
        self.seq += 1;
        let mut out = match serde_json::from_str::<Request>(line) {
            Err(e) => error(ErrorKind::ProtocolError, e.to_string()),
            Ok(req) => self.dispatch(req),
        };
        out["seq"] = json!(seq);
        out
    }

    fn dispatch(&mut self, req: Request) -> Value {
        match req {
            Request::Graphs => {
                let graphs: Vec<Value> = self
                    .registry
                    .entries
                    .iter()
                    .map(|(id, (g, _))| {
                        json!({"graph_id": id, "n": g.n(), "edges": g.edge_count(), "diameter": g.diameter()})
                    })
                    .collect();
                json!({ "graphs": graphs, "m": self.cfg.m })
            }
            Request::Close => {
                self.closed = true;
                self.episode = None;
                json!({ "closed": true })
            }
            Request::Reset { graph_id, seed, options } => self.reset(graph_id, seed, options),
            Request::Step { actions } => self.step(&actions),
        }
    }

    fn reset(&mut self, graph_id: Option<String>, seed: Option<u64>, options: ResetOptions) -> Value {
        let seed = seed.unwrap_or(self.resets);
        let id = match graph_id {
            Some(id) if self.registry.entries.contains_key(&id) => id,
            Some(id) => return error(ErrorKind::UnknownGraph, format!("no graph `{id}`")),
            None => {
                let ids: Vec<&String> = self.registry.entries.keys().collect();
                ids[ChaCha8Rng::seed_from_u64(seed).gen_range(0..ids.len())].clone()
            }
        };
        self.resets += 1;
        let (graph, table) = self.registry.get(&id).expect("checked above");
        let mut cfg = EpisodeConfig::new(graph, Some(table), self.cfg.m);
        cfg.capture = self.cfg.capture;
        cfg.obs = ObservationModel::new(self.cfg.range);
        cfg.evader = self.cfg.evader;
        cfg.max_steps = options.max_steps.unwrap_or(self.cfg.max_steps);
        cfg.seed = seed;
        cfg.min_start_separation = self.cfg.min_start_separation;
        cfg.update_period = self.cfg.update_period;
        cfg.tiebreak = self.cfg.tiebreak;
        cfg.record_trace = false;
        cfg.start = options.start;
        match Episode::new(cfg) {
            Ok(ep) => {
                self.episode = Some(ep);
                self.graph_id = Some(id);
                self.seed = seed;
                self.respond(0.0)
            }
            Err(e) => {
                self.episode = None;
                error(ErrorKind::ProtocolError, format!("reset failed: {e}"))
            }
        }
    }

    fn step(&mut self, actions: &[NodeId]) -> Value {
        let Some(ep) = self.episode.as_mut() else {
            return error(ErrorKind::ProtocolError, "step before reset".into());
        };
        if ep.done() {
            return error(ErrorKind::ProtocolError, "episode is over; send reset".into());
        }
        match ep.advance(actions) {
            Ok(outcome) => self.respond(if outcome.captured { 1.0 } else { 0.0 }),
            Err(PegError::IllegalMove(msg)) => error(ErrorKind::IllegalAction, msg),
            Err(e) => error(ErrorKind::ProtocolError, e.to_string()),
        }
    }

    /// The current observation, as served.
    pub fn observation(&self) -> Option<Observation> {
        let ep = self.episode.as_ref()?;
        let g = ep.config().graph;
        let s = ep.state();
        let tracker = ep.tracker();
        let snap = tracker.snapshot();
        let reference_action = if self.cfg.guidance && !ep.done() {
            let table = ep.config().table.expect("registry entries carry tables");
            pursuer_belief(g, table, &s.pursuers, &tracker.belief, &mut reference_tiebreak(self.cfg.tiebreak)).ok()
        } else {
            None
        };
        Some(Observation {
            t: ep.t(),
            pursuers: s.pursuers.clone(),
            features: node_features(g, &s.pursuers, &snap.pos, &tracker.belief),
            legal_actions: s.pursuers.iter().map(|&p| g.closed(p).to_vec()).collect(),
            pos: snap.pos,
            belief: snap.belief,
            observed: ep.observed(),
            evader: (ep.observed() || self.cfg.privileged).then_some(s.evader),
            reference_action,
        })
    }

    fn respond(&self, reward: f64) -> Value {
        let ep = self.episode.as_ref().expect("episode in progress");
        json!({
            "obs": self.observation(),
            "reward": reward,
            "done": ep.done(),
            "info": {
                "graph_id": self.graph_id,
                "seed": self.seed,
                "captured": ep.captured(),
                "max_steps": ep.config().max_steps,
                "evader_policy": self.cfg.evader.name(),
                "range": self.cfg.range,
                "privileged": self.cfg.privileged,
            },
        })
    }
}

/// The reference action must be reproducible from the observation alone, so
/// seeded tie-breaking falls back to lowest index.
fn reference_tiebreak(mode: TieBreakMode) -> TieBreak {
    match mode {
        TieBreakMode::StayFirst => TieBreak::StayFirst,
        TieBreakMode::Lowest | TieBreakMode::Seeded => TieBreak::LowestIndex,
    }
}

fn error(kind: ErrorKind, message: String) -> Value {
    json!({ "error": kind, "message": message })
}

/// Runs the protocol until `close` or end of input. Blank lines are skipped.
pub fn serve<R: BufRead, W: Write>(registry: &Registry, cfg: ServerConfig, input: R, mut output: W) -> Result<()> {
    let mut server = Server::new(registry, cfg)?;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = server.handle(&line);
        serde_json::to_writer(&mut output, &response).map_err(|e| PegError::Io(e.into()))?;
        output.write_all(b"\n")?;
        output.flush()?;
        if server.is_closed() {
            break;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_grid, generate_path};
    use crate::solver::DEFAULT_BUDGET;

    fn registry() -> Registry {
        let mut reg = Registry::new();
        for (id, g) in [("grid4", generate_grid(4, 4).unwrap()), ("p6", generate_path(6).unwrap())] {
            let t = solve(&g, 1, CaptureSpec::Adjacent, DEFAULT_BUDGET).unwrap();
            reg.insert(id, g, t).unwrap();
        }
        reg
    }

    fn cfg() -> ServerConfig {
        ServerConfig { m: 1, range: 1, ..ServerConfig::default() }
    }

    #[test]
    fn reset_hides_the_evader() {
        let reg = registry();
        let mut s = Server::new(&reg, cfg()).unwrap();
        let r = s.handle(r#"{"cmd":"reset","graph_id":"grid4","seed":3}"#);
        assert_eq!(r["seq"], 0);
        assert_eq!(r["obs"]["observed"], false);
        assert!(r["obs"].get("evader").is_none());
        assert_eq!(r["obs"]["features"].as_array().unwrap().len(), 16);
        assert_eq!(r["obs"]["features"][0].as_array().unwrap().len(), 3);
        assert_eq!(r["reward"], 0.0);
    }

    #[test]
    fn capture_against_stay() {
        let reg = registry();
        let mut s = Server::new(&reg, ServerConfig { evader: PolicyId::Stay, ..cfg() }).unwrap();
        let r = s.handle(r#"{"cmd":"reset","graph_id":"p6","options":{"start":{"pursuers":[0],"evader":3}}}"#);
        assert_eq!(r["done"], false);
        let r = s.handle(r#"{"cmd":"step","actions":[1]}"#);
        assert_eq!(r["reward"], 0.0);
        let r = s.handle(r#"{"cmd":"step","actions":[2]}"#);
        assert_eq!(r["reward"], 1.0);
        assert_eq!(r["done"], true);
        let r = s.handle(r#"{"cmd":"step","actions":[2]}"#);
        assert_eq!(r["error"], "ProtocolError");
    }

    #[test]
    fn errors_leave_state_unchanged() {
        let reg = registry();
        let mut s = Server::new(&reg, cfg()).unwrap();
        assert_eq!(s.handle(r#"{"cmd":"step","actions":[0]}"#)["error"], "ProtocolError");
        s.handle(r#"{"cmd":"reset","graph_id":"p6","options":{"start":{"pursuers":[0],"evader":4}}}"#);
        let before = s.observation();
        let r = s.handle(r#"{"cmd":"step","actions":[3]}"#);
        assert_eq!(r["error"], "IllegalAction");
        assert_eq!(s.handle(r#"{"cmd":"step","actions":[0,1]}"#)["error"], "IllegalAction");
        assert_eq!(s.handle("not json")["error"], "ProtocolError");
        assert_eq!(s.handle(r#"{"cmd":"reset","graph_id":"nope"}"#)["error"], "UnknownGraph");
        assert_eq!(s.observation(), before);
        assert_eq!(s.handle(r#"{"cmd":"graphs"}"#)["seq"], 6);
    }

    #[test]
    fn guidance_matches_belief_policy() {
        let reg = registry();
        let mut s = Server::new(&reg, ServerConfig { guidance: true, ..cfg() }).unwrap();
        let r = s.handle(r#"{"cmd":"reset","graph_id":"grid4","seed":1}"#);
        let (g, t) = reg.get("grid4").unwrap();
        let obs = s.observation().unwrap();
        let mut belief = vec![0.0; g.n()];
        for &(v, b) in &obs.belief {
            belief[v] = b;
        }
        let expect = pursuer_belief(g, t, &obs.pursuers, &belief, &mut TieBreak::LowestIndex).unwrap();
        assert_eq!(r["obs"]["reference_action"], json!(expect));
    }

    #[test]
    fn serve_stops_at_close() {
        let reg = registry();
        let input = "{\"cmd\":\"graphs\"}\n\n{\"cmd\":\"close\"}\n{\"cmd\":\"graphs\"}\n";
        let mut out = Vec::new();
        serve(&reg, cfg(), input.as_bytes(), &mut out).unwrap();
        let lines: Vec<Value> =
            String::from_utf8(out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0]["graphs"][0]["graph_id"], "grid4");
        assert_eq!(lines[1]["closed"], true);
    }
}
