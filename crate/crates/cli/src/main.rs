use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use peg_core::belief::ObservationModel;
use peg_core::env::{serve, Registry, ServerConfig};
use peg_core::graph::{generate_cycle, generate_geometric, generate_grid, generate_path, Graph};
use peg_core::oracle::{assert_equal, marking_fixpoint_with, recurrence_violations, ORACLE_BUDGET};
use peg_core::par::{with_threads, Execution};
use peg_core::policy::PolicyId;
use peg_core::sim::{evaluate, run_episode, EpisodeConfig, EvalReport, OpponentKind, TieBreakMode};
use peg_core::solver::{solve_with_stats, CaptureSpec, DistanceTable, DEFAULT_BUDGET};

#[derive(Parser)]
#[command(name = "peg", version, about = "Pursuit-evasion games on graphs")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the capture-distance table for a graph.
    Solve(SolveArgs),
    /// Success rate of a pursuer policy over seeded episodes.
    Eval(EvalArgs),
    /// Play one episode.
    Play(PlayArgs),
    /// Write a generated graph as JSON.
    Gen(GenArgs),
    /// Check the solver against the brute-force oracle.
    Verify(VerifyArgs),
    /// Serve episodes as JSON lines on stdin/stdout.
    EnvServe(ServeArgs),
}

#[derive(Args)]
struct GameArgs {
    /// Number of pursuers.
    #[arg(long, default_value_t = 2)]
    m: usize,
    /// colocated | adjacent | radius:k
    #[arg(long, default_value = "adjacent")]
    capture: CaptureSpec,
    /// Entry budget for table solving.
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: u64,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    graph: PathBuf,
    #[command(flatten)]
    game: GameArgs,
    /// Table output path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EpisodeArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Pre-solved table; solved on the fly when absent.
    #[arg(long)]
    table: Option<PathBuf>,
    #[command(flatten)]
    game: GameArgs,
    #[arg(long, default_value = "dp-belief")]
    pursuer: PolicyId,
    #[arg(long, default_value = "dp-async-evader")]
    evader: PolicyId,
    /// Pursuer observation range in hops.
    #[arg(long, default_value_t = 2)]
    range: u32,
    /// Static sensor nodes (comma separated).
    #[arg(long, value_delimiter = ',')]
    sensors: Vec<usize>,
    #[arg(long, default_value_t = 128)]
    max_steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pursuers start strictly farther than this from the evader (default: range).
    #[arg(long)]
    min_separation: Option<u32>,
    /// Only start from states with finite capture distance.
    #[arg(long)]
    finite_start: bool,
    /// Update the tracker every k steps.
    #[arg(long, default_value_t = 1)]
    update_period: usize,
    /// lowest | stay | seeded
    #[arg(long, default_value = "lowest")]
    tiebreak: TieBreakMode,
    /// Opponent model used by the tracker: uniform | known
    #[arg(long, default_value = "uniform")]
    opponent: String,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    ep: EpisodeArgs,
    #[arg(long, default_value_t = 500)]
    episodes: usize,
    /// Worker threads (0 = all cores, 1 = sequential).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct PlayArgs {
    #[command(flatten)]
    ep: EpisodeArgs,
    /// Emit the full per-step trace.
    #[arg(long)]
    trace: bool,
    /// Write the result here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[command(subcommand)]
    kind: GenKind,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum GenKind {
    Grid {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
    },
    Path {
        #[arg(long)]
        n: usize,
    },
    Cycle {
        #[arg(long)]
        n: usize,
    },
    /// Random geometric graph in the unit square, made connected.
    Geometric {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        radius: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value_t = 2)]
    m: usize,
    #[arg(long, default_value = "adjacent")]
    capture: CaptureSpec,
    #[arg(long, default_value_t = ORACLE_BUDGET)]
    budget: u64,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ServeArgs {
    /// Directory of `<id>.json` graphs with optional `<id>.pegd` tables.
    #[arg(long)]
    graphs: PathBuf,
    #[command(flatten)]
    game: GameArgs,
    #[arg(long, default_value = "dp-async-evader")]
    evader: PolicyId,
    #[arg(long, default_value_t = 2)]
    range: u32,
    #[arg(long, default_value_t = 128)]
    max_steps: usize,
    #[arg(long)]
    min_separation: Option<u32>,
    #[arg(long, default_value_t = 1)]
    update_period: usize,
    #[arg(long, default_value = "lowest")]
    tiebreak: TieBreakMode,
    /// Attach the belief policy's action to every observation.
    #[arg(long)]
    guidance: bool,
    /// Reveal the evader in every observation.
    #[arg(long)]
    privileged: bool,
}

fn read_graph(path: &Path) -> Result<Graph> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Graph::load_json(&bytes).with_context(|| format!("loading {}", path.display()))
}

fn load_or_solve(g: &Graph, table: Option<&Path>, game: &GameArgs) -> Result<DistanceTable> {
    match table {
        Some(path) => {
            let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let t = DistanceTable::load(io::BufReader::new(file), g)
                .with_context(|| format!("loading {}", path.display()))?;
            if t.m() != game.m {
                bail!("{} was solved for m={}, not m={}", path.display(), t.m(), game.m);
            }
            Ok(t)
        }
        None => Ok(solve_with_stats(g, game.m, game.capture, game.budget)?.0),
    }
}

fn episode_config<'a>(a: &EpisodeArgs, g: &'a Graph, t: &'a DistanceTable) -> Result<EpisodeConfig<'a>> {
    let mut cfg = EpisodeConfig::new(g, Some(t), a.game.m);
    cfg.capture = t.capture();
    cfg.obs = ObservationModel::with_sensors(a.range, a.sensors.clone());
    cfg.pursuer = a.pursuer;
    cfg.evader = a.evader;
    cfg.max_steps = a.max_steps;
    cfg.seed = a.seed;
    cfg.min_start_separation = a.min_separation;
    cfg.require_finite_d = a.finite_start;
    cfg.update_period = a.update_period;
    cfg.tiebreak = a.tiebreak;
    cfg.opponent = match a.opponent.as_str() {
        "uniform" => OpponentKind::Uniform,
        "known" => OpponentKind::KnownAsync,
        other => bail!("unknown opponent model `{other}` (uniform|known)"),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn cmd_solve(a: SolveArgs) -> Result<()> {
    let g = read_graph(&a.graph)?;
    let started = Instant::now();
    let (t, stats) = solve_with_stats(&g, a.game.m, a.game.capture, a.game.budget)?;
    let seconds = started.elapsed().as_secs_f64();
    if let Some(out) = &a.out {
        let file = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
        t.save(BufWriter::new(file))?;
    }
    if a.json {
        print_json(&json!({
            "n": g.n(),
            "m": a.game.m,
            "capture": a.game.capture.to_string(),
            "states": stats.states,
            "terminal": stats.terminal,
            "max_finite": stats.max_finite,
            "infinite": stats.infinite,
            "table_bytes": t.entry_bytes(),
            "seconds": seconds,
        }))
    } else {
        println!(
            "n={} m={} capture={} states={} max finite D={} infinite states={} ({:.2}s)",
            g.n(),
            a.game.m,
            a.game.capture,
            stats.states,
            stats.max_finite,
            stats.infinite,
            seconds
        );
        Ok(())
    }
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let g = read_graph(&a.ep.graph)?;
    let t = load_or_solve(&g, a.ep.table.as_deref(), &a.ep.game)?;
    let cfg = episode_config(&a.ep, &g, &t)?;
    let exec = if a.jobs == 1 { Execution::Sequential } else { Execution::Parallel };
    let report = with_threads(a.jobs, || evaluate(&cfg, a.episodes, exec))?;
    if a.json {
        print_json(&report)
    } else {
        println!("{}", EvalReport::table_header());
        println!("{}", report.table_row());
        Ok(())
    }
}

fn cmd_play(a: PlayArgs) -> Result<()> {
    let g = read_graph(&a.ep.graph)?;
    let t = load_or_solve(&g, a.ep.table.as_deref(), &a.ep.game)?;
    let mut cfg = episode_config(&a.ep, &g, &t)?;
    cfg.record_trace = a.trace;
    let result = run_episode(&cfg)?;
    let text = serde_json::to_string(&result)?;
    match &a.out {
        Some(path) => fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let g = match a.kind {
        GenKind::Grid { rows, cols } => generate_grid(rows, cols)?,
        GenKind::Path { n } => generate_path(n)?,
        GenKind::Cycle { n } => generate_cycle(n)?,
        GenKind::Geometric { n, radius, seed } => generate_geometric(n, radius, seed)?,
    };
    match &a.out {
        Some(path) => fs::write(path, g.to_json() + "\n").with_context(|| format!("writing {}", path.display()))?,
        None => println!("{}", g.to_json()),
    }
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> Result<bool> {
    let g = read_graph(&a.graph)?;
    let exec = if a.jobs == 1 { Execution::Sequential } else { Execution::Parallel };
    let (t, o) = with_threads(a.jobs, || -> Result<_> {
        let (t, _) = solve_with_stats(&g, a.m, a.capture, a.budget)?;
        let o = marking_fixpoint_with(&g, a.m, a.capture, a.budget, exec)?;
        Ok((t, o))
    })?;
    let diffs = assert_equal(&t, &o)?;
    let violations = recurrence_violations(&g, &t);
    if a.json {
        print_json(&json!({
            "differences": diffs.len(),
            "recurrence_violations": violations.len(),
            "oracle_sweeps": o.sweeps,
            "first_differences": &diffs[..diffs.len().min(10)],
        }))?;
    } else {
        println!("{} differences", diffs.len());
        println!("{} recurrence violations", violations.len());
        for d in diffs.iter().take(10) {
            println!("  pursuers={:?} evader={} table={} oracle={}", d.pursuers, d.evader, d.table, d.oracle);
        }
    }
    Ok(diffs.is_empty() && violations.is_empty())
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let registry = Registry::load_dir(&a.graphs, a.game.m, a.game.capture, a.game.budget)?;
    let cfg = ServerConfig {
        m: a.game.m,
        capture: a.game.capture,
        range: a.range,
        evader: a.evader,
        max_steps: a.max_steps,
        min_start_separation: a.min_separation,
        update_period: a.update_period,
        tiebreak: a.tiebreak,
        guidance: a.guidance,
        privileged: a.privileged,
    };
    if a.privileged {
        eprintln!("peg env-serve: privileged mode, evader positions are always revealed");
    }
    let stdin = io::stdin().lock();
    let stdout = io::stdout().lock();
    serve(&registry, cfg, stdin, stdout)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Command::Solve(a) => cmd_solve(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Play(a) => cmd_play(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Verify(a) => match cmd_verify(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(1),
            Err(e) => Err(e),
        },
        Command::EnvServe(a) => cmd_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
