//! Command line driver.
//!
//! Every subcommand loads a model description from `--model`, derives all of
//! its randomness from `--seed` through numbered streams, and writes either
//! JSON (reports) or CSV (bulk samples) to `--out` or stdout. Output is a
//! pure function of the arguments: re-running a command with the same seed
//! reproduces it byte for byte, regardless of `--workers`.
//!
//! Exit codes: 0 when the command (and any test it contains) succeeds, 1 when
//! a contained statistical check fails, 2 on usage or model errors.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use serde::Serialize;

use mgw::conductance::{
    classify_rwre, effective_conductance, recurrence_simulation_check, resistance_growth_check,
    RecurrenceReport,
};
use mgw::experiments::{
    coupling_environment_check, cts_clt, degree_resolvent_average, imgwr_degree_stationarity,
    rayed_clt, rooted_clt, CltRun, EnvMode, ErgodicReport, StationarityReport, ERGODIC_REL_TOL,
};
use mgw::model::{ExtinctionData, Flavor, Model};
use mgw::sampler::{Measure, MeasureSpec, RootLaw, Sampled, Sampler};
use mgw::stats::Thresholds;
use mgw::rng::derive_stream;
use mgw::tree::{NodeId, Tree};
use mgw::walk::{run_rayed_walk, run_rayed_walk_cts, run_rooted_walk, run_rooted_walk_cts, Record};
use mgw::{MgwError, Result};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

#[derive(Parser)]
#[command(
    name = "mgw",
    version,
    about = "Samplers, biased walks, and diagnostics for multi-type branching environments"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// Model description (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    model: Option<PathBuf>,
    /// Master seed; each replica derives its own stream from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Replica count: trees, paths, or runs, depending on the subcommand.
    #[arg(long, global = true, default_value_t = 1)]
    replicas: usize,
    /// Worker threads (0 keeps the library default).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Output file; stdout when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Format for bulk output; reports are always JSON.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Cmd {
    /// Mean matrix, eigendata, ray kernel, extinction probabilities, the
    /// infinite-descent transform, and the tilted-radius curve.
    Spectral,
    /// Draw trees from one of the tree measures and dump their nodes.
    Sample(SampleArgs),
    /// Run biased walks and dump their trajectories.
    Walk(WalkArgs),
    /// Height CLT: rescaled multi-time samples plus a KS report.
    Clt(CltArgs),
    /// Stationarity and ergodic-average checks of the reversing measure.
    ReverseCheck(ReverseArgs),
    /// Recurrence / transience classifier, optionally cross-checked by walks.
    Rwre(RwreArgs),
    /// Shifted-coupling consistency check of the environment exchange.
    Couple(CoupleArgs),
    /// Effective conductance along the ancestor line.
    Conductance(ConductanceArgs),
}

#[derive(Args)]
struct SampleArgs {
    /// Tree measure to draw from.
    #[arg(long, value_enum, default_value_t = MeasureArg::Mgw)]
    measure: MeasureArg,
    /// Root law: canonical, stationary, or fixed:IDX.
    #[arg(long, default_value = "canonical", value_parser = parse_root)]
    root: RootArg,
    /// Growth horizon below the root, or below each ray vertex.
    #[arg(long, default_value_t = 4)]
    depth: i32,
    /// Ray vertices to materialize for ray-marked measures.
    #[arg(long, default_value_t = 8)]
    ray_depth: usize,
    /// Marked-path length for the marked-path measure.
    #[arg(long, default_value_t = 8)]
    level: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MeasureArg {
    Mgw,
    MgwNonextinct,
    Imgw0,
    Imgw,
    Imgwr,
    Qnstar,
}

impl From<MeasureArg> for Measure {
    fn from(m: MeasureArg) -> Measure {
        match m {
            MeasureArg::Mgw => Measure::Mgw,
            MeasureArg::MgwNonextinct => Measure::MgwNonextinct,
            MeasureArg::Imgw0 => Measure::Imgw0,
            MeasureArg::Imgw => Measure::Imgw,
            MeasureArg::Imgwr => Measure::Imgwr,
            MeasureArg::Qnstar => Measure::Qnstar,
        }
    }
}

#[derive(Clone, Copy)]
struct RootArg(RootLaw);

fn parse_root(s: &str) -> std::result::Result<RootArg, String> {
    match s {
        "canonical" => Ok(RootArg(RootLaw::Canonical)),
        "stationary" => Ok(RootArg(RootLaw::Stationary)),
        _ => match s.strip_prefix("fixed:") {
            Some(idx) => idx
                .parse::<usize>()
                .map(|i| RootArg(RootLaw::Fixed(i)))
                .map_err(|e| format!("bad type index in {s:?}: {e}")),
            None => Err(format!(
                "expected canonical, stationary, or fixed:IDX, got {s:?}"
            )),
        },
    }
}

#[derive(Args)]
struct WalkArgs {
    /// Walk geometry and clock.
    #[arg(long, value_enum, default_value_t = KindArg::Rooted)]
    kind: KindArg,
    /// Bias parameter; defaults to the spectral radius.
    #[arg(long)]
    lambda: Option<f64>,
    /// Steps for the discrete-time kinds.
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    /// Time horizon for the continuous-time kinds.
    #[arg(long, default_value_t = 100.0)]
    time: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Rooted,
    Rayed,
    RootedCts,
    RayedCts,
}

impl KindArg {
    fn continuous(self) -> bool {
        matches!(self, KindArg::RootedCts | KindArg::RayedCts)
    }

    fn rooted(self) -> bool {
        matches!(self, KindArg::Rooted | KindArg::RootedCts)
    }
}

#[derive(Args)]
struct CltArgs {
    /// quenched fixes one seeded environment for all paths, annealed
    /// resamples it per path, cts runs the continuous-time clock on a
    /// quenched environment.
    #[arg(long, value_enum, default_value_t = CltMode::Quenched)]
    mode: CltMode,
    /// Walk geometry; the continuous-time mode supports rooted only.
    #[arg(long, value_enum, default_value_t = CltWalk::Rooted)]
    walk: CltWalk,
    /// Steps per path.
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    /// Time horizon for the continuous-time mode.
    #[arg(long, default_value_t = 10_000.0)]
    time: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CltMode {
    Quenched,
    Annealed,
    Cts,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CltWalk {
    Rooted,
    Rayed,
}

#[derive(Args)]
struct ReverseArgs {
    /// Environment draws for the one-step stationarity chi-square.
    #[arg(long, default_value_t = 20_000)]
    samples: usize,
    /// Length of the single long walk behind the ergodic average.
    #[arg(long, default_value_t = 200_000)]
    steps: usize,
}

#[derive(Args)]
struct RwreArgs {
    /// Bias parameter to classify; defaults to the spectral radius.
    #[arg(long, conflicts_with = "sweep")]
    lambda: Option<f64>,
    /// Comma-separated list of bias parameters to classify.
    #[arg(long, value_delimiter = ',')]
    sweep: Vec<f64>,
    /// Cross-check each verdict by simulation: T steps per walk, N walks.
    #[arg(long, num_args = 2, value_names = ["T", "N"])]
    simulate: Option<Vec<usize>>,
}

#[derive(Args)]
struct CoupleArgs {
    /// Shift scale; the replay window near the origin has length ell(n).
    #[arg(long, default_value_t = 2000)]
    n: usize,
    /// Walk steps per run; defaults to n.
    #[arg(long)]
    steps: Option<usize>,
    /// Starting type of the rooted side.
    #[arg(long, default_value_t = 0)]
    a0: usize,
    /// Radius of the compared origin balls.
    #[arg(long, default_value_t = 3)]
    ball: usize,
}

#[derive(Args)]
struct ConductanceArgs {
    /// Survey resistance growth over many trees instead of one curve.
    #[arg(long)]
    survey: bool,
    /// Largest depth of the single-tree conductance curve.
    #[arg(long, default_value_t = 12)]
    k_max: i32,
    /// Bias parameter; defaults to the spectral radius.
    #[arg(long)]
    lambda: Option<f64>,
    /// Comma-separated depths for the survey.
    #[arg(long, value_delimiter = ',', default_values_t = vec![4, 8, 16, 32])]
    ks: Vec<usize>,
    /// Exceedance margin for the survey's scaled-conductance tail counts.
    #[arg(long, default_value_t = 0.5)]
    epsilon: f64,
    /// Root type for the survey.
    #[arg(long, default_value_t = 0)]
    root_type: usize,
}

/// Buffered output sink. Everything is accumulated and flushed once, so a
/// failed run never leaves a partial file behind.
struct Out {
    target: Option<PathBuf>,
    buf: Vec<u8>,
}

impl Out {
    fn new(target: Option<PathBuf>) -> Out {
        Out {
            target,
            buf: Vec::new(),
        }
    }

    fn line(&mut self, s: &str) {
        self.buf.extend_from_slice(s.as_bytes());
        self.buf.push(b'\n');
    }

    fn json<T: Serialize>(&mut self, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        self.line(&text);
        Ok(())
    }

    fn finish(self) -> Result<()> {
        match self.target {
            Some(path) => std::fs::write(path, self.buf)?,
            None => std::io::stdout().write_all(&self.buf)?,
        }
        Ok(())
    }
}

fn run(cli: Cli) -> Result<bool> {
    let g = cli.global;
    if g.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(g.workers)
            .build_global()
            .map_err(|e| MgwError::Io(std::io::Error::other(format!("thread pool: {e}"))))?;
    }
    let path = g
        .model
        .as_ref()
        .ok_or_else(|| MgwError::Model("--model is required".into()))?;
    let model = Arc::new(Model::load(path)?);
    let mut out = Out::new(g.out.clone());
    let pass = match cli.cmd {
        Cmd::Spectral => cmd_spectral(&model, &mut out)?,
        Cmd::Sample(a) => cmd_sample(&model, &g, &a, &mut out)?,
        Cmd::Walk(a) => cmd_walk(&model, &g, &a, &mut out)?,
        Cmd::Clt(a) => cmd_clt(&model, &g, &a, &mut out)?,
        Cmd::ReverseCheck(a) => cmd_reverse_check(&model, &g, &a, &mut out)?,
        Cmd::Rwre(a) => cmd_rwre(&model, &g, &a, &mut out)?,
        Cmd::Couple(a) => cmd_couple(&model, &g, &a, &mut out)?,
        Cmd::Conductance(a) => cmd_conductance(&model, &g, &a, &mut out)?,
    };
    out.finish()?;
    Ok(pass)
}

fn flavor_name(flavor: Flavor) -> &'static str {
    match flavor {
        Flavor::Unit => "unit",
        Flavor::Weighted => "weighted",
    }
}

// ---------------------------------------------------------------------------
// spectral
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SpectralReport {
    types: Vec<String>,
    flavor: &'static str,
    gamma: f64,
    mean_matrix: Vec<Vec<f64>>,
    rho: f64,
    right: Vec<f64>,
    left: Vec<f64>,
    ray_kernel: Vec<Vec<f64>>,
    reversed_kernel: Vec<Vec<f64>>,
    stationary: Vec<f64>,
    extinction: ExtinctionData,
    /// The model conditioned on infinite descent from every vertex.
    descent_model: serde_json::Value,
    gamma_grid: Vec<f64>,
    /// Spectral radius of the gamma-weighted mean matrix on the grid.
    rho_bar: Vec<f64>,
}

fn cmd_spectral(model: &Arc<Model>, out: &mut Out) -> Result<bool> {
    let flavor = model.flavor();
    let sd = model.spectral(flavor)?;
    let ext = model.extinction_probs()?;
    let descent_model = model.infinite_descent_transform(&ext)?.to_json();
    let curve = model.gamma_curve();
    let gamma_grid: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    let rho_bar = gamma_grid
        .iter()
        .map(|&gm| curve.rho_bar(gm))
        .collect::<Result<Vec<f64>>>()?;
    out.json(&SpectralReport {
        types: model.types.clone(),
        flavor: flavor_name(flavor),
        gamma: sd.gamma,
        mean_matrix: sd.matrix.clone(),
        rho: sd.rho,
        right: sd.right.clone(),
        left: sd.left.clone(),
        ray_kernel: sd.ray_kernel.clone(),
        reversed_kernel: sd.reversed_kernel(),
        stationary: sd.stationary.clone(),
        extinction: ext,
        descent_model,
        gamma_grid,
        rho_bar,
    })?;
    Ok(true)
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

fn cmd_sample(model: &Arc<Model>, g: &Global, a: &SampleArgs, out: &mut Out) -> Result<bool> {
    if let RootLaw::Fixed(i) = a.root.0 {
        if i >= model.type_count() {
            return Err(MgwError::Model(format!(
                "root type {i} out of range; the model has {} types",
                model.type_count()
            )));
        }
    }
    let sampler = Sampler::new(model.clone())?;
    let spec = MeasureSpec {
        measure: a.measure.into(),
        root: a.root.0,
        depth: a.depth,
        ray_depth: a.ray_depth,
        level_n: a.level,
    };
    spec.validate()?;
    if g.format == Format::Csv {
        out.line("replica,id,parent,type,w,level,marked");
    }
    for r in 0..g.replicas {
        let mut rng = derive_stream(g.seed, r as u64);
        match sampler.sample(&spec, &mut rng)? {
            Sampled::Rooted(tree) => dump_tree(out, g.format, r, &tree, &[]),
            Sampled::Rayed(rt) => dump_tree(out, g.format, r, &rt.tree, &[]),
            Sampled::Marked(ms) => dump_tree(out, g.format, r, &ms.tree, &ms.path),
        }
    }
    Ok(true)
}

/// Emits a tree as CSV rows or JSON lines. `level` is the depth for rooted
/// trees and the signed height for ray-marked ones; `marked` flags vertices
/// of a marked path.
fn dump_tree(out: &mut Out, fmt: Format, replica: usize, tree: &Tree, path: &[NodeId]) {
    let marked: std::collections::HashSet<NodeId> = path.iter().copied().collect();
    for v in 0..tree.len() as NodeId {
        let n = tree.node(v);
        let ty = &tree.model.types[n.ty as usize];
        let on_path = marked.contains(&v);
        match fmt {
            Format::Csv => {
                let parent = tree.parent(v).map(|p| p.to_string()).unwrap_or_default();
                out.line(&format!(
                    "{replica},{v},{parent},{ty},{},{},{}",
                    n.weight, n.level, on_path as u8
                ));
            }
            Format::Json => {
                let parent = match tree.parent(v) {
                    Some(p) => serde_json::Value::from(p),
                    None => serde_json::Value::Null,
                };
                let obj = serde_json::json!({
                    "replica": replica,
                    "id": v,
                    "parent": parent,
                    "type": ty,
                    "w": n.weight,
                    "level": n.level,
                    "marked": on_path,
                });
                out.line(&obj.to_string());
            }
        }
    }
}

// ---------------------------------------------------------------------------
// walk
// ---------------------------------------------------------------------------

fn cmd_walk(model: &Arc<Model>, g: &Global, a: &WalkArgs, out: &mut Out) -> Result<bool> {
    let sampler = Sampler::new(model.clone())?;
    let lambda = a.lambda.unwrap_or(sampler.spectral.rho);
    if lambda <= 0.0 {
        return Err(MgwError::Walk("the bias parameter must be positive".into()));
    }
    if g.format == Format::Csv {
        if a.kind.continuous() {
            out.line("replica,t,vertex,height,jump_time");
        } else {
            out.line("replica,t,vertex,height");
        }
    }
    let steps = if a.kind.continuous() {
        jump_budget(model, lambda, a.time)
    } else {
        a.steps
    };
    for r in 0..g.replicas {
        let mut rng = derive_stream(g.seed, r as u64);
        let traj = if a.kind.rooted() {
            let mut tree = sampler.sample_mgw_nonextinct(RootLaw::Canonical, 0, &mut rng)?;
            if a.kind.continuous() {
                run_rooted_walk_cts(&mut tree, lambda, steps, Record::Vertices, None, &mut rng)?
            } else {
                run_rooted_walk(&mut tree, lambda, steps, Record::Vertices, None, &mut rng)?
            }
        } else {
            let mut rt = sampler.sample_imgw0(RootLaw::Stationary, 16, 0, &mut rng)?;
            if a.kind.continuous() {
                run_rayed_walk_cts(&mut rt, lambda, steps, Record::Vertices, &mut rng)?
            } else {
                run_rayed_walk(&mut rt, lambda, steps, Record::Vertices, &mut rng)?
            }
        };
        let vertices = traj.require_vertices()?;
        match &traj.jump_times {
            Some(times) => {
                if times.last().is_some_and(|&last| last < a.time)
                    && traj.steps() == steps
                {
                    return Err(MgwError::Walk(format!(
                        "jump budget {steps} ran out before time {}",
                        a.time
                    )));
                }
                for (t, s) in times.iter().enumerate() {
                    if *s > a.time {
                        break;
                    }
                    emit_walk_row(
                        out,
                        g.format,
                        r,
                        t,
                        vertices[t],
                        traj.heights[t],
                        Some(*s),
                    );
                }
            }
            None => {
                for t in 0..traj.heights.len() {
                    emit_walk_row(out, g.format, r, t, vertices[t], traj.heights[t], None);
                }
            }
        }
    }
    Ok(true)
}

/// Jump count that covers a continuous-time horizon with slack: the total
/// jump rate is at most lambda plus the largest offspring weight sum.
fn jump_budget(model: &Model, lambda: f64, time: f64) -> usize {
    let s_max = model
        .laws
        .iter()
        .flat_map(|law| law.atoms.iter())
        .map(|atom| atom.total_weight())
        .fold(0.0, f64::max);
    ((lambda + s_max) * time * 1.2) as usize + 200
}

fn emit_walk_row(
    out: &mut Out,
    fmt: Format,
    replica: usize,
    t: usize,
    vertex: NodeId,
    height: i32,
    jump_time: Option<f64>,
) {
    match fmt {
        Format::Csv => match jump_time {
            Some(s) => out.line(&format!("{replica},{t},{vertex},{height},{s}")),
            None => out.line(&format!("{replica},{t},{vertex},{height}")),
        },
        Format::Json => {
            let mut obj = serde_json::json!({
                "replica": replica,
                "t": t,
                "vertex": vertex,
                "height": height,
            });
            if let Some(s) = jump_time {
                obj["jump_time"] = serde_json::Value::from(s);
            }
            out.line(&obj.to_string());
        }
    }
}

// ---------------------------------------------------------------------------
// clt
// ---------------------------------------------------------------------------

fn cmd_clt(model: &Arc<Model>, g: &Global, a: &CltArgs, out: &mut Out) -> Result<bool> {
    let run: CltRun = match (a.mode, a.walk) {
        (CltMode::Cts, CltWalk::Rayed) => {
            return Err(MgwError::Walk(
                "the continuous-time mode supports the rooted walk only".into(),
            ));
        }
        (CltMode::Cts, CltWalk::Rooted) => {
            cts_clt(model, EnvMode::Quenched, a.time, g.replicas, g.seed)?
        }
        (mode, walk) => {
            let env = if mode == CltMode::Quenched {
                EnvMode::Quenched
            } else {
                EnvMode::Annealed
            };
            match walk {
                CltWalk::Rooted => rooted_clt(model, env, a.n, g.replicas, g.seed)?,
                CltWalk::Rayed => rayed_clt(model, env, a.n, g.replicas, g.seed)?,
            }
        }
    };
    match g.format {
        Format::Json => {
            #[derive(Serialize)]
            struct CltOutput<'a> {
                report: &'a mgw::experiments::CltReport,
                /// Rescaled heights at the quarter, half, and full horizon.
                samples: &'a [[f64; 3]],
            }
            out.json(&CltOutput {
                report: &run.report,
                samples: &run.samples,
            })?;
        }
        Format::Csv => {
            out.line("path,quarter,half,full");
            for (i, s) in run.samples.iter().enumerate() {
                out.line(&format!("{i},{},{},{}", s[0], s[1], s[2]));
            }
        }
    }
    Ok(true)
}

// ---------------------------------------------------------------------------
// reverse-check
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ReverseCheckReport {
    stationarity: StationarityReport,
    ergodic: ErgodicReport,
    pass: bool,
}

fn cmd_reverse_check(
    model: &Arc<Model>,
    g: &Global,
    a: &ReverseArgs,
    out: &mut Out,
) -> Result<bool> {
    let p_floor = Thresholds::default().p_value;
    let stat_seed = derive_stream(g.seed, 0).gen::<u64>();
    let erg_seed = derive_stream(g.seed, 1).gen::<u64>();
    let stationarity = imgwr_degree_stationarity(model, a.samples, p_floor, stat_seed)?;
    let ergodic = degree_resolvent_average(model, a.steps, erg_seed)?;
    let pass = stationarity.pass && ergodic.rel_err <= ERGODIC_REL_TOL;
    out.json(&ReverseCheckReport {
        stationarity,
        ergodic,
        pass,
    })?;
    Ok(pass)
}

// ---------------------------------------------------------------------------
// rwre
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct RwreEntry {
    classifier: mgw::conductance::ClassifierReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    simulation: Option<RecurrenceReport>,
}

fn cmd_rwre(model: &Arc<Model>, g: &Global, a: &RwreArgs, out: &mut Out) -> Result<bool> {
    let flavor = model.flavor();
    let lambdas: Vec<f64> = if !a.sweep.is_empty() {
        a.sweep.clone()
    } else {
        match a.lambda {
            Some(l) => vec![l],
            None => vec![model.spectral(flavor)?.rho],
        }
    };
    let mut entries = Vec::with_capacity(lambdas.len());
    for (idx, &lambda) in lambdas.iter().enumerate() {
        if lambda <= 0.0 {
            return Err(MgwError::Walk("the bias parameter must be positive".into()));
        }
        let classifier = classify_rwre(model, lambda)?;
        let simulation = match &a.simulate {
            Some(tn) => {
                let sim_seed = derive_stream(g.seed, idx as u64).gen::<u64>();
                Some(recurrence_simulation_check(
                    model, flavor, lambda, tn[0], tn[1], sim_seed,
                )?)
            }
            None => None,
        };
        entries.push(RwreEntry {
            classifier,
            simulation,
        });
    }
    out.json(&entries)?;
    Ok(true)
}

// ---------------------------------------------------------------------------
// couple
// ---------------------------------------------------------------------------

fn cmd_couple(model: &Arc<Model>, g: &Global, a: &CoupleArgs, out: &mut Out) -> Result<bool> {
    if a.a0 >= model.type_count() {
        return Err(MgwError::Model(format!(
            "starting type {} out of range; the model has {} types",
            a.a0,
            model.type_count()
        )));
    }
    let steps = a.steps.unwrap_or(a.n);
    let p_floor = Thresholds::default().p_value;
    let report =
        coupling_environment_check(model, g.replicas, a.n, steps, a.a0, a.ball, p_floor, g.seed)?;
    let pass = report.pass;
    out.json(&report)?;
    Ok(pass)
}

// ---------------------------------------------------------------------------
// conductance
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ConductanceRow {
    k: i32,
    c: f64,
    /// 1 / (k C): bounded away from 0 and infinity exactly in the
    /// recurrent-at-criticality regime.
    inv_kc: f64,
}

#[derive(Serialize)]
struct ConductanceCurve {
    lambda: f64,
    rows: Vec<ConductanceRow>,
}

fn cmd_conductance(
    model: &Arc<Model>,
    g: &Global,
    a: &ConductanceArgs,
    out: &mut Out,
) -> Result<bool> {
    let sampler = Sampler::new(model.clone())?;
    let lambda = a.lambda.unwrap_or(sampler.spectral.rho);
    if lambda <= 0.0 {
        return Err(MgwError::Walk("the bias parameter must be positive".into()));
    }
    if a.survey {
        if a.ks.len() < 3 {
            return Err(MgwError::Stats(
                "the survey needs at least three depths".into(),
            ));
        }
        if g.replicas < 2 {
            return Err(MgwError::Stats(
                "the survey needs at least two trees; raise --replicas".into(),
            ));
        }
        if a.root_type >= model.type_count() {
            return Err(MgwError::Model(format!(
                "root type {} out of range; the model has {} types",
                a.root_type,
                model.type_count()
            )));
        }
        let report = resistance_growth_check(
            model,
            sampler.flavor,
            a.root_type,
            &a.ks,
            g.replicas,
            a.epsilon,
            g.seed,
        )?;
        let pass = report.p_upward > Thresholds::default().trend_p;
        match g.format {
            Format::Json => out.json(&report)?,
            Format::Csv => {
                out.line("k,median_kc,exceedance");
                for i in 0..report.ks.len() {
                    out.line(&format!(
                        "{},{},{}",
                        report.ks[i], report.medians[i], report.exceedance[i]
                    ));
                }
            }
        }
        return Ok(pass);
    }
    if a.k_max < 1 {
        return Err(MgwError::Stats("--k-max must be at least 1".into()));
    }
    let mut rng = derive_stream(g.seed, 0);
    let mut tree = sampler.sample_mgw(RootLaw::Canonical, 0, &mut rng)?;
    let mut rows = Vec::with_capacity(a.k_max as usize);
    for k in 1..=a.k_max {
        let c = effective_conductance(&mut tree, k, lambda)?;
        rows.push(ConductanceRow {
            k,
            c,
            inv_kc: 1.0 / (k as f64 * c),
        });
    }
    match g.format {
        Format::Json => out.json(&ConductanceCurve { lambda, rows })?,
        Format::Csv => {
            out.line("k,c,inv_kc");
            for row in rows {
                out.line(&format!("{},{},{}", row.k, row.c, row.inv_kc));
            }
        }
    }
    Ok(true)
}
