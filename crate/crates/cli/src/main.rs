//! `microcity`: run scenarios, serve teleoperation, verify replays and
//! analyze driving sessions.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use microcity::agent::PersonalityProfile;
use microcity::canon;
use microcity::map::{
    generate_grid, TESTBED_BLOCK_LENGTH, TESTBED_COLS, TESTBED_LANE_WIDTH, TESTBED_ROWS, TESTBED_SPEED_LIMIT,
};
use microcity::sim::{
    mixed_scenario, parse_scenario, run_headless, save_session, standard_scenario, BackendDescriptor,
    FileReplaySource, MapSource, ProfileSpec, ScenarioSpec,
};
use microcity::teleop::{start_server, ServiceConfig};
use microcity::telemetry::{
    compare_sessions_with, compute_metrics_with, fit_profile, read_log, resolve_session, session_file, verify_session,
    Baseline, FitGrid, SessionLog, SCENARIO_EXT,
};

const DATA_DIR_ENV: &str = "MICROCITY_DATA_DIR";
const DEFAULT_DATA_DIR: &str = "microcity-data";

#[derive(Debug, Parser)]
#[command(name = "microcity", version, about = "Miniature-city driving simulator and teleoperation service")]
struct Cli {
    /// Default output root for sessions and fits.
    #[arg(long, global = true, env = DATA_DIR_ENV, default_value = DEFAULT_DATA_DIR)]
    data_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario headless and record its session.
    Run(RunArgs),
    /// Serve teleoperation over TCP and WebSocket until interrupted.
    Serve(ServeArgs),
    /// Regenerate a recorded session and check it matches bit for bit.
    Replay(ReplayArgs),
    /// Print the driving-style metrics of a session.
    Analyze(AnalyzeArgs),
    /// Compare two sessions driven on the same route.
    Compare(CompareArgs),
    /// Fit an agent profile to a recorded session by grid search.
    Fit(FitArgs),
    /// Write a generated grid map.
    GenMap(GenMapArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Scenario file (JSON, or TOML with a .toml extension).
    #[arg(long, conflicts_with_all = ["standard", "mixed"], required_unless_present_any = ["standard", "mixed"])]
    scenario: Option<PathBuf>,
    /// Standard testbed scenario with the subject driving this preset.
    #[arg(long, value_name = "PRESET")]
    standard: Option<String>,
    /// Aggressive and defensive agents on separate loops of the testbed.
    #[arg(long, conflicts_with = "standard")]
    mixed: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Override the scenario duration in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Override the backend: sim or mock_physical.
    #[arg(long)]
    backend: Option<String>,
    /// Session directory (default: <data-dir>/sessions).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Service config file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    ws_listen: Option<String>,
    /// Disable the WebSocket listener.
    #[arg(long, conflicts_with = "ws_listen")]
    no_ws: bool,
    #[arg(long)]
    state_rate: Option<f64>,
    #[arg(long)]
    failsafe_timeout: Option<f64>,
    #[arg(long)]
    scenario_dir: Option<PathBuf>,
    /// Session directory (default: <data-dir>/sessions).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    /// Session directory, or `<dir>/<session_id>`.
    session: PathBuf,
    /// Where map files named by the scenario live (default: the session directory).
    #[arg(long)]
    map_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    session: PathBuf,
    /// Baseline statistics for the aggressiveness index (JSON).
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long)]
    map_dir: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    a: PathBuf,
    b: PathBuf,
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long)]
    map_dir: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitArgs {
    session: PathBuf,
    /// Grid file (JSON with `base` and `axes`).
    #[arg(long, conflicts_with_all = ["axis", "base"], required_unless_present = "axis")]
    grid: Option<PathBuf>,
    /// One fitted parameter: `name=v1,v2,...`. Repeatable.
    #[arg(long, value_name = "NAME=VALUES")]
    axis: Vec<String>,
    /// Preset the unfitted parameters come from (default DEFENSIVE).
    #[arg(long)]
    base: Option<String>,
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long)]
    map_dir: Option<PathBuf>,
    /// Fitted profile file (default: <data-dir>/fits/<session_id>.profile.json).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenMapArgs {
    #[arg(long, default_value_t = TESTBED_ROWS)]
    rows: usize,
    #[arg(long, default_value_t = TESTBED_COLS)]
    cols: usize,
    #[arg(long, default_value_t = TESTBED_BLOCK_LENGTH)]
    block_length: f64,
    #[arg(long, default_value_t = TESTBED_LANE_WIDTH)]
    lane_width: f64,
    #[arg(long, default_value_t = TESTBED_SPEED_LIMIT)]
    speed_limit: f64,
    /// Output file (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Outcome of a subcommand that ran to completion.
enum Outcome {
    Ok,
    /// Domain-level failure already reported on standard error.
    Failed,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::from(1)
        }
    }
}

fn execute(cli: Cli) -> Result<Outcome> {
    let data_dir = cli.data_dir;
    match cli.command {
        Command::Run(a) => run(a, &data_dir),
        Command::Serve(a) => serve(a, &data_dir),
        Command::Replay(a) => replay(a),
        Command::Analyze(a) => analyze(a),
        Command::Compare(a) => compare(a),
        Command::Fit(a) => fit(a, &data_dir),
        Command::GenMap(a) => gen_map(a),
    }
}

/// Scenario file in JSON, or TOML when the extension says so.
fn load_scenario_file(path: &Path) -> Result<ScenarioSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).with_context(|| format!("bad scenario {}", path.display()))
    } else {
        parse_scenario(&text).with_context(|| format!("bad scenario {}", path.display()))
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display()))
        }
        None => {
            println!("{}", text.trim_end());
            Ok(())
        }
    }
}

fn load_baseline(path: Option<&Path>) -> Result<Baseline> {
    match path {
        Some(p) => Ok(Baseline::parse(&std::fs::read_to_string(p)?)?),
        None => Ok(Baseline::shipped()),
    }
}

/// A recorded session with the scenario stored beside it.
struct Stored {
    dir: PathBuf,
    log: SessionLog,
    scenario: ScenarioSpec,
}

fn load_stored(reference: &Path) -> Result<Stored> {
    let (dir, id) = resolve_session(reference)?;
    let log = read_log(&dir, &id)?;
    let scenario = load_scenario_file(&session_file(&dir, &id, SCENARIO_EXT))?.normalized()?;
    Ok(Stored { dir, log, scenario })
}

fn run(a: RunArgs, data_dir: &Path) -> Result<Outcome> {
    let (mut scenario, base_dir) = match (&a.scenario, &a.standard) {
        (Some(path), _) => (load_scenario_file(path)?, path.parent().map(Path::to_path_buf)),
        (None, Some(preset)) => {
            PersonalityProfile::preset(preset).ok_or_else(|| anyhow!("unknown preset {preset:?}"))?;
            (standard_scenario(ProfileSpec::Preset(preset.to_uppercase()), a.seed.unwrap_or(0)), None)
        }
        (None, None) => (mixed_scenario(a.seed.unwrap_or(0)), None),
    };
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    if let Some(d) = a.duration {
        scenario.duration = d;
    }
    if let Some(b) = &a.backend {
        scenario.backend = BackendDescriptor::by_name(b).ok_or_else(|| anyhow!("unknown backend {b:?}"))?;
    }
    // embed file maps so the recorded session is self-contained
    if matches!(scenario.map, MapSource::File { .. }) {
        let (spec, _) = scenario.resolve_map(base_dir.as_deref())?;
        scenario.map = MapSource::Embedded(spec);
    }
    let scenario = scenario.normalized()?;
    let source = FileReplaySource {
        base_dir: base_dir.clone(),
    };
    let log = run_headless(&scenario, base_dir.as_deref(), &source)?;
    let out = a.out.unwrap_or_else(|| data_dir.join("sessions"));
    std::fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    let path = save_session(&out, &log, &scenario)?;
    let (_, graph) = scenario.resolve_map(None)?;
    let metrics = if log.header.subject.is_empty() {
        None
    } else {
        Some(compute_metrics_with(&log, &graph, &Baseline::shipped())?)
    };
    let summary = serde_json::json!({
        "session_id": log.header.session_id,
        "session": path.display().to_string(),
        "ticks": log.tick_count(),
        "events": log.events.len(),
        "metrics": metrics,
    });
    println!("{}", canon::to_pretty(&summary)?.trim_end());
    Ok(Outcome::Ok)
}

fn serve(a: ServeArgs, data_dir: &Path) -> Result<Outcome> {
    let mut config = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            toml::from_str::<ServiceConfig>(&text).with_context(|| format!("bad config {}", p.display()))?
        }
        None => ServiceConfig {
            data_dir: data_dir.join("sessions"),
            ..ServiceConfig::default()
        },
    };
    if let Some(v) = a.listen {
        config.listen = v;
    }
    if let Some(v) = a.ws_listen {
        config.ws_listen = Some(v);
    }
    if a.no_ws {
        config.ws_listen = None;
    }
    if let Some(v) = a.state_rate {
        config.state_rate = v;
    }
    if let Some(v) = a.failsafe_timeout {
        config.failsafe_timeout = v;
    }
    if let Some(v) = a.scenario_dir {
        config.scenario_dir = Some(v);
    }
    if let Some(v) = a.out {
        config.data_dir = v;
    }
    config.validate().map_err(|e| anyhow!("bad config: {e}"))?;
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();

    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let server = start_server(config.clone()).await?;
        match server.ws_addr {
            Some(ws) => eprintln!("listening tcp={} ws={}", server.tcp_addr, ws),
            None => eprintln!("listening tcp={}", server.tcp_addr),
        }
        tokio::signal::ctrl_c().await?;
        eprintln!("shutting down");
        server.shutdown().await;
        Ok::<_, anyhow::Error>(())
    })?;
    Ok(Outcome::Ok)
}

fn replay(a: ReplayArgs) -> Result<Outcome> {
    let (dir, id) = resolve_session(&a.session)?;
    match verify_session(&dir, &id, a.map_dir.as_deref())? {
        None => {
            println!("replay of {id} matches");
            Ok(Outcome::Ok)
        }
        Some(m) => {
            eprintln!("{m}");
            Ok(Outcome::Failed)
        }
    }
}

fn analyze(a: AnalyzeArgs) -> Result<Outcome> {
    let s = load_stored(&a.session)?;
    let (_, graph) = s.scenario.resolve_map(Some(a.map_dir.as_deref().unwrap_or(&s.dir)))?;
    let metrics = compute_metrics_with(&s.log, &graph, &load_baseline(a.baseline.as_deref())?)?;
    write_output(a.out.as_deref(), &canon::to_pretty(&metrics)?)?;
    Ok(Outcome::Ok)
}

fn compare(a: CompareArgs) -> Result<Outcome> {
    let sa = load_stored(&a.a)?;
    let sb = load_stored(&a.b)?;
    let (_, graph) = sa.scenario.resolve_map(Some(a.map_dir.as_deref().unwrap_or(&sa.dir)))?;
    let report = compare_sessions_with(&sa.log, &sb.log, &graph, &load_baseline(a.baseline.as_deref())?)?;
    write_output(a.out.as_deref(), &canon::to_pretty(&report)?)?;
    Ok(Outcome::Ok)
}

fn parse_axis(spec: &str) -> Result<(String, Vec<f64>)> {
    let (name, values) = spec.split_once('=').ok_or_else(|| anyhow!("axis {spec:?} is not name=v1,v2,..."))?;
    let values = values
        .split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad value {v:?} in axis {name}")))
        .collect::<Result<Vec<_>>>()?;
    Ok((name.trim().to_string(), values))
}

fn fit(a: FitArgs, data_dir: &Path) -> Result<Outcome> {
    let s = load_stored(&a.session)?;
    let grid = match &a.grid {
        Some(p) => serde_json::from_str::<FitGrid>(&std::fs::read_to_string(p)?)
            .with_context(|| format!("bad grid {}", p.display()))?,
        None => {
            let base = a.base.as_deref().unwrap_or("DEFENSIVE");
            FitGrid {
                base: PersonalityProfile::preset(base).ok_or_else(|| anyhow!("unknown preset {base:?}"))?,
                axes: a.axis.iter().map(|x| parse_axis(x)).collect::<Result<BTreeMap<_, _>>>()?,
            }
        }
    };
    if grid.axes.is_empty() {
        bail!("no parameters to fit");
    }
    let base_dir = a.map_dir.clone().unwrap_or_else(|| s.dir.clone());
    let source = FileReplaySource {
        base_dir: Some(base_dir.clone()),
    };
    let result = fit_profile(
        &s.log,
        &s.scenario,
        &grid,
        Some(&base_dir),
        &source,
        &load_baseline(a.baseline.as_deref())?,
    )?;
    let out = a
        .out
        .unwrap_or_else(|| data_dir.join("fits").join(format!("{}.profile.json", s.log.header.session_id)));
    write_output(Some(&out), &canon::to_pretty(&result.profile)?)?;
    let summary = serde_json::json!({
        "profile_path": out.display().to_string(),
        "params": result.params,
        "loss": result.loss,
        "candidates": result.candidates,
    });
    println!("{}", canon::to_pretty(&summary)?.trim_end());
    Ok(Outcome::Ok)
}

fn gen_map(a: GenMapArgs) -> Result<Outcome> {
    let map = generate_grid(a.rows, a.cols, a.block_length, a.lane_width, a.speed_limit)?;
    write_output(a.out.as_deref(), &canon::to_pretty(&map)?)?;
    Ok(Outcome::Ok)
}
