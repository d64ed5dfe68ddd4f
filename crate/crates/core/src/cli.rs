//! Command-line entry point: `droplab {run|search|plan|autofocus-demo|serve}`.
//!
//! Exit codes: 0 on success, 2 for usage and parse errors (reported with
//! `path:line:col`), 1 for simulation and I/O errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::{BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bioassay::{write_series_csv, ClassifierConfig, FluorescenceModel, SeriesRow, Strain};
use crate::imaging::{autofocus, focus_measure, write_pgm, FocalStack};
use crate::optimizer::{run_search, write_history_csv, CocktailScenario, EvalMode, SearchConfig};
use crate::protocol::{compile, parse_script, CompiledPlan};
use crate::runner::{inoculate, run_plan, summarize, Strains};
use crate::scenarios::strain_map;
use crate::session::{serve_lines, serve_tcp, Session, SessionFactory};
use crate::stage::{Layout, PlateState, StageConfig};

#[derive(Debug, Parser)]
#[command(name = "droplab", version, about = "Tilt-actuated droplet plate simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
    /// JSON configuration file; relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// TCP port for `serve`; 0 picks a free one.
    #[arg(long, global = true, default_value_t = 7878)]
    pub port: u16,
    /// Evaluate `search` candidates on bare cultures instead of replaying protocols.
    #[arg(long, global = true)]
    pub bypass_stage: bool,
    /// Serve one session on stdin/stdout instead of TCP.
    #[arg(long, global = true)]
    pub stdio: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Cmd {
    /// Compile and replay a protocol; write per-pad series and a report.
    Run,
    /// Search drug cocktails; write the history and the winner.
    Search,
    /// Compile a protocol and write the plan.
    Plan,
    /// Resolve generated focal stacks and write the focus scores.
    AutofocusDemo,
    /// Serve sessions over newline-delimited JSON.
    Serve,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Parse {
        path: PathBuf,
        line: usize,
        col: usize,
        msg: String,
    },
    Simulation(String),
    Io {
        path: PathBuf,
        msg: String,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Parse { .. } => 2,
            CliError::Simulation(_) | CliError::Io { .. } => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Parse { path, line, col, msg } => write!(f, "{}:{line}:{col}: {msg}", path.display()),
            CliError::Simulation(m) => write!(f, "simulation error: {m}"),
            CliError::Io { path, msg } => write!(f, "{}: {msg}", path.display()),
        }
    }
}

impl std::error::Error for CliError {}

fn sim<E: fmt::Display>(e: E) -> CliError {
    CliError::Simulation(e.to_string())
}

/// Unreadable inputs are usage errors; only output failures count as I/O.
fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Io {
        path: path.into(),
        msg: e.to_string(),
    })
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Io {
        path: path.into(),
        msg: e.to_string(),
    })
}

fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read(path)?).map_err(|e| CliError::Parse {
        path: path.into(),
        line: e.line(),
        col: e.column(),
        msg: e.to_string(),
    })
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("artifact serializes");
    s.push('\n');
    s
}

/// Plate, strains and protocol of one assay, with paths relative to the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub plate: PathBuf,
    pub strains: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<PathBuf>,
    #[serde(default)]
    pub fluorescence: FluorescenceModel,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub seed: u64,
}

/// A search problem and the optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchFile {
    pub scenario: CocktailScenario,
    #[serde(default)]
    pub search: SearchConfig,
}

/// Settings of the autofocus demo.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutofocusDemoConfig {
    pub stacks: usize,
    pub planes: usize,
    pub size: usize,
    pub sigma_per_plane: f64,
    pub seed: u64,
}

impl Default for AutofocusDemoConfig {
    fn default() -> Self {
        Self {
            stacks: 10,
            planes: 10,
            size: 48,
            sigma_per_plane: 0.6,
            seed: 0,
        }
    }
}

struct Loaded {
    plate: PlateState,
    strains: Strains,
    protocol: Option<(PathBuf, String)>,
    config: RunConfig,
}

fn load_run(path: &Path) -> Result<Loaded, CliError> {
    let config: RunConfig = load_json(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let plate: PlateState = load_json(&dir.join(&config.plate))?;
    let strains: Vec<Strain> = load_json(&dir.join(&config.strains))?;
    let protocol = match &config.protocol {
        Some(p) => {
            let p = dir.join(p);
            let text = read(&p)?;
            Some((p, text))
        }
        None => None,
    };
    Ok(Loaded {
        plate,
        strains: strain_map(strains),
        protocol,
        config,
    })
}

fn compile_loaded(l: &Loaded) -> Result<CompiledPlan, CliError> {
    let Some((path, text)) = &l.protocol else {
        return Err(CliError::Usage("the configuration names no protocol".into()));
    };
    let script = parse_script(text).map_err(|e| {
        let (line, col) = e.position();
        let text = e.to_string();
        let msg = text.strip_prefix(&format!("{line}:{col}: ")).unwrap_or(&text).to_string();
        CliError::Parse {
            path: path.clone(),
            line,
            col,
            msg,
        }
    })?;
    compile(&script, &l.plate).map_err(sim)
}

fn require_config(cli: &Cli) -> Result<&Path, CliError> {
    cli.config
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("`{}` needs --config <path>", cmd_name(cli.command))))
}

fn cmd_name(c: Cmd) -> &'static str {
    match c {
        Cmd::Run => "run",
        Cmd::Search => "search",
        Cmd::Plan => "plan",
        Cmd::AutofocusDemo => "autofocus-demo",
        Cmd::Serve => "serve",
    }
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' }).collect()
}

fn cmd_run(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut l = load_run(require_config(cli)?)?;
    let plan = compile_loaded(&l)?;
    let seed = cli.seed.unwrap_or(l.config.seed);
    inoculate(&mut l.plate, &l.strains).map_err(sim)?;
    let out = run_plan(&plan, &l.plate, &l.strains, &l.config.fluorescence, seed).map_err(sim)?;
    let summaries = summarize(&out, &l.config.classifier, l.config.fluorescence.noise_sigma).map_err(sim)?;
    create_dir(&cli.out)?;
    let mut controls: BTreeMap<String, Vec<SeriesRow>> = BTreeMap::new();
    let mut files = Vec::new();
    for s in &summaries {
        let rows: Vec<SeriesRow> = out.rows_for(&s.pad).cloned().collect();
        if s.drugs.is_empty() {
            controls.insert(s.pad.clone(), rows);
            continue;
        }
        let name = format!("series_{}.csv", sanitize(&s.pad));
        let mut buf = Vec::new();
        write_series_csv(&rows, &mut buf).map_err(sim)?;
        write(&cli.out.join(&name), buf)?;
        files.push(name);
    }
    let report = json!({
        "seed": seed,
        "plan": { "actions": plan.actions.len(), "duration_min": plan.duration_min, "pads": plan.pads },
        "series_files": files,
        "summaries": summaries,
        "controls": controls,
        "min_pad_volume_uL": out.min_pad_volume_ul,
        "dried_pads": out.dried_pads,
    });
    write(&cli.out.join("report.json"), pretty(&report))?;
    let _ = writeln!(stdout, "{:<12} {:<8} {:<12} {:>10} {:>10}", "pad", "drug", "class", "vs ctrl %", "detect h");
    for s in summaries.iter().filter(|s| !s.drugs.is_empty()) {
        let class = s.classification.map(|c| format!("{:?}", c.resilience)).unwrap_or_default();
        let detect = s.detection_min.map(|t| format!("{:.2}", t / 60.0)).unwrap_or_else(|| "-".into());
        let vs = s.survival_vs_control_pct.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(stdout, "{:<12} {:<8} {:<12} {:>10} {:>10}", s.pad, s.drugs.join("+"), class, vs, detect);
    }
    let _ = writeln!(stdout, "wrote {} series files and report.json to {}", files.len(), cli.out.display());
    Ok(())
}

fn cmd_plan(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    let l = load_run(require_config(cli)?)?;
    let plan = compile_loaded(&l)?;
    create_dir(&cli.out)?;
    write(&cli.out.join("plan.json"), plan.to_json() + "\n")?;
    let _ = writeln!(
        stdout,
        "{} actions over {} min, {} checks; wrote {}",
        plan.actions.len(),
        plan.duration_min,
        plan.checks.len(),
        cli.out.join("plan.json").display()
    );
    Ok(())
}

fn cmd_search(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut file: SearchFile = load_json(require_config(cli)?)?;
    if cli.bypass_stage {
        file.scenario.mode = EvalMode::Bypass;
    }
    if let Some(seed) = cli.seed {
        file.search.seed = seed;
    }
    let result = run_search(&file.search, &file.scenario.space, &file.scenario).map_err(sim)?;
    create_dir(&cli.out)?;
    let mut buf = Vec::new();
    write_history_csv(&result.history, &file.scenario.space.drugs, &mut buf).map_err(sim)?;
    write(&cli.out.join("history.csv"), buf)?;
    let genome: BTreeMap<&String, f64> = file.scenario.space.drugs.iter().zip(result.best.genome.iter().copied()).collect();
    let winner = json!({
        "mode": file.scenario.mode,
        "seed": file.search.seed,
        "genome": genome,
        "survival_pct": result.best.survival_pct,
        "burden": result.best.burden,
        "fitness": result.best.fitness,
        "evaluations": result.evaluations,
        "generations": result.history.len().saturating_sub(1),
    });
    write(&cli.out.join("winner.json"), pretty(&winner))?;
    let _ = writeln!(
        stdout,
        "best {:?} fitness {:.4} survival {:.4}% after {} evaluations",
        result.best.genome, result.best.fitness, result.best.survival_pct, result.evaluations
    );
    Ok(())
}

fn cmd_autofocus(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg: AutofocusDemoConfig = match &cli.config {
        Some(p) => load_json(p)?,
        None => AutofocusDemoConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cfg.planes < 3 || cfg.size < 3 {
        return Err(CliError::Usage("autofocus demo needs at least 3 planes of at least 3x3 pixels".into()));
    }
    create_dir(&cli.out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut csv = String::from("stack,true_plane,picked_plane,correct,scores\n");
    let mut correct = 0;
    for k in 0..cfg.stacks {
        let (stack, best) = FocalStack::random(cfg.size, cfg.planes, cfg.sigma_per_plane, &mut rng);
        let picked = autofocus(&stack);
        correct += usize::from(picked == best);
        let scores: Vec<String> = stack
            .frames()
            .iter()
            .map(|f| format!("{:.6e}", focus_measure(f).expect("size checked")))
            .collect();
        csv.push_str(&format!("{k},{best},{picked},{},{}\n", picked == best, scores.join(";")));
        if k == 0 {
            for (i, f) in stack.frames().iter().enumerate() {
                write(&cli.out.join(format!("stack0_plane{i}.pgm")), write_pgm(f, 255))?;
            }
        }
    }
    write(&cli.out.join("autofocus.csv"), csv)?;
    let _ = writeln!(stdout, "{correct}/{} stacks resolved to the sharpest plane", cfg.stacks);
    Ok(())
}

fn default_session_plate() -> PlateState {
    PlateState::from_layout(&Layout::grid(10, 6), StageConfig::default()).expect("grid layout is valid")
}

fn cmd_serve(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    let (plate, strains, fluorescence, seed) = match &cli.config {
        Some(p) => {
            let l = load_run(p)?;
            (l.plate, l.strains, l.config.fluorescence, cli.seed.unwrap_or(l.config.seed))
        }
        None => (default_session_plate(), Strains::new(), FluorescenceModel::default(), cli.seed.unwrap_or(0)),
    };
    let log_dir = cli.out.clone();
    let factory: Arc<SessionFactory> = Arc::new(move |n| {
        Session::new(format!("session{n}"), plate.clone(), strains.clone(), fluorescence, seed)?.with_log_dir(&log_dir)
    });
    if cli.stdio {
        let mut session = factory(0).map_err(sim)?;
        let stdin = std::io::stdin();
        return serve_lines(&mut session, BufReader::new(stdin.lock()), stdout).map_err(sim);
    }
    let listener = TcpListener::bind(("127.0.0.1", cli.port)).map_err(|e| CliError::Io {
        path: PathBuf::from(format!("127.0.0.1:{}", cli.port)),
        msg: e.to_string(),
    })?;
    let addr = listener.local_addr().map_err(sim)?;
    let _ = writeln!(stdout, "listening on {addr}");
    let _ = stdout.flush();
    serve_tcp(listener, factory, None).map_err(sim)
}

pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Cmd::Run => cmd_run(cli, stdout),
        Cmd::Search => cmd_search(cli, stdout),
        Cmd::Plan => cmd_plan(cli, stdout),
        Cmd::AutofocusDemo => cmd_autofocus(cli, stdout),
        Cmd::Serve => cmd_serve(cli, stdout),
    }
}

/// Parse `args` (program name first), run the command and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match execute(&cli, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("droplab: {e}");
            e.exit_code()
        }
    }
}
