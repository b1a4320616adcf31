use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use condbench::functions::{DEFAULT_INIT_HI, DEFAULT_INIT_LO, DEFAULT_TARGET};
use condbench::harness::{
    invariance_check, persist, write_plot_data, write_summary_csv, write_trials_csv,
    write_trials_json, ConfigError, Format, InvarianceError, InvarianceMode, Profile, RotationMode,
    SweepConfig, SweepTable,
};
use condbench::{lookup, registry, FunctionKind};

const OUT_DIR_ENV: &str = "CONDBENCH_OUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "condbench",
    version,
    about = "Black-box optimizers on ill-conditioned test functions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run trials of one optimizer on one problem and print the trial table
    Run(RunArgs),
    /// Run a grid of cells and write trials, SP1 summary and plot data
    Sweep(SweepArgs),
    /// Compare matched runs on transformed problems
    Invariance(InvarianceArgs),
    /// List test functions and optimizers
    List,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Rotation {
    Axis,
    Rotated,
    Both,
}

impl Rotation {
    fn flags(self) -> Vec<bool> {
        match self {
            Rotation::Axis => vec![false],
            Rotation::Rotated => vec![true],
            Rotation::Both => vec![false, true],
        }
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Test function (elli, elli-quarter, rosen)
    #[arg(long, default_value = "elli")]
    function: FunctionKind,
    /// Dimension
    #[arg(long, default_value_t = 10)]
    dim: usize,
    /// Conditioning parameter
    #[arg(long, default_value = "1e6")]
    alpha: f64,
    /// Rotate the problem by a random orthogonal matrix
    #[arg(long)]
    rotated: bool,
    /// Optimizer name (see `condbench list`)
    #[arg(long, default_value = "cmaes")]
    optimizer: String,
    /// Number of trials
    #[arg(long, default_value_t = 21)]
    trials: usize,
    /// Evaluation budget per trial
    #[arg(long, default_value = "1e7", value_parser = parse_count)]
    budget: u64,
    /// Success threshold on the objective value
    #[arg(long, default_value = "1e-9")]
    target: f64,
    /// Master seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rotation drawn per trial or shared by all trials
    #[arg(long, default_value = "per-trial")]
    rotation_mode: RotationMode,
    /// Worker threads
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Trial table format
    #[arg(long, default_value = "csv")]
    format: Format,
    /// Output file [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Grid and scale preset (desk: dims 5,10, budget 1e6, 11 trials; paper: dims 10,20,40, budget 1e7, 21 trials)
    #[arg(long, default_value = "desk", conflicts_with = "config")]
    profile: Profile,
    /// TOML sweep config replacing the profile
    #[arg(long)]
    config: Option<PathBuf>,
    /// Test functions [default: all]
    #[arg(long, value_delimiter = ',')]
    function: Vec<FunctionKind>,
    /// Dimensions [default: from profile]
    #[arg(long, value_delimiter = ',')]
    dim: Vec<usize>,
    /// Conditioning parameters [default: 1, 10, ..., max per function]
    #[arg(long, value_delimiter = ',')]
    alpha: Vec<f64>,
    /// Axis-parallel, rotated or both [default: both]
    #[arg(long)]
    rotation: Option<Rotation>,
    /// Optimizer names [default: all]
    #[arg(long, value_delimiter = ',')]
    optimizer: Vec<String>,
    /// Trials per cell [default: from profile]
    #[arg(long)]
    trials: Option<usize>,
    /// Evaluation budget per trial [default: from profile]
    #[arg(long, value_parser = parse_count)]
    budget: Option<u64>,
    /// Success threshold on the objective value [default: 1e-9]
    #[arg(long)]
    target: Option<f64>,
    /// Master seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Rotation drawn per trial or shared by all trials [default: per-trial]
    #[arg(long)]
    rotation_mode: Option<RotationMode>,
    /// Worker threads [default: 1]
    #[arg(long)]
    jobs: Option<usize>,
    /// Trial table format
    #[arg(long, default_value = "csv")]
    format: Format,
    /// Output directory
    #[arg(long, env = OUT_DIR_ENV, hide_env_values = true, default_value = "results")]
    out: PathBuf,
    /// Proceed with the paper-scale profile
    #[arg(long)]
    yes: bool,
}

#[derive(Debug, Args)]
struct InvarianceArgs {
    /// Optimizer name
    #[arg(long, default_value = "cmaes")]
    optimizer: String,
    /// Transformation (monotone, rotation)
    #[arg(long, default_value = "monotone")]
    mode: InvarianceMode,
    /// Dimension
    #[arg(long, default_value_t = 10)]
    dim: usize,
    /// Conditioning parameter of the ellipsoid
    #[arg(long, default_value = "1e6")]
    alpha: f64,
    /// Seed shared by both runs
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Iterations compared
    #[arg(long, default_value_t = 200)]
    iterations: u64,
}

/// Accepts integers and exact floats such as `1e7`.
fn parse_count(s: &str) -> Result<u64, String> {
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v < u64::MAX as f64 {
        Ok(v as u64)
    } else {
        Err(format!("`{s}` is not a non-negative integer"))
    }
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn config_failure(e: ConfigError) -> Failure {
    let flag = match &e {
        ConfigError::Empty(field) => match *field {
            "functions" => "--function",
            "dims" => "--dim",
            "alphas" => "--alpha",
            "rotations" => "--rotation",
            _ => "--optimizer",
        },
        ConfigError::Dimension(_) => "--dim",
        ConfigError::Trials => "--trials",
        ConfigError::Alpha { .. } => "--alpha",
        ConfigError::Target(_) => "--target",
        ConfigError::Jobs => "--jobs",
        ConfigError::Optimizer(_) => "--optimizer",
        ConfigError::Parse(_) => "--config",
        ConfigError::ThreadPool(_) => return Failure::Runtime(e.into()),
    };
    Failure::Usage(format!("{flag}: {e}"))
}

fn banner(title: &str, cfg: &SweepConfig) {
    let names = |v: &[FunctionKind]| v.iter().map(|f| f.name()).collect::<Vec<_>>().join(",");
    let join = |v: Vec<String>| v.join(",");
    eprintln!("condbench {title}");
    eprintln!("  functions: {}", names(&cfg.functions));
    eprintln!(
        "  dims: {}",
        join(cfg.dims.iter().map(|d| d.to_string()).collect())
    );
    match &cfg.alphas {
        Some(a) => eprintln!(
            "  alphas: {}",
            join(a.iter().map(|a| format!("{a:e}")).collect())
        ),
        None => eprintln!("  alphas: 1e0..=max per function, one per decade"),
    }
    eprintln!(
        "  rotations: {} ({})",
        join(cfg.rotations.iter().map(|r| r.to_string()).collect()),
        cfg.rotation_mode
    );
    eprintln!(
        "  trials: {}  budget: {}  seed: {}  target: {:e}  jobs: {}",
        cfg.trials,
        cfg.budget,
        cfg.seed,
        cfg.target.unwrap_or(DEFAULT_TARGET),
        cfg.jobs
    );
    eprintln!("  init interval: [{DEFAULT_INIT_LO}, {DEFAULT_INIT_HI}]");
    for name in &cfg.optimizers {
        if let Ok(opt) = lookup(name) {
            for &n in &cfg.dims {
                eprintln!("  n={n} {}", opt.describe(n));
            }
        }
    }
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let cfg = SweepConfig {
        functions: vec![args.function],
        dims: vec![args.dim],
        alphas: Some(vec![args.alpha]),
        rotations: vec![args.rotated],
        optimizers: vec![args.optimizer],
        trials: args.trials,
        budget: args.budget,
        seed: args.seed,
        target: Some(args.target),
        rotation_mode: args.rotation_mode,
        jobs: args.jobs,
    };
    cfg.validate().map_err(config_failure)?;
    banner("run", &cfg);
    let table = condbench::sweep(&cfg).map_err(config_failure)?;
    report_failed_cells(&table);
    let cell = &table.cells[0];
    if let Some(r) = &cell.result {
        eprintln!(
            "  successes: {}/{}  sp1: {}",
            r.successes,
            r.n_trials,
            fmt_sp1(r.sp1)
        );
    }
    match &args.out {
        Some(path) => persist(&table, path, args.format)
            .with_context(|| format!("writing {}", path.display()))?,
        None => {
            let rows = table.rows();
            let stdout = io::stdout().lock();
            match args.format {
                Format::Csv => write_trials_csv(&rows, stdout),
                Format::Json => write_trials_json(&rows, stdout),
            }
            .context("writing trial table")?;
        }
    }
    Ok(())
}

fn fmt_sp1(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.1}")
    }
}

fn report_failed_cells(table: &SweepTable) {
    for c in table.cells.iter().filter(|c| c.error.is_some()) {
        eprintln!(
            "warning: cell {} n={} alpha={:e} rotated={} {} failed: {}",
            c.problem.function,
            c.problem.dim,
            c.problem.alpha,
            c.problem.rotated,
            c.optimizer,
            c.error.as_deref().unwrap_or_default()
        );
    }
}

fn sweep_config(args: &SweepArgs) -> Result<SweepConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            SweepConfig::from_toml_str(&text).map_err(config_failure)?
        }
        None => SweepConfig::profile(args.profile),
    };
    if !args.function.is_empty() {
        cfg.functions = args.function.clone();
    }
    if !args.dim.is_empty() {
        cfg.dims = args.dim.clone();
    }
    if !args.alpha.is_empty() {
        cfg.alphas = Some(args.alpha.clone());
    }
    if let Some(r) = args.rotation {
        cfg.rotations = r.flags();
    }
    if !args.optimizer.is_empty() {
        cfg.optimizers = args.optimizer.clone();
    }
    cfg.trials = args.trials.unwrap_or(cfg.trials);
    cfg.budget = args.budget.unwrap_or(cfg.budget);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.target = args.target.or(cfg.target);
    cfg.rotation_mode = args.rotation_mode.unwrap_or(cfg.rotation_mode);
    cfg.jobs = args.jobs.unwrap_or(cfg.jobs);
    cfg.validate().map_err(config_failure)?;
    Ok(cfg)
}

fn sweep(args: SweepArgs) -> Result<(), Failure> {
    let cfg = sweep_config(&args)?;
    let title = match (&args.config, args.profile) {
        (Some(path), _) => format!("sweep: config {}", path.display()),
        (None, Profile::Desk) => "sweep: profile desk".to_string(),
        (None, Profile::Paper) => "sweep: profile paper".to_string(),
    };
    banner(&title, &cfg);
    let cells = cfg.cells().len();
    eprintln!(
        "  cost: {cells} cells x {} trials x {} evaluations = at most {:e} evaluations",
        cfg.trials,
        cfg.budget,
        cfg.cost_estimate() as f64
    );
    if args.config.is_none() && args.profile == Profile::Paper && !args.yes {
        return Err(Failure::Usage(
            "--profile paper: pass --yes to run at this cost".to_string(),
        ));
    }
    let table = condbench::sweep(&cfg).map_err(config_failure)?;
    report_failed_cells(&table);
    write_outputs(&table, &args.out, args.format)?;
    eprintln!("  wrote {}", args.out.display());
    Ok(())
}

fn write_outputs(table: &SweepTable, dir: &Path, format: Format) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    persist(table, &dir.join(format!("trials.{format}")), format)?;
    let summary = dir.join("summary.csv");
    let file =
        fs::File::create(&summary).with_context(|| format!("creating {}", summary.display()))?;
    let mut w = io::BufWriter::new(file);
    write_summary_csv(table, &mut w)?;
    w.flush()
        .with_context(|| format!("writing {}", summary.display()))?;
    write_plot_data(table, &dir.join("plots"))?;
    Ok(())
}

fn invariance(args: InvarianceArgs) -> Result<(), Failure> {
    let opt = lookup(&args.optimizer).map_err(|e| Failure::Usage(format!("--optimizer: {e}")))?;
    eprintln!("condbench invariance");
    eprintln!("  n={} {}", args.dim, opt.describe(args.dim));
    let report = invariance_check(
        opt,
        args.dim,
        args.alpha,
        args.mode,
        args.seed,
        args.iterations,
    )
    .map_err(|e| match e {
        InvarianceError::Unsupported { .. } => Failure::Usage(format!("--mode: {e}")),
        InvarianceError::Function(_) => Failure::Usage(format!("--alpha/--dim: {e}")),
    })?;
    println!(
        "optimizer={} mode={} dim={} alpha={:e} seed={} iterations={} evaluations={} max_divergence={} first_divergence={} pass={}",
        report.optimizer,
        report.mode,
        args.dim,
        args.alpha,
        args.seed,
        report.iterations,
        report.evaluations,
        if report.max_divergence == 0.0 {
            "0".to_string()
        } else {
            format!("{:e}", report.max_divergence)
        },
        report
            .first_divergence
            .map_or_else(|| "none".to_string(), |i| i.to_string()),
        report.pass
    );
    Ok(())
}

fn list() {
    println!("functions:");
    for kind in FunctionKind::ALL {
        println!(
            "  {:<13} alpha in [1, {:e}], init [{DEFAULT_INIT_LO}, {DEFAULT_INIT_HI}]^n",
            kind.name(),
            kind.max_alpha()
        );
    }
    println!("optimizers:");
    for opt in registry() {
        println!("  {:<13} {}", opt.name(), opt.describe(10));
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match cli.command {
        Command::Run(args) => run(args),
        Command::Sweep(args) => sweep(args),
        Command::Invariance(args) => invariance(args),
        Command::List => {
            list();
            Ok(())
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
