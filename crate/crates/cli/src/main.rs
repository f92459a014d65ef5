use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use critic_landscape::config::{AlgorithmConfig, FinalProbe, LandscapeConfig, RunConfig, PRESETS};
use critic_landscape::landscape::{read_grid_csv, read_path_csv};
use critic_landscape::metrics::{metrics_report, BasinMode};
use critic_landscape::pipeline;
use critic_landscape::plot::{contour_svg, curve_svg, read_numeric_csv, surface_svg, PlotOptions};
use critic_landscape::snapshot::Stage;
use critic_landscape::Error;

#[derive(Parser)]
#[command(name = "critic-landscape", version, about = "Critic loss landscapes of actor-critic training runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent and write a run directory.
    Train(TrainArgs),
    /// Build landscapes at one or more recorded stages of a run.
    Landscape(LandscapeArgs),
    /// Compute metrics for a grid CSV.
    Metrics(MetricsArgs),
    /// Render SVG plots from grid, path and training log files.
    Plot(PlotArgs),
    /// Rerun the deterministic evaluation rollout from a checkpoint.
    Rollout(RolloutArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Named preset.
    #[arg(long, conflicts_with = "config", value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
    preset: Option<String>,
    /// JSON run config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// SAC environment steps.
    #[arg(long)]
    total_steps: Option<u64>,
    /// ADHDP training episodes.
    #[arg(long)]
    episodes: Option<u64>,
    /// Steps between SAC snapshots.
    #[arg(long)]
    cadence: Option<u64>,
    #[arg(long)]
    rollout_steps: Option<usize>,
    /// Print the resolved config and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProbeArg {
    FinalRollout,
    Snapshot,
}

#[derive(Clone, Copy, ValueEnum)]
enum BasinArg {
    Connected,
    Global,
}

impl From<BasinArg> for BasinMode {
    fn from(b: BasinArg) -> Self {
        match b {
            BasinArg::Connected => BasinMode::Connected,
            BasinArg::Global => BasinMode::Global,
        }
    }
}

#[derive(Args)]
struct MetricFlags {
    /// Sharpness radius.
    #[arg(long)]
    eps: Option<f64>,
    /// Basin threshold.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    n_angles: Option<usize>,
    /// Hessian window half-width in grid cells.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long, value_enum)]
    basin_mode: Option<BasinArg>,
}

impl MetricFlags {
    fn apply(&self, lc: &mut LandscapeConfig) {
        let m = &mut lc.metrics;
        if let Some(v) = self.eps {
            m.eps = v;
        }
        if let Some(v) = self.rho {
            m.rho = v;
        }
        if let Some(v) = self.n_angles {
            m.n_angles = v;
        }
        if let Some(v) = self.window {
            m.window_halfwidth = v;
        }
        if let Some(v) = self.basin_mode {
            m.basin_mode = v.into();
        }
    }
}

#[derive(Args)]
struct LandscapeArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    /// Snapshot step or `final`; repeatable.
    #[arg(long = "stage", default_value = "final")]
    stages: Vec<Stage>,
    #[arg(long)]
    grid_n: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    min_half_width: Option<f64>,
    #[arg(long, value_enum)]
    probe_source: Option<ProbeArg>,
    #[arg(long)]
    probe_size: Option<usize>,
    #[arg(long)]
    target_seed: Option<u64>,
    #[command(flatten)]
    metrics: MetricFlags,
}

#[derive(Args)]
struct MetricsArgs {
    /// Grid CSV written by `landscape`.
    #[arg(long)]
    grid: PathBuf,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    metrics: MetricFlags,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long, requires = "grid")]
    path: Option<PathBuf>,
    /// Training or evaluation log CSV.
    #[arg(long)]
    train_log: Option<PathBuf>,
    /// Column of the training log to plot against the first column.
    #[arg(long)]
    column: Option<String>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    title: Option<String>,
}

#[derive(Args)]
struct RolloutArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::InvalidSpec(_) => 2,
            Error::MissingStage { .. } => 3,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

/// Any failure while reading plot inputs is a malformed-input error.
fn plot_input(e: Error) -> Failure {
    Failure {
        code: 4,
        message: e.to_string(),
    }
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serialisable"));
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let mut config = match (&a.preset, &a.config) {
        (Some(p), None) => RunConfig::preset(p)?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::from_json(&text)?
        }
        _ => return Err(config_error("pass exactly one of --preset or --config")),
    };
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(c) = a.cadence {
        config.snapshot.cadence = c;
    }
    if let Some(r) = a.rollout_steps {
        config.rollout_steps = r;
    }
    match &mut config.algorithm {
        AlgorithmConfig::Sac(c) => {
            if a.episodes.is_some() {
                return Err(config_error("--episodes applies to ADHDP runs only"));
            }
            if let Some(t) = a.total_steps {
                c.total_steps = t;
            }
        }
        AlgorithmConfig::Adhdp(c) => {
            if a.total_steps.is_some() {
                return Err(config_error("--total-steps applies to SAC runs only"));
            }
            if let Some(e) = a.episodes {
                c.episodes = e;
            }
        }
    }
    let config = config.resolved();
    config.validate()?;
    if a.print_config {
        println!("{}", config.to_json());
        return Ok(());
    }
    let out = a.out.ok_or_else(|| config_error("--out is required"))?;
    let summary = pipeline::train(&config, &out)?;
    print_json(&summary);
    Ok(())
}

fn landscape(a: LandscapeArgs) -> Result<(), Failure> {
    let mut lc = pipeline::load_manifest(&a.run)?.config.landscape;
    if let Some(v) = a.grid_n {
        lc.grid_n = v;
    }
    if let Some(v) = a.margin {
        lc.margin = v;
    }
    if let Some(v) = a.min_half_width {
        lc.min_half_width = Some(v);
    }
    if let Some(v) = a.probe_source {
        lc.final_probe = match v {
            ProbeArg::FinalRollout => FinalProbe::FinalRollout,
            ProbeArg::Snapshot => FinalProbe::Snapshot,
        };
    }
    if let Some(v) = a.probe_size {
        lc.probe_size = v;
    }
    if let Some(v) = a.target_seed {
        lc.target_seed = v;
    }
    a.metrics.apply(&mut lc);
    let results = pipeline::landscape(&a.run, &a.stages, &lc)?;
    for r in results {
        println!("{}", r.dir.display());
        print_json(&r.report);
    }
    Ok(())
}

fn metrics(a: MetricsArgs) -> Result<(), Failure> {
    let mut lc = LandscapeConfig::default();
    a.metrics.apply(&mut lc);
    let file = File::open(&a.grid).map_err(|e| plot_input(e.into()))?;
    let grid = read_grid_csv(BufReader::new(file)).map_err(plot_input)?;
    let report = metrics_report(&grid, &lc.metrics, None)?;
    let text = serde_json::to_string_pretty(&report).expect("serialisable") + "\n";
    match a.out {
        Some(p) => fs::write(p, text).map_err(|e| Failure::from(Error::from(e)))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn write_svg(dir: &Path, name: &str, svg: &str) -> Result<(), Failure> {
    let p = dir.join(name);
    fs::write(&p, svg).map_err(|e| Failure::from(Error::from(e)))?;
    println!("{}", p.display());
    Ok(())
}

fn plot(a: PlotArgs) -> Result<(), Failure> {
    if a.grid.is_none() && a.train_log.is_none() {
        return Err(config_error("pass --grid and/or --train-log"));
    }
    let opts = PlotOptions {
        title: a.title.clone(),
        ..Default::default()
    };
    let open = |p: &Path| File::open(p).map(BufReader::new).map_err(|e| plot_input(e.into()));
    fs::create_dir_all(&a.out_dir).map_err(|e| Failure::from(Error::from(e)))?;
    if let Some(g) = &a.grid {
        let grid = read_grid_csv(open(g)?).map_err(plot_input)?;
        let path = match &a.path {
            Some(p) => Some(read_path_csv(open(p)?).map_err(plot_input)?),
            None => None,
        };
        write_svg(&a.out_dir, "contour.svg", &contour_svg(&grid, path.as_ref(), &opts)?)?;
        write_svg(&a.out_dir, "surface.svg", &surface_svg(&grid, &opts)?)?;
    }
    if let Some(t) = &a.train_log {
        let table = read_numeric_csv(open(t)?).map_err(plot_input)?;
        let malformed = |m: String| plot_input(Error::InvalidArgument(m));
        let y_name = match &a.column {
            Some(c) => c.clone(),
            None => ["episode_return", "total_reward"]
                .into_iter()
                .find(|c| table.column(c).is_some())
                .ok_or_else(|| malformed("no return column; pass --column".into()))?
                .to_string(),
        };
        let y = table.column(&y_name).ok_or_else(|| malformed(format!("no column {y_name:?}")))?;
        let pts = table.pairs(0, y);
        if pts.is_empty() {
            return Err(malformed(format!("column {y_name:?} has no values")));
        }
        write_svg(&a.out_dir, "training.svg", &curve_svg(&pts, &table.header[0], &y_name, &opts)?)?;
    }
    Ok(())
}

fn rollout(a: RolloutArgs) -> Result<(), Failure> {
    print_json(&pipeline::rollout_run(&a.run, a.steps)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Landscape(a) => landscape(a),
        Command::Metrics(a) => metrics(a),
        Command::Plot(a) => plot(a),
        Command::Rollout(a) => rollout(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
