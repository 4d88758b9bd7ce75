use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use tfgsmooth::data;
use tfgsmooth::eval::{emit_report, DataSource, Experiment, ExperimentConfig};

#[derive(Parser, Debug)]
#[command(name = "tfgsmooth", version, about = "Sliding-window IMU/GNSS smoothing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the Monte Carlo consistency experiment and write tables and traces.
    Run(RunArgs),
    /// Write the dataset of one seed of a synthetic config as CSV.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Convert a KITTI raw OXTS directory to the dataset CSV, adding noisy fixes.
    ConvertKitti {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        gnss_rate: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma_y: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated subset of tfg,se23,linear.
    #[arg(long)]
    methods: Option<String>,
    /// Comma-separated window sizes.
    #[arg(long)]
    windows: Option<String>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// gx,gy,gz in m/s².
    #[arg(long, allow_hyphen_values = true)]
    gravity: Option<String>,
    /// Exit 0 even when some runs failed.
    #[arg(long)]
    keep_going: bool,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    workers: Option<usize>,
}

fn load_config(path: &std::path::Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("reading config {}", path.display()))
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let mut cfg = load_config(&args.config)?;
    let overrides = [
        ("methods", args.methods),
        ("windows", args.windows),
        ("runs", args.runs.map(|v| v.to_string())),
        ("seed", args.seed.map(|v| v.to_string())),
        ("gravity", args.gravity),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            cfg.set(key, &v).with_context(|| format!("--{key}"))?;
        }
    }
    cfg.validate()?;

    let workers = args
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let experiment = Experiment::new(cfg)?;
    let cells = experiment.run_all(workers)?;

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    emit_report(&cells, &args.out).with_context(|| format!("writing report to {}", args.out.display()))?;
    std::fs::write(args.out.join("config.txt"), experiment.cfg.to_kv())?;

    let mut failed = 0;
    for c in &cells {
        println!(
            "{:<12} window {:>3} {:<7} consistent {:.2} ({} runs, {} failed)",
            c.sequence,
            c.window,
            c.method,
            c.ratio(),
            c.records.len(),
            c.failures()
        );
        for r in c.records.iter().filter(|r| r.failed()) {
            eprintln!("run {} {} w{}: {}", r.seed, r.method, r.window, r.failure.as_deref().unwrap_or(""));
        }
        failed += c.failures();
    }
    if failed > 0 && !args.keep_going {
        eprintln!("{failed} run(s) failed; rerun with --keep-going to accept partial results");
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Generate { config, out, seed } => (|| {
            let cfg = match config {
                Some(p) => load_config(&p)?,
                None => ExperimentConfig::default(),
            };
            if !matches!(cfg.source, DataSource::Synthetic(_)) {
                bail!("generate needs a synthetic source");
            }
            let d = Experiment::new(cfg)?.dataset(seed)?;
            data::save_csv(&d, &out)?;
            Ok(ExitCode::SUCCESS)
        })(),
        Command::ConvertKitti { dir, out, gnss_rate, sigma_y, seed } => (|| {
            let mut d = data::convert_kitti_oxts(&dir)?;
            d.gnss = data::synthesize_gnss(&d, gnss_rate, sigma_y, seed)?;
            data::save_csv(&d, &out)?;
            println!("{} IMU samples, {} fixes", d.imu.len(), d.gnss.len());
            Ok(ExitCode::SUCCESS)
        })(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
