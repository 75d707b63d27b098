use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use overparam_core::experiment::{run_sweep_point, write_sweep_csv, SweepRow};
use overparam_core::optim::StopReason;
use overparam_core::verify::{lemma_oracles, verify_init_trials, verify_perturbation_properties};
use overparam_core::{builtin_loss, run_train, validate_dataset, Error, ExperimentConfig, NetworkParams, SweepAxis};

/// Exit status for configuration, input and feasibility errors.
const EXIT_CONFIG: u8 = 2;
/// Exit status for divergence and other numerical failures.
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "overparam", version, about = "Train and probe over-parameterized deep ReLU networks")]
struct Cli {
    /// JSON configuration; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory; overrides `out_dir` in the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Print the full default configuration and exit.
    #[arg(long)]
    init_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a separated dataset: dataset.csv and margin.json.
    GenData,
    /// Train with GD or SGD: trajectory.csv, summary.json and checkpoint.json.
    Train,
    /// Run the verification batteries.
    Verify {
        /// Trained parameters to compare against their initialization.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Skip the scalar oracles.
        #[arg(long)]
        no_oracles: bool,
    },
    /// Train once per value of one configuration axis: sweep.csv.
    Sweep {
        /// One of m, phi, n, L, B; overrides `sweep.axis`.
        #[arg(long)]
        axis: Option<SweepAxis>,
        /// Comma-separated values; overrides `sweep.values`.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        /// Runs per value; overrides `sweep.trials`.
        #[arg(long)]
        trials: Option<usize>,
    },
}

/// A failure that maps to a specific exit status.
#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let error = e.into();
        let code = match error.downcast_ref::<Error>() {
            Some(Error::Numerical(_)) | Some(Error::NonConvergence { .. }) => EXIT_NUMERICAL,
            _ => EXIT_CONFIG,
        };
        Failure { code, error }
    }
}

fn numerical(error: anyhow::Error) -> Failure {
    Failure {
        code: EXIT_NUMERICAL,
        error,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if cli.init_config {
        println!("{}", ExperimentConfig::default().to_json()?);
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(anyhow!("no subcommand given (expected gen-data, train, verify or sweep)").into());
    };
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<ExperimentConfig>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = Some(out);
    }
    if let Command::Sweep { axis, values, trials } = &command {
        if let Some(a) = axis {
            cfg.sweep.axis = *a;
        }
        if let Some(v) = values {
            cfg.sweep.values = v.clone();
        }
        if let Some(t) = trials {
            cfg.sweep.trials = *t;
        }
    }
    cfg.validate()?;
    let out = cfg
        .out_dir
        .clone()
        .ok_or_else(|| anyhow!("no output directory (use --out or set out_dir)"))?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("config.json"), &cfg)?;

    match command {
        Command::GenData => gen_data(&cfg, &out),
        Command::Train => train(&cfg, &out),
        Command::Verify { checkpoint, no_oracles } => verify(&cfg, &out, checkpoint.as_deref(), !no_oracles),
        Command::Sweep { .. } => sweep(&cfg, &out),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<(), Failure> {
    let data = cfg.dataset()?;
    let report = validate_dataset(&data);
    data.save_csv(&out.join("dataset.csv"))?;
    write_json(&out.join("margin.json"), &report)?;
    if !report.pass {
        bail_config("generated dataset fails validation; see margin.json")?;
    }
    Ok(())
}

fn bail_config(msg: &str) -> Result<(), Failure> {
    Err(anyhow!(msg.to_string()).into())
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    #[serde(flatten)]
    summary: overparam_core::optim::TrainSummary,
    n: usize,
    depth: usize,
    layer_dims: &'a [usize],
    phi: f64,
    seed: u64,
}

fn train(cfg: &ExperimentConfig, out: &Path) -> Result<(), Failure> {
    let outcome = run_train(cfg)?;
    write_run(cfg, out, &outcome.trained, &outcome.record)?;
    if outcome.record.stop_reason == StopReason::Diverged {
        let at = outcome.record.divergence.as_ref().map_or(0, |d| d.k);
        return Err(numerical(anyhow!(
            "training diverged at iteration {at}; trajectory.csv keeps the last finite row"
        )));
    }
    log::info!(
        "stopped with {} after {} iterations",
        outcome.record.stop_reason.as_str(),
        outcome.record.iterations()
    );
    Ok(())
}

fn write_run(
    cfg: &ExperimentConfig,
    out: &Path,
    trained: &NetworkParams,
    record: &overparam_core::TrajectoryRecord,
) -> anyhow::Result<()> {
    fs::create_dir_all(out)?;
    let file = fs::File::create(out.join("trajectory.csv"))?;
    record.write_csv(std::io::BufWriter::new(file))?;
    write_json(
        &out.join("summary.json"),
        &SummaryFile {
            summary: record.summary(),
            n: record.n,
            depth: record.depth,
            layer_dims: trained.layer_dims(),
            phi: record.phi,
            seed: cfg.seed,
        },
    )?;
    trained.save_json(&out.join("checkpoint.json"))?;
    Ok(())
}

fn verify(cfg: &ExperimentConfig, out: &Path, checkpoint: Option<&Path>, oracles: bool) -> Result<(), Failure> {
    let data = cfg.dataset()?;
    let seeds: Vec<u64> = (0..cfg.verify.trials as u64).map(|t| cfg.seed.wrapping_add(t)).collect();
    let init = verify_init_trials(
        &cfg.layer_dims(),
        &data,
        &cfg.verify.init,
        &seeds,
        cfg.verify.allowed_failures,
        cfg.verify.stability_ratio,
    )?;
    write_json(&out.join("init_properties.json"), &init)?;

    if let Some(path) = checkpoint {
        if !path.is_file() {
            bail_config(&format!("checkpoint {} not found", path.display()))?;
        }
        let trained = NetworkParams::load_json(path)?;
        let params0 = overparam_core::init_network(trained.layer_dims(), trained.seed().unwrap_or(cfg.seed))?;
        let loss = builtin_loss(&cfg.loss)?;
        let report = verify_perturbation_properties(&params0, &trained, &params0, &data, &loss, &cfg.verify.perturbation)?;
        write_json(&out.join("perturbation_properties.json"), &report)?;
    }
    if oracles {
        write_json(&out.join("lemma_oracles.json"), &lemma_oracles(cfg.seed)?)?;
    }
    Ok(())
}

fn thread_count() -> anyhow::Result<usize> {
    match std::env::var("OVERPARAM_THREADS") {
        Ok(v) => {
            let n: usize = v.trim().parse().with_context(|| format!("OVERPARAM_THREADS={v} is not a count"))?;
            Ok(n.max(1))
        }
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn sweep(cfg: &ExperimentConfig, out: &Path) -> Result<(), Failure> {
    if cfg.sweep.values.is_empty() {
        bail_config("sweep needs at least one value")?;
    }
    let trials = cfg.sweep.trials.max(1);
    let points: Vec<(f64, usize)> = cfg
        .sweep
        .values
        .iter()
        .flat_map(|&v| (0..trials).map(move |t| (v, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(thread_count()?).build()?;
    let axis = cfg.sweep.axis;
    let rows: Vec<SweepRow> = pool.install(|| {
        points
            .par_iter()
            .map(|&(value, trial)| {
                let (mut row, run) = run_sweep_point(cfg, value, trial);
                if let Some((point_cfg, outcome)) = run {
                    let dir = out.join("runs").join(format!("{axis}={value}")).join(format!("trial-{trial}"));
                    if let Err(e) = write_run(&point_cfg, &dir, &outcome.trained, &outcome.record) {
                        row.status = format!("error: {e:#}");
                    }
                }
                row
            })
            .collect()
    });
    let file = fs::File::create(out.join("sweep.csv")).context("creating sweep.csv")?;
    write_sweep_csv(&rows, std::io::BufWriter::new(file))?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    if failed > 0 {
        log::warn!("{failed} of {} sweep runs failed; see sweep.csv", rows.len());
    }
    Ok(())
}
