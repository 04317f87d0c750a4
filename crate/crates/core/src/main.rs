use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{info, warn};

use ispw_core::channel::write_dataset;
use ispw_core::config::{Algorithm, ExperimentConfig};
use ispw_core::engine::{compare, Simulation, StopReason};
use ispw_core::error::{Error, Result};
use ispw_core::graph::DynamicGraph;
use ispw_core::metrics::{fd_reference_rates, write_metrics, write_metrics_to};
use ispw_core::validate::invariant_suite;
use ispw_core::workload::{agent_dataset, test_set};

#[derive(Parser)]
#[command(name = "ispw", version, about = "Parallel random-walk ADMM simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write each agent's training set to `<out>/agent_<i>.bin`.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the configured algorithm for the configured seed.
    Run {
        #[arg(long, required_unless_present = "resume")]
        config: Option<PathBuf>,
        /// Metrics CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long, conflicts_with = "config")]
        resume: Option<PathBuf>,
        /// Where to write the checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Write the checkpoint once this many services are done.
        #[arg(long, requires = "checkpoint")]
        checkpoint_at: Option<u64>,
        /// Stop right after writing the checkpoint.
        #[arg(long, requires = "checkpoint_at")]
        halt: bool,
    },
    /// Run several algorithms over a seed sweep and merge the metrics.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        /// Defaults to all algorithms.
        #[arg(long, value_delimiter = ',')]
        algorithms: Vec<Algorithm>,
        /// Merged CSV. With several test SNRs, one file per SNR is written
        /// next to it with an `_snr<value>` suffix.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the invariant suite against a config.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Dump the edge set over time as `t,i,j`.
    Graph {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 100.0)]
        until: f64,
        #[arg(long, default_value_t = 1.0)]
        step: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn gen_data(config: &Path, out: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    fs::create_dir_all(out)?;
    for i in 0..cfg.n_agents {
        let set = agent_dataset(&cfg, i)?;
        let path = out.join(format!("agent_{i}.bin"));
        write_dataset(&path, &set)?;
        info!("wrote {} ({} rows, region {})", path.display(), set.header.rows(), set.header.region);
    }
    Ok(())
}

fn run(
    config: Option<&Path>,
    out: Option<&Path>,
    resume: Option<&Path>,
    checkpoint: Option<&Path>,
    checkpoint_at: Option<u64>,
    halt: bool,
) -> Result<()> {
    let mut sim = match (resume, config) {
        (Some(ck), _) => Simulation::load_checkpoint(ck)?,
        (None, Some(c)) => Simulation::new(&ExperimentConfig::load(c)?)?,
        (None, None) => return Err(Error::config("config", "either --config or --resume is required")),
    };
    if let (Some(path), Some(at)) = (checkpoint, checkpoint_at) {
        sim.run_until_services(at)?;
        sim.save_checkpoint(path)?;
        info!("checkpoint written to {} after {} services", path.display(), sim.services());
        if halt {
            return Ok(());
        }
    }
    let stop = sim.run()?;
    report_stop(sim.config(), sim.config().seed, stop);
    write_metrics_to(output(out)?, sim.records())
}

/// Budget exhaustion is only worth a warning when a target was set.
fn report_stop(cfg: &ExperimentConfig, seed: u64, stop: StopReason) {
    let alg = cfg.algorithm;
    if stop == StopReason::Diverged || (stop.is_flagged() && cfg.target_nmse.is_some()) {
        warn!("{alg} seed {seed} stopped on {}", stop.name());
    } else {
        info!("{alg} seed {seed} stopped on {}", stop.name());
    }
}

fn snr_path(out: &Path, snr: f64) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("metrics");
    let ext = out.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    out.with_file_name(format!("{stem}_snr{snr}.{ext}"))
}

fn compare_cmd(config: &Path, seeds: &[u64], algorithms: &[Algorithm], out: &Path) -> Result<()> {
    let base = ExperimentConfig::load(config)?;
    let algorithms = if algorithms.is_empty() { &Algorithm::ALL[..] } else { algorithms };
    let snrs = base.snr_test();
    for &snr in &snrs {
        let cfg = ExperimentConfig {
            snr_test_db: vec![snr],
            ..base.clone()
        };
        let (records, stops) = compare(&cfg, algorithms, seeds)?;
        for (alg, seed, stop) in stops {
            report_stop(&ExperimentConfig { algorithm: alg, ..cfg.clone() }, seed, stop);
        }
        let path = if snrs.len() == 1 { out.to_path_buf() } else { snr_path(out, snr) };
        write_metrics(&records, &path)?;
        let refs = reference_rows(&cfg, seeds)?;
        let ref_path = path.with_extension("references.csv");
        fs::write(&ref_path, refs)?;
        info!("wrote {} and {}", path.display(), ref_path.display());
    }
    Ok(())
}

/// Non-learning beamformer rates on each seed's test set.
fn reference_rows(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<String> {
    let mut s = String::from("snr_test_db,seed,fd_perfect_csi,fd_imperfect_csi\n");
    for &seed in seeds {
        let c = ExperimentConfig { seed, ..cfg.clone() };
        let snr = c.snr_test()[0];
        let (p, i) = fd_reference_rates(&test_set(&c, snr)?, c.rho_r_linear())?;
        s.push_str(&format!("{snr},{seed},{p},{i}\n"));
    }
    Ok(s)
}

fn validate_cmd(config: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let checks = invariant_suite(&cfg)?;
    let mut failed = Vec::new();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        if !c.passed {
            failed.push(c.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Invariant(format!("failed checks: {}", failed.join(", "))))
    }
}

fn graph_cmd(config: &Path, until: f64, step: f64, out: Option<&Path>) -> Result<()> {
    if !(step > 0.0) || !until.is_finite() {
        return Err(Error::config("step", "step must be > 0 and until finite"));
    }
    let cfg = ExperimentConfig::load(config)?;
    let g = DynamicGraph::new(cfg.n_agents, cfg.topology, cfg.topology_params(), cfg.topology_seed())?;
    let mut w = csv::Writer::from_writer(output(out)?);
    w.write_record(["t", "i", "j"])?;
    let mut k = 0u64;
    loop {
        let t = k as f64 * step;
        if t > until {
            break;
        }
        for (i, j) in g.edges_at(t) {
            w.write_record([t.to_string(), i.to_string(), j.to_string()])?;
        }
        k += 1;
    }
    w.flush()?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, out } => gen_data(&config, &out),
        Command::Run {
            config,
            out,
            resume,
            checkpoint,
            checkpoint_at,
            halt,
        } => run(
            config.as_deref(),
            out.as_deref(),
            resume.as_deref(),
            checkpoint.as_deref(),
            checkpoint_at,
            halt,
        ),
        Command::Compare {
            config,
            seeds,
            algorithms,
            out,
        } => compare_cmd(&config, &seeds, &algorithms, &out),
        Command::Validate { config } => validate_cmd(&config),
        Command::Graph { config, until, step, out } => graph_cmd(&config, until, step, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

