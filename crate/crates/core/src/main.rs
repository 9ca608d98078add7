use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use uwbnav::harness::checks::run_checks;
use uwbnav::harness::config::{TopologyName, Variant};
use uwbnav::harness::metrics::{metrics_against, read_estimates, write_metrics};
use uwbnav::harness::run::{load_or_synthesize, run_experiment, synthesize, write_outputs};
use uwbnav::harness::{Dataset, RunConfig};
use uwbnav::{Error, Result};

#[derive(Parser)]
#[command(name = "uwbnav", version, about = "UWB/IMU navigation filter on SE2(3)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a flight and write it as a dataset directory.
    Simulate(Overrides),
    /// Run the filter and write metrics, estimates and a summary.
    Run(Overrides),
    /// Validate the configuration and run the built-in self-checks.
    Check(Overrides),
    /// Recompute metrics from saved estimates and a dataset's truth.
    Metrics {
        /// estimates.csv written by `run`.
        #[arg(long)]
        estimates: PathBuf,
        /// Dataset directory holding truth.csv and anchors.csv.
        #[arg(long)]
        dataset: PathBuf,
        /// Output metrics CSV.
        #[arg(long, default_value = "metrics.csv")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Overrides {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for noise and simulation streams
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    topology: Option<TopologyArg>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    /// Filter rate in Hz.
    #[arg(long)]
    rate: Option<f64>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum TopologyArg {
    Toa,
    TdoaMain,
    TdoaRing,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum VariantArg {
    Matrix,
    Quaternion,
}

impl Overrides {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(t) = self.topology {
            cfg.topology = match t {
                TopologyArg::Toa => TopologyName::Toa,
                TopologyArg::TdoaMain => TopologyName::TdoaMain,
                TopologyArg::TdoaRing => TopologyName::TdoaRing,
            };
        }
        if let Some(v) = self.variant {
            cfg.variant = match v {
                VariantArg::Matrix => Variant::Matrix,
                VariantArg::Quaternion => Variant::Quaternion,
            };
        }
        if let Some(rate) = self.rate {
            if !(rate > 0.0) {
                return Err(Error::Config(format!("rate must be positive, got {rate}")));
            }
            cfg.dt = 1.0 / rate;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Simulate(o) => {
            let cfg = o.config()?;
            let data = synthesize(&cfg)?;
            data.write(&cfg.out_dir)
                .map_err(|e| e.context(format!("writing {}", cfg.out_dir.display())))?;
            println!(
                "wrote {} truth samples, {} IMU samples to {}",
                data.truth.len(),
                data.imu.len(),
                cfg.out_dir.display()
            );
        }
        Command::Run(o) => {
            let cfg = o.config()?;
            let out = run_experiment(&cfg).map_err(|e| e.context(format!("seed {}", cfg.seed)))?;
            write_outputs(&out, &cfg, &cfg.out_dir)?;
            let s = &out.summary;
            println!(
                "{} steps: final att {:.4} pos {:.3} m vel {:.3} m/s; last-half mean att {:.4} pos {:.3} m vel {:.3} m/s",
                s.steps,
                s.att_err.final_value,
                s.pos_err.final_value,
                s.vel_err.final_value,
                s.att_err.last_half_mean,
                s.pos_err.last_half_mean,
                s.vel_err.last_half_mean,
            );
            println!("outputs in {}", cfg.out_dir.display());
        }
        Command::Check(o) => {
            let cfg = o.config()?;
            let data = load_or_synthesize(&cfg)?;
            println!(
                "config ok: {} anchors, {} IMU samples, {} truth samples",
                data.anchors.len(),
                data.imu.len(),
                data.truth.len()
            );
            let results = run_checks(&cfg);
            for r in &results {
                println!("[{}] {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                return Err(Error::Numerical(format!("{failed} self-check(s) failed")));
            }
        }
        Command::Metrics {
            estimates,
            dataset,
            out,
        } => {
            let est = read_estimates(&estimates)?;
            let data = Dataset::load(&dataset, 3, false)?;
            let rows = metrics_against(&est, &data);
            write_metrics(&out, &rows)?;
            println!("wrote {} rows to {}", rows.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
