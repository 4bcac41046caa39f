use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use halls_core::harness::{self, HarnessError, RunConfig};

#[derive(Parser)]
#[command(name = "halls", version, about = "Retention-adaptive STT-RAM last-level cache simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parameter table replacing the configured one.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Built-in workload replacing the configured workload source.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate every configured system and write the report files.
    Run {
        #[command(flatten)]
        common: Common,
        /// Also write mapping.csv.
        #[arg(long)]
        emit_mapping: bool,
    },
    /// Exhaustively evaluate retention mappings or configurations.
    Oracle {
        #[command(flatten)]
        common: Common,
    },
    /// Run the configured systems across the values of one axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// retention_class, config, write_fraction or lifetime_band.
        #[arg(long)]
        axis: Option<String>,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<String>>,
    },
    /// Write the configured workload as a gzip trace file.
    GenTrace {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<RunConfig, HarnessError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None if common.preset.is_some() => RunConfig::default(),
        None => return Err(HarnessError::Config("--config or --preset is required".into())),
    };
    if let Some(p) = &common.preset {
        cfg.workload = harness::WorkloadSource { preset: Some(p.clone()), ..Default::default() };
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    if let Some(p) = &common.params {
        cfg.params = Some(p.clone());
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run { common, emit_mapping } => {
            let cfg = load(&common)?;
            let report = harness::cmd_run(&cfg)?;
            for path in report.write(&cfg.out, emit_mapping)? {
                println!("wrote {}", path.display());
            }
            print!("{}", report.summary_csv());
        }
        Command::Oracle { common } => {
            let cfg = load(&common)?;
            let report = harness::cmd_oracle(&cfg)?;
            let path = report.write(&cfg.out)?;
            println!("wrote {} ({} candidates)", path.display(), report.entries.len());
            if let Some(best) = report.best() {
                let banks: Vec<String> = best.mapping.entries().iter().map(|b| b.to_string()).collect();
                println!(
                    "best: {} [{}] energy {:.3} nJ, latency {} cycles",
                    best.config,
                    banks.join(" "),
                    best.energy_nj,
                    best.latency_cycles
                );
            }
        }
        Command::Sweep { common, axis, values } => {
            let cfg = load(&common)?;
            let report = harness::cmd_sweep(&cfg, axis.as_deref(), values)?;
            let path = report.write(&cfg.out)?;
            println!("wrote {}", path.display());
            print!("{}", report.csv());
        }
        Command::GenTrace { common } => {
            let cfg = load(&common)?;
            let (path, n) = harness::cmd_gen_trace(&cfg, &cfg.out)?;
            println!("wrote {} ({n} accesses)", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
