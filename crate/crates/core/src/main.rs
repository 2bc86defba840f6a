use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use driftbench::config::{ConfigError, RunConfig, OUT_ENV};
use driftbench::data::{synthesize, SynthConfig};
use driftbench::report::{self, ReportError, TableKind};

#[derive(Parser)]
#[command(
    name = "driftbench",
    version,
    about = "Temporal drift and adversarial robustness benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic drifting dataset (CSV + schema JSON).
    Synth {
        /// SynthConfig JSON.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the generator seed.
        #[arg(long)]
        seed: Option<u64>,
        /// File stem of the written dataset.
        #[arg(long, default_value = "synthetic")]
        name: String,
    },
    /// Execute the full run matrix of a config and write results and tables.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Rebuild report tables from an existing results directory.
    Report {
        /// Results directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// diagnostics, spearman, protocols, linkage or timeseries; all when omitted.
        #[arg(long)]
        table: Option<String>,
    },
    /// Per-year attack diagnostics against the surrogate only.
    Diagnose {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<ReportError> for Failure {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::UnknownTable(_) => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn env_out() -> Option<PathBuf> {
    std::env::var_os(OUT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

fn load_run_config(path: &Path, seed: Option<u64>) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn synth(
    config: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    name: &str,
) -> Result<(), Failure> {
    let text = fs::read_to_string(config)
        .map_err(|e| Failure::Config(format!("{}: {e}", config.display())))?;
    let mut cfg: SynthConfig = serde_json::from_str(&text)
        .map_err(|e| Failure::Config(format!("{}: {e}", config.display())))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let dir = out.or_else(env_out).unwrap_or_else(|| PathBuf::from("."));
    let ds = synthesize(&cfg).map_err(|e| Failure::Runtime(e.to_string()))?;
    let runtime = |e: std::io::Error| Failure::Runtime(format!("{}: {e}", dir.display()));
    fs::create_dir_all(&dir).map_err(runtime)?;
    let csv_path = dir.join(format!("{name}.csv"));
    let schema_path = dir.join(format!("{name}.schema.json"));
    let file = fs::File::create(&csv_path).map_err(runtime)?;
    ds.write_csv(file)
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    fs::write(&schema_path, ds.schema().to_json_string()).map_err(runtime)?;
    println!(
        "wrote {} samples to {} and {}",
        ds.len(),
        csv_path.display(),
        schema_path.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth {
            config,
            out,
            seed,
            name,
        } => synth(&config, out, seed, &name),
        Command::Run { config, out, seed } => (|| {
            let cfg = load_run_config(&config, seed)?;
            let dir = cfg.resolve_out(out.as_deref());
            match report::run(&cfg, &dir) {
                Ok(s) => {
                    println!(
                        "{} runs: {} completed, {} skipped, {} failed; results in {}",
                        s.enumerated,
                        s.completed,
                        s.skipped,
                        s.failed,
                        s.out_dir.display()
                    );
                    Ok(())
                }
                Err(e) => Err(e.into()),
            }
        })(),
        Command::Report { out, table } => (|| {
            let dir = out
                .or_else(env_out)
                .unwrap_or_else(|| PathBuf::from("driftbench-out"));
            let kinds = match table {
                Some(t) => vec![TableKind::parse(&t)?],
                None => TableKind::ALL.to_vec(),
            };
            for kind in kinds {
                let t = report::report(&dir, kind)?;
                println!("# {}\n{}", kind.as_str(), t.to_text());
            }
            Ok(())
        })(),
        Command::Diagnose { config, out, seed } => (|| {
            let cfg = load_run_config(&config, seed)?;
            let dir = cfg.resolve_out(out.as_deref());
            let t = report::diagnose(&cfg)?;
            t.write_csv(&dir.join("diagnose.csv"))?;
            print!("{}", t.to_text());
            Ok(())
        })(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
