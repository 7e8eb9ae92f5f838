use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use eamri::harness::commands;
use eamri::harness::{load_checkpoint, EdgeOperator, ReconConfig, VariantKind};
use eamri::mri::default_center_fraction;

#[derive(Parser)]
#[command(name = "eamri", version, about = "Edge-guided parallel MRI reconstruction")]
struct Cli {
    /// JSON config whose keys match the ReconConfig fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    variant: Option<VariantKind>,
    #[arg(long = "edge-op", global = true)]
    edge_op: Option<EdgeOperator>,
    #[arg(long, global = true, value_parser = ["4", "6"])]
    af: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a phantom dataset.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// Train a model, optionally resuming from a checkpoint.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Reconstruct one sample and write images.
    Recon {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Print validation metrics next to the zero-filled baseline.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long)]
        verbose: bool,
    },
    /// Train every variant and both edge operators and compare.
    Ablate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve_config(cli: &Cli, base: Option<ReconConfig>) -> eamri::Result<ReconConfig> {
    let mut cfg = match (&cli.config, base) {
        (Some(path), _) => ReconConfig::load(path)?,
        (None, Some(base)) => base,
        (None, None) => ReconConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(v) = cli.variant {
        cfg.variant = v;
    }
    if let Some(e) = cli.edge_op {
        cfg.edge_op = e;
    }
    if let Some(af) = &cli.af {
        cfg.af = af.parse().expect("restricted by the parser");
        cfg.center_fraction = default_center_fraction(cfg.af);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> eamri::Result<bool> {
    let out = &mut std::io::stdout();
    match &cli.command {
        Command::Simulate { out: dir, samples } => {
            commands::simulate(&resolve_config(cli, None)?, *samples, dir, out)?;
        }
        Command::Train {
            dataset,
            out: dir,
            checkpoint,
        } => {
            let base = match checkpoint {
                Some(path) => Some(load_checkpoint(path)?.0.config().clone()),
                None => None,
            };
            let cfg = resolve_config(cli, base)?;
            commands::train(&cfg, dataset, dir, checkpoint.as_deref(), out)?;
        }
        Command::Recon {
            checkpoint,
            dataset,
            out: dir,
            index,
        } => {
            commands::recon(checkpoint, dataset, *index, dir, out)?;
        }
        Command::Eval { checkpoint, dataset } => {
            commands::eval(checkpoint, dataset, out)?;
        }
        Command::Gradcheck { verbose } => {
            return commands::gradcheck(cli.seed.unwrap_or(0), *verbose, out);
        }
        Command::Ablate { dataset, out: dir } => {
            commands::ablate(&resolve_config(cli, None)?, dataset, Path::new(dir), out)?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(e) = commands::configure_threads() {
        eprintln!("eamri: {e}");
        return ExitCode::from(1);
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("eamri: {e}");
            ExitCode::from(1)
        }
    }
}
