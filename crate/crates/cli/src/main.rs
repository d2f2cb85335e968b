use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lama_cli::commands::{cmd_init_train, cmd_reconstruct, cmd_report, cmd_simulate, cmd_stability};
use lama_cli::{CliResult, RunConfig};

#[derive(Parser)]
#[command(name = "lama", version, about = "Sparse-view CT reconstruction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write phantom, full sinogram and sparse sinogram.
    Simulate,
    /// Reconstruct from sparse views and write images, trace and metrics.
    Reconstruct,
    /// Train a convolutional view-advance map.
    InitTrain,
    /// Text-stamp and Gaussian perturbation experiment.
    Stability,
    /// Re-verify the solver invariants of a reconstruct output directory.
    Report {
        /// Directory written by `reconstruct`; defaults to the output directory.
        run_dir: Option<PathBuf>,
    },
}

fn load(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> CliResult<()> {
    let cfg = load(cli)?;
    let out = cfg.output_dir.as_path();
    match &cli.command {
        Command::Simulate => {
            cmd_simulate(&cfg, out)?;
            println!("wrote simulation to {}", out.display());
        }
        Command::Reconstruct => {
            let (_, m) = cmd_reconstruct(&cfg, out)?;
            println!(
                "psnr {} (zero-fill fbp {}), ssim {:.4}, sinogram rmse {:.4e}, {} iterations",
                m.psnr, m.psnr_fbp, m.ssim, m.sinogram_rmse, m.iterations
            );
        }
        Command::InitTrain => {
            let (_, _, s) = cmd_init_train(&cfg, out)?;
            println!(
                "advance loss {:.6e} -> {:.6e} (interpolation {:.6e})",
                s.initial_loss, s.final_loss, s.interpolation_loss
            );
        }
        Command::Stability => {
            let s = cmd_stability(&cfg, out)?;
            for c in &s.cases {
                println!("{}: psnr vs perturbed {}", c.perturbation.label(), c.psnr_perturbed);
            }
        }
        Command::Report { run_dir } => {
            let dir = run_dir.as_deref().unwrap_or(out);
            match cmd_report(dir, out) {
                Ok(r) => print!("{}", r.to_text()),
                Err(e) => {
                    if let Ok(text) = std::fs::read_to_string(out.join("report.txt")) {
                        print!("{text}");
                    }
                    return Err(e);
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
