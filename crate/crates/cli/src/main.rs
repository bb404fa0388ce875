use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ldct_cli::config::ExperimentConfig;
use ldct_cli::error::{CliError, CliResult};
use ldct_cli::verify::{run_checks, VerifyOptions};
use ldct_cli::{dataset, recon};

#[derive(Parser)]
#[command(name = "ldct", version, about = "Low-dose fan-beam CT experiments")]
struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the dataset, noise and training seeds. Pass the same value
    /// to `simulate` and `recon` so the dataset digests agree.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate phantoms, clean and low-dose sinograms and weights.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Reconstruct the test split with the configured method.
    Recon {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Recompute metrics from reconstructions on disk.
    Metrics {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the built-in oracle checks.
    Verify {
        #[arg(long, hide = true)]
        corrupt_projector: bool,
    },
}

fn load(run: &RunArgs) -> CliResult<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::from_path(&run.config)?;
    if let Some(s) = run.seed {
        cfg.override_seed(s);
    }
    let root = run.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    Ok((cfg, root))
}

fn execute(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Validation("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.into()))?;
    }
    match cli.command {
        Command::Simulate { run } => {
            let (cfg, root) = load(&run)?;
            let m = dataset::cmd_simulate(&cfg, &root)?;
            println!("wrote {} files to {} (data digest {})", m.files.len(), root.display(), m.data_digest);
        }
        Command::Recon { run } => {
            let (cfg, root) = load(&run)?;
            let r = recon::cmd_recon(&cfg, &root)?;
            let db = |v: Option<f64>| v.map_or("inf".to_string(), |x| format!("{x:.2}"));
            println!(
                "{}: PSNR {} dB, SSIM {:.4} (FBP {} dB, {:.4}) -> {}",
                r.method,
                db(r.metrics.mean_psnr_db),
                r.metrics.mean_ssim,
                db(r.baseline_fbp.mean_psnr_db),
                r.baseline_fbp.mean_ssim,
                recon::recon_dir(&root, &cfg).display()
            );
        }
        Command::Metrics { run } => {
            let (cfg, root) = load(&run)?;
            print!("{}", recon::cmd_metrics(&cfg, &root)?.to_csv());
        }
        Command::Verify { corrupt_projector } => {
            let checks = run_checks(VerifyOptions { corrupt_projector })?;
            for c in &checks {
                println!("{}", c.line());
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                return Err(CliError::Validation(format!("{failed} of {} checks failed", checks.len())));
            }
            println!("all {} checks passed", checks.len());
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
