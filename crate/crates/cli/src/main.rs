use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pif_cli::commands::{self, SampleOptions};
use pif_cli::config::RunConfig;
use pif_cli::{CliError, Result};

#[derive(Parser)]
#[command(name = "pif", version, about = "Train and sample parameter interpolation flows on toy point sets")]
struct Cli {
    /// key = value configuration file; flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Bundled run preset applied before --config
    #[arg(long, global = true)]
    preset: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Chain steps (training grid and sampling)
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Dataset size for gen-data, number of samples for sample
    #[arg(long, global = true)]
    count: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a normalized dataset CSV and its normalization sidecar
    GenData,
    /// Train on a dataset CSV and write a checkpoint and loss log
    Train {
        data: PathBuf,
        /// Continue from this checkpoint
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Draw samples from a checkpoint
    Sample {
        checkpoint: PathBuf,
        /// Mask/context CSV for conditional sampling
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Compare generated points against reference points
    Eval { generated: PathBuf, reference: PathBuf },
    /// Render a point CSV as SVG
    Plot {
        samples: PathBuf,
        /// Draw a 64x64 density underlay
        #[arg(long)]
        density: bool,
    },
}

impl Cli {
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.preset {
            Some(p) => RunConfig::preset(p)?,
            None => RunConfig::default(),
        };
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(steps) = self.steps {
            cfg.n_steps = steps;
        }
        if let Some(count) = self.count {
            cfg.n_samples = count;
        }
        Ok(cfg)
    }

    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::GenData => {
            let path = commands::gen_data(&cli.run_config()?)?;
            println!("{}", path.display());
        }
        Command::Train { data, resume } => {
            let cfg = cli.run_config()?;
            let mut report = |r: &commands::EpochReport| eprintln!("epoch {} step {} loss {:.6}", r.epoch, r.steps, r.mean_loss);
            let outcome = commands::train(&cfg, data, resume.as_deref(), Some(&mut report))?;
            println!("{}", outcome.checkpoint.display());
        }
        Command::Sample { checkpoint, mask } => {
            if cli.preset.is_some() || cli.config.is_some() {
                return Err(CliError::Usage("sample takes its configuration from the checkpoint".into()));
            }
            let opts = SampleOptions {
                count: cli.count.unwrap_or(10_000),
                mask: mask.clone(),
                steps: cli.steps,
                seed: cli.seed,
                out: cli.out.clone(),
            };
            println!("{}", commands::sample(checkpoint, &opts)?.display());
        }
        Command::Eval { generated, reference } => {
            let (path, report) = commands::eval(generated, reference, &cli.out_dir())?;
            eprintln!("jsd {} outlier_rate {}", report.jsd, report.outlier_rate);
            println!("{}", path.display());
        }
        Command::Plot { samples, density } => {
            let seed = cli.run_config()?.seed;
            println!("{}", commands::plot(samples, &cli.out_dir(), *density, seed)?.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let line = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", CliError::Usage(line.to_string()).report());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.report());
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}
