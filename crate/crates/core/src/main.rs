use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use magshield::config::{parse_config_with, RunConfig};
use magshield::{runner, Error, Result};

#[derive(Parser)]
#[command(name = "magshield", version, about = "Plasma dynamics around a singular magnetic shield")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve a scenario and write diagnostics, snapshots and a manifest.
    Simulate(Common),
    /// Run the velocity-cutoff ladder of a scenario.
    Convergence(Common),
    /// Check the external field against a finite-difference curl.
    VerifyFields {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Permit parameters outside the ranges where the shield is known to hold.
    #[arg(long)]
    allow_hypothesis_violation: bool,
}

impl Common {
    fn load(&self) -> Result<(RunConfig, PathBuf)> {
        let text = std::fs::read_to_string(&self.config).map_err(|err| Error::Io {
            path: self.config.clone(),
            source: err,
        })?;
        let mut cfg = parse_config_with(&text, self.allow_hypothesis_violation)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        cfg.validate()?;
        let dir = self.out_dir.clone().unwrap_or_else(|| cfg.output.dir.clone());
        Ok((cfg, dir))
    }
}

fn execute(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Simulate(c) => {
            let (cfg, dir) = c.load()?;
            runner::simulate(&cfg, &dir)?;
            report(&dir);
        }
        Command::Convergence(c) => {
            let (cfg, dir) = c.load()?;
            let table = runner::convergence(&cfg, &dir)?;
            print!("{table}");
            if !table.strictly_decreasing() {
                eprintln!("note: sigma(T) is not strictly decreasing across the rungs");
            }
            report(&dir);
        }
        Command::VerifyFields { common, samples } => {
            let (cfg, dir) = common.load()?;
            let check = runner::verify_fields(&cfg, &dir, *samples)?;
            println!(
                "samples {}  curl error {:.3e}  divergence error {:.3e}",
                check.samples, check.curl_error, check.divergence_error
            );
        }
    }
    Ok(())
}

fn report(dir: &Path) {
    println!("artifacts written to {}", dir.display());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = execute(&cli.command);
    if let Err(err) = &outcome {
        eprintln!("error: {err}");
    }
    ExitCode::from(runner::exit_code(&outcome) as u8)
}
