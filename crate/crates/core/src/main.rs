use clap::{Parser, Subcommand};
use emshape::harness::{self, Config, Suite};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "emshape",
    about = "Shape-derivative calculus of boundary integral operators for dielectric scattering",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a verification suite and write reports
    Verify {
        /// geometry | surfops | kernels | emfield | scattering | all
        suite: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the grid band limit for the solve-level checks
        #[arg(long)]
        band_limit: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Solve the transmission problem and write density, far field and probes
    Solve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        band_limit: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Differentiate the solve in a deformation direction and compare
    /// against the finite-difference sweep
    Derive {
        /// Deformation preset overriding the configured one
        #[arg(long)]
        deformation: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        band_limit: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load_config(
    path: &Option<PathBuf>,
    band_limit: Option<usize>,
    seed: Option<u64>,
) -> Result<Config, emshape::Error> {
    let mut cfg = match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(l) = band_limit {
        cfg.band_limit = l;
        cfg.n_theta = l + 1;
        cfg.n_phi = 2 * l + 3;
        cfg.verify_band_limit = Some(l);
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Verify {
            suite,
            config,
            out,
            band_limit,
            seed,
        } => (|| -> Result<bool, emshape::Error> {
            let suite = Suite::parse(suite)?;
            let cfg = load_config(config, *band_limit, *seed)?;
            harness::run_suite_to_dir(suite, &cfg, out)
        })(),
        Command::Solve {
            config,
            out,
            band_limit,
            seed,
        } => (|| {
            let cfg = load_config(config, *band_limit, *seed)?;
            harness::solve_cmd(&cfg, out)?;
            Ok(true)
        })(),
        Command::Derive {
            deformation,
            config,
            out,
            band_limit,
            seed,
        } => (|| {
            let cfg = load_config(config, *band_limit, *seed)?;
            harness::derive_cmd(&cfg, deformation.as_deref(), out)?;
            Ok(true)
        })(),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                emshape::Error::Usage(_) | emshape::Error::Config { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
