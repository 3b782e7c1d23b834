use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rar_core::catalog::TargetSpec;
use rar_core::Theta;
use rar_sim::commands::{self, MonteCarlo, TableDesign};
use rar_sim::config::{parse_bm_form, parse_family, parse_list};
use rar_sim::{CliError, CliResult, Format, SimulationConfig};

#[derive(Debug, Parser)]
#[command(name = "rarsim", version, about = "Monte Carlo runs and closed-form tables for response-adaptive designs")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Number of replications (overrides the config file).
    #[arg(long, global = true)]
    reps: Option<u64>,

    /// Worker threads; all cores by default.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Output format (overrides the config file).
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    /// Write to this file instead of stdout. Nothing is written on failure.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a target allocation, its gradient and the lower bound.
    Target {
        /// urn, neyman, rsihr, zr, bm, fixed or balanced.
        #[arg(long)]
        target: String,
        /// Flat parameter list, e.g. `0.7,0.4` or `1,1,2,1` for normal arms.
        #[arg(long, allow_hyphen_values = true)]
        theta: String,
        #[arg(long, default_value = "bernoulli")]
        family: String,
        /// Threshold of the Biswas-Mandal target.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        c: f64,
        /// symmetric or as-printed.
        #[arg(long, default_value = "symmetric")]
        form: String,
        /// Proportions of the fixed target.
        #[arg(long)]
        rho: Option<String>,
    },
    /// Two-arm closed-form variances on a grid of success probabilities.
    VarianceTable {
        #[arg(long, default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
        grid: String,
        /// Designs as `id` or `id:parameter`; `rpw-table` selects the
        /// alternative RPW numerator.
        #[arg(long, default_value = "rpw,rpw-table,dl,gdl,seu,smlp,dbcd:1,dbcd:2,erade")]
        designs: String,
        #[arg(long, default_value_t = 2000)]
        n: usize,
    },
    /// Selection bias and randomness deficit against their limits.
    BiasTable {
        #[arg(long, default_value = "0.7,0.4")]
        theta: String,
        #[arg(long, default_value = "cr,rpw,dl,gdl,smlp,dbcd:1,dbcd:2,erade,smoothed-erade")]
        designs: String,
        #[arg(long, default_value_t = 2000)]
        n: usize,
    },
}

fn write_atomically(path: &Path, text: &str) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut file = tempfile::NamedTempFile::new_in(dir)?;
    file.write_all(text.as_bytes())?;
    file.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let (table, format) = match cli.command {
        Command::Simulate { config } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| CliError::config(format!("cannot read {}: {e}", config.display())))?;
            let mut c = SimulationConfig::parse(&text)?;
            if let Some(seed) = cli.seed {
                c.seed = seed;
            }
            if let Some(reps) = cli.reps {
                if reps == 0 {
                    return Err(CliError::config("--reps must be positive"));
                }
                c.reps = reps;
            }
            let format = cli.format.unwrap_or(c.format);
            (commands::simulate(&c, cli.jobs)?, format)
        }
        Command::Target { target, theta, family, c, form, rho } => {
            let family = parse_family(&family)?;
            let theta = Theta::new(family, parse_list("theta", &theta)?)?;
            let mut spec = TargetSpec::from_id(&target).map_err(|e| CliError::config(e.to_string()))?;
            match &mut spec {
                TargetSpec::BiswasMandal { c: threshold, form: f } => {
                    *threshold = c;
                    *f = parse_bm_form(&form)?;
                }
                TargetSpec::Fixed { rho: r } => {
                    *r = parse_list("rho", rho.as_deref().ok_or_else(|| CliError::config("--rho is required"))?)?;
                }
                _ => {}
            }
            (commands::target(&spec, &theta)?, cli.format.unwrap_or_default())
        }
        Command::VarianceTable { grid, designs, n } => {
            let grid = parse_list("grid", &grid)?;
            let designs = TableDesign::parse_list(&designs)?;
            let mc = MonteCarlo { n, reps: cli.reps.unwrap_or(0), seed: cli.seed.unwrap_or(0), jobs: cli.jobs };
            (commands::variance_table(&grid, &designs, mc)?, cli.format.unwrap_or_default())
        }
        Command::BiasTable { theta, designs, n } => {
            let theta = Theta::bernoulli(&parse_list("theta", &theta)?)?;
            let designs = TableDesign::parse_list(&designs)?;
            let mc = MonteCarlo { n, reps: cli.reps.unwrap_or(1000), seed: cli.seed.unwrap_or(0), jobs: cli.jobs };
            (commands::bias_table(&theta, &designs, mc)?, cli.format.unwrap_or_default())
        }
    };
    let text = table.render(format);
    match &cli.output {
        Some(path) => write_atomically(path, &text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rarsim: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
