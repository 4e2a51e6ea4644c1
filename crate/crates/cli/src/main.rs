use std::ffi::OsString;
use std::path::PathBuf;

use clap::{CommandFactory, Parser, Subcommand};
use tmdiff_core::bloch::RESIDUAL_TOL;
use tmdiff_core::validate::{both_modulated_bilayer, reference_density_bilayer};

mod commands;
mod config;
mod figures;
mod output;

use commands::Sweep;
use config::Loaded;
use figures::FigureId;
use output::{coded, Code, Coded};

/// Homogenized and exact dispersion of space-time modulated diffusive laminates.
#[derive(Parser, Debug)]
#[command(name = "tmdiff", version)]
struct Cli {
    /// JSON laminate description (SI units).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Largest wavenumber (default π/h).
    #[arg(long, global = true)]
    kappa_max: Option<f64>,
    #[arg(long, global = true, default_value_t = 100)]
    kappa_points: usize,
    /// Number of exact branches.
    #[arg(long, global = true, default_value_t = 1)]
    branches: usize,
    /// Effective-model order (all orders when omitted).
    #[arg(long, global = true, value_parser = clap::value_parser!(u8).range(0..=2))]
    order: Option<u8>,
    /// Built-in laminate when no config is given: 1 capacity/conductivity, 2 density.
    #[arg(long, global = true, value_parser = clap::value_parser!(u8).range(1..=2))]
    model: Option<u8>,
    /// Residual tolerance for exact roots, or the energy-audit tolerance for simulations.
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Effective coefficients, corrector tables and identity report.
    Homogenize {
        /// Corrector samples per cell.
        #[arg(long, default_value_t = 256)]
        samples: usize,
    },
    /// Dispersion relations.
    Dispersion {
        #[command(subcommand)]
        kind: DispersionKind,
    },
    /// Crank–Nicolson run of the effective equation from the config's `simulation` block.
    Simulate,
    /// Full oracle audit.
    Validate {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
    /// Data for a named figure.
    Figures {
        #[arg(value_enum)]
        id: FigureId,
    },
}

#[derive(Subcommand, Debug)]
enum DispersionKind {
    /// Floquet–Bloch roots of the layered medium.
    Exact,
    /// Homogenized dispersion laws.
    Effective,
    /// Exact lowest branch against the effective laws.
    Compare,
}

fn laminate(cli: &Cli) -> anyhow::Result<Loaded> {
    let loaded = match &cli.config {
        Some(p) => config::load(p)?,
        None => Loaded::from_bilayer(match cli.model {
            Some(2) => reference_density_bilayer(),
            _ => both_modulated_bilayer(),
        })?,
    };
    if let (Some(m), Some(_)) = (cli.model, &cli.config) {
        let want = if m == 1 { tmdiff_core::laminate::Model::Model1 } else { tmdiff_core::laminate::Model::Model2 };
        if loaded.laminate.model != want {
            return Err(coded(Code::ConfigSchema, format!("--model {m} disagrees with the config's model")));
        }
    }
    Ok(loaded)
}

fn execute(cli: Cli) -> anyhow::Result<i32> {
    let sweep = Sweep {
        kappa_max: cli.kappa_max,
        points: cli.kappa_points,
        branches: cli.branches,
        residual_tol: cli.tol.unwrap_or(RESIDUAL_TOL),
    };
    match &cli.command {
        Command::Homogenize { samples } => commands::homogenize(&laminate(&cli)?, *samples, &cli.out),
        Command::Dispersion { kind } => {
            let cfg = laminate(&cli)?;
            match kind {
                DispersionKind::Exact => commands::dispersion_exact(&cfg, &sweep, &cli.out),
                DispersionKind::Effective => commands::dispersion_effective(&cfg, &sweep, cli.order, &cli.out),
                DispersionKind::Compare => commands::dispersion_compare(&cfg, &sweep, cli.order, &cli.out),
            }
        }
        Command::Simulate => {
            let path = cli.config.as_ref().ok_or_else(|| coded(Code::Usage, "`simulate` requires --config"))?;
            commands::simulate(&config::load(path)?, cli.order, cli.tol, &cli.out)
        }
        Command::Validate { seed } => commands::validate(*seed, &cli.out),
        Command::Figures { id } => {
            let cfg = cli.config.as_ref().map(|p| config::load(p)).transpose()?;
            figures::figure(*id, cfg.as_ref(), &sweep, cli.tol, &cli.out)
        }
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
fn dispatch(argv: Vec<OsString>) -> i32 {
    if argv.len() <= 1 {
        eprintln!("{}", Cli::command().render_help());
        eprintln!("code={} no subcommand given", Code::Usage.name());
        return Code::Usage.exit();
    }
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprintln!("code={} {}", Code::Usage.name(), e.to_string().trim_end());
            return Code::Usage.exit();
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            let code = e.downcast_ref::<Coded>().map(|c| c.code).unwrap_or(Code::Numerics);
            eprintln!("code={} {e:#}", code.name());
            code.exit()
        }
    }
}

fn main() {
    std::process::exit(dispatch(std::env::args_os().collect()));
}
