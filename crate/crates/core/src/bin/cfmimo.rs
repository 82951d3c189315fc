use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cfmimo::bench::{
    default_schemes, emit_cdf, read_rate_rows, run_experiment, write_csv, ExperimentSpec, PowerPolicy,
};
use cfmimo::duality::{conservation_gap, solve_power_pair, CouplingMatrices};
use cfmimo::netgen::ScenarioConfig;
use cfmimo::Error;

#[derive(Parser)]
#[command(name = "cfmimo", version, about = "Cell-free massive MIMO MMSE beamforming experiments")]
struct Cli {
    /// Overrides the master seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the drop pool.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Also write per-drop diagnostics and solver traces.
    #[arg(long, global = true)]
    diagnostics: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Power {
    Fractional,
    Full,
    MaxMin,
}

#[derive(Subcommand)]
enum Command {
    /// Run a multi-drop experiment from a JSON configuration.
    Run {
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = Power::Fractional)]
        power: Power,
    },
    /// Recompute the empirical CDFs of a rates file.
    Cdf { rates: PathBuf },
    /// Solve the duality power system of a coupling document.
    DualitySolve { coupling: PathBuf },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Io(_) | Error::Json(_) | Error::Csv(_) => 2,
        _ => 3,
    }
}

fn read(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config, power } => {
            let mut cfg = ScenarioConfig::from_json_str(&read(&config)?)?;
            if let Some(seed) = cli.seed {
                cfg.master_seed = seed;
            }
            let power = match power {
                Power::Fractional => PowerPolicy::Fractional,
                Power::Full => PowerPolicy::Full,
                Power::MaxMin => PowerPolicy::MaxMin,
            };
            let mut spec = ExperimentSpec::new(cfg);
            spec.schemes = default_schemes(&spec.config, power);
            spec.diagnostics = cli.diagnostics;
            let out = cli.out_dir.unwrap_or_else(|| PathBuf::from("out"));
            let files = run_experiment(&spec, &out, cli.threads)?;
            println!("{}", files.rates.display());
            println!("{}", files.summary.display());
            println!("{}", files.cdf.display());
            if let Some(d) = files.diagnostics {
                println!("{}", d.display());
            }
        }
        Command::Cdf { rates } => {
            let rows = read_rate_rows(&rates)?;
            let out = cli
                .out_dir
                .unwrap_or_else(|| rates.parent().map(Path::to_path_buf).unwrap_or_default());
            fs::create_dir_all(&out)?;
            let path = out.join("cdf.csv");
            write_csv(&path, &emit_cdf(&rows))?;
            println!("{}", path.display());
        }
        Command::DualitySolve { coupling } => {
            let c = CouplingMatrices::from_json_str(&read(&coupling)?)
                .map_err(|e| match e {
                    Error::Json(j) => Error::config(coupling.display().to_string(), j.to_string()),
                    Error::Dimension(m) | Error::Domain(m) => Error::config(coupling.display().to_string(), m),
                    other => other,
                })?;
            let pair = solve_power_pair(&c)?;
            let doc = serde_json::json!({
                "p_ul": pair.p_ul,
                "p_dl": pair.p_dl,
                "spectral_radius": pair.spectral_radius,
                "conservation_gap": conservation_gap(&c, &pair),
                "downlink_sinr": c.downlink_sinr(&pair.p_dl),
            });
            let text = serde_json::to_string_pretty(&doc)?;
            if let Some(dir) = cli.out_dir {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("powers.json"), &text)?;
            }
            println!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
