//! Command-line front end: bind config files to simulation runs, equilibrium
//! solving, switching-signal generation and stability-certificate checks.
//!
//! Exit codes: 0 on success, 1 on configuration/usage errors, 2 on
//! runtime/convergence errors. The first stderr line of any failure is
//! machine-parsable as `ERROR <code>: <message>`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use neseek::config::{ConfigFile, LmiConfigFile, OutputSection};
use neseek::error::Error;
use neseek::game::{solve_ne, ActionProfile};
use neseek::output;
use neseek::sim::{self, SimConfig};
use neseek::switching::sample_signal;

#[derive(Parser)]
#[command(
    name = "neseek",
    version,
    about = "Distributed Nash-equilibrium seeking under disturbances, switching topologies and event-triggered communication"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a closed-loop simulation (or Monte-Carlo batch) from a config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the horizon (seconds).
        #[arg(long)]
        horizon: Option<f64>,
        /// Override the integration step.
        #[arg(long)]
        dt: Option<f64>,
        /// Directory for declared output files (default: current directory).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the report JSON to stdout.
        #[arg(long)]
        json: bool,
    },
    /// Run one of the embedded reproduction scenarios.
    Reproduce {
        /// `paper-alg1` or `paper-alg2`.
        name: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Verify the mean-square stability certificate described in a config.
    VerifyLmi {
        #[arg(long)]
        config: PathBuf,
        /// Also write the JSON report to this directory as lmi-report.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a semi-Markov switching signal and emit it as CSV.
    GenSwitching {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        horizon: Option<f64>,
        /// Directory for switching.csv (default: current directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve for the Nash equilibrium of the configured game.
    SolveNe {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e)
            if e.kind() == clap::error::ErrorKind::DisplayHelp
                || e.kind() == clap::error::ErrorKind::DisplayVersion =>
        {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("ERROR 1: invalid command line");
            eprintln!("{e}");
            return ExitCode::from(1);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = match err {
                Error::InvalidConfig(_) | Error::InvalidArgument(_) => 1u8,
                _ => 2u8,
            };
            eprintln!("ERROR {code}: {err}");
            ExitCode::from(code)
        }
    }
}

fn read_config(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::invalid_config(format!("cannot read {}: {e}", path.display())))
}

fn apply_overrides(
    cfg: &mut ConfigFile,
    seed: Option<u64>,
    horizon: Option<f64>,
    dt: Option<f64>,
) -> Result<(), Error> {
    if seed.is_none() && horizon.is_none() && dt.is_none() {
        return Ok(());
    }
    let sim = cfg
        .sim
        .as_mut()
        .ok_or_else(|| Error::invalid_config("missing [sim] section"))?;
    if let Some(s) = seed {
        sim.seed = s;
    }
    if let Some(h) = horizon {
        sim.horizon = h;
    }
    if let Some(d) = dt {
        sim.dt = d;
    }
    Ok(())
}

fn write_output(dir: &Option<PathBuf>, name: &str, contents: &str) -> Result<PathBuf, Error> {
    let dir = dir.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}

fn run_simulation(
    cfg: &ConfigFile,
    sim_config: &SimConfig,
    out_section: &OutputSection,
    out_dir: &Option<PathBuf>,
    json: bool,
) -> Result<(), Error> {
    let ne = solve_ne(
        &sim_config.game,
        &ActionProfile::zeros(sim_config.game.profile_dim()),
        1e-10,
        500,
    )?;

    let report_json = if let Some(mc) = &cfg.monte_carlo {
        let report = sim::run_monte_carlo(sim_config, mc.n_seeds)?;
        output::report_json(&report)?
    } else {
        let traj = sim::run(sim_config)?;
        let report = sim::metrics(&traj, &ne);
        if let Some(name) = &out_section.trajectory {
            let path = write_output(out_dir, name, &output::trajectory_csv(&traj))?;
            eprintln!("wrote {}", path.display());
        }
        if let Some(name) = &out_section.events {
            let path = write_output(out_dir, name, &output::events_csv(&traj))?;
            eprintln!("wrote {}", path.display());
        }
        output::report_json(&report)?
    };
    if let Some(name) = &out_section.report {
        let path = write_output(out_dir, name, &report_json)?;
        eprintln!("wrote {}", path.display());
    }
    if json {
        print!("{report_json}");
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate {
            config,
            seed,
            horizon,
            dt,
            out,
            json,
        } => {
            let mut cfg = ConfigFile::parse(&read_config(&config)?)?;
            apply_overrides(&mut cfg, seed, horizon, dt)?;
            let sim_config = cfg.build_sim()?;
            let out_section = cfg.output();
            run_simulation(&cfg, &sim_config, &out_section, &out, json)
        }
        Command::Reproduce {
            name,
            seed,
            horizon,
            dt,
            out,
            json,
        } => {
            let text = match name.as_str() {
                "paper-alg1" => neseek::fixtures::PAPER_ALG1_TOML,
                "paper-alg2" => neseek::fixtures::PAPER_ALG2_TOML,
                other => {
                    return Err(Error::invalid_config(format!(
                        "unknown scenario `{other}` (expected `paper-alg1` or `paper-alg2`)"
                    )))
                }
            };
            let mut cfg = ConfigFile::parse(text)?;
            apply_overrides(&mut cfg, seed, horizon, dt)?;
            let sim_config = cfg.build_sim()?;
            let out_section = cfg.output();
            run_simulation(&cfg, &sim_config, &out_section, &out, json)
        }
        Command::VerifyLmi { config, out } => {
            let cfg = LmiConfigFile::parse(&read_config(&config)?)?;
            let (instance, grid) = cfg.build()?;
            let theorem4 = neseek::lmi::verify_theorem4(&instance)?;
            let search = match grid {
                Some(g) => Some(neseek::lmi::heuristic_search_theorem4(&instance, &g)?.1),
                None => None,
            };
            #[derive(serde::Serialize)]
            struct LmiReport {
                theorem4: neseek::lmi::Theorem4Report,
                search: Option<neseek::lmi::SearchReport>,
            }
            let json = output::report_json(&LmiReport { theorem4, search })?;
            if let Some(dir) = &out {
                let path = write_output(&Some(dir.clone()), "lmi-report.json", &json)?;
                eprintln!("wrote {}", path.display());
            }
            print!("{json}");
            Ok(())
        }
        Command::GenSwitching {
            config,
            seed,
            horizon,
            out,
        } => {
            let mut cfg = ConfigFile::parse(&read_config(&config)?)?;
            apply_overrides(&mut cfg, seed, horizon, None)?;
            let sim = cfg
                .sim
                .as_ref()
                .ok_or_else(|| Error::invalid_config("missing [sim] section"))?;
            let sw = cfg
                .switching
                .as_ref()
                .ok_or_else(|| Error::invalid_config("missing [switching] section"))?;
            let (spec, _, _) = sw.build()?;
            let signal = sample_signal(&spec, sim.horizon, sim.seed)?;
            let path = write_output(&out, "switching.csv", &output::switching_csv(&signal))?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        Command::SolveNe { config } => {
            let cfg = ConfigFile::parse(&read_config(&config)?)?;
            let game = cfg.game()?;
            let ne = solve_ne(&game, &ActionProfile::zeros(game.profile_dim()), 1e-10, 500)?;
            let residual = neseek::linalg::norm2(&neseek::game::pseudo_gradient(&game, &ne)?);
            #[derive(serde::Serialize)]
            struct NeReport {
                ne: Vec<f64>,
                residual: f64,
            }
            let json = output::report_json(&NeReport {
                ne: ne.as_slice().to_vec(),
                residual,
            })?;
            print!("{json}");
            Ok(())
        }
    }
}
