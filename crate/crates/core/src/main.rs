use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rds_mdim::config::{config_hash, parse_config};
use rds_mdim::harness::{default_suite_instances, run_suite, run_sweep, SuiteParams, SweepConfig};
use rds_mdim::output::{unix_now, write_orbits, write_results, write_suite, Format, RunManifest, Tables};
use rds_mdim::rng::stream;
use rds_mdim::system::fiber_iterate;
use rds_mdim::topological::omega_sample;
use rds_mdim::Error;

/// Entropy and metric mean dimension estimates for random dynamical systems.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configured one.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory [default: $RDS_MDIM_OUT or ./results].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Both)]
    format: Format,
    /// Record start and end times in the manifest.
    #[arg(long, global = true)]
    record_time: bool,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Dump sampled fiber orbits.
    Simulate,
    /// Entropy curves on the ε grid.
    Entropy,
    /// Metric mean dimension estimates.
    Mdim,
    /// Run the inequality suite; exit 1 if a hard check fails.
    Verify,
    /// Curves, mdim estimates and variational gaps.
    Sweep,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Entropy => "entropy",
            Command::Mdim => "mdim",
            Command::Verify => "verify",
            Command::Sweep => "sweep",
        }
    }
}

const EXIT_VERIFY: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_BUDGET: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Budget(_) | Error::Infeasible { .. } => EXIT_BUDGET,
        _ => EXIT_CONFIG,
    }
}

struct Loaded {
    config: Option<SweepConfig>,
    hash: String,
    seed: u64,
}

fn load(cli: &Cli) -> Result<Loaded, Error> {
    let Some(path) = &cli.config else {
        return Ok(Loaded {
            config: None,
            hash: String::new(),
            seed: cli.seed.unwrap_or(0),
        });
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut config = parse_config(&text)?;
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    Ok(Loaded {
        seed: config.seed,
        config: Some(config),
        hash: config_hash(&text)?,
    })
}

fn require(config: Option<SweepConfig>, command: Command) -> Result<SweepConfig, Error> {
    config.ok_or_else(|| Error::InvalidArgument(format!("{} needs --config", command.name())))
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os("RDS_MDIM_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"))
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        eprintln!("wrote {}", p.display());
    }
}

fn run(cli: &Cli) -> Result<u8, Error> {
    let started = unix_now();
    let loaded = load(cli)?;
    let command = cli.command;
    let mut manifest = RunManifest::new(&loaded.hash, loaded.seed, cli.seed.is_some(), command.name());
    let stamp = |m: &mut RunManifest| {
        if cli.record_time {
            m.started_at = Some(started);
            m.finished_at = Some(unix_now());
        }
    };
    let dir = out_dir(cli);
    match command {
        Command::Simulate => {
            let config = require(loaded.config, command)?;
            let system = config.build_system()?;
            let horizon = *config.n_schedule.last().expect("validated schedule");
            let num = rds_mdim::topological::effective_num_omega(&system, config.num_omega);
            let orbits = (0..num)
                .map(|i| {
                    let env = omega_sample(&system, config.seed, i, horizon)?;
                    let x = system.random_point(&mut stream(config.seed, "simulate", i as u64), horizon + 64);
                    fiber_iterate(&system, &env, &x, horizon)
                })
                .collect::<Result<Vec<_>, Error>>()?;
            stamp(&mut manifest);
            report(&write_orbits(&orbits, &system.name, &manifest, &dir, cli.format)?);
            Ok(0)
        }
        Command::Verify => {
            let (instances, mut params) = match loaded.config {
                None => (default_suite_instances(), SuiteParams::default()),
                Some(c) => {
                    let system = c.build_system()?;
                    let measures = if c.measures.is_empty() {
                        system.default_measure.iter().cloned().collect()
                    } else {
                        c.measures.clone()
                    };
                    let mut params = SuiteParams {
                        deltas: c.deltas.clone(),
                        num_omega: c.num_omega,
                        ..SuiteParams::default()
                    };
                    if !c.eps_grid.is_empty() {
                        params.eps = c.eps_grid.clone();
                    }
                    (vec![(c.system, measures)], params)
                }
            };
            params.seed = loaded.seed;
            let suite = run_suite(&instances, &params)?;
            stamp(&mut manifest);
            report(&write_suite(&suite, &manifest, &dir, cli.format)?);
            let failures = suite.hard_failures();
            eprintln!(
                "{} hard checks, {} failed; {} soft failures",
                suite.hard_total(),
                failures.len(),
                suite.soft_failures().len()
            );
            for s in &suite.skipped {
                eprintln!("skipped: {s}");
            }
            for f in &failures {
                eprintln!("FAIL {} {}: {:?} at n={:?} eps={:?} delta={:?}", f.system, f.check, f.values, f.n, f.eps, f.delta);
            }
            Ok(if failures.is_empty() { 0 } else { EXIT_VERIFY })
        }
        Command::Entropy | Command::Mdim | Command::Sweep => {
            let config = require(loaded.config, command)?;
            let mut result = run_sweep(&config)?;
            let tables = match command {
                Command::Entropy => {
                    result.mdim.clear();
                    result.gaps.clear();
                    Tables::Curves
                }
                Command::Mdim => Tables::Mdim,
                _ => Tables::All,
            };
            manifest.record_completion(&result);
            stamp(&mut manifest);
            report(&write_results(&result, &manifest, &dir, cli.format, tables)?);
            for s in &result.skipped {
                eprintln!("skipped {} {} eps={:?}: {}", s.curve_kind.as_str(), s.measure_id.as_deref().unwrap_or("-"), s.eps, s.reason);
            }
            Ok(if result.budget_exceeded() { EXIT_BUDGET } else { 0 })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
