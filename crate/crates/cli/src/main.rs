//! `mdis`: rare-event Monte Carlo for slow-fast diffusions.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mdis_cli::commands;
use mdis_cli::config::{parse_methods, parse_rows, parse_variant, ConfigFile, RunOverrides};
use mdis_cli::CliError;
use mdis_core::experiment::{ExampleId, ExperimentSpec, Method};

#[derive(Parser)]
#[command(
    name = "mdis",
    about = "Importance-sampling Monte Carlo for rare events of slow-fast diffusions",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the homogenization constants L, L_hat, kappa of the rough
    /// periodic potential.
    Constants {
        /// Diffusivity D.
        #[arg(long)]
        d: f64,
        /// Simpson subintervals (even, >= 64).
        #[arg(long, default_value_t = 4096)]
        nodes: usize,
    },
    /// Sweep a study's subsolution numerically; exits 1 if the subsolution
    /// property fails on the grid.
    VerifySubsolution(VerifyArgs),
    /// Run one estimate and append a row to a CSV table.
    Run(RunArgs),
    /// Run a whole comparison table (rows x methods).
    Table(TableArgs),
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    example: String,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    delta: f64,
    /// Estimator whose binding is verified (the control differs by regime).
    #[arg(long, default_value = "md")]
    method: String,
    #[arg(long)]
    d: Option<f64>,
    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long)]
    x0: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    h_exponent: Option<f64>,
    /// Subsolution form: general | exact.
    #[arg(long)]
    variant: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    /// Optional key=value configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    example: Option<String>,
    /// nmc | md | ld.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    n_samples: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// CSV file the result row is appended to.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use the published trajectory counts instead of the desk-scale tenth.
    #[arg(long)]
    paper_scale: bool,
    #[arg(long)]
    h_exponent: Option<f64>,
    #[arg(long)]
    d: Option<f64>,
    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long)]
    x0: Option<f64>,
    #[arg(long)]
    y0: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Subsolution form: general | exact.
    #[arg(long)]
    variant: Option<String>,
}

#[derive(Args)]
struct TableArgs {
    /// Built-in schedule: table1 | table2 | table3 | table4.
    #[arg(long, conflicts_with_all = ["example", "rows"])]
    preset: Option<String>,
    #[arg(long)]
    example: Option<String>,
    /// File with one `epsilon delta` pair per line.
    #[arg(long)]
    rows: Option<PathBuf>,
    /// Comma-separated list, e.g. `nmc,md`.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    n_samples: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
    #[arg(long)]
    paper_scale: bool,
    #[arg(long)]
    variant: Option<String>,
}

fn parse_example(s: &str) -> Result<ExampleId, CliError> {
    s.parse::<ExampleId>()
        .map_err(|e| CliError::Validation(e.to_string()))
}

fn parse_method(s: &str) -> Result<Method, CliError> {
    s.parse::<Method>()
        .map_err(|e| CliError::Validation(e.to_string()))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Constants { d, nodes } => {
            print!("{}", commands::constants(d, nodes)?);
            Ok(())
        }
        Command::VerifySubsolution(args) => {
            let example = parse_example(&args.example)?;
            let method = parse_method(&args.method)?;
            let mut spec = ExperimentSpec::defaults(example, method, args.epsilon, args.delta);
            if let Some(v) = args.d {
                spec.d = v;
            }
            if let Some(v) = args.t_final {
                spec.t_end = v;
            }
            if let Some(v) = args.x0 {
                spec.x0 = v;
            }
            if let Some(v) = args.gamma {
                spec.gamma_target = Some(v);
            }
            if let Some(v) = args.h_exponent {
                spec.h_exponent = v;
            }
            if let Some(v) = args.variant.as_deref() {
                spec.variant = Some(parse_variant(v)?);
            }
            let (text, pass) = commands::verify(&spec)?;
            print!("{text}");
            if pass {
                Ok(())
            } else {
                Err(CliError::Validation(
                    "subsolution property failed on the verification grid".into(),
                ))
            }
        }
        Command::Run(args) => {
            let mut overrides = RunOverrides {
                example: args.example.as_deref().map(parse_example).transpose()?,
                method: args.method.as_deref().map(parse_method).transpose()?,
                epsilon: args.epsilon,
                delta: args.delta,
                h_exponent: args.h_exponent,
                d: args.d,
                t_final: args.t_final,
                x0: args.x0,
                y0: args.y0,
                gamma: args.gamma,
                n_samples: args.n_samples,
                seed: args.seed,
                workers: args.workers,
                variant: args.variant.as_deref().map(parse_variant).transpose()?,
                out: args.out.map(|p| p.display().to_string()),
                paper_scale: args.paper_scale,
            };
            if let Some(path) = &args.config {
                overrides.absorb_config(&ConfigFile::load(path)?)?;
            }
            let out_path = PathBuf::from(
                overrides.out.clone().unwrap_or_else(|| "results.csv".to_string()),
            );
            let spec = overrides.into_spec()?;
            print!("{}", commands::run_experiment(&spec, &out_path)?);
            Ok(())
        }
        Command::Table(args) => {
            let (example, rows, methods) = match &args.preset {
                Some(name) => commands::preset(name)?,
                None => {
                    let example = parse_example(args.example.as_deref().ok_or_else(|| {
                        CliError::Validation("table needs --preset or --example".into())
                    })?)?;
                    let rows_path = args.rows.as_ref().ok_or_else(|| {
                        CliError::Validation("table needs --preset or --rows".into())
                    })?;
                    let text = std::fs::read_to_string(rows_path).map_err(|e| {
                        CliError::Validation(format!("cannot read rows {rows_path:?}: {e}"))
                    })?;
                    let methods = parse_methods(args.methods.as_deref().unwrap_or("nmc,md"))?;
                    (example, parse_rows(&text)?, methods)
                }
            };
            let (eps0, delta0) = rows[0];
            let mut base = ExperimentSpec::defaults(example, methods.first().copied().unwrap_or(Method::Nmc), eps0, delta0);
            if !args.paper_scale {
                base.n_samples /= 10;
            }
            if let Some(v) = args.n_samples {
                base.n_samples = v;
            }
            if let Some(v) = args.seed {
                base.base_seed = v;
            }
            if let Some(v) = args.workers {
                base.workers = v;
            }
            if let Some(v) = args.variant.as_deref() {
                base.variant = Some(parse_variant(v)?);
            }
            let methods = if args.preset.is_some() {
                match &args.methods {
                    Some(list) => parse_methods(list)?,
                    None => methods,
                }
            } else {
                methods
            };
            let job = commands::TableJob {
                example,
                rows,
                methods,
                base,
                out_path: args.out,
            };
            print!("{}", commands::run_table(&job)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
