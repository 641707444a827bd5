//! Command-line front end for the experiment runner and the exact solvers.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use restless_lip::exact::{optimal_lambda, whittle_table, DualOptions, WhittleOptions};
use restless_lip::harness::{
    emit_csv, exact_policies, list_presets, preset, run_experiment, Environment, Experiment,
    ExperimentConfig, Table,
};
use restless_lip::models::RestartArmSpec;
use restless_lip::restart::{restart_index_table, restart_lambda_star, restart_thresholds};
use restless_lip::{Error, LambdaConvention, Result};

#[derive(Parser)]
#[command(
    name = "restless",
    version,
    about = "Index policies for restless bandits under average reward"
)]
struct Cli {
    /// Replace the configured seeds by this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (file for make-env).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads across seeds.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Experiment configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Restart,
    Nonindexable,
    Deadline,
    DeadlineGroups,
    File,
}

#[derive(Args, Clone)]
struct EnvArgs {
    #[arg(long, value_enum, default_value = "nonindexable")]
    model: Model,
    #[arg(long, default_value_t = 10)]
    arms: usize,
    #[arg(long, default_value_t = 3)]
    budget: usize,
    /// Deadline processing cost.
    #[arg(long, default_value_t = 0.8)]
    cost: f64,
    /// Restart truncation state.
    #[arg(long, default_value_t = 200)]
    x_max: usize,
    /// Arm JSON file for `--model file`.
    #[arg(long)]
    arm_file: Option<PathBuf>,
}

impl EnvArgs {
    fn environment(&self) -> Result<Environment> {
        Ok(match self.model {
            Model::Restart => Environment::restart_fixture(self.x_max),
            Model::Nonindexable => Environment::Nonindexable {
                arms: self.arms,
                budget: self.budget,
            },
            Model::Deadline => Environment::Deadline {
                arms: self.arms,
                budget: self.budget,
                cost: self.cost,
            },
            Model::DeadlineGroups => {
                Environment::deadline_heterogeneous(self.arms / 4, self.budget)
            }
            Model::File => Environment::File {
                path: self
                    .arm_file
                    .clone()
                    .ok_or_else(|| Error::Config("--model file needs --arm-file".into()))?,
                arms: self.arms,
                budget: self.budget,
            },
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Optimal multiplier and Lagrangian index tables.
    Solve(EnvArgs),
    /// Numeric Whittle indices of every arm type.
    Whittle {
        #[command(flatten)]
        env: EnvArgs,
        #[arg(long, allow_hyphen_values = true, default_value_t = -20.0)]
        lo: f64,
        #[arg(long, allow_hyphen_values = true, default_value_t = 20.0)]
        hi: f64,
    },
    /// Closed-form restart multiplier, thresholds and indices (four-type fixture by default).
    RestartIndex {
        #[arg(long, default_value_t = 200)]
        x_max: usize,
        /// Number of states listed per type.
        #[arg(long, default_value_t = 30)]
        show: usize,
    },
    /// Tabular learner (preset fig3-nonindexable-alg1 unless --config is given).
    LearnTabular,
    /// Neural learner (preset fig5-deadline-homog unless --config is given).
    LearnDqn,
    /// LIP, WIP and random simulation (preset fig2-restart-lip-vs-wip unless --config is given).
    Simulate,
    /// Fluid fixed-point check (preset fluid-check unless --config is given).
    Fluid,
    /// Optimality-gap curve (preset gap-curve unless --config is given).
    Gap,
    /// Run a preset by name, or the --config file.
    Run { preset: Option<String> },
    /// Print the preset catalog, or one preset as a configuration file.
    ListPresets {
        #[arg(long)]
        show: Option<String>,
    },
    /// Write an arm JSON file for a built-in model.
    MakeEnv(EnvArgs),
}

fn write_or_print(table: &Table, out: Option<&Path>, name: &str) -> Result<()> {
    match out {
        Some(dir) => {
            let path = dir.join(name);
            emit_csv(table, &path)?;
            println!("wrote {}", path.display());
        }
        None => {
            let mut out = std::io::stdout().lock();
            let written = writeln!(out, "{}", table.header.join(",")).and_then(|_| {
                table.rows.iter().try_for_each(|row| {
                    writeln!(
                        out,
                        "{}",
                        row.iter()
                            .map(|c| c.to_string())
                            .collect::<Vec<_>>()
                            .join(",")
                    )
                })
            });
            // A closed pipe (for example `| head`) is not an error.
            match written {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
                _ => {}
            }
        }
    }
    Ok(())
}

fn load_config(
    cli: &Cli,
    default_preset: &str,
    kind: fn(&Experiment) -> bool,
) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => preset(default_preset)?,
    };
    if !kind(&cfg.experiment) {
        return Err(Error::Config(format!(
            "configuration '{}' does not describe this kind of experiment",
            cfg.name
        )));
    }
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    Ok(cfg)
}

fn run_config(cli: &Cli, cfg: &ExperimentConfig) -> Result<()> {
    let summary = run_experiment(cfg, cli.out.as_deref(), cli.threads)?;
    println!("artifacts: {}", summary.directory.display());
    for m in &summary.metrics {
        println!(
            "{:>28}  {}",
            m.name,
            restless_lip::harness::format_float(m.median)
        );
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Solve(env) => {
            let env = env.environment()?;
            let instance = env.instance()?;
            let tables = exact_policies(&env, None)?;
            println!("convention: {}", LambdaConvention::CURRENT.header());
            println!("lambda_star: {}", tables.lambda_star);
            println!("dual bound per arm: {}", tables.dual_bound_per_arm);
            if env.restart_types().is_none() {
                let sol =
                    optimal_lambda(&instance.mix(), instance.alpha(), DualOptions::default())?;
                println!(
                    "activation fraction at lambda_star: {}",
                    sol.activation_fraction
                );
                if let Some(r) = sol.randomization {
                    println!(
                        "randomize '{}' state {} with probability {}",
                        r.arm_label, r.state, r.probability
                    );
                }
            }
            let mut t = Table::new(&["arm_type", "state", "lagrangian_index"]);
            for table in &tables.lip {
                for x in 0..table.len() {
                    t.push(vec![
                        table.arm_label.clone().into(),
                        x.into(),
                        table.get(x).into(),
                    ]);
                }
            }
            write_or_print(&t, cli.out.as_deref(), "lagrangian_index.csv")
        }
        Command::Whittle { env, lo, hi } => {
            let instance = env.environment()?.instance()?;
            let mut t = Table::new(&["arm_type", "state", "whittle_index", "multiple_roots"]);
            for ty in instance.types() {
                for (x, w) in whittle_table(&ty.model, WhittleOptions::new((*lo, *hi), 1e-9))?
                    .iter()
                    .enumerate()
                {
                    t.push(vec![
                        ty.model.label().into(),
                        x.into(),
                        w.index.into(),
                        (w.multiple_roots as usize).into(),
                    ]);
                }
            }
            write_or_print(&t, cli.out.as_deref(), "whittle_index.csv")
        }
        Command::RestartIndex { x_max, show } => {
            let env = Environment::restart_fixture(*x_max);
            let types: Vec<(RestartArmSpec, usize)> = env.restart_types().expect("restart fixture");
            let alpha = env.budget() as f64 / types.iter().map(|t| t.1).sum::<usize>() as f64;
            let dual = restart_lambda_star(&types, alpha, None, 1e-10)?;
            println!("lambda_star: {}", dual.lambda_star);
            println!("dual value: {}", dual.dual_value);
            for ((spec, _), sol) in types
                .iter()
                .zip(restart_thresholds(&types, dual.lambda_star)?)
            {
                println!("{}: threshold {}", spec.label(), sol.threshold);
            }
            if let Some(r) = &dual.randomization {
                println!(
                    "randomize '{}' state {} with probability {}",
                    r.arm_label, r.state, r.probability
                );
            }
            let mut t = Table::new(&["arm_type", "x", "index"]);
            for (spec, _) in &types {
                for (k, v) in restart_index_table(spec, dual.lambda_star, (*show).min(*x_max))?
                    .iter()
                    .enumerate()
                {
                    t.push(vec![spec.label().into(), (k + 1).into(), (*v).into()]);
                }
            }
            write_or_print(&t, cli.out.as_deref(), "restart_index.csv")
        }
        Command::LearnTabular => run_config(
            cli,
            &load_config(cli, "fig3-nonindexable-alg1", |e| {
                matches!(e, Experiment::Tabular { .. })
            })?,
        ),
        Command::LearnDqn => run_config(
            cli,
            &load_config(cli, "fig5-deadline-homog", |e| {
                matches!(e, Experiment::Dqn { .. })
            })?,
        ),
        Command::Simulate => run_config(
            cli,
            &load_config(cli, "fig2-restart-lip-vs-wip", |e| {
                matches!(e, Experiment::LipVsWip { .. })
            })?,
        ),
        Command::Fluid => run_config(
            cli,
            &load_config(cli, "fluid-check", |e| {
                matches!(e, Experiment::FluidCheck { .. })
            })?,
        ),
        Command::Gap => run_config(
            cli,
            &load_config(cli, "gap-curve", |e| {
                matches!(e, Experiment::GapCurve { .. })
            })?,
        ),
        Command::Run { preset: name } => {
            let mut cfg = match (name, &cli.config) {
                (Some(n), None) => preset(n)?,
                (None, Some(path)) => ExperimentConfig::load(path)?,
                _ => {
                    return Err(Error::Config(
                        "give either a preset name or --config".into(),
                    ))
                }
            };
            if let Some(s) = cli.seed {
                cfg.seeds = vec![s];
            }
            run_config(cli, &cfg)
        }
        Command::ListPresets { show } => {
            match show {
                Some(name) => print!("{}", preset(name)?.to_toml()?),
                None => {
                    for (name, about) in list_presets() {
                        println!("{name:<26} {about}");
                    }
                }
            }
            Ok(())
        }
        Command::MakeEnv(env) => {
            let instance = env.environment()?.instance()?;
            let path = cli
                .out
                .clone()
                .ok_or_else(|| Error::Config("make-env needs --out <file>".into()))?;
            let arm = &instance.types()[0].model;
            std::fs::write(&path, arm.to_json()? + "\n")?;
            println!("wrote {} ({} states)", path.display(), arm.num_states());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
