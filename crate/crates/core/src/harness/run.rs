//! Experiment execution and artifact layout.
//!
//! An artifact directory holds `manifest.json`, `summary.csv` (medians across
//! seeds, plus each seed's value) and one `seed-<s>/` directory of trace CSVs
//! per seed. Seed-independent experiments write their tables at the top level.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::config::{Environment, Experiment, ExperimentConfig, FORMAT_VERSION};
use super::csv_out::{emit_csv, Cell, Table};
use crate::approx::{run_dqn, DqnResult};
use crate::arm::{BanditInstance, LambdaConvention};
use crate::error::{Error, Result};
use crate::exact::{
    lagrangian_index, optimal_lambda, whittle_table, DualOptions, IndexSource, IndexTable,
    RviOptions, WhittleOptions,
};
use crate::fluid::{
    fluid_fixed_point, restart_optimality_gap, AttractorStatus, FluidOptions, FluidSystem,
    GapConfig,
};
use crate::models::restart_state_value;
use crate::restart::{
    online_restart_learner, restart_dual, restart_index_table, restart_lambda_star,
    restart_whittle, OnlineRestartConfig,
};
use crate::sim::{simulate, SimConfig, SimPolicy, SimStats};
use crate::stats::{mean, median, MovingAverage, TRACE_WINDOW};
use crate::tabular::{run_learner, LearnResult, LearnerConfig, TraceRow};

/// Rows kept in each trace CSV.
const TRACE_ROWS: u64 = 1000;

/// Exact multiplier and index tables of an environment, one table per arm type.
#[derive(Clone, Debug)]
pub struct PolicyTables {
    pub lambda_star: f64,
    /// Per-arm relaxed upper bound on the average reward.
    pub dual_bound_per_arm: f64,
    pub lip: Vec<IndexTable>,
    pub wip: Vec<IndexTable>,
}

/// Whittle search interval used when none is configured.
pub fn default_whittle_bracket(instance: &BanditInstance) -> (f64, f64) {
    let r = instance
        .types()
        .iter()
        .map(|t| t.model.max_abs_reward())
        .fold(1.0_f64, f64::max);
    (-20.0 * r, 20.0 * r)
}

/// Closed forms for restart arms, numeric solvers otherwise.
pub fn exact_policies(
    env: &Environment,
    whittle_bracket: Option<(f64, f64)>,
) -> Result<PolicyTables> {
    let instance = env.instance()?;
    let alpha = instance.alpha();
    let n = instance.num_arms() as f64;
    if let Some(types) = env.restart_types() {
        let dual = restart_lambda_star(&types, alpha, None, 1e-10)?;
        let mut lip = Vec::with_capacity(types.len());
        let mut wip = Vec::with_capacity(types.len());
        for (spec, _) in &types {
            let values = restart_index_table(spec, dual.lambda_star, spec.x_max)?;
            lip.push(IndexTable::new(
                values,
                IndexSource::Lagrangian {
                    lambda: dual.lambda_star,
                },
                spec.label(),
            )?);
            let w = (0..spec.x_max)
                .map(|s| restart_whittle(spec.p, spec.w, restart_state_value(s)))
                .collect::<Result<Vec<f64>>>()?;
            wip.push(IndexTable::new(w, IndexSource::Whittle, spec.label())?);
        }
        return Ok(PolicyTables {
            lambda_star: dual.lambda_star,
            dual_bound_per_arm: restart_dual(&types, dual.lambda_star, alpha)? / n,
            lip,
            wip,
        });
    }
    let mix = instance.mix();
    let dual = optimal_lambda(&mix, alpha, DualOptions::default())?;
    let bracket = whittle_bracket.unwrap_or_else(|| default_whittle_bracket(&instance));
    let mut lip = Vec::with_capacity(mix.len());
    let mut wip = Vec::with_capacity(mix.len());
    for (arm, _) in &mix {
        lip.push(lagrangian_index(
            arm,
            dual.lambda_star,
            RviOptions::default(),
        )?);
        let w = whittle_table(arm, WhittleOptions::new(bracket, 1e-9))?;
        wip.push(IndexTable::new(
            w.iter().map(|v| v.index).collect(),
            IndexSource::Whittle,
            arm.label(),
        )?);
    }
    Ok(PolicyTables {
        lambda_star: dual.lambda_star,
        dual_bound_per_arm: dual.dual_value / n,
        lip,
        wip,
    })
}

/// Files and scalar results of one seed (or of a seed-independent run).
#[derive(Clone, Debug, Default)]
pub struct SeedOutput {
    pub tables: Vec<(String, Table)>,
    pub metrics: Vec<(String, f64)>,
}

impl SeedOutput {
    fn metric(&mut self, name: &str, value: f64) {
        self.metrics.push((name.to_owned(), value));
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricSummary {
    pub name: String,
    pub median: f64,
    pub per_seed: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub directory: PathBuf,
    pub metrics: Vec<MetricSummary>,
}

impl RunSummary {
    pub fn median(&self, name: &str) -> Option<f64> {
        self.metrics
            .iter()
            .find(|m| m.name == name)
            .map(|m| m.median)
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    name: &'a str,
    format_version: u32,
    binary_version: &'a str,
    convention: &'a str,
    convention_description: &'a str,
    seeds: &'a [u64],
    threads: usize,
    seed_independent: bool,
    config_toml: String,
    config: &'a ExperimentConfig,
}

fn trace_every(steps: u64) -> u64 {
    (steps / TRACE_ROWS).max(1)
}

fn sim_table(stats: &SimStats) -> Table {
    let mut t = Table::new(&["n", "moving_avg_reward", "budget"]);
    for r in &stats.trace {
        t.push(vec![
            r.n.into(),
            r.moving_avg_reward.into(),
            r.budget.into(),
        ]);
    }
    t
}

fn learner_trace_table(trace: &[TraceRow]) -> Table {
    let mut t = Table::new(&["n", "lambda", "avg_reward", "epsilon", "active"]);
    for r in trace {
        t.push(vec![
            r.n.into(),
            r.lambda.into(),
            r.avg_reward.into(),
            r.epsilon.into(),
            r.active.into(),
        ]);
    }
    t
}

fn index_comparison_table(learned: &[IndexTable], exact: &PolicyTables) -> Table {
    let mut t = Table::new(&[
        "arm_type",
        "state",
        "learned_index",
        "lagrangian_index",
        "whittle_index",
    ]);
    for ((l, e), w) in learned.iter().zip(&exact.lip).zip(&exact.wip) {
        for x in 0..l.len() {
            t.push(vec![
                l.arm_label.clone().into(),
                x.into(),
                l.get(x).into(),
                e.get(x).into(),
                w.get(x).into(),
            ]);
        }
    }
    t
}

/// Learned tables averaged per arm type (tables may be per arm).
fn per_type_tables(instance: &BanditInstance, result: &LearnResult) -> Result<Vec<IndexTable>> {
    let tables = result.index_tables()?;
    instance
        .types()
        .iter()
        .map(|t| {
            let members: Vec<&IndexTable> = t
                .members
                .iter()
                .map(|&i| &tables[result.table_of_arm[i]])
                .collect();
            let values = (0..t.model.num_states())
                .map(|x| members.iter().map(|m| m.get(x)).sum::<f64>() / members.len() as f64)
                .collect();
            IndexTable::new(values, IndexSource::External, t.model.label())
        })
        .collect()
}

fn compare_policies(
    out: &mut SeedOutput,
    instance: &BanditInstance,
    exact: &PolicyTables,
    learned: Option<Vec<IndexTable>>,
    horizon: u64,
    seed: u64,
) -> Result<()> {
    let cfg = SimConfig::new(horizon, seed);
    let mut runs = vec![
        ("lip", SimPolicy::Lip(exact.lip.clone())),
        ("wip", SimPolicy::Wip(exact.wip.clone())),
        ("random", SimPolicy::Random),
    ];
    if let Some(l) = learned {
        runs.push(("lip_learned", SimPolicy::Lip(l)));
    }
    let mut violations = 0;
    let mut rewards = Vec::new();
    for (name, policy) in runs {
        let stats = simulate(instance, &policy, &cfg)?;
        violations += stats.budget_violations;
        out.tables
            .push((format!("sim_{name}.csv"), sim_table(&stats)));
        out.metric(&format!("{name}_reward"), stats.average_reward);
        out.metric(&format!("{name}_stderr"), stats.stderr);
        rewards.push(stats.average_reward);
    }
    out.metric(
        "lip_wip_relative_gap",
        (rewards[0] - rewards[1]).abs() / rewards[1].abs(),
    );
    out.metric("budget_violations", violations as f64);
    Ok(())
}

fn run_seed(
    experiment: &Experiment,
    exact: Option<&PolicyTables>,
    seed: u64,
) -> Result<SeedOutput> {
    let mut out = SeedOutput::default();
    match experiment {
        Experiment::RestartSubsidy {
            env,
            steps,
            epsilon,
        } => {
            let types = env
                .restart_types()
                .ok_or_else(|| Error::Config("restart environment required".into()))?;
            let mut cfg = OnlineRestartConfig::new(env.budget(), *steps, seed);
            cfg.epsilon = *epsilon;
            let trace = online_restart_learner(&types, &cfg)?;
            let every = trace_every(*steps) as usize;
            let mut ma = MovingAverage::new(TRACE_WINDOW);
            let mut t = Table::new(&["n", "lambda", "moving_avg_reward", "active"]);
            for (k, (&l, &r)) in trace.lambda.iter().zip(&trace.reward).enumerate() {
                let avg = ma.push(r);
                if (k + 1) % every == 0 {
                    t.push(vec![
                        (k + 1).into(),
                        l.into(),
                        avg.into(),
                        (trace.active_count[k] as usize).into(),
                    ]);
                }
            }
            out.tables.push(("trace.csv".into(), t));
            out.metric("final_lambda", trace.final_lambda);
            out.metric("lambda_star", exact.expect("exact tables").lambda_star);
            out.metric("average_reward", mean(&trace.reward));
        }
        Experiment::LipVsWip { env, horizon, .. } => {
            let exact = exact.expect("exact tables");
            out.metric("lambda_star", exact.lambda_star);
            compare_policies(&mut out, &env.instance()?, exact, None, *horizon, seed)?;
        }
        Experiment::Tabular {
            env,
            algorithm,
            steps,
            exploration,
            share_tables,
            compare_horizon,
            ..
        } => {
            let exact = exact.expect("exact tables");
            let instance = env.instance()?;
            let mut cfg = LearnerConfig::new(*steps, seed);
            cfg.exploration = *exploration;
            cfg.share_tables = *share_tables;
            cfg.trace_every = trace_every(*steps);
            let result = run_learner(&instance, &cfg, *algorithm)?;
            let learned = per_type_tables(&instance, &result)?;
            out.tables
                .push(("trace.csv".into(), learner_trace_table(&result.trace)));
            out.tables
                .push(("index.csv".into(), index_comparison_table(&learned, exact)));
            out.metric("final_lambda", result.final_lambda());
            out.metric("lambda_star", exact.lambda_star);
            out.metric("learner_budget_violations", result.budget_violations as f64);
            out.metric("learner_average_reward", result.average_reward);
            compare_policies(
                &mut out,
                &instance,
                exact,
                Some(learned),
                *compare_horizon,
                seed,
            )?;
        }
        Experiment::Dqn {
            env,
            steps,
            train,
            compare_horizon,
            ..
        } => {
            let exact = exact.expect("exact tables");
            let instance = env.instance()?;
            let mut train = train.clone();
            train.trace_every = trace_every(*steps);
            let result: DqnResult = run_dqn(&instance, &train, *steps, seed)?;
            out.tables
                .push(("trace.csv".into(), learner_trace_table(&result.trace)));
            let mut loss = Table::new(&["n", "loss"]);
            let every = trace_every(*steps);
            for &(n, l) in result.losses.iter().filter(|(n, _)| n % every == 0) {
                loss.push(vec![n.into(), l.into()]);
            }
            out.tables.push(("loss.csv".into(), loss));
            out.tables.push((
                "index.csv".into(),
                index_comparison_table(&result.indices, exact),
            ));
            out.metric("final_lambda", result.final_lambda);
            out.metric("lambda_star", exact.lambda_star);
            out.metric("learner_average_reward", result.average_reward);
            compare_policies(
                &mut out,
                &instance,
                exact,
                Some(result.indices),
                *compare_horizon,
                seed,
            )?;
        }
        Experiment::GapCurve { .. } | Experiment::FluidCheck { .. } => {
            unreachable!("seed-independent experiments are run once")
        }
    }
    Ok(out)
}

fn run_once(experiment: &Experiment, seeds: &[u64]) -> Result<SeedOutput> {
    let mut out = SeedOutput::default();
    match experiment {
        Experiment::GapCurve {
            env,
            sizes,
            horizon,
        } => {
            let types = env
                .restart_types()
                .ok_or_else(|| Error::Config("restart environment required".into()))?;
            let total: usize = types.iter().map(|(_, c)| c).sum();
            let weighted: Vec<_> = types
                .iter()
                .map(|(s, c)| (*s, *c as f64 / total as f64))
                .collect();
            let alpha = env.budget() as f64 / total as f64;
            let rows = restart_optimality_gap(
                &weighted,
                alpha,
                &GapConfig {
                    sizes: sizes.clone(),
                    horizon: *horizon,
                    seeds: seeds.to_vec(),
                },
            )?;
            let mut t = Table::new(&["N", "per_arm_reward", "bound", "gap", "stderr"]);
            for r in &rows {
                t.push(vec![
                    r.n.into(),
                    r.per_arm_reward.into(),
                    r.bound.into(),
                    r.gap.into(),
                    r.stderr.into(),
                ]);
                out.metric(&format!("gap_{}", r.n), r.gap);
                out.metric(&format!("stderr_{}", r.n), r.stderr);
            }
            out.tables.push(("gap.csv".into(), t));
        }
        Experiment::FluidCheck { env, tol, max_iter } => {
            let exact = exact_policies(env, None)?;
            let system = FluidSystem::from_instance(&env.instance()?, &exact.lip)?;
            let opts = FluidOptions {
                tol: *tol,
                max_iter: *max_iter,
                ..FluidOptions::default()
            };
            let report = fluid_fixed_point(&system, &system.default_starts(), opts)?;
            let mut t = Table::new(&["start", "iter", "l1_change", "activated_mass"]);
            for r in &report.trace {
                t.push(vec![
                    r.start.into(),
                    r.iter.into(),
                    r.l1_change.into(),
                    r.activated_mass.into(),
                ]);
            }
            out.tables.push(("fluid.csv".into(), t));
            out.metric(
                "unique",
                (report.status == AttractorStatus::Unique) as u8 as f64,
            );
            out.metric("distinct_limits", report.distinct_limits.len() as f64);
            out.metric(
                "max_iterations",
                report.runs.iter().map(|r| r.iterations).max().unwrap_or(0) as f64,
            );
            out.metric("fluid_reward", report.reward().unwrap_or(f64::NAN));
            out.metric("dual_bound_per_arm", exact.dual_bound_per_arm);
        }
        _ => unreachable!("per-seed experiments run through run_seed"),
    }
    Ok(out)
}

fn write_tables(dir: &Path, output: &SeedOutput) -> Result<()> {
    for (name, table) in &output.tables {
        emit_csv(table, dir.join(name))?;
    }
    Ok(())
}

/// Runs `config` into `out_dir` (or the configured directory) using up to
/// `threads` worker threads across seeds.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: Option<&Path>,
    threads: usize,
) -> Result<RunSummary> {
    config.validate()?;
    let dir = out_dir
        .map(Path::to_path_buf)
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&config.name));
    std::fs::create_dir_all(&dir)?;
    let experiment = &config.experiment;
    let seed_independent = matches!(
        experiment,
        Experiment::GapCurve { .. } | Experiment::FluidCheck { .. }
    );

    let outputs: Vec<(Option<u64>, SeedOutput)> = if seed_independent {
        vec![(None, run_once(experiment, &config.seeds)?)]
    } else {
        let bracket = match experiment {
            Experiment::LipVsWip {
                whittle_bracket, ..
            }
            | Experiment::Tabular {
                whittle_bracket, ..
            }
            | Experiment::Dqn {
                whittle_bracket, ..
            } => *whittle_bracket,
            _ => None,
        };
        let exact = exact_policies(experiment.env(), bracket)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        let results: Vec<Result<SeedOutput>> = pool.install(|| {
            config
                .seeds
                .par_iter()
                .map(|&s| run_seed(experiment, Some(&exact), s))
                .collect()
        });
        config
            .seeds
            .iter()
            .zip(results)
            .map(|(&s, r)| r.map(|o| (Some(s), o)))
            .collect::<Result<_>>()?
    };

    for (seed, output) in &outputs {
        match seed {
            Some(s) => write_tables(&dir.join(format!("seed-{s}")), output)?,
            None => write_tables(&dir, output)?,
        }
    }

    let names: Vec<String> = outputs[0]
        .1
        .metrics
        .iter()
        .map(|(n, _)| n.clone())
        .collect();
    let mut metrics = Vec::with_capacity(names.len());
    for (k, name) in names.iter().enumerate() {
        let per_seed: Vec<f64> = outputs.iter().map(|(_, o)| o.metrics[k].1).collect();
        metrics.push(MetricSummary {
            name: name.clone(),
            median: median(&per_seed),
            per_seed,
        });
    }
    let mut header = vec!["metric".to_owned(), "median".to_owned()];
    header.extend(outputs.iter().map(|(s, _)| match s {
        Some(s) => format!("seed_{s}"),
        None => "value".to_owned(),
    }));
    let mut summary = Table {
        header,
        rows: Vec::new(),
    };
    for m in &metrics {
        let mut row: Vec<Cell> = vec![m.name.clone().into(), m.median.into()];
        row.extend(m.per_seed.iter().map(|&v| Cell::from(v)));
        summary.push(row);
    }
    emit_csv(&summary, dir.join("summary.csv"))?;

    let convention = LambdaConvention::CURRENT;
    let manifest = Manifest {
        name: &config.name,
        format_version: FORMAT_VERSION,
        binary_version: env!("CARGO_PKG_VERSION"),
        convention: convention.name(),
        convention_description: convention.header(),
        seeds: &config.seeds,
        threads: threads.max(1),
        seed_independent,
        config_toml: config.to_toml()?,
        config,
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(RunSummary {
        directory: dir,
        metrics,
    })
}
