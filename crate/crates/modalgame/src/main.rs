//! Command-line front end: solve a scenario, run a parameter sweep, run
//! oracle self-checks, or re-emit reports from a saved result.
//!
//! Exit codes: 0 success, 2 solved but not converged (artifacts are still
//! written), 1 any other failure. Verbosity via MODALGAME_LOG.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use modalgame::best_response::{solve_best_response, OperatorConfig};
use modalgame::context::{build_contexts, DemandContext};
use modalgame::equilibrium::{
    iterate_duopoly, solve_monopoly, EquilibriumResult, GameEnv, IterationConfig, IterationMode,
};
use modalgame::oracle;
use modalgame::reaction::{
    evaluate_reaction, reaction_pieces, affine_reaction, monte_carlo_reaction,
};
use modalgame::report::{build_report, emit_csv, emit_json, SweepRow};
use modalgame::scenario::{expand_sweep, load_scenario, load_sweep_spec, ScenarioConfig};
use modalgame::solver::ClarabelBackend;

const SOLVER_TOLERANCE: f64 = 1e-6;

#[derive(Parser)]
#[command(
    name = "modalgame",
    about = "Equilibrium engine for the pricing game between mobility operators and public transport"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    /// Monopoly for one operator, synchronous iteration for two.
    Auto,
    Monopoly,
    Synchronous,
    Asynchronous,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one scenario to an equilibrium and write result artifacts.
    Solve {
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Auto)]
        mode: ModeArg,
        #[arg(long, default_value_t = 1e-4)]
        epsilon: f64,
        #[arg(long, default_value_t = 100)]
        max_iter: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Solve one scenario per sweep value and write a sweep table.
    Sweep {
        scenario: PathBuf,
        sweep_spec: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::Auto)]
        mode: ModeArg,
        #[arg(long, default_value_t = 1e-4)]
        epsilon: f64,
        #[arg(long, default_value_t = 100)]
        max_iter: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the independent ground-truth suites and print a pass/fail table.
    OracleCheck {
        /// all, basic-example, grid-oracle, monte-carlo, or epsilon-certificate.
        #[arg(default_value = "all")]
        suite: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild report artifacts from a saved result.json.
    Report {
        result: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

/// Saved alongside the reports so `report` can rebuild them later.
#[derive(Serialize, Deserialize)]
struct SolveArtifact {
    scenario: String,
    service_tax: f64,
    result: EquilibriumResult,
}

fn iteration_mode(mode: ModeArg, num_operators: usize) -> Result<Option<IterationMode>, String> {
    match (mode, num_operators) {
        (ModeArg::Auto, 1) | (ModeArg::Monopoly, 1) => Ok(None),
        (ModeArg::Auto, _) | (ModeArg::Synchronous, 2) => Ok(Some(IterationMode::Synchronous)),
        (ModeArg::Asynchronous, 2) => Ok(Some(IterationMode::Asynchronous)),
        (ModeArg::Monopoly, n) => Err(format!("monopoly mode needs 1 operator, scenario has {n}")),
        (m, n) => Err(format!("mode {m:?} needs 2 operators, scenario has {n}")),
    }
}

fn solve_config(
    graph: &modalgame::graph::MultiGraph,
    config: &ScenarioConfig,
    demands: &[modalgame::context::Demand],
    mode: ModeArg,
    epsilon: f64,
    max_iter: usize,
    seed: u64,
) -> Result<(EquilibriumResult, Vec<DemandContext>), Box<dyn std::error::Error>> {
    let contexts = build_contexts(graph, demands, &config.context_params())?;
    let env = GameEnv {
        graph,
        contexts: &contexts,
        vot: config.vot,
        noise: config.noise,
        tax: config.service_tax,
        backend: &ClarabelBackend,
        tolerance: SOLVER_TOLERANCE,
    };
    let result = match iteration_mode(mode, config.operators.len())? {
        None => solve_monopoly(&env, &config.operators[0])?,
        Some(iter_mode) => {
            let cfg = IterationConfig {
                mode: iter_mode,
                epsilon,
                max_iterations: max_iter,
                seed,
            };
            iterate_duopoly(&env, [&config.operators[0], &config.operators[1]], &cfg)?
        }
    };
    Ok((result, contexts))
}

fn total_fleet(config: &ScenarioConfig) -> f64 {
    config.operators.iter().map(|o| o.fleet_size).sum()
}

fn run_solve(
    scenario: &Path,
    out: &Path,
    mode: ModeArg,
    epsilon: f64,
    max_iter: usize,
    seed: u64,
) -> Result<u8, Box<dyn std::error::Error>> {
    let loaded = load_scenario(scenario)?;
    let (result, contexts) =
        solve_config(&loaded.graph, &loaded.config, &loaded.demands, mode, epsilon, max_iter, seed)?;
    std::fs::create_dir_all(out)?;
    let report = build_report(&result, &contexts, loaded.config.service_tax);
    let converged = result.converged;
    let artifact = SolveArtifact {
        scenario: scenario.to_string_lossy().into_owned(),
        service_tax: loaded.config.service_tax,
        result,
    };
    emit_json(&artifact, out.join("result.json"))?;
    emit_json(&report, out.join("report.json"))?;
    let row = SweepRow { value: total_fleet(&loaded.config), converged, report };
    emit_csv(std::slice::from_ref(&row), out.join("report.csv"))?;
    log::info!("solve finished, converged = {converged}");
    Ok(if converged { 0 } else { 2 })
}

fn run_sweep(
    scenario: &Path,
    sweep_spec: &Path,
    out: &Path,
    parallelism: usize,
    mode: ModeArg,
    epsilon: f64,
    max_iter: usize,
    seed: u64,
) -> Result<u8, Box<dyn std::error::Error>> {
    use rayon::prelude::*;
    let loaded = load_scenario(scenario)?;
    let spec = load_sweep_spec(sweep_spec)?;
    let configs = expand_sweep(&loaded.config, &spec)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()?;
    let rows: Vec<SweepRow> = pool.install(|| {
        spec.values
            .par_iter()
            .zip(configs.par_iter())
            .map(|(&value, cfg)| {
                let (result, contexts) = solve_config(
                    &loaded.graph,
                    cfg,
                    &loaded.demands,
                    mode,
                    epsilon,
                    max_iter,
                    seed,
                )
                .map_err(|e| format!("sweep value {value}: {e}"))?;
                let report = build_report(&result, &contexts, cfg.service_tax);
                Ok(SweepRow { value, converged: result.converged, report })
            })
            .collect::<Result<Vec<_>, String>>()
    })?;
    std::fs::create_dir_all(out)?;
    emit_csv(&rows, out.join("sweep.csv"))?;
    emit_json(&rows, out.join("sweep.json"))?;
    let all_converged = rows.iter().all(|r| r.converged);
    log::info!("sweep finished, {} rows, all converged = {all_converged}", rows.len());
    Ok(if all_converged { 0 } else { 2 })
}

fn run_report(result_path: &Path, out: &Path) -> Result<u8, Box<dyn std::error::Error>> {
    let text = std::fs::read_to_string(result_path)?;
    let artifact: SolveArtifact = serde_json::from_str(&text)?;
    let loaded = load_scenario(&artifact.scenario)?;
    let contexts = build_contexts(&loaded.graph, &loaded.demands, &loaded.config.context_params())?;
    let report = build_report(&artifact.result, &contexts, artifact.service_tax);
    std::fs::create_dir_all(out)?;
    emit_json(&report, out.join("report.json"))?;
    let row = SweepRow {
        value: total_fleet(&loaded.config),
        converged: artifact.result.converged,
        report,
    };
    emit_csv(std::slice::from_ref(&row), out.join("report.csv"))?;
    Ok(0)
}

#[derive(Debug, Serialize)]
struct Check {
    suite: String,
    name: String,
    pass: bool,
    residual: f64,
}

fn check(suite: &str, name: &str, pass: bool, residual: f64) -> Check {
    Check { suite: suite.into(), name: name.into(), pass, residual }
}

fn suite_basic_example() -> Vec<Check> {
    let params = oracle::BasicExampleParams {
        t1: 0.2,
        t2: 0.3,
        t3: 1.0,
        c1: 0.5,
        c2: 0.5,
        v_t: 12.0,
        rate: 5.0,
    };
    let mut checks = Vec::new();
    let closed = oracle::basic_example_equilibrium(&params);
    match closed {
        Ok(c) => {
            checks.push(check(
                "basic-example",
                "closed form price",
                (c.price_op1 - 1.2).abs() < 1e-9,
                (c.price_op1 - 1.2).abs(),
            ));
            checks.push(check(
                "basic-example",
                "closed form profit",
                (c.profit1 - 1.0).abs() < 1e-9 && c.profit2 == 0.0,
                (c.profit1 - 1.0).abs(),
            ));
            match oracle::basic_example_fixed_point(&params) {
                Ok(f) => {
                    let res = (f.price_op1 - c.price_op1)
                        .abs()
                        .max((f.profit1 - c.profit1).abs())
                        .max(f.profit2.abs());
                    checks.push(check("basic-example", "fixed point agreement", res < 1e-6, res));
                }
                Err(e) => {
                    log::error!("fixed point failed: {e}");
                    checks.push(check("basic-example", "fixed point agreement", false, f64::NAN));
                }
            }
        }
        Err(e) => {
            log::error!("closed form failed: {e}");
            checks.push(check("basic-example", "closed form price", false, f64::NAN));
        }
    }
    let boundary = oracle::BasicExampleParams { c1: 0.6, ..params };
    checks.push(check(
        "basic-example",
        "boundary assumption rejected",
        oracle::basic_example_equilibrium(&boundary).is_err(),
        0.0,
    ));
    checks
}

fn suite_grid_oracle(instances: u64, grid_points: usize) -> Vec<Check> {
    let mut checks = Vec::new();
    for seed in 0..instances {
        let inst = oracle::random_instance(seed);
        let name = format!("instance {seed}");
        let grid = oracle::grid_best_response(
            &inst.graph,
            &inst.contexts,
            0,
            &inst.operator,
            inst.adversary(),
            &inst.vot,
            &inst.noise,
            inst.tax,
            grid_points,
        );
        let solved = solve_best_response(
            &inst.graph,
            &inst.contexts,
            0,
            &inst.operator,
            inst.adversary(),
            &inst.vot,
            &inst.noise,
            inst.tax,
            &ClarabelBackend,
            SOLVER_TOLERANCE,
        );
        match (grid, solved) {
            (Ok(g), Ok(s)) => {
                let rel = (g.profit - s.profit).abs() / s.profit.abs().max(1e-9);
                let x_ok = g
                    .x
                    .iter()
                    .zip(&s.x)
                    .zip(&g.step)
                    .all(|((gx, sx), step)| (gx - sx).abs() <= step + 1e-9);
                checks.push(check("grid-oracle", &name, rel <= 0.005 && x_ok, rel));
            }
            (g, s) => {
                if let Err(e) = g {
                    log::error!("{name}: grid failed: {e}");
                }
                if let Err(e) = s {
                    log::error!("{name}: solver failed: {e}");
                }
                checks.push(check("grid-oracle", &name, false, f64::NAN));
            }
        }
    }
    checks
}

fn suite_monte_carlo(configs: u64, samples: u32) -> Vec<Check> {
    let mut checks = Vec::new();
    let mut done = 0u64;
    let mut seed = 0u64;
    while done < configs {
        let inst = oracle::random_instance(seed);
        seed += 1;
        let Some(prices) = &inst.adversary_prices else { continue };
        let ctx = &inst.contexts[0];
        let p_adv = prices
            .get(ctx.demand.origin, ctx.demand.destination)
            .expect("generator prices every demand");
        // at matching prices the analytic curve is exact for any noise width
        let own = p_adv;
        let base = affine_reaction(ctx, &inst.vot, &inst.noise).expect("reaction");
        let pieces =
            reaction_pieces(&base, modalgame::reaction::AdversaryPrice::Price(p_adv));
        let analytic = evaluate_reaction(&pieces, ctx.demand.rate, own);
        let mc = monte_carlo_reaction(
            ctx,
            &inst.vot,
            &inst.noise,
            own,
            modalgame::reaction::AdversaryPrice::Price(p_adv),
            samples,
            seed.wrapping_mul(0x9e37),
        );
        let p_hat = (analytic / ctx.demand.rate).clamp(0.0, 1.0);
        let se = ctx.demand.rate * (p_hat * (1.0 - p_hat) / samples as f64).sqrt();
        let err = (mc.op1 - analytic).abs();
        checks.push(check(
            "monte-carlo",
            &format!("config {seed}"),
            err <= 3.0 * se + 1e-9,
            err,
        ));
        done += 1;
    }
    checks
}

fn suite_epsilon_certificate() -> Vec<Check> {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/two_node/scenario.json");
    let mut checks = Vec::new();
    let loaded = match load_scenario(&fixture) {
        Ok(l) => l,
        Err(e) => {
            log::error!("cannot load fixture: {e}");
            return vec![check("epsilon-certificate", "fixture load", false, f64::NAN)];
        }
    };
    // contexts carry per-operator service costs; add a second entry for the
    // duopoly run below
    let mut params = loaded.config.context_params();
    params.cost_per_km.push(params.cost_per_km[0]);
    let contexts = build_contexts(&loaded.graph, &loaded.demands, &params)
        .expect("fixture contexts");
    let env = GameEnv {
        graph: &loaded.graph,
        contexts: &contexts,
        vot: loaded.config.vot,
        noise: loaded.config.noise,
        tax: loaded.config.service_tax,
        backend: &ClarabelBackend,
        tolerance: SOLVER_TOLERANCE,
    };
    let epsilon = 1e-4;
    // monopoly certificate on the shipped config
    match solve_monopoly(&env, &loaded.config.operators[0]) {
        Ok(result) => {
            let cert = oracle::verify_epsilon_equilibrium(
                &env,
                &[&loaded.config.operators[0]],
                &result,
                epsilon,
            );
            match cert {
                Ok(c) => checks.push(check(
                    "epsilon-certificate",
                    "monopoly",
                    c.ok,
                    c.slack.iter().cloned().fold(0.0, f64::max),
                )),
                Err(e) => {
                    log::error!("certificate failed: {e}");
                    checks.push(check("epsilon-certificate", "monopoly", false, f64::NAN));
                }
            }
        }
        Err(e) => {
            log::error!("monopoly solve failed: {e}");
            checks.push(check("epsilon-certificate", "monopoly", false, f64::NAN));
        }
    }
    // symmetric duopoly on the same network
    let half = OperatorConfig {
        fleet_size: loaded.config.operators[0].fleet_size / 2.0,
        cost_per_km: loaded.config.operators[0].cost_per_km,
    };
    let cfg = IterationConfig { epsilon, ..Default::default() };
    match iterate_duopoly(&env, [&half, &half], &cfg) {
        Ok(result) => {
            let cert =
                oracle::verify_epsilon_equilibrium(&env, &[&half, &half], &result, epsilon);
            match cert {
                Ok(c) => checks.push(check(
                    "epsilon-certificate",
                    "symmetric duopoly",
                    result.converged && c.ok,
                    c.slack.iter().cloned().fold(0.0, f64::max),
                )),
                Err(e) => {
                    log::error!("certificate failed: {e}");
                    checks.push(check(
                        "epsilon-certificate",
                        "symmetric duopoly",
                        false,
                        f64::NAN,
                    ));
                }
            }
        }
        Err(e) => {
            log::error!("duopoly solve failed: {e}");
            checks.push(check("epsilon-certificate", "symmetric duopoly", false, f64::NAN));
        }
    }
    checks
}

fn run_oracle_check(suite: &str, out: Option<&Path>) -> Result<u8, Box<dyn std::error::Error>> {
    let mut checks = Vec::new();
    let known = ["all", "basic-example", "grid-oracle", "monte-carlo", "epsilon-certificate"];
    if !known.contains(&suite) {
        return Err(format!("unknown suite {suite}; choose one of {known:?}").into());
    }
    if suite == "all" || suite == "basic-example" {
        checks.extend(suite_basic_example());
    }
    if suite == "all" || suite == "grid-oracle" {
        checks.extend(suite_grid_oracle(5, 101));
    }
    if suite == "all" || suite == "monte-carlo" {
        checks.extend(suite_monte_carlo(5, 200_000));
    }
    if suite == "all" || suite == "epsilon-certificate" {
        checks.extend(suite_epsilon_certificate());
    }
    for c in &checks {
        println!(
            "{:<22} {:<28} {:<4} residual {:.3e}",
            c.suite,
            c.name,
            if c.pass { "PASS" } else { "FAIL" },
            c.residual
        );
    }
    if let Some(path) = out {
        emit_json(&checks, path)?;
    }
    if checks.iter().all(|c| c.pass) {
        Ok(0)
    } else {
        Err("one or more oracle checks failed".into())
    }
}

fn run() -> Result<u8, Box<dyn std::error::Error>> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Solve { scenario, out, mode, epsilon, max_iter, seed } => {
            run_solve(scenario, out, *mode, *epsilon, *max_iter, *seed)
        }
        Command::Sweep {
            scenario,
            sweep_spec,
            out,
            parallelism,
            mode,
            epsilon,
            max_iter,
            seed,
        } => run_sweep(
            scenario,
            sweep_spec,
            out,
            *parallelism,
            *mode,
            *epsilon,
            *max_iter,
            *seed,
        ),
        Command::OracleCheck { suite, out } => run_oracle_check(suite, out.as_deref()),
        Command::Report { result, out } => run_report(result, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("MODALGAME_LOG", "error"),
    )
    .init();
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
