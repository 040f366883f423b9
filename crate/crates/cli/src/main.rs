//! `orbit-irl`: simulate station-keeping ensembles, learn their cost, and
//! compare it with the truth.
//!
//! Exit codes: 0 success, 1 bad input or configuration, 2 numerical failure.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use orbit_irl::dynamics::{atmosphere_density, EnvironmentParams, SHELL_TOP_KM};
use orbit_irl::elements::{cart_to_coe, coe_to_cart, OrbitalElements};
use orbit_irl::harness::{
    build_scenario, cost_surface, element_history, evaluate, generate_experts, learn_observed,
    max_surface_error, normalize_surface, surface_extents, CostSurface, ExpertRun, Scenario,
    ScenarioConfig, SCHEMA_VERSION,
};
use orbit_irl::lqg::{GaussianPolicy, QuadraticCost, ValueQuadratic};
use orbit_irl::mce::gibbs_policy_lqr;
use orbit_irl::Error;

#[derive(Debug, Parser)]
#[command(
    name = "orbit-irl",
    version,
    about = "Station-keeping simulation and inverse optimal control"
)]
struct Cli {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// Scenario configuration (JSON). Without it the preset is used.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Built-in scenario used when no --config is given.
    #[arg(long, global = true, value_enum, default_value_t = Preset::Geo)]
    preset: Preset,
    /// Master seed; overrides the configured one.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Ensemble size; overrides the configured one.
    #[arg(long, global = true)]
    count: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Geo,
    Leo,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the expert ensemble; one CSV per trajectory.
    Simulate {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Simulate the ensemble and learn its cost.
    Learn {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Also write the learned per-window policies and value functions.
        #[arg(long)]
        dump_policy: bool,
    },
    /// Compare a learned cost with the configured true cost.
    Evaluate {
        /// `learned_cost.json` written by `learn`.
        #[arg(long, value_name = "PATH")]
        learned: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Orbital-element utilities.
    Elements {
        #[command(subcommand)]
        action: ElementsAction,
    },
    /// Linear deviation model utilities.
    Linmodel {
        #[command(subcommand)]
        action: LinmodelAction,
    },
    /// Atmosphere model utilities.
    Density {
        #[command(subcommand)]
        action: DensityAction,
    },
    /// Scenario configuration utilities.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Debug, Subcommand)]
enum ElementsAction {
    /// Cartesian state to elements or back, whichever the input is.
    Convert {
        /// JSON input; `-` reads standard input.
        #[arg(long, value_name = "PATH", default_value = "-")]
        input: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum LinmodelAction {
    /// Write A, B and the process noise at one decision step as CSV.
    Dump {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Decision step of the nominal at which the model is taken.
        #[arg(long, default_value_t = 0)]
        step: usize,
    },
}

#[derive(Debug, Subcommand)]
enum DensityAction {
    /// Tabulate the atmosphere density (CSV on standard output).
    Dump {
        /// Altitude spacing, km.
        #[arg(long, default_value_t = 10.0)]
        spacing: f64,
    },
}

#[derive(Debug, Subcommand)]
enum ConfigAction {
    /// Print the effective scenario configuration as JSON.
    Dump,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
enum Failure {
    Input(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Input(e.to_string())
        } else {
            Failure::Numerical(e.to_string())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Input(format!("i/o: {e}"))
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Input(format!("csv: {e}"))
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate { out } => simulate_cmd(&load_config(&cli.scenario)?, &out),
        Command::Learn { out, dump_policy } => {
            learn_cmd(&load_config(&cli.scenario)?, &out, dump_policy)
        }
        Command::Evaluate { learned, out } => {
            evaluate_cmd(&load_config(&cli.scenario)?, &learned, &out)
        }
        Command::Elements {
            action: ElementsAction::Convert { input },
        } => convert_cmd(&load_config(&cli.scenario)?.environment, &input),
        Command::Linmodel {
            action: LinmodelAction::Dump { out, step },
        } => linmodel_cmd(&load_config(&cli.scenario)?, &out, step),
        Command::Density {
            action: DensityAction::Dump { spacing },
        } => density_cmd(spacing),
        Command::Config {
            action: ConfigAction::Dump,
        } => {
            let config = load_config(&cli.scenario)?;
            config.validate()?;
            print_json(&config)
        }
    }
}

fn load_config(args: &ScenarioArgs) -> CliResult<ScenarioConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?
        }
        None => match args.preset {
            Preset::Geo => ScenarioConfig::geo(),
            Preset::Leo => ScenarioConfig::leo(),
        },
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(count) = args.count {
        config.ensemble_size = count;
    }
    Ok(config)
}

/// Floats are written with 17 significant digits.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn json_string<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value).map_err(|e| Failure::Input(format!("json: {e}")))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = json_string(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> CliResult<()> {
    let mut stdout = io::stdout().lock();
    writeln!(stdout, "{}", json_string(value)?)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = if path == Path::new("-") {
        let mut buf = String::new();
        io::stdin().read_to_string(&mut buf)?;
        buf
    } else {
        fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?
    };
    serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn scenario_and_ensemble(config: &ScenarioConfig) -> CliResult<(Scenario, Vec<ExpertRun>)> {
    let scenario = build_scenario(config)?;
    let runs = generate_experts(&scenario, config.ensemble_size)?;
    Ok((scenario, runs))
}

const TRAJECTORY_HEADER: [&str; 18] = [
    "t", "x", "y", "z", "vx", "vy", "vz", "m_prop", "ax", "ay", "az", "firing", "h", "e", "i",
    "raan", "argp", "theta",
];

fn write_trajectory(path: &Path, scenario: &Scenario, run: &ExpertRun) -> CliResult<()> {
    let elements = element_history(&run.absolute, scenario.config.environment.mu)?;
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(TRAJECTORY_HEADER)?;
    let horizon = run.absolute.horizon();
    for k in 0..=horizon {
        let state = &run.absolute.states[k];
        // The control applied over [t_k, t_k+1); none after the last sample.
        let control = (k < horizon).then(|| &run.absolute.controls[k]);
        let el = &elements[k];
        let mut record: Vec<String> = vec![num(run.absolute.times[k])];
        record.extend(state.iter().map(|&v| num(v)));
        record.extend((0..3).map(|j| num(control.map_or(0.0, |u| u[j]))));
        record.push(u8::from(k < horizon && run.firing[k]).to_string());
        record.extend([el.h, el.e, el.i, el.raan, el.argp, el.theta].map(num));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

fn simulate_cmd(config: &ScenarioConfig, out: &Path) -> CliResult<()> {
    let (scenario, runs) = scenario_and_ensemble(config)?;
    fs::create_dir_all(out)?;
    let mut summary = csv::Writer::from_path(out.join("summary.csv"))?;
    summary.write_record(["index", "seed", "fired_windows", "propellant_used"])?;
    for (index, run) in runs.iter().enumerate() {
        write_trajectory(
            &out.join(format!("trajectory_{index:04}.csv")),
            &scenario,
            run,
        )?;
        let windows: Vec<String> = run.fired_windows.iter().map(|w| w.to_string()).collect();
        summary.write_record([
            index.to_string(),
            run.seed.to_string(),
            windows.join(" "),
            num(run.propellant_used()),
        ])?;
    }
    summary.flush()?;
    eprintln!(
        "{} trajectories, {} fired windows, written to {}",
        runs.len(),
        runs.iter().map(|r| r.fired_windows.len()).sum::<usize>(),
        out.display()
    );
    Ok(())
}

/// The artifact written by `learn` and read by `evaluate`.
#[derive(Debug, Serialize, Deserialize)]
struct LearnedCost {
    schema_version: u32,
    converged: bool,
    iterations: usize,
    cost: QuadraticCost<f64>,
}

#[derive(Debug, Serialize)]
struct WindowPolicy {
    start_step: usize,
    value: ValueQuadratic<f64>,
    policy: GaussianPolicy<f64>,
}

#[derive(Debug, Serialize)]
struct PolicyDump {
    schema_version: u32,
    windows: Vec<WindowPolicy>,
}

fn learn_cmd(config: &ScenarioConfig, out: &Path, dump_policy: bool) -> CliResult<()> {
    let (scenario, runs) = scenario_and_ensemble(config)?;
    let (pos, vel) = surface_extents(&scenario, &runs);
    let resolution = config.surface.resolution;
    let truth = cost_surface(&scenario, &config.true_cost, pos, vel, resolution)?;
    let result = learn_observed(&scenario, &runs, |cost| {
        cost_surface(&scenario, cost, pos, vel, resolution)
            .and_then(|s| max_surface_error(&truth, &s))
            .ok()
    })?;
    fs::create_dir_all(out)?;
    write_json(
        &out.join("learned_cost.json"),
        &LearnedCost {
            schema_version: SCHEMA_VERSION,
            converged: result.converged,
            iterations: result.trace.len() - 1,
            cost: result.cost.clone(),
        },
    )?;
    let mut trace = csv::Writer::from_path(out.join("convergence.csv"))?;
    trace.write_record([
        "iteration",
        "gradient_norm",
        "objective",
        "step_size",
        "cost_error",
    ])?;
    for r in &result.trace {
        trace.write_record([
            r.iteration.to_string(),
            num(r.gradient_norm),
            num(r.objective),
            num(r.step_size),
            r.metric.map(num).unwrap_or_default(),
        ])?;
    }
    trace.flush()?;
    if dump_policy {
        let windows = scenario
            .window_starts()
            .into_iter()
            .map(|start| {
                let (value, policy) =
                    gibbs_policy_lqr(&scenario.window_model(start)?, &result.cost)?;
                Ok(WindowPolicy {
                    start_step: start,
                    value,
                    policy,
                })
            })
            .collect::<Result<Vec<_>, Error>>()?;
        write_json(
            &out.join("policy.json"),
            &PolicyDump {
                schema_version: SCHEMA_VERSION,
                windows,
            },
        )?;
    }
    let last = result.trace.last().expect("trace has the initial iterate");
    eprintln!(
        "{} iterations, converged: {}, gradient norm {:.3e}, cost error {}",
        last.iteration,
        result.converged,
        last.gradient_norm,
        last.metric.map_or("n/a".into(), |m| format!("{m:.4}"))
    );
    Ok(())
}

fn write_surface(path: &Path, surface: &CostSurface) -> CliResult<()> {
    let normalized = normalize_surface(surface)?;
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["position", "velocity", "cost", "normalized"])?;
    for (i, &p) in surface.position.iter().enumerate() {
        for (j, &v) in surface.velocity.iter().enumerate() {
            writer.write_record([
                num(p),
                num(v),
                num(surface.values[i][j]),
                num(normalized[i][j]),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

fn evaluate_cmd(config: &ScenarioConfig, learned: &Path, out: &Path) -> CliResult<()> {
    let learned: LearnedCost = read_json(learned)?;
    if learned.schema_version != SCHEMA_VERSION {
        return Err(Failure::Input(format!(
            "learned cost has schema_version {}, expected {SCHEMA_VERSION}",
            learned.schema_version
        )));
    }
    let (scenario, runs) = scenario_and_ensemble(config)?;
    let report = evaluate(&scenario, &config.true_cost, &learned.cost, &runs)?;
    fs::create_dir_all(out)?;
    write_json(&out.join("report.json"), &report)?;
    write_surface(&out.join("surface_true.csv"), &report.true_surface)?;
    write_surface(&out.join("surface_learned.csv"), &report.learned_surface)?;
    eprintln!(
        "surface max error {:.4}, propellant {:.3} kg (true) vs {:.3} kg (learned)",
        report.surface_max_error, report.propellant_true, report.propellant_learned
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct CartesianState {
    /// km
    position: [f64; 3],
    /// km/s
    velocity: [f64; 3],
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ConvertInput {
    Cartesian(CartesianState),
    Elements(OrbitalElements<f64>),
}

#[derive(Debug, Serialize)]
struct Versioned<T> {
    schema_version: u32,
    #[serde(flatten)]
    body: T,
}

fn convert_cmd(env: &EnvironmentParams<f64>, input: &Path) -> CliResult<()> {
    match read_json::<ConvertInput>(input)? {
        ConvertInput::Cartesian(state) => {
            let elements = cart_to_coe(
                &Vector3::from(state.position),
                &Vector3::from(state.velocity),
                env.mu,
            )?;
            print_json(&Versioned {
                schema_version: SCHEMA_VERSION,
                body: elements,
            })
        }
        ConvertInput::Elements(elements) => {
            let (r, v) = coe_to_cart(&elements.resolved(env.mu)?, env.mu)?;
            print_json(&Versioned {
                schema_version: SCHEMA_VERSION,
                body: CartesianState {
                    position: r.into(),
                    velocity: v.into(),
                },
            })
        }
    }
}

fn write_matrix(path: &Path, m: &DMatrix<f64>) -> CliResult<()> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    for row in m.row_iter() {
        writer.write_record(row.iter().map(|&v| num(v)))?;
    }
    writer.flush()?;
    Ok(())
}

fn linmodel_cmd(config: &ScenarioConfig, out: &Path, step: usize) -> CliResult<()> {
    let scenario = build_scenario(config)?;
    let model = &scenario.model;
    if step >= model.horizon() {
        return Err(Failure::Input(format!(
            "step {step} is past the last decision step {}",
            model.horizon() - 1
        )));
    }
    fs::create_dir_all(out)?;
    write_matrix(&out.join("A.csv"), &model.a[step])?;
    write_matrix(&out.join("B.csv"), &model.b[step])?;
    write_matrix(&out.join("W.csv"), &model.process_noise)?;
    let slot = scenario.nominal[step].to_vector();
    write_matrix(
        &out.join("operating_point.csv"),
        &DMatrix::from_row_slice(1, 7, slot.as_slice()),
    )?;
    Ok(())
}

fn density_cmd(spacing: f64) -> CliResult<()> {
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(Failure::Input("spacing must be positive".into()));
    }
    let mut writer = csv::Writer::from_writer(io::stdout().lock());
    writer.write_record(["altitude_km", "density_kg_m3"])?;
    let count = (SHELL_TOP_KM / spacing).floor() as usize;
    for k in 0..=count {
        let altitude = k as f64 * spacing;
        writer.write_record([num(altitude), num(atmosphere_density(altitude)?)])?;
    }
    writer.flush()?;
    Ok(())
}
