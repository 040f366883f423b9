//! GEO and LEO station-keeping experiments: scenario construction, expert
//! ensembles under the deadband controller, cost learning and evaluation.
//!
//! The harness is plain `f64`; it orchestrates the generic numerical
//! modules rather than adding numerics of its own.

mod evaluate;
mod experts;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    propagate_rk4, Control, EnvironmentParams, Perturbations, PropagationSettings,
    SpacecraftParams, StateVector,
};
use crate::elements::{coe_to_cart, OrbitalElements};
use crate::error::{Error, Result};
use crate::linmodel::{linearize, DiscreteLinearModel, CONTROL_DIM, STATE_DIM};
use crate::lqg::QuadraticCost;
use crate::mce::{GradientMethod, IrlConfig};

pub use evaluate::{
    cost_surface, element_history, evaluate, max_surface_error, normalize_surface,
    propellant_from_thrust_log, surface_extents, CostSurface, ElementRms, EvaluationReport,
    ThrustTimeline,
};
pub use experts::{
    deadband_controller, demo_groups, generate_experts, initial_cost_guess, learn, learn_observed,
    simulate, trajectory_seeds, window_policies, ExpertRun,
};

/// Version tag written into every JSON artifact.
pub const SCHEMA_VERSION: u32 = 1;

/// Index of the propellant-mass deviation in the feature vector `[1, x, u]`.
pub const MASS_FEATURE: usize = 1 + 6;

/// How each expert's initial state departs from the nominal slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialPerturbation {
    /// Independent uniform offsets per axis: position in ±`position` km,
    /// velocity in ±`velocity` km/s.
    Uniform { position: f64, velocity: f64 },
    /// A shift along the nominal orbit by an arc length uniform in
    /// ±`along_track` km, so the perturbed object shares the nominal's
    /// energy and plane.
    CoOrbital { along_track: f64 },
    /// The same fixed offset for every expert, km and km/s.
    Offset {
        position: [f64; 3],
        velocity: [f64; 3],
    },
}

/// Grid over which learned and true costs are compared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurfaceConfig {
    /// Half-width of the radial position axis, km. `None` uses the largest
    /// radial deviation seen in the demonstrations.
    pub position_extent: Option<f64>,
    /// Half-width of the radial velocity axis, km/s; `None` as above.
    pub velocity_extent: Option<f64>,
    pub resolution: usize,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        Self {
            position_extent: None,
            velocity_extent: None,
            resolution: 101,
        }
    }
}

/// Complete description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub name: String,
    pub initial_elements: OrbitalElements<f64>,
    pub spacecraft: SpacecraftParams<f64>,
    pub environment: EnvironmentParams<f64>,
    #[serde(default)]
    pub perturbations: Perturbations,
    /// Propellant on board at the start, kg.
    pub initial_propellant: f64,
    pub true_cost: QuadraticCost<f64>,
    pub ensemble_size: usize,
    /// Hours.
    pub duration: f64,
    /// Hours between firing opportunities.
    pub control_period: f64,
    /// Minutes of each period during which thrust is allowed.
    pub burn_duration_max: f64,
    /// Half-width of the componentwise position box, km.
    pub deadband_box: f64,
    /// Control-decision and logging resolution, s.
    pub step: f64,
    /// Nonlinear integration step, s.
    pub substep: f64,
    /// Velocity noise per integration step, km/s.
    pub noise_sigma: f64,
    pub initial_perturbation: InitialPerturbation,
    #[serde(alias = "seeds")]
    pub seed: u64,
    /// Expert runs replayed under both policies by `evaluate`.
    #[serde(default = "evaluation_runs")]
    pub evaluation_runs: usize,
    #[serde(default)]
    pub surface: SurfaceConfig,
    pub irl: IrlConfig<f64>,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

fn evaluation_runs() -> usize {
    5
}

fn prefixed(prefix: &str, err: Error) -> Error {
    match err {
        Error::Config { field, reason } => Error::Config {
            field: format!("{prefix}.{field}"),
            reason,
        },
        other => Error::Config {
            field: prefix.into(),
            reason: other.to_string(),
        },
    }
}

/// Whole number of `unit`s in `span`, or `None` if it does not divide.
fn whole_steps(span: f64, unit: f64) -> Option<usize> {
    let ratio = span / unit;
    let rounded = ratio.round();
    ((ratio - rounded).abs() < 1e-9 * ratio.abs().max(1.0) && rounded >= 1.0)
        .then_some(rounded as usize)
}

impl ScenarioConfig {
    /// Station-keeping in a geostationary slot.
    pub fn geo() -> Self {
        let mut q = DMatrix::zeros(STATE_DIM, STATE_DIM);
        for i in 0..3 {
            q[(i, i)] = 1.0;
            q[(i + 3, i + 3)] = 1e7;
        }
        let r = DMatrix::identity(CONTROL_DIM, CONTROL_DIM) * 1e13;
        Self {
            schema_version: SCHEMA_VERSION,
            name: "geo".into(),
            initial_elements: OrbitalElements {
                h: 0.0,
                e: 0.0,
                i: 0.0,
                raan: 0.0,
                argp: 0.0,
                theta: 0.0,
                a: Some(42166.7),
            },
            spacecraft: SpacecraftParams::reference(),
            environment: EnvironmentParams::earth(),
            perturbations: Perturbations::all(),
            initial_propellant: 20.0,
            true_cost: QuadraticCost::diagonal(q, r),
            ensemble_size: 100,
            duration: 24.0,
            control_period: 2.0,
            burn_duration_max: 30.0,
            deadband_box: 75.0,
            step: 60.0,
            substep: 10.0,
            noise_sigma: 1e-6,
            initial_perturbation: InitialPerturbation::Uniform {
                position: 100.0,
                velocity: 0.0,
            },
            seed: 1,
            evaluation_runs: evaluation_runs(),
            surface: SurfaceConfig::default(),
            irl: IrlConfig {
                method: GradientMethod::Lbfgs,
                max_iterations: 3000,
                tolerance: 1e-6,
                ..IrlConfig::default()
            },
        }
    }

    /// Circular 8000 km low Earth orbit.
    pub fn leo() -> Self {
        let mut config = Self::geo();
        config.name = "leo".into();
        config.initial_elements = OrbitalElements {
            h: 0.0,
            e: 0.0,
            i: 50.0,
            raan: 150.0,
            argp: 95.0,
            theta: 0.0,
            a: Some(8000.0),
        };
        // Phasing offsets inside the box: the slot's drift-free neighbours.
        config.initial_perturbation = InitialPerturbation::CoOrbital { along_track: 50.0 };
        // Radial drift couples position and velocity, so the weight ties
        // them: |δr|² + 1e7 |δv|² + 10 |δr − 1000 δv|².
        let mut q = DMatrix::zeros(STATE_DIM, STATE_DIM);
        for i in 0..3 {
            q[(i, i)] = 11.0;
            q[(i + 3, i + 3)] = 2e7;
            q[(i, i + 3)] = -1e4;
            q[(i + 3, i)] = -1e4;
        }
        config.true_cost =
            QuadraticCost::diagonal(q, DMatrix::identity(CONTROL_DIM, CONTROL_DIM) * 1e14);
        config
    }

    /// Checks every field, reporting the first problem with its path.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        self.spacecraft
            .validate()
            .map_err(|e| prefixed("spacecraft", e))?;
        self.environment
            .validate()
            .map_err(|e| prefixed("environment", e))?;
        self.initial_elements
            .resolved(self.environment.mu)
            .map_err(|e| prefixed("initial_elements", e))?;
        self.true_cost
            .validate()
            .map_err(|e| prefixed("true_cost", e))?;
        if self.true_cost.state_dim() != STATE_DIM || self.true_cost.control_dim() != CONTROL_DIM {
            return Err(Error::config("true_cost", "must be 7 states by 3 controls"));
        }
        self.irl.validate().map_err(|e| prefixed("irl", e))?;
        if self.ensemble_size < 1 {
            return Err(Error::config("ensemble_size", "must be at least 1"));
        }
        if !(self.initial_propellant >= 0.0) {
            return Err(Error::config("initial_propellant", "must be nonnegative"));
        }
        if !(self.deadband_box > 0.0) {
            return Err(Error::config("deadband_box", "must be positive"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::config("noise_sigma", "must be nonnegative"));
        }
        if !(self.substep > 0.0) || whole_steps(self.step, self.substep).is_none() {
            return Err(Error::config("substep", "must be positive and divide step"));
        }
        if !(self.step > 0.0) {
            return Err(Error::config("step", "must be positive"));
        }
        if whole_steps(self.duration * 3600.0, self.step).is_none() {
            return Err(Error::config(
                "duration",
                "must be a positive whole number of steps",
            ));
        }
        if whole_steps(self.control_period * 3600.0, self.step).is_none() {
            return Err(Error::config(
                "control_period",
                "must be a positive whole number of steps",
            ));
        }
        if whole_steps(self.burn_duration_max * 60.0, self.step).is_none() {
            return Err(Error::config(
                "burn_duration_max",
                "must be a positive whole number of steps",
            ));
        }
        if self.burn_duration_max * 60.0 > self.control_period * 3600.0 {
            return Err(Error::config(
                "burn_duration_max",
                "must not exceed control_period",
            ));
        }
        match self.initial_perturbation {
            InitialPerturbation::Uniform { position, velocity }
                if (0.0..f64::INFINITY).contains(&position)
                    && (0.0..f64::INFINITY).contains(&velocity) => {}
            InitialPerturbation::CoOrbital { along_track }
                if (0.0..f64::INFINITY).contains(&along_track) => {}
            InitialPerturbation::Offset { position, velocity }
                if position.iter().chain(&velocity).all(|v| v.is_finite()) => {}
            _ => {
                return Err(Error::config(
                    "initial_perturbation",
                    "ranges must be finite and nonnegative",
                ))
            }
        }
        if self.surface.resolution < 2 {
            return Err(Error::config("surface.resolution", "must be at least 2"));
        }
        for (name, extent) in [
            ("surface.position_extent", self.surface.position_extent),
            ("surface.velocity_extent", self.surface.velocity_extent),
        ] {
            if extent.is_some_and(|e| !(e > 0.0)) {
                return Err(Error::config(name, "must be positive"));
            }
        }
        Ok(())
    }
}

/// A validated experiment: nominal slot history and its deviation model.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    /// Nominal (thrust-free, noise-free) state at every decision step,
    /// `steps + 1` entries.
    pub nominal: Vec<StateVector<f64>>,
    /// Deviation dynamics about the nominal, one entry per decision step.
    pub model: DiscreteLinearModel<f64>,
}

/// Builds the nominal history and the linear deviation model.
///
/// The nominal is the thrust-free motion of the slot under the configured
/// perturbations; the deviation model linearizes two-body motion about it
/// at each decision step.
pub fn build_scenario(config: &ScenarioConfig) -> Result<Scenario> {
    config.validate()?;
    let env = &config.environment;
    let elements = config.initial_elements.resolved(env.mu)?;
    let (r, v) = coe_to_cart(&elements, env.mu)?;
    let start = StateVector::new(r, v, config.initial_propellant);

    let steps = whole_steps(config.duration * 3600.0, config.step).unwrap_or(0);
    let settings = PropagationSettings {
        t0: 0.0,
        tf: config.duration * 3600.0,
        step: config.substep,
        velocity_noise: None,
        seed: 0,
    };
    let fine = propagate_rk4(
        &start,
        &settings,
        |_, _| Control::Coast,
        &config.spacecraft,
        env,
        config.perturbations,
    )?;
    let stride = substeps(config);
    let nominal: Vec<StateVector<f64>> = (0..=steps)
        .map(|k| StateVector::from_slice(fine.states[k * stride].as_slice()))
        .collect::<Result<_>>()?;

    let noise = process_noise(&start, config)?;
    let model = DiscreteLinearModel::along_reference(&nominal[..steps], env, config.step, noise)?;
    Ok(Scenario {
        config: config.clone(),
        nominal,
        model,
    })
}

fn substeps(config: &ScenarioConfig) -> usize {
    whole_steps(config.step, config.substep).unwrap_or(1)
}

/// Covariance of the state change over one decision step from velocity
/// kicks applied after each integration substep.
fn process_noise(at: &StateVector<f64>, config: &ScenarioConfig) -> Result<DMatrix<f64>> {
    let sigma2 = config.noise_sigma * config.noise_sigma;
    let mut kick = DMatrix::zeros(STATE_DIM, STATE_DIM);
    for i in 3..6 {
        kick[(i, i)] = sigma2;
    }
    let (phi, _) = linearize(at, &config.environment)?.discretize(config.substep)?;
    let mut total = DMatrix::zeros(STATE_DIM, STATE_DIM);
    let mut carried = kick;
    for _ in 0..substeps(config) {
        total += &carried;
        carried = &phi * carried * phi.transpose();
    }
    Ok((&total + total.transpose()) * 0.5)
}

impl Scenario {
    /// Decision steps in the whole run.
    pub fn steps(&self) -> usize {
        self.model.horizon()
    }

    /// Decision steps between firing opportunities.
    pub fn period_steps(&self) -> usize {
        whole_steps(self.config.control_period * 3600.0, self.config.step).unwrap_or(1)
    }

    /// Decision steps in one firing window.
    pub fn burn_steps(&self) -> usize {
        whole_steps(self.config.burn_duration_max * 60.0, self.config.step).unwrap_or(1)
    }

    pub fn substeps(&self) -> usize {
        substeps(&self.config)
    }

    /// First decision step of every firing window that fits in the run.
    pub fn window_starts(&self) -> Vec<usize> {
        (0..self.steps())
            .step_by(self.period_steps())
            .filter(|start| start + self.burn_steps() <= self.steps())
            .collect()
    }

    /// Deviation model restricted to the window starting at `start`.
    pub fn window_model(&self, start: usize) -> Result<DiscreteLinearModel<f64>> {
        self.model.window(start, start + self.burn_steps())
    }

    /// Deviation `x − x̄_k` with the propellant measured against the
    /// nominal load.
    pub fn deviation(&self, k: usize, state: &StateVector<f64>) -> DVector<f64> {
        DVector::from_column_slice((state.to_vector() - self.nominal[k].to_vector()).as_slice())
    }

    /// Radial unit vector of the nominal slot at the epoch.
    pub fn radial_direction(&self) -> Vector3<f64> {
        self.nominal[0].position.normalize()
    }
}
