use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{InitialPerturbation, Scenario, MASS_FEATURE};
use crate::dynamics::{
    clamp_acceleration, propagate_rk4, Control, PropagationSettings, StateVector,
};
use crate::error::{Error, Result};
use crate::linmodel::{CONTROL_DIM, STATE_DIM};
use crate::lqg::{covariance_factor, standard_normal, GaussianPolicy, QuadraticCost};
use crate::mce::{gibbs_policy_lqr, learn_cost_observed, DemoGroup, LearnResult};
use crate::trajectory::Trajectory;

/// RNG streams carved out of one trajectory seed.
const STREAM_PERTURBATION: u64 = 1;
const STREAM_POLICY: u64 = 2;

/// Propellant below this (kg) is treated as exhausted.
const EMPTY_TANK: f64 = 1e-6;

/// One simulated day of a station-keeping object.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertRun {
    pub seed: u64,
    /// Absolute states and applied accelerations at the decision resolution.
    pub absolute: Trajectory<f64>,
    /// The same run as deviations from the nominal slot.
    pub deviation: Trajectory<f64>,
    /// Whether thrust was allowed at each decision step.
    pub firing: Vec<bool>,
    /// Indices of the windows in which the object fired.
    pub fired_windows: Vec<usize>,
}

impl ExpertRun {
    /// Propellant burned over the run, kg.
    pub fn propellant_used(&self) -> f64 {
        let first = &self.absolute.states[0];
        let last = &self.absolute.states[self.absolute.horizon()];
        first[6] - last[6]
    }
}

/// Per-trajectory seeds derived from the scenario seed.
pub fn trajectory_seeds(master: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    (0..count).map(|_| rng.random()).collect()
}

/// Gibbs policy for every firing window under `cost`.
pub fn window_policies(
    scenario: &Scenario,
    cost: &QuadraticCost<f64>,
) -> Result<Vec<GaussianPolicy<f64>>> {
    scenario
        .window_starts()
        .into_iter()
        .map(|start| Ok(gibbs_policy_lqr(&scenario.window_model(start)?, cost)?.1))
        .collect()
}

/// True when the window opening at step `k` should fire: some position
/// component lies outside the box around the nominal.
fn window_trigger(scenario: &Scenario, k: usize, state: &StateVector<f64>) -> bool {
    let offset = state.position - scenario.nominal[k].position;
    offset.amax() > scenario.config.deadband_box
}

/// Commanded acceleration (km/s²) at decision step `k`.
///
/// `armed` is the decision taken at the start of the current control
/// period. Outside the burn part of the period, or when not armed, the
/// command is zero; otherwise it is the policy action for the deviation
/// state, plus `noise` mapped through the policy covariance when given,
/// clamped to the thruster limit.
pub fn deadband_controller(
    scenario: &Scenario,
    policy: &GaussianPolicy<f64>,
    k: usize,
    state: &StateVector<f64>,
    armed: bool,
    noise: Option<&DVector<f64>>,
) -> Result<Vector3<f64>> {
    let local = k % scenario.period_steps();
    if !armed || local >= scenario.burn_steps() {
        return Ok(Vector3::zeros());
    }
    let mut u = policy.mean(local, &scenario.deviation(k, state));
    if let Some(xi) = noise {
        u += covariance_factor(&policy.covariances[local]) * xi;
    }
    let params = &scenario.config.spacecraft;
    let mass = state.total_mass(params);
    let command = clamp_acceleration(Vector3::new(u[0], u[1], u[2]), mass, params)?;
    // Never ask for more than the remaining propellant can deliver over
    // one decision step, with a margin against round-off at depletion.
    if state.propellant_mass < EMPTY_TANK {
        return Ok(Vector3::zeros());
    }
    let budget = (1.0 - 1e-6)
        * state.propellant_mass
        * params.specific_impulse
        * scenario.config.environment.g0
        / (1000.0 * mass * scenario.config.step);
    let norm = command.norm();
    Ok(if norm > budget {
        command * (budget / norm)
    } else {
        command
    })
}

fn initial_state(scenario: &Scenario, rng: &mut ChaCha8Rng) -> Result<StateVector<f64>> {
    let nominal = scenario.nominal[0];
    let mut draw = |half: f64| {
        if half > 0.0 {
            rng.random_range(-half..=half)
        } else {
            0.0
        }
    };
    match scenario.config.initial_perturbation {
        InitialPerturbation::Uniform { position, velocity } => {
            let dp = Vector3::new(draw(position), draw(position), draw(position));
            let dv = Vector3::new(draw(velocity), draw(velocity), draw(velocity));
            Ok(StateVector::new(
                nominal.position + dp,
                nominal.velocity + dv,
                nominal.propellant_mass,
            ))
        }
        InitialPerturbation::CoOrbital { along_track } => {
            // Rotate the nominal state about its angular momentum.
            let angle = draw(along_track) / nominal.position.norm();
            let axis = nalgebra::Unit::new_normalize(nominal.position.cross(&nominal.velocity));
            let rot = nalgebra::Rotation3::from_axis_angle(&axis, angle);
            Ok(StateVector::new(
                rot * nominal.position,
                rot * nominal.velocity,
                nominal.propellant_mass,
            ))
        }
        InitialPerturbation::Offset { position, velocity } => Ok(StateVector::new(
            nominal.position + Vector3::from(position),
            nominal.velocity + Vector3::from(velocity),
            nominal.propellant_mass,
        )),
    }
}

/// Simulates one day under the deadband controller with one policy per
/// firing window. `stochastic` enables policy sampling and process noise.
pub fn simulate(
    scenario: &Scenario,
    policies: &[GaussianPolicy<f64>],
    seed: u64,
    stochastic: bool,
) -> Result<ExpertRun> {
    let starts = scenario.window_starts();
    if policies.len() != starts.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} policies for {} firing windows",
            policies.len(),
            starts.len()
        )));
    }
    let config = &scenario.config;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_PERTURBATION);
    let state0 = initial_state(scenario, &mut rng)?;
    let mut policy_rng = ChaCha8Rng::seed_from_u64(seed);
    policy_rng.set_stream(STREAM_POLICY);

    let substeps = scenario.substeps();
    let period = scenario.period_steps();
    let steps = scenario.steps();
    let mut firing = vec![false; steps];
    let mut fired_windows = Vec::new();
    let mut armed = false;
    let mut command = Vector3::zeros();
    let mut failure = None;
    let mut calls = 0usize;

    let settings = PropagationSettings {
        t0: 0.0,
        tf: config.duration * 3600.0,
        step: config.substep,
        velocity_noise: (stochastic && config.noise_sigma > 0.0).then_some(config.noise_sigma),
        seed,
    };
    let law = |_t: f64, state: &StateVector<f64>| {
        let call = calls;
        calls += 1;
        if call % substeps == 0 {
            let k = call / substeps;
            if k % period == 0 {
                let window = k / period;
                armed = window < starts.len() && window_trigger(scenario, k, state);
                if armed {
                    fired_windows.push(window);
                }
            }
            command = Vector3::zeros();
            if armed {
                let window = k / period;
                let noise =
                    stochastic.then(|| standard_normal::<f64, _>(&mut policy_rng, CONTROL_DIM));
                match deadband_controller(
                    scenario,
                    &policies[window],
                    k,
                    state,
                    true,
                    noise.as_ref(),
                ) {
                    Ok(u) => command = u,
                    Err(e) => failure = failure.take().or(Some(e)),
                }
                firing[k] = k % period < scenario.burn_steps();
            }
        }
        if command == Vector3::zeros() {
            Control::Coast
        } else {
            Control::Acceleration(command)
        }
    };
    let fine = propagate_rk4(
        &state0,
        &settings,
        law,
        &config.spacecraft,
        &config.environment,
        config.perturbations,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }

    let times: Vec<f64> = (0..=steps).map(|k| fine.times[k * substeps]).collect();
    let states: Vec<DVector<f64>> = (0..=steps)
        .map(|k| fine.states[k * substeps].clone())
        .collect();
    let controls: Vec<DVector<f64>> = (0..steps)
        .map(|k| fine.controls[k * substeps].clone())
        .collect();
    let deviations = states
        .iter()
        .enumerate()
        .map(|(k, s)| Ok(scenario.deviation(k, &StateVector::from_slice(s.as_slice())?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExpertRun {
        seed,
        absolute: Trajectory::new(times.clone(), states, controls.clone())?,
        deviation: Trajectory::new(times, deviations, controls)?,
        firing,
        fired_windows,
    })
}

/// Simulates `count` experts under the true cost, in parallel. Results
/// depend only on the scenario seed.
pub fn generate_experts(scenario: &Scenario, count: usize) -> Result<Vec<ExpertRun>> {
    let policies = window_policies(scenario, &scenario.config.true_cost)?;
    trajectory_seeds(scenario.config.seed, count)
        .into_par_iter()
        .enumerate()
        .map(|(index, seed)| {
            simulate(scenario, &policies, seed, true).map_err(|e| Error::Trajectory {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Fired windows grouped by their start time, each with its window model.
pub fn demo_groups(scenario: &Scenario, runs: &[ExpertRun]) -> Result<Vec<DemoGroup<f64>>> {
    let burn = scenario.burn_steps();
    let mut groups = Vec::new();
    for (window, start) in scenario.window_starts().into_iter().enumerate() {
        let trajectories = runs
            .iter()
            .filter(|run| run.fired_windows.contains(&window))
            .map(|run| run.deviation.slice(start, start + burn))
            .collect::<Result<Vec<_>>>()?;
        if !trajectories.is_empty() {
            groups.push(DemoGroup {
                model: scenario.window_model(start)?,
                trajectories,
            });
        }
    }
    Ok(groups)
}

/// Uninformed starting cost: each state and control weighted by the
/// inverse of its mean square in the demonstrations, propellant unweighted.
pub fn initial_cost_guess(groups: &[DemoGroup<f64>]) -> Result<QuadraticCost<f64>> {
    let mut state_sq = DVector::<f64>::zeros(STATE_DIM);
    let mut control_sq = DVector::<f64>::zeros(CONTROL_DIM);
    let (mut state_count, mut control_count) = (0.0, 0.0);
    for t in groups.iter().flat_map(|g| &g.trajectories) {
        for x in &t.states {
            state_sq += x.component_mul(x);
            state_count += 1.0;
        }
        for u in &t.controls {
            control_sq += u.component_mul(u);
            control_count += 1.0;
        }
    }
    if state_count == 0.0 || control_count == 0.0 {
        return Err(Error::Empty("no demonstrations".into()));
    }
    let weight = |sum: f64, count: f64| if sum > 0.0 { count / sum } else { 1.0 };
    let mut q = DMatrix::zeros(STATE_DIM, STATE_DIM);
    for i in 0..6 {
        q[(i, i)] = weight(state_sq[i], state_count);
    }
    let r = DMatrix::from_diagonal(&DVector::from_fn(CONTROL_DIM, |j, _| {
        weight(control_sq[j], control_count)
    }));
    Ok(QuadraticCost::diagonal(q, r))
}

/// Learns the cost from the fired windows of `runs`. Propellant-mass
/// features are held at zero: the mass deviation is not steerable by the
/// modeled controls.
pub fn learn(scenario: &Scenario, runs: &[ExpertRun]) -> Result<LearnResult<f64>> {
    learn_observed(scenario, runs, |_| None)
}

/// [`learn`] with an observer evaluated on every iterate.
pub fn learn_observed<F>(
    scenario: &Scenario,
    runs: &[ExpertRun],
    observer: F,
) -> Result<LearnResult<f64>>
where
    F: FnMut(&QuadraticCost<f64>) -> Option<f64>,
{
    let groups = demo_groups(scenario, runs)?;
    if groups.is_empty() {
        return Err(Error::Empty("no firing windows in the ensemble".into()));
    }
    let mut config = scenario.config.irl.clone();
    if !config.frozen.contains(&MASS_FEATURE) {
        config.frozen.push(MASS_FEATURE);
    }
    learn_cost_observed(&groups, &config, &initial_cost_guess(&groups)?, observer)
}
