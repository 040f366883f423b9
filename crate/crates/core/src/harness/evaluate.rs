use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::experts::{simulate, trajectory_seeds, window_policies, ExpertRun};
use super::{Scenario, SCHEMA_VERSION};
use crate::dynamics::{EnvironmentParams, SpacecraftParams};
use crate::elements::{cart_to_coe, OrbitalElements};
use crate::error::{Error, Result};
use crate::linmodel::STATE_DIM;
use crate::lqg::QuadraticCost;
use crate::trajectory::Trajectory;

/// Running cost sampled on a radial position × radial velocity grid, all
/// other deviations and the control zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSurface {
    /// Radial position deviations, km.
    pub position: Vec<f64>,
    /// Radial velocity deviations, km/s.
    pub velocity: Vec<f64>,
    /// `values[i][j]` is the cost at `position[i]`, `velocity[j]`.
    pub values: Vec<Vec<f64>>,
}

/// Root-mean-square difference of each orbital element between two runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ElementRms {
    pub h: f64,
    pub e: f64,
    pub i: f64,
    pub raan: f64,
    pub argp: f64,
    pub theta: f64,
}

/// Windows in which each policy fired for one replayed seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThrustTimeline {
    pub seed: u64,
    pub true_windows: Vec<usize>,
    pub learned_windows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    /// Largest absolute difference of the normalized cost surfaces.
    pub surface_max_error: f64,
    pub true_surface: CostSurface,
    pub learned_surface: CostSurface,
    /// Element differences averaged over the replayed runs.
    pub element_rms: ElementRms,
    pub thrust_timelines: Vec<ThrustTimeline>,
    /// Mean propellant burned per replayed run, kg.
    pub propellant_true: f64,
    pub propellant_learned: f64,
}

/// Samples `cost` on the grid spanned by `±position_extent` and
/// `±velocity_extent` along the nominal radial direction.
pub fn cost_surface(
    scenario: &Scenario,
    cost: &QuadraticCost<f64>,
    position_extent: f64,
    velocity_extent: f64,
    resolution: usize,
) -> Result<CostSurface> {
    if resolution < 2 || !(position_extent > 0.0) || !(velocity_extent > 0.0) {
        return Err(Error::InvalidInput(
            "surface needs resolution >= 2 and positive extents".into(),
        ));
    }
    if cost.state_dim() != STATE_DIM {
        return Err(Error::DimensionMismatch(format!(
            "cost has {} states",
            cost.state_dim()
        )));
    }
    let axis = |extent: f64| -> Vec<f64> {
        (0..resolution)
            .map(|i| -extent + 2.0 * extent * i as f64 / (resolution - 1) as f64)
            .collect()
    };
    let position = axis(position_extent);
    let velocity = axis(velocity_extent);
    let slice = RadialSlice::new(cost, &scenario.radial_direction());
    let values = position
        .iter()
        .map(|&p| velocity.iter().map(|&v| slice.at(p, v)).collect())
        .collect();
    Ok(CostSurface {
        position,
        velocity,
        values,
    })
}

/// The running cost restricted to `x = (p r̂, v r̂, 0)`, `u = 0`:
/// `½(a p² + 2b pv + d v²) + f p + g v + ½c`.
struct RadialSlice {
    coefficients: [f64; 6],
}

impl RadialSlice {
    fn new(cost: &QuadraticCost<f64>, radial: &Vector3<f64>) -> Self {
        let q = &cost.state_weight;
        let form = |i: usize, j: usize| radial.dot(&(q.fixed_view::<3, 3>(i, j) * radial));
        let linear = |i: usize| radial.dot(&cost.state_linear.fixed_rows::<3>(i));
        Self {
            coefficients: [
                form(0, 0),
                form(0, 3),
                form(3, 3),
                linear(0),
                linear(3),
                cost.constant,
            ],
        }
    }

    fn at(&self, p: f64, v: f64) -> f64 {
        let [a, b, d, f, g, c] = self.coefficients;
        0.5 * (a * p * p + 2.0 * b * p * v + d * v * v) + f * p + g * v + 0.5 * c
    }
}

/// Maps a surface onto [0, 1] by subtracting its minimum and dividing by
/// its range.
pub fn normalize_surface(surface: &CostSurface) -> Result<Vec<Vec<f64>>> {
    let flat = surface.values.iter().flatten();
    let min = flat.clone().copied().fold(f64::INFINITY, f64::min);
    let max = flat.copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if !(range > 0.0) || !range.is_finite() {
        return Err(Error::DegenerateSurface);
    }
    Ok(surface
        .values
        .iter()
        .map(|row| row.iter().map(|v| (v - min) / range).collect())
        .collect())
}

/// Largest difference between the normalized surfaces.
pub fn max_surface_error(a: &CostSurface, b: &CostSurface) -> Result<f64> {
    if a.position != b.position || a.velocity != b.velocity {
        return Err(Error::InvalidInput(
            "surfaces are on different grids".into(),
        ));
    }
    let (na, nb) = (normalize_surface(a)?, normalize_surface(b)?);
    Ok(na
        .iter()
        .flatten()
        .zip(nb.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}

/// Orbital elements at every sample of an absolute trajectory.
pub fn element_history(trajectory: &Trajectory<f64>, mu: f64) -> Result<Vec<OrbitalElements<f64>>> {
    trajectory
        .states
        .iter()
        .map(|s| {
            let r = Vector3::new(s[0], s[1], s[2]);
            let v = Vector3::new(s[3], s[4], s[5]);
            cart_to_coe(&r, &v, mu)
        })
        .collect()
}

/// Propellant implied by the logged accelerations: `Σ |a_k| m̄_k Δt /
/// (I_sp g0)`, with `m̄_k` the mean total mass over step `k`.
pub fn propellant_from_thrust_log(
    trajectory: &Trajectory<f64>,
    params: &SpacecraftParams<f64>,
    env: &EnvironmentParams<f64>,
) -> f64 {
    (0..trajectory.horizon())
        .map(|k| {
            let dt = trajectory.times[k + 1] - trajectory.times[k];
            let mass =
                params.payload_mass + 0.5 * (trajectory.states[k][6] + trajectory.states[k + 1][6]);
            // km/s² to m/s² for a thrust in N.
            trajectory.controls[k].norm() * 1000.0 * mass * dt / (params.specific_impulse * env.g0)
        })
        .sum()
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

fn element_rms(a: &[OrbitalElements<f64>], b: &[OrbitalElements<f64>]) -> ElementRms {
    let rms = |f: &dyn Fn(&OrbitalElements<f64>, &OrbitalElements<f64>) -> f64| {
        (a.iter().zip(b).map(|(x, y)| f(x, y).powi(2)).sum::<f64>() / a.len().max(1) as f64).sqrt()
    };
    ElementRms {
        h: rms(&|x, y| x.h - y.h),
        e: rms(&|x, y| x.e - y.e),
        i: rms(&|x, y| x.i - y.i),
        raan: rms(&|x, y| angle_gap(x.raan, y.raan)),
        argp: rms(&|x, y| angle_gap(x.argp, y.argp)),
        theta: rms(&|x, y| angle_gap(x.theta, y.theta)),
    }
}

/// Grid half-widths: configured values, else the largest radial deviation
/// inside the fired windows, else the deadband box and its orbital-rate
/// velocity.
pub fn surface_extents(scenario: &Scenario, runs: &[ExpertRun]) -> (f64, f64) {
    let radial = scenario.radial_direction();
    let burn = scenario.burn_steps();
    let starts = scenario.window_starts();
    let (mut pos, mut vel) = (0.0_f64, 0.0_f64);
    for run in runs {
        for &w in &run.fired_windows {
            for x in &run.deviation.states[starts[w]..=starts[w] + burn] {
                pos = pos.max(radial.dot(&x.fixed_rows::<3>(0)).abs());
                vel = vel.max(radial.dot(&x.fixed_rows::<3>(3)).abs());
            }
        }
    }
    let box_km = scenario.config.deadband_box;
    let rate =
        (scenario.config.environment.mu / scenario.nominal[0].position.norm().powi(3)).sqrt();
    if pos == 0.0 || vel == 0.0 {
        (pos, vel) = (box_km, box_km * rate);
    }
    (
        scenario.config.surface.position_extent.unwrap_or(pos),
        scenario.config.surface.velocity_extent.unwrap_or(vel),
    )
}

/// Compares the learned cost with the true one: normalized cost surfaces,
/// and replays of the first `evaluation_runs` expert seeds under both
/// policies.
pub fn evaluate(
    scenario: &Scenario,
    true_cost: &QuadraticCost<f64>,
    learned_cost: &QuadraticCost<f64>,
    runs: &[ExpertRun],
) -> Result<EvaluationReport> {
    true_cost.validate()?;
    learned_cost.validate()?;
    let (pos, vel) = surface_extents(scenario, runs);
    let resolution = scenario.config.surface.resolution;
    let true_surface = cost_surface(scenario, true_cost, pos, vel, resolution)?;
    let learned_surface = cost_surface(scenario, learned_cost, pos, vel, resolution)?;
    let surface_max_error = max_surface_error(&true_surface, &learned_surface)?;

    let true_policies = window_policies(scenario, true_cost)?;
    let learned_policies = window_policies(scenario, learned_cost)?;
    let mu = scenario.config.environment.mu;
    let seeds = trajectory_seeds(scenario.config.seed, scenario.config.evaluation_runs);
    let mut timelines = Vec::new();
    let mut totals = [0.0; 6];
    let (mut propellant_true, mut propellant_learned) = (0.0, 0.0);
    for &seed in &seeds {
        let a = simulate(scenario, &true_policies, seed, true)?;
        let b = simulate(scenario, &learned_policies, seed, true)?;
        let rms = element_rms(
            &element_history(&a.absolute, mu)?,
            &element_history(&b.absolute, mu)?,
        );
        for (t, v) in totals
            .iter_mut()
            .zip([rms.h, rms.e, rms.i, rms.raan, rms.argp, rms.theta])
        {
            *t += v;
        }
        propellant_true += a.propellant_used();
        propellant_learned += b.propellant_used();
        timelines.push(ThrustTimeline {
            seed,
            true_windows: a.fired_windows,
            learned_windows: b.fired_windows,
        });
    }
    let count = seeds.len().max(1) as f64;
    let [h, e, i, raan, argp, theta] = totals.map(|t| t / count);
    Ok(EvaluationReport {
        schema_version: SCHEMA_VERSION,
        surface_max_error,
        true_surface,
        learned_surface,
        element_rms: ElementRms {
            h,
            e,
            i,
            raan,
            argp,
            theta,
        },
        thrust_timelines: timelines,
        propellant_true: propellant_true / count,
        propellant_learned: propellant_learned / count,
    })
}
