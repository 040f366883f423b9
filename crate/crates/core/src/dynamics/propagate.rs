use nalgebra::{DVector, SVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{
    perturbation_accel, total_deriv, Control, EnvironmentParams, Perturbations, SpacecraftParams,
    StateVector,
};
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::trajectory::Trajectory;

const MAX_STEPS: usize = 100_000_000;

/// Integration window and optional velocity noise for [`propagate_rk4`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationSettings<T: Scalar> {
    pub t0: T,
    pub tf: T,
    pub step: T,
    /// Standard deviation (km/s) of the zero-mean Gaussian kick added to
    /// each velocity component after every step.
    pub velocity_noise: Option<T>,
    pub seed: u64,
}

fn add<T: Scalar>(state: &StateVector<T>, deriv: &SVector<T, 7>, scale: T) -> StateVector<T> {
    StateVector {
        position: state.position + Vector3::new(deriv[0], deriv[1], deriv[2]) * scale,
        velocity: state.velocity + Vector3::new(deriv[3], deriv[4], deriv[5]) * scale,
        propellant_mass: state.propellant_mass + deriv[6] * scale,
    }
}

/// One classic fourth-order Runge-Kutta step with the control held constant.
pub fn rk4_step<T: Scalar>(
    t: T,
    state: &StateVector<T>,
    step: T,
    control: Control<T>,
    params: &SpacecraftParams<T>,
    env: &EnvironmentParams<T>,
    perturbations: Perturbations,
) -> Result<StateVector<T>> {
    let half = step * lit(0.5);
    let f = |tau: T, s: &StateVector<T>| total_deriv(tau, s, control, params, env, perturbations);
    let k1 = f(t, state)?;
    let k2 = f(t + half, &add(state, &k1, half))?;
    let k3 = f(t + half, &add(state, &k2, half))?;
    let k4 = f(t + step, &add(state, &k3, step))?;
    let incr = (k1 + (k2 + k3) * lit::<T>(2.0) + k4) * (step / lit::<T>(6.0));
    let next = add(state, &incr, T::one());
    next.validate().map_err(|e| Error::StateInvariant {
        time: (t + step).as_f64(),
        reason: e.to_string(),
    })?;
    Ok(next)
}

/// Draws a zero-mean Gaussian velocity kick with per-axis deviation `sigma`.
pub fn sample_velocity_noise<T: Scalar, R: Rng>(rng: &mut R, sigma: T) -> Vector3<T> {
    let mut draw = || sigma * lit::<T>(rng.sample::<f64, _>(StandardNormal));
    Vector3::new(draw(), draw(), draw())
}

/// Propagates `state0` over `[t0, tf]` with fixed steps.
///
/// `control_law` is queried at the start of each step and its output held
/// for the step. The recorded control is the applied acceleration in km/s².
pub fn propagate_rk4<T, F>(
    state0: &StateVector<T>,
    settings: &PropagationSettings<T>,
    mut control_law: F,
    params: &SpacecraftParams<T>,
    env: &EnvironmentParams<T>,
    perturbations: Perturbations,
) -> Result<Trajectory<T>>
where
    T: Scalar,
    F: FnMut(T, &StateVector<T>) -> Control<T>,
{
    if !(settings.step > T::zero()) || !(settings.tf > settings.t0) {
        return Err(Error::InvalidInput("need step > 0 and tf > t0".into()));
    }
    state0.validate()?;
    let span = (settings.tf - settings.t0) / settings.step;
    let steps_f = span.as_f64().ceil();
    if !steps_f.is_finite() || steps_f > MAX_STEPS as f64 {
        return Err(Error::StepOverflow {
            steps: steps_f,
            limit: MAX_STEPS,
        });
    }
    let steps = steps_f as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);

    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps);
    let mut t = settings.t0;
    let mut state = *state0;
    times.push(t);
    states.push(DVector::from_column_slice(state.to_vector().as_slice()));
    for _ in 0..steps {
        let h = settings.step.min(settings.tf - t);
        let control = control_law(t, &state);
        let applied = perturbation_accel(t, &state, control, params, env, Perturbations::none())?;
        controls.push(DVector::from_column_slice(applied.control.as_slice()));
        state = rk4_step(t, &state, h, control, params, env, perturbations)?;
        if let Some(sigma) = settings.velocity_noise {
            state.velocity += sample_velocity_noise(&mut rng, sigma);
        }
        t += h;
        times.push(t);
        states.push(DVector::from_column_slice(state.to_vector().as_slice()));
    }
    Trajectory::new(times, states, controls)
}
