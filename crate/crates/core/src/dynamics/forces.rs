use nalgebra::Vector3;

use super::{
    atmosphere::atmosphere_density, ephemeris::solar_ephemeris, ephemeris::sun_unit_vector,
    EnvironmentParams, SpacecraftParams, StateVector,
};
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

fn checked_mass<T: Scalar>(state: &StateVector<T>, params: &SpacecraftParams<T>) -> Result<T> {
    let mass = state.total_mass(params);
    if mass > T::zero() {
        Ok(mass)
    } else {
        Err(Error::InvalidMass(mass.as_f64()))
    }
}

/// Acceleration (km/s²) from `thrust` newtons along the velocity direction.
pub fn thrust_accel<T: Scalar>(
    state: &StateVector<T>,
    thrust: T,
    params: &SpacecraftParams<T>,
) -> Result<Vector3<T>> {
    let mass = checked_mass(state, params)?;
    if thrust == T::zero() {
        return Ok(Vector3::zeros());
    }
    let speed = state.velocity.norm();
    if speed == T::zero() {
        return Err(Error::DegenerateDirection);
    }
    Ok(state.velocity * (thrust / (mass * speed * lit(1000.0))))
}

/// Propellant consumption in kg/s for a thrust of `thrust` newtons.
pub fn mass_flow_rate<T: Scalar>(thrust: T, specific_impulse: T, g0: T) -> Result<T> {
    if thrust < T::zero() {
        return Err(Error::InvalidInput(format!("negative thrust {thrust}")));
    }
    Ok(thrust / (specific_impulse * g0))
}

/// Limits a commanded acceleration (km/s²) to what the thruster can deliver.
pub fn clamp_acceleration<T: Scalar>(
    accel: Vector3<T>,
    total_mass: T,
    params: &SpacecraftParams<T>,
) -> Result<Vector3<T>> {
    if !(total_mass > T::zero()) {
        return Err(Error::InvalidMass(total_mass.as_f64()));
    }
    let limit = params.max_thrust / (total_mass * lit(1000.0));
    let norm = accel.norm();
    if norm > limit {
        Ok(accel * (limit / norm))
    } else {
        Ok(accel)
    }
}

/// Aerodynamic drag in km/s² against the co-rotating atmosphere.
pub fn drag_accel<T: Scalar>(
    state: &StateVector<T>,
    params: &SpacecraftParams<T>,
    env: &EnvironmentParams<T>,
) -> Result<Vector3<T>> {
    let altitude = state.position.norm() - env.earth_radius;
    let rho = atmosphere_density(altitude)?;
    if rho == T::zero() {
        return Ok(Vector3::zeros());
    }
    let mass = checked_mass(state, params)?;
    let v_rel = state.velocity - env.earth_rotation.cross(&state.position);
    let speed = v_rel.norm();
    // rho [kg/m^3] * (1000 |v|) [m/s] * (1000 v) [m/s] * A/m -> m/s^2, then /1000.
    let factor =
        lit::<T>(-0.5) * rho * speed * lit(1000.0) * params.drag_coefficient * params.drag_area
            / mass;
    Ok(v_rel * factor)
}

/// Oblateness disturbing potential (km²/s²) whose negative gradient is [`j2_accel`].
pub fn j2_potential<T: Scalar>(position: &Vector3<T>, env: &EnvironmentParams<T>) -> Result<T> {
    let r = position.norm();
    if r == T::zero() {
        return Err(Error::Singularity);
    }
    let cos_phi = position.z / r;
    let ratio = env.earth_radius / r;
    Ok(env.j2 * env.mu / (lit::<T>(2.0) * r)
        * ratio
        * ratio
        * (lit::<T>(3.0) * cos_phi * cos_phi - T::one()))
}

/// Acceleration from the J2 zonal harmonic, km/s².
pub fn j2_accel<T: Scalar>(
    position: &Vector3<T>,
    env: &EnvironmentParams<T>,
) -> Result<Vector3<T>> {
    let r = position.norm();
    if r == T::zero() {
        return Err(Error::Singularity);
    }
    let r2 = r * r;
    let coeff = lit::<T>(1.5) * env.j2 * env.mu * env.earth_radius * env.earth_radius / (r2 * r2);
    let zz = lit::<T>(5.0) * position.z * position.z / r2;
    Ok(Vector3::new(
        position.x / r * (zz - T::one()),
        position.y / r * (zz - T::one()),
        position.z / r * (zz - lit(3.0)),
    ) * coeff)
}

/// Cylindrical umbra test: 0 behind the Earth, 1 in sunlight.
pub fn shadow_nu<T: Scalar>(
    position: &Vector3<T>,
    sun_unit: &Vector3<T>,
    env: &EnvironmentParams<T>,
) -> T {
    let along = position.dot(sun_unit);
    if along >= T::zero() {
        return T::one();
    }
    let off_axis = (position - sun_unit * along).norm();
    if off_axis < env.earth_radius {
        T::zero()
    } else {
        T::one()
    }
}

/// Solar radiation pressure (cannonball model), km/s².
pub fn srp_accel<T: Scalar>(
    state: &StateVector<T>,
    julian_day: T,
    params: &SpacecraftParams<T>,
    env: &EnvironmentParams<T>,
) -> Result<Vector3<T>> {
    let mass = checked_mass(state, params)?;
    let sun = sun_unit_vector(&solar_ephemeris(julian_day));
    let nu = shadow_nu(&state.position, &sun, env);
    if nu == T::zero() {
        return Ok(Vector3::zeros());
    }
    let pressure = env.solar_intensity / env.c_light;
    let magnitude = nu * pressure * params.reflectivity * params.srp_area / (mass * lit(1000.0));
    Ok(-sun * magnitude)
}
