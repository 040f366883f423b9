//! Nonlinear orbital dynamics of a thrusting space object.
//!
//! Internal units are km, km/s, kg and s. Spacecraft parameters given in
//! N and m² are converted at the point of use.

mod atmosphere;
mod ephemeris;
mod forces;
mod propagate;

use nalgebra::{SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

pub use atmosphere::{atmosphere_density, segment_scale_height, SHELL_TOP_KM, USSA76_TABLE};
pub use ephemeris::{julian_day, solar_ephemeris, sun_unit_vector, SolarEphemeris, J2000_JD};
pub use forces::{
    clamp_acceleration, drag_accel, j2_accel, j2_potential, mass_flow_rate, shadow_nu, srp_accel,
    thrust_accel,
};
pub use propagate::{propagate_rk4, rk4_step, sample_velocity_noise, PropagationSettings};

/// Position (km), velocity (km/s) and remaining propellant (kg).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateVector<T: Scalar> {
    pub position: Vector3<T>,
    pub velocity: Vector3<T>,
    pub propellant_mass: T,
}

impl<T: Scalar> StateVector<T> {
    pub fn new(position: Vector3<T>, velocity: Vector3<T>, propellant_mass: T) -> Self {
        Self {
            position,
            velocity,
            propellant_mass,
        }
    }

    pub fn to_vector(&self) -> SVector<T, 7> {
        let p = &self.position;
        let v = &self.velocity;
        SVector::<T, 7>::from_column_slice(&[p.x, p.y, p.z, v.x, v.y, v.z, self.propellant_mass])
    }

    pub fn from_slice(values: &[T]) -> Result<Self> {
        if values.len() != 7 {
            return Err(Error::DimensionMismatch(format!(
                "state vector needs 7 entries, got {}",
                values.len()
            )));
        }
        Ok(Self {
            position: Vector3::new(values[0], values[1], values[2]),
            velocity: Vector3::new(values[3], values[4], values[5]),
            propellant_mass: values[6],
        })
    }

    /// Total mass of the vehicle.
    pub fn total_mass(&self, params: &SpacecraftParams<T>) -> T {
        self.propellant_mass + params.payload_mass
    }

    pub fn validate(&self) -> Result<()> {
        if self.position.norm() <= T::zero() {
            return Err(Error::Singularity);
        }
        if self.propellant_mass < T::zero() {
            return Err(Error::InvalidInput(format!(
                "negative propellant mass {}",
                self.propellant_mass
            )));
        }
        Ok(())
    }
}

/// Physical properties of the space object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpacecraftParams<T: Scalar> {
    /// Dry mass, kg.
    pub payload_mass: T,
    /// Drag reference area, m².
    pub drag_area: T,
    /// Cannonball cross-section facing the Sun, m².
    pub srp_area: T,
    #[serde(rename = "C_D")]
    pub drag_coefficient: T,
    #[serde(rename = "C_R")]
    pub reflectivity: T,
    /// Specific impulse, s.
    #[serde(rename = "I_sp")]
    pub specific_impulse: T,
    /// N.
    pub max_thrust: T,
}

impl<T: Scalar> SpacecraftParams<T> {
    /// 100 kg cannonball with a 5 N chemical thruster (80 kg dry, the
    /// remainder carried as propellant by the scenarios).
    #[allow(clippy::approx_constant)] // areas in m², not pi
    pub fn reference() -> Self {
        Self {
            payload_mass: lit(80.0),
            drag_area: lit(3.14),
            srp_area: lit(3.14),
            drag_coefficient: lit(2.2),
            reflectivity: lit(1.0),
            specific_impulse: lit(300.0),
            max_thrust: lit(5.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("payload_mass", self.payload_mass),
            ("drag_area", self.drag_area),
            ("srp_area", self.srp_area),
            ("C_D", self.drag_coefficient),
            ("C_R", self.reflectivity),
            ("I_sp", self.specific_impulse),
            ("max_thrust", self.max_thrust),
        ];
        for (name, value) in positive {
            if !(value > T::zero()) {
                return Err(Error::config(name, "must be strictly positive"));
            }
        }
        if self.reflectivity < T::one() || self.reflectivity > lit(2.0) {
            return Err(Error::config("C_R", "must lie in [1, 2]"));
        }
        Ok(())
    }
}

/// Earth and Sun constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentParams<T: Scalar> {
    /// km³/s².
    #[serde(rename = "mu_E")]
    pub mu: T,
    /// Equatorial radius, km.
    #[serde(rename = "R_earth")]
    pub earth_radius: T,
    #[serde(rename = "J2")]
    pub j2: T,
    /// Earth rotation vector, rad/s.
    #[serde(rename = "omega_E")]
    pub earth_rotation: Vector3<T>,
    /// Solar flux at 1 AU, W/m².
    #[serde(rename = "S0_intensity")]
    pub solar_intensity: T,
    /// m/s.
    pub c_light: T,
    /// m/s².
    pub g0: T,
    #[serde(rename = "epoch_julian_day")]
    pub epoch_jd: T,
}

impl<T: Scalar> EnvironmentParams<T> {
    /// Earth constants with the epoch 2020-07-01 00:00 UT1.
    pub fn earth() -> Self {
        Self {
            mu: lit(398_600.4418),
            earth_radius: lit(6378.137),
            j2: lit(0.001_082_63),
            earth_rotation: Vector3::new(T::zero(), T::zero(), lit(7.292_115_9e-5)),
            solar_intensity: lit(1367.0),
            c_light: lit(299_792_458.0),
            g0: lit(9.80665),
            epoch_jd: lit(julian_day(2020, 7, 1, 0, 0, 0.0)),
        }
    }

    /// Julian day `t` seconds after the epoch.
    pub fn julian_day_at(&self, t: T) -> T {
        self.epoch_jd + t / lit(86_400.0)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("R_earth", self.earth_radius),
            ("S0_intensity", self.solar_intensity),
            ("c_light", self.c_light),
            ("g0", self.g0),
        ] {
            if !(value > T::zero()) {
                return Err(Error::config(name, "must be strictly positive"));
            }
        }
        if self.mu < T::zero() {
            return Err(Error::config("mu_E", "must be nonnegative"));
        }
        Ok(())
    }
}

/// Which disturbance models are active. Two-body gravity is always on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Perturbations {
    pub drag: bool,
    pub j2: bool,
    pub srp: bool,
}

impl Default for Perturbations {
    fn default() -> Self {
        Self::all()
    }
}

impl Perturbations {
    pub fn all() -> Self {
        Self {
            drag: true,
            j2: true,
            srp: true,
        }
    }

    pub fn none() -> Self {
        Self {
            drag: false,
            j2: false,
            srp: false,
        }
    }
}

/// Control input held over an integration step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Control<T: Scalar> {
    Coast,
    /// Thrust magnitude in N along the velocity direction.
    Thrust(T),
    /// Commanded acceleration, km/s², clamped to the thruster limit.
    Acceleration(Vector3<T>),
}

/// Breakdown of the disturbing acceleration (km/s²).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationAccel<T: Scalar> {
    pub control: Vector3<T>,
    pub drag: Vector3<T>,
    pub j2: Vector3<T>,
    pub srp: Vector3<T>,
    pub total: Vector3<T>,
    /// Propellant consumption rate, kg/s (nonnegative).
    pub mass_flow: T,
}

/// Evaluates each disturbance at time `t` seconds past the epoch.
pub fn perturbation_accel<T: Scalar>(
    t: T,
    state: &StateVector<T>,
    control: Control<T>,
    params: &SpacecraftParams<T>,
    env: &EnvironmentParams<T>,
    perturbations: Perturbations,
) -> Result<PerturbationAccel<T>> {
    let zero = Vector3::zeros();
    let has_propellant = state.propellant_mass > T::zero();
    let (control_accel, mass_flow) = match control {
        _ if !has_propellant => (zero, T::zero()),
        Control::Coast => (zero, T::zero()),
        Control::Thrust(thrust) => (
            thrust_accel(state, thrust, params)?,
            mass_flow_rate(thrust, params.specific_impulse, env.g0)?,
        ),
        Control::Acceleration(a) => {
            let mass = state.total_mass(params);
            let a = clamp_acceleration(a, mass, params)?;
            let thrust = a.norm() * lit(1000.0) * mass;
            (a, mass_flow_rate(thrust, params.specific_impulse, env.g0)?)
        }
    };
    let drag = if perturbations.drag {
        drag_accel(state, params, env)?
    } else {
        zero
    };
    let j2 = if perturbations.j2 {
        j2_accel(&state.position, env)?
    } else {
        zero
    };
    let srp = if perturbations.srp {
        srp_accel(state, env.julian_day_at(t), params, env)?
    } else {
        zero
    };
    Ok(PerturbationAccel {
        control: control_accel,
        drag,
        j2,
        srp,
        total: control_accel + drag + j2 + srp,
        mass_flow,
    })
}

/// Time derivative of the 7-state.
pub fn total_deriv<T: Scalar>(
    t: T,
    state: &StateVector<T>,
    control: Control<T>,
    params: &SpacecraftParams<T>,
    env: &EnvironmentParams<T>,
    perturbations: Perturbations,
) -> Result<SVector<T, 7>> {
    let r = state.position.norm();
    if r <= T::zero() {
        return Err(Error::Singularity);
    }
    let accel = perturbation_accel(t, state, control, params, env, perturbations)?;
    let gravity = state.position * (-env.mu / (r * r * r));
    let a = gravity + accel.total;
    let v = state.velocity;
    Ok(SVector::<T, 7>::from_column_slice(&[
        v.x,
        v.y,
        v.z,
        a.x,
        a.y,
        a.z,
        -accel.mass_flow,
    ]))
}
