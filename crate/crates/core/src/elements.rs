//! Classical orbital elements and their conversion to and from geocentric
//! equatorial Cartesian states.
//!
//! Angles are stored in degrees; all trigonometry runs in radians.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{degrees, lit, radians, wrap_degrees, Scalar};

/// Below this eccentricity the orbit is treated as circular and ω = 0.
pub const CIRCULAR_TOLERANCE: f64 = 1e-11;
/// Below this node magnitude (relative to h) the orbit is treated as
/// equatorial and Ω = 0.
pub const EQUATORIAL_TOLERANCE: f64 = 1e-11;

/// Orbital elements (h, e, i, Ω, ω, θ) with the optional semimajor axis.
///
/// When read from JSON, `h` may be omitted if `a` is given; [`coe_to_cart`]
/// then derives it from `a` and `e`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitalElements<T: Scalar> {
    /// Specific angular momentum, km²/s.
    #[serde(default)]
    pub h: T,
    pub e: T,
    /// Inclination, degrees in [0, 180].
    pub i: T,
    /// Right ascension of the ascending node, degrees in [0, 360).
    #[serde(alias = "Ω")]
    pub raan: T,
    /// Argument of perigee, degrees in [0, 360).
    #[serde(alias = "ω")]
    pub argp: T,
    /// True anomaly, degrees in [0, 360).
    #[serde(alias = "θ_true")]
    pub theta: T,
    /// Semimajor axis, km.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<T>,
}

impl<T: Scalar> OrbitalElements<T> {
    /// Elements from the semimajor axis instead of the angular momentum.
    pub fn from_semimajor_axis(
        a: T,
        e: T,
        i: T,
        raan: T,
        argp: T,
        theta: T,
        mu: T,
    ) -> Result<Self> {
        if !(a > T::zero()) || !(e >= T::zero() && e < T::one()) {
            return Err(Error::InvalidInput(format!(
                "need a > 0 and 0 <= e < 1, got a = {a}, e = {e}"
            )));
        }
        Ok(Self {
            h: (mu * a * (T::one() - e * e)).sqrt(),
            e,
            i,
            raan,
            argp,
            theta,
            a: Some(a),
        })
    }

    /// `h²/(μ(1−e²))`, or `None` for a parabolic orbit.
    pub fn semimajor_axis(&self, mu: T) -> Option<T> {
        let denom = mu * (T::one() - self.e * self.e);
        (denom != T::zero()).then(|| self.h * self.h / denom)
    }

    /// Fills `h` from `a` when it was left out and checks the two agree.
    pub fn resolved(&self, mu: T) -> Result<Self> {
        let mut out = *self;
        match (self.h > T::zero(), self.a) {
            (false, Some(a)) => {
                out = Self::from_semimajor_axis(
                    a, self.e, self.i, self.raan, self.argp, self.theta, mu,
                )?;
            }
            (false, None) => return Err(Error::InvalidInput("elements need h > 0 or a".into())),
            (true, Some(a)) => {
                let implied = self.semimajor_axis(mu).unwrap_or(T::zero());
                if (implied - a).abs() > lit::<T>(1e-9) * a.abs().max(T::one()) {
                    return Err(Error::InvalidInput(format!(
                        "a = {a} km is inconsistent with h and e (implies {implied})"
                    )));
                }
            }
            (true, None) => out.a = self.semimajor_axis(mu),
        }
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let values = [self.h, self.e, self.i, self.raan, self.argp, self.theta];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("elements must be finite".into()));
        }
        let full = lit::<T>(360.0);
        let checks = [
            (self.h > T::zero(), "h must be positive"),
            (self.e >= T::zero(), "e must be non-negative"),
            (
                self.i >= T::zero() && self.i <= lit(180.0),
                "i must lie in [0, 180]",
            ),
            (
                self.raan >= T::zero() && self.raan < full,
                "raan must lie in [0, 360)",
            ),
            (
                self.argp >= T::zero() && self.argp < full,
                "argp must lie in [0, 360)",
            ),
            (
                self.theta >= T::zero() && self.theta < full,
                "theta must lie in [0, 360)",
            ),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, reason)) => Err(Error::InvalidInput((*reason).into())),
            None => Ok(()),
        }
    }
}

/// Angle of `y, x` in radians, mapped to degrees in [0, 360).
fn heading<T: Scalar>(y: T, x: T) -> T {
    wrap_degrees(degrees(y.atan2(x)))
}

/// Cartesian position and velocity to orbital elements.
///
/// Each angle is the arccosine of the usual dot product with its quadrant
/// fixed by the sign of N_Y, e_Z or v_r; it is evaluated here as the
/// equivalent `atan2`, which keeps full precision near 0° and 180°.
pub fn cart_to_coe<T: Scalar>(r: &Vector3<T>, v: &Vector3<T>, mu: T) -> Result<OrbitalElements<T>> {
    let radius = r.norm();
    if !(radius > T::zero()) {
        return Err(Error::Singularity);
    }
    let h_vec = r.cross(v);
    let h = h_vec.norm();
    if !(h > T::zero()) || h <= lit::<T>(1e-15) * radius * v.norm() {
        return Err(Error::DegenerateOrbit);
    }
    let h_hat = h_vec / h;
    let inclination = degrees(h_hat.xy().norm().atan2(h_hat.z));

    let node = Vector3::z().cross(&h_vec);
    let equatorial = node.norm() < lit::<T>(EQUATORIAL_TOLERANCE) * h;
    let raan = if equatorial {
        T::zero()
    } else {
        heading(node.y, node.x)
    };

    let radial_velocity = r.dot(v) / radius;
    let e_vec = (r * (v.norm_squared() - mu / radius) - v * (radius * radial_velocity)) / mu;
    let e = e_vec.norm();
    let circular = e < lit(CIRCULAR_TOLERANCE);

    // In-plane angle from `from` to `to`, positive about the momentum vector.
    let in_plane =
        |from: &Vector3<T>, to: &Vector3<T>| heading(from.cross(to).dot(&h_hat), from.dot(to));
    let reference = if equatorial { Vector3::x() } else { node };

    let argp = if circular {
        T::zero()
    } else {
        in_plane(&reference, &e_vec)
    };
    let theta = if circular {
        in_plane(&reference, r)
    } else {
        in_plane(&e_vec, r)
    };

    let mut elements = OrbitalElements {
        h,
        e,
        i: inclination,
        raan,
        argp,
        theta,
        a: None,
    };
    elements.a = elements.semimajor_axis(mu);
    Ok(elements)
}

/// Rotation from the perifocal frame to the geocentric equatorial frame.
pub fn perifocal_rotation<T: Scalar>(raan: T, inclination: T, argp: T) -> Matrix3<T> {
    let rot_z = |angle: T| {
        let (s, c) = angle.sin_cos();
        Matrix3::new(
            c,
            -s,
            T::zero(),
            s,
            c,
            T::zero(),
            T::zero(),
            T::zero(),
            T::one(),
        )
    };
    let (s, c) = inclination.sin_cos();
    let rot_x = Matrix3::new(
        T::one(),
        T::zero(),
        T::zero(),
        T::zero(),
        c,
        -s,
        T::zero(),
        s,
        c,
    );
    rot_z(raan) * rot_x * rot_z(argp)
}

/// Orbital elements to Cartesian position (km) and velocity (km/s).
pub fn coe_to_cart<T: Scalar>(
    elements: &OrbitalElements<T>,
    mu: T,
) -> Result<(Vector3<T>, Vector3<T>)> {
    let el = elements.resolved(mu)?;
    if el.e >= T::one() {
        return Err(Error::InvalidInput(format!("open orbit: e = {}", el.e)));
    }
    let theta = radians(el.theta);
    let (s, c) = theta.sin_cos();
    let p = el.h * el.h / mu;
    let r_pf = Vector3::new(c, s, T::zero()) * (p / (T::one() + el.e * c));
    let v_pf = Vector3::new(-s, el.e + c, T::zero()) * (mu / el.h);
    let q = perifocal_rotation(radians(el.raan), radians(el.i), radians(el.argp));
    Ok((q * r_pf, q * v_pf))
}
