//! Low-precision solar ephemeris and calendar helpers.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::scalar::{lit, radians, wrap_degrees, Scalar};

/// Julian day of the J2000 epoch (2000-01-01 12:00 TT).
pub const J2000_JD: f64 = 2_451_545.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolarEphemeris<T: Scalar> {
    /// Apparent ecliptic longitude of the Sun, degrees in `[0, 360)`.
    pub lambda: T,
    /// Obliquity of the ecliptic, degrees.
    pub epsilon: T,
    pub mean_longitude: T,
    pub mean_anomaly: T,
}

/// Sun longitude and obliquity for the given Julian day.
pub fn solar_ephemeris<T: Scalar>(julian_day: T) -> SolarEphemeris<T> {
    let n = julian_day - lit(J2000_JD);
    let epsilon = lit::<T>(23.439) - lit::<T>(3.56e-7) * n;
    let mean_longitude = wrap_degrees(lit::<T>(280.459) + lit::<T>(0.985_647_36) * n);
    let mean_anomaly = wrap_degrees(lit::<T>(357.529) + lit::<T>(0.985_600_23) * n);
    let m = radians(mean_anomaly);
    let lambda =
        wrap_degrees(mean_longitude + lit::<T>(1.915) * m.sin() + lit::<T>(0.0200) * (m + m).sin());
    SolarEphemeris {
        lambda,
        epsilon,
        mean_longitude,
        mean_anomaly,
    }
}

/// Earth-to-Sun unit vector in the geocentric equatorial frame.
pub fn sun_unit_vector<T: Scalar>(ephemeris: &SolarEphemeris<T>) -> Vector3<T> {
    let lambda = radians(ephemeris.lambda);
    let epsilon = radians(ephemeris.epsilon);
    Vector3::new(
        lambda.cos(),
        epsilon.cos() * lambda.sin(),
        epsilon.sin() * lambda.sin(),
    )
}

/// Julian day number of a Gregorian calendar instant (UT).
pub fn julian_day(year: i32, month: u32, day: u32, hour: u32, minute: u32, second: f64) -> f64 {
    let (y, m) = if month <= 2 {
        (year - 1, month + 12)
    } else {
        (year, month)
    };
    let a = (y as f64 / 100.0).floor();
    let b = 2.0 - a + (a / 4.0).floor();
    let day_fraction = (hour as f64 + minute as f64 / 60.0 + second / 3600.0) / 24.0;
    (365.25 * (y as f64 + 4716.0)).floor()
        + (30.6001 * (m as f64 + 1.0)).floor()
        + day as f64
        + day_fraction
        + b
        - 1524.5
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_at_j2000() {
        let eph = solar_ephemeris(J2000_JD);
        assert!((eph.epsilon - 23.439).abs() < 1e-12);
        assert!((eph.mean_longitude - 280.459).abs() < 1e-12);
        assert!((eph.mean_anomaly - 357.529).abs() < 1e-12);
        let m = 357.529_f64.to_radians();
        let expected = 280.459 + 1.915 * m.sin() + 0.020 * (2.0 * m).sin();
        assert!((eph.lambda - expected).abs() < 1e-12);
    }

    #[test]
    fn mean_longitude_wraps() {
        // raw L = 400.1 deg
        let n = (400.1 - 280.459) / 0.985_647_36;
        let eph = solar_ephemeris(J2000_JD + n);
        assert!((eph.mean_longitude - 40.1).abs() < 1e-9);
    }

    #[test]
    fn calendar_conversion() {
        assert_eq!(julian_day(2000, 1, 1, 12, 0, 0.0), J2000_JD);
        assert_eq!(julian_day(2020, 7, 1, 0, 0, 0.0), 2_459_031.5);
        assert_eq!(julian_day(1999, 1, 1, 0, 0, 0.0), 2_451_179.5);
    }

    #[test]
    fn sun_vector_is_unit_and_in_ecliptic() {
        let eph = solar_ephemeris(2_459_031.5_f64);
        let u = sun_unit_vector(&eph);
        assert!((u.norm() - 1.0).abs() < 1e-14);
        // Early July: Sun longitude near 100 deg, north of the equator.
        assert!(eph.lambda > 95.0 && eph.lambda < 105.0);
        assert!(u.z > 0.35);
    }
}
