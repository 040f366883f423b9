//! US Standard Atmosphere 1976 density model.
//!
//! Densities are tabulated at 28 base altitudes between sea level and
//! 1000 km (USSA76 values as tabulated in Curtis, *Orbital Mechanics for
//! Engineering Students*). Between anchors the density decays exponentially
//! with the scale height implied by the two neighbouring anchors, so every
//! anchor is reproduced exactly and the profile is monotone. Above the
//! 1000 km shell the density is zero.

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// Top of the modelled atmosphere, km.
pub const SHELL_TOP_KM: f64 = 1000.0;

/// Base altitudes (km) and densities (kg/m³).
pub const USSA76_TABLE: [(f64, f64); 28] = [
    (0.0, 1.225),
    (25.0, 4.008e-2),
    (30.0, 1.841e-2),
    (40.0, 3.996e-3),
    (50.0, 1.027e-3),
    (60.0, 3.097e-4),
    (70.0, 8.283e-5),
    (80.0, 1.846e-5),
    (90.0, 3.416e-6),
    (100.0, 5.606e-7),
    (110.0, 9.708e-8),
    (120.0, 2.222e-8),
    (130.0, 8.152e-9),
    (140.0, 3.831e-9),
    (150.0, 2.076e-9),
    (180.0, 5.194e-10),
    (200.0, 2.541e-10),
    (250.0, 6.073e-11),
    (300.0, 1.916e-11),
    (350.0, 7.014e-12),
    (400.0, 2.803e-12),
    (450.0, 1.184e-12),
    (500.0, 5.215e-13),
    (600.0, 1.137e-13),
    (700.0, 3.070e-14),
    (800.0, 1.136e-14),
    (900.0, 5.759e-15),
    (1000.0, 3.561e-15),
];

/// Scale height (km) of the segment starting at anchor `index`.
pub fn segment_scale_height(index: usize) -> f64 {
    let (h0, rho0) = USSA76_TABLE[index];
    let (h1, rho1) = USSA76_TABLE[index + 1];
    (h1 - h0) / (rho0 / rho1).ln()
}

/// Atmospheric density in kg/m³ at `altitude` km above the reference sphere.
pub fn atmosphere_density<T: Scalar>(altitude: T) -> Result<T> {
    if altitude < T::zero() {
        return Err(Error::BelowSurface(altitude.as_f64()));
    }
    if altitude > lit(SHELL_TOP_KM) {
        return Ok(T::zero());
    }
    let last = USSA76_TABLE.len() - 1;
    let index = USSA76_TABLE
        .iter()
        .rposition(|&(h, _)| lit::<T>(h) <= altitude)
        .unwrap_or(0)
        .min(last - 1);
    let (base, rho) = USSA76_TABLE[index];
    let scale = lit::<T>(segment_scale_height(index));
    Ok(lit::<T>(rho) * (-(altitude - lit(base)) / scale).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sea_level_anchor() {
        assert!((atmosphere_density(0.0_f64).unwrap() - 1.225).abs() < 1e-15);
    }

    #[test]
    fn zero_above_shell() {
        assert_eq!(atmosphere_density(1500.0_f64).unwrap(), 0.0);
        assert_eq!(atmosphere_density(42166.7_f64 - 6378.137).unwrap(), 0.0);
    }

    #[test]
    fn negative_altitude_rejected() {
        assert!(matches!(
            atmosphere_density(-1.0_f64),
            Err(Error::BelowSurface(_))
        ));
    }

    #[test]
    fn every_anchor_reproduced() {
        for &(h, rho) in USSA76_TABLE.iter() {
            let got = atmosphere_density(h).unwrap();
            assert!((got - rho).abs() <= 1e-12 * rho, "h={h}: {got} vs {rho}");
        }
    }

    #[test]
    fn midpoint_is_geometric_mean_of_anchors() {
        // Exponential interpolation: density at the midpoint is sqrt(rho0 * rho1).
        for w in USSA76_TABLE.windows(2) {
            let (h0, r0) = w[0];
            let (h1, r1) = w[1];
            let mid = atmosphere_density(0.5 * (h0 + h1)).unwrap();
            let expected = (r0 * r1).sqrt();
            assert!((mid - expected).abs() <= 1e-12 * expected);
        }
    }

    #[test]
    fn monotone_nonincreasing() {
        let mut prev = f64::INFINITY;
        for i in 0..=2000 {
            let rho = atmosphere_density(i as f64 * 0.5).unwrap();
            assert!(rho <= prev);
            prev = rho;
        }
    }
}
