//! Linearization of the two-body dynamics and RK4 zero-order-hold
//! discretization.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{EnvironmentParams, StateVector};
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

pub const STATE_DIM: usize = 7;
pub const CONTROL_DIM: usize = 3;

/// Jacobian model `dx/dt = A dx + B du` about an operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousLinearModel<T: Scalar> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub operating_point: StateVector<T>,
    pub operating_control: Vector3<T>,
}

/// Per-step affine model `x[k+1] = A_k x[k] + B_k u[k] + g_k + w_k`,
/// `w_k ~ N(0, process_noise)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteLinearModel<T: Scalar> {
    pub a: Vec<DMatrix<T>>,
    pub b: Vec<DMatrix<T>>,
    pub g: Vec<DVector<T>>,
    pub process_noise: DMatrix<T>,
    /// Step length in seconds.
    pub step: T,
}

/// Gravity-gradient block `d(-mu r / r^3)/dr`.
pub fn gravity_gradient<T: Scalar>(position: &Vector3<T>, mu: T) -> Result<Matrix3<T>> {
    let r2 = position.norm_squared();
    if r2 == T::zero() {
        return Err(Error::Singularity);
    }
    let r5 = r2 * r2 * r2.sqrt();
    let (x, y, z) = (position.x, position.y, position.z);
    let three = lit::<T>(3.0);
    let two = lit::<T>(2.0);
    let xy = three * mu * x * y / r5;
    let xz = three * mu * x * z / r5;
    let yz = three * mu * y * z / r5;
    Ok(Matrix3::new(
        mu * (two * x * x - y * y - z * z) / r5,
        xy,
        xz,
        xy,
        mu * (two * y * y - x * x - z * z) / r5,
        yz,
        xz,
        yz,
        mu * (two * z * z - x * x - y * y) / r5,
    ))
}

/// Linearizes two-body motion with a directly commanded acceleration.
pub fn linearize<T: Scalar>(
    operating_point: &StateVector<T>,
    env: &EnvironmentParams<T>,
) -> Result<ContinuousLinearModel<T>> {
    let gg = gravity_gradient(&operating_point.position, env.mu)?;
    let mut a = DMatrix::zeros(STATE_DIM, STATE_DIM);
    let mut b = DMatrix::zeros(STATE_DIM, CONTROL_DIM);
    for i in 0..3 {
        a[(i, i + 3)] = T::one();
        b[(i + 3, i)] = T::one();
        for j in 0..3 {
            a[(i + 3, j)] = gg[(i, j)];
        }
    }
    Ok(ContinuousLinearModel {
        a,
        b,
        operating_point: *operating_point,
        operating_control: Vector3::zeros(),
    })
}

/// Two-body drift `f(x, a_c)` used by [`affine_offset`]; the mass row is zero.
pub fn two_body_drift<T: Scalar>(
    state: &StateVector<T>,
    accel: &Vector3<T>,
    env: &EnvironmentParams<T>,
) -> Result<DVector<T>> {
    let r = state.position.norm();
    if r == T::zero() {
        return Err(Error::Singularity);
    }
    let a = state.position * (-env.mu / (r * r * r)) + accel;
    let v = state.velocity;
    Ok(DVector::from_column_slice(&[
        v.x,
        v.y,
        v.z,
        a.x,
        a.y,
        a.z,
        T::zero(),
    ]))
}

/// Series weight `hI + h²A/2 + h³A²/6 + h⁴A³/24`.
fn input_series<T: Scalar>(a: &DMatrix<T>, step: T) -> DMatrix<T> {
    let n = a.nrows();
    let identity = DMatrix::<T>::identity(n, n);
    let ha = a * step;
    // Horner form of h (I + hA/2 + (hA)²/6 + (hA)³/24).
    let inner = &identity + &ha * lit::<T>(1.0 / 4.0);
    let inner = &identity + &ha * inner * lit::<T>(1.0 / 3.0);
    let inner = &identity + &ha * inner * lit::<T>(0.5);
    inner * step
}

/// RK4 discretization with zero-order hold on the input.
pub fn discretize_rk4_zoh<T: Scalar>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    step: T,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    if !(step > T::zero()) {
        return Err(Error::InvalidInput("step must be positive".into()));
    }
    if !a.is_square() || a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "A is {}x{}, B is {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let series = input_series(a, step);
    let ad = DMatrix::<T>::identity(a.nrows(), a.nrows()) + &series * a;
    let bd = series * b;
    Ok((ad, bd))
}

/// Affine term `g_k` making the discrete model reproduce the RK4 step of
/// the linearized flow `f(x̄, ā) + A(x - x̄) + B(u - ā)` in absolute
/// coordinates.
pub fn affine_offset<T: Scalar>(
    operating_point: &DVector<T>,
    operating_control: &DVector<T>,
    drift: &DVector<T>,
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    step: T,
) -> Result<DVector<T>> {
    let (ad, bd) = discretize_rk4_zoh(a, b, step)?;
    let series = input_series(a, step);
    Ok(operating_point + series * drift - ad * operating_point - bd * operating_control)
}

impl<T: Scalar> ContinuousLinearModel<T> {
    pub fn discretize(&self, step: T) -> Result<(DMatrix<T>, DMatrix<T>)> {
        discretize_rk4_zoh(&self.a, &self.b, step)
    }
}

fn check_noise<T: Scalar>(noise: &DMatrix<T>, n: usize) -> Result<()> {
    if noise.nrows() != n || noise.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "process noise must be {n}x{n}"
        )));
    }
    let scale = noise.amax().max(T::one());
    let tol = lit::<T>(1e-12) * scale;
    if (noise - noise.transpose()).amax() > tol {
        return Err(Error::InvalidInput("process noise is not symmetric".into()));
    }
    let eig = noise.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l < -tol) {
        return Err(Error::InvalidInput(
            "process noise is not positive semidefinite".into(),
        ));
    }
    Ok(())
}

impl<T: Scalar> DiscreteLinearModel<T> {
    pub fn new(
        a: Vec<DMatrix<T>>,
        b: Vec<DMatrix<T>>,
        g: Vec<DVector<T>>,
        process_noise: DMatrix<T>,
        step: T,
    ) -> Result<Self> {
        if a.is_empty() {
            return Err(Error::Empty("model has no steps".into()));
        }
        if a.len() != b.len() || a.len() != g.len() {
            return Err(Error::DimensionMismatch(
                "A, B and g need one entry per step".into(),
            ));
        }
        let n = a[0].nrows();
        let m = b[0].ncols();
        for k in 0..a.len() {
            if a[k].shape() != (n, n) || b[k].shape() != (n, m) || g[k].len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "step {k} has inconsistent shapes"
                )));
            }
        }
        check_noise(&process_noise, n)?;
        Ok(Self {
            a,
            b,
            g,
            process_noise,
            step,
        })
    }

    /// Repeats one `(A_d, B_d)` pair with zero drift over `horizon` steps.
    pub fn time_invariant(
        a: DMatrix<T>,
        b: DMatrix<T>,
        process_noise: DMatrix<T>,
        step: T,
        horizon: usize,
    ) -> Result<Self> {
        let n = a.nrows();
        Self::new(
            vec![a; horizon],
            vec![b; horizon],
            vec![DVector::zeros(n); horizon],
            process_noise,
            step,
        )
    }

    /// Deviation model along a reference trajectory: the Jacobian is
    /// re-evaluated at each reference state and the drift is zero.
    pub fn along_reference(
        reference: &[StateVector<T>],
        env: &EnvironmentParams<T>,
        step: T,
        process_noise: DMatrix<T>,
    ) -> Result<Self> {
        let mut a = Vec::with_capacity(reference.len());
        let mut b = Vec::with_capacity(reference.len());
        for point in reference {
            let (ad, bd) = linearize(point, env)?.discretize(step)?;
            a.push(ad);
            b.push(bd);
        }
        let g = vec![DVector::zeros(STATE_DIM); reference.len()];
        Self::new(a, b, g, process_noise, step)
    }

    pub fn horizon(&self) -> usize {
        self.a.len()
    }

    pub fn state_dim(&self) -> usize {
        self.a[0].nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b[0].ncols()
    }

    /// Sub-model covering steps `start..end`.
    pub fn window(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.horizon() {
            return Err(Error::InvalidInput(format!(
                "window {start}..{end} outside horizon {}",
                self.horizon()
            )));
        }
        Ok(Self {
            a: self.a[start..end].to_vec(),
            b: self.b[start..end].to_vec(),
            g: self.g[start..end].to_vec(),
            process_noise: self.process_noise.clone(),
            step: self.step,
        })
    }

    /// One noise-free step.
    pub fn step_state(&self, k: usize, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        &self.a[k] * x + &self.b[k] * u + &self.g[k]
    }

    /// Applies a diagonal change of coordinates `x' = Dx x`, `u' = Du u`.
    pub fn rescaled(&self, state_scale: &DVector<T>, control_scale: &DVector<T>) -> Self {
        let dx = DMatrix::from_diagonal(state_scale);
        let dx_inv = DMatrix::from_diagonal(&state_scale.map(|s| T::one() / s));
        let du_inv = DMatrix::from_diagonal(&control_scale.map(|s| T::one() / s));
        Self {
            a: self.a.iter().map(|a| &dx * a * &dx_inv).collect(),
            b: self.b.iter().map(|b| &dx * b * &du_inv).collect(),
            g: self.g.iter().map(|g| &dx * g).collect(),
            process_noise: &dx * &self.process_noise * &dx,
            step: self.step,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn env() -> EnvironmentParams<f64> {
        EnvironmentParams::earth()
    }

    fn state_at(p: Vector3<f64>) -> StateVector<f64> {
        StateVector::new(p, Vector3::new(0.0, 3.0, 0.0), 20.0)
    }

    #[test]
    fn structure_of_continuous_model() {
        let m = linearize(&state_at(Vector3::new(7000.0, 100.0, -300.0)), &env()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.a[(i, j + 3)], if i == j { 1.0 } else { 0.0 });
                assert_eq!(m.b[(i + 3, j)], if i == j { 1.0 } else { 0.0 });
                assert_eq!(m.b[(i, j)], 0.0);
            }
        }
        for j in 0..7 {
            assert_eq!(m.a[(6, j)], 0.0);
            assert_eq!(m.a[(j, 6)], 0.0);
        }
        for j in 0..3 {
            assert_eq!(m.b[(6, j)], 0.0);
        }
    }

    #[test]
    fn gravity_gradient_on_x_axis() {
        let e = env();
        let a = 42_166.7;
        let gg = gravity_gradient(&Vector3::new(a, 0.0, 0.0), e.mu).unwrap();
        let scale = e.mu / a.powi(3);
        let expected = Matrix3::from_diagonal(&Vector3::new(2.0, -1.0, -1.0)) * scale;
        assert!((gg - expected).amax() < 1e-12 * scale);
        assert_eq!(
            gravity_gradient(&Vector3::zeros(), e.mu),
            Err(Error::Singularity)
        );
    }

    proptest! {
        #[test]
        fn gravity_gradient_is_traceless_and_matches_finite_differences(
            x in -45_000.0..45_000.0_f64, y in -45_000.0..45_000.0_f64, z in -45_000.0..45_000.0_f64,
        ) {
            let p = Vector3::new(x, y, z);
            prop_assume!(p.norm() > 6600.0);
            let mu = env().mu;
            let gg = gravity_gradient(&p, mu).unwrap();
            let scale = mu / p.norm().powi(3);
            prop_assert!(gg.trace().abs() <= 1e-12 * scale);
            let accel = |q: Vector3<f64>| -q * mu / q.norm().powi(3);
            let h = p.norm() * 1e-5;
            for j in 0..3 {
                let mut plus = p;
                let mut minus = p;
                plus[j] += h;
                minus[j] -= h;
                let column = (accel(plus) - accel(minus)) / (2.0 * h);
                for i in 0..3 {
                    prop_assert!((column[i] - gg[(i, j)]).abs() <= 1e-6 * scale);
                }
            }
        }
    }

    #[test]
    fn zero_matrix_collapses_series() {
        let a = DMatrix::<f64>::zeros(3, 3);
        let b = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let (ad, bd) = discretize_rk4_zoh(&a, &b, 0.5).unwrap();
        assert_eq!(ad, DMatrix::identity(3, 3));
        assert_eq!(bd, &b * 0.5);
    }

    #[test]
    fn scalar_series() {
        let (a, h) = (-0.7, 0.3);
        let (ad, bd) = discretize_rk4_zoh(
            &DMatrix::from_element(1, 1, a),
            &DMatrix::from_element(1, 1, 1.0),
            h,
        )
        .unwrap();
        let ha: f64 = h * a;
        let expected = 1.0 + ha + ha.powi(2) / 2.0 + ha.powi(3) / 6.0 + ha.powi(4) / 24.0;
        assert!((ad[(0, 0)] - expected).abs() < 1e-15);
        let expected_b = h * (1.0 + ha / 2.0 + ha.powi(2) / 6.0 + ha.powi(3) / 24.0);
        assert!((bd[(0, 0)] - expected_b).abs() < 1e-15);
    }

    /// Four-stage RK4 step of `x' = Ax + Bu` with `u` held.
    fn rk4_oracle(
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        x: &DVector<f64>,
        u: &DVector<f64>,
        h: f64,
    ) -> DVector<f64> {
        let f = |s: &DVector<f64>| a * s + b * u;
        let k1 = f(x) * h;
        let k2 = f(&(x + &k1 * 0.5)) * h;
        let k3 = f(&(x + &k2 * 0.5)) * h;
        let k4 = f(&(x + &k3)) * h;
        x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) / 6.0
    }

    #[test]
    fn matches_four_stage_rk4_on_random_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            let b = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
            let x = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let u = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let h = rng.random_range(0.01..0.5);
            let (ad, bd) = discretize_rk4_zoh(&a, &b, h).unwrap();
            let direct = &ad * &x + &bd * &u;
            assert!((direct - rk4_oracle(&a, &b, &x, &u, h)).amax() < 1e-12);
        }
    }

    #[test]
    fn nilpotent_matrix_gives_exact_exponential() {
        // Strictly upper-triangular 4x4: A^4 = 0, so exp(hA) is the degree-3 series.
        let a = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.0, 1.0, 2.0, -1.0, 0.0, 0.0, 3.0, 0.5, 0.0, 0.0, 0.0, 1.5, 0.0, 0.0, 0.0, 0.0,
            ],
        );
        let h = 0.7;
        let (ad, _) = discretize_rk4_zoh(&a, &DMatrix::zeros(4, 1), h).unwrap();
        let ha = &a * h;
        let mut exp = DMatrix::identity(4, 4);
        let mut term = DMatrix::identity(4, 4);
        for k in 1..10 {
            term = &term * &ha / k as f64;
            exp += &term;
        }
        assert!((ad - exp).amax() < 1e-14);
    }

    #[test]
    fn discrete_input_sparsity() {
        let m = linearize(&state_at(Vector3::new(42_166.7, 0.0, 0.0)), &env()).unwrap();
        let h = 60.0;
        let (_, bd) = m.discretize(h).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect_pos = if i == j { h * h / 2.0 } else { 0.0 };
                assert!((bd[(i, j)] - expect_pos).abs() < 1e-3 * h * h);
            }
        }
        for j in 0..3 {
            assert_eq!(bd[(6, j)], 0.0);
        }
    }

    #[test]
    fn affine_offset_vanishes_at_origin_equilibrium() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -0.1]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let zero = DVector::zeros(2);
        let g = affine_offset(&zero, &DVector::zeros(1), &zero, &a, &b, 0.1).unwrap();
        assert_eq!(g, zero);
    }

    #[test]
    fn affine_model_matches_rk4_of_linearized_flow() {
        let e = env();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let p = Vector3::new(
                rng.random_range(6800.0..9000.0),
                rng.random_range(-2000.0..2000.0),
                rng.random_range(-2000.0..2000.0),
            );
            let point = StateVector::new(p, Vector3::new(0.1, 7.0, 0.5), 15.0);
            let abar = Vector3::new(1e-6, -2e-6, 3e-6);
            let cm = linearize(&point, &e).unwrap();
            let drift = two_body_drift(&point, &abar, &e).unwrap();
            let xbar = DVector::from_column_slice(point.to_vector().as_slice());
            let ubar = DVector::from_column_slice(abar.as_slice());
            let h = 30.0;
            let g = affine_offset(&xbar, &ubar, &drift, &cm.a, &cm.b, h).unwrap();
            let (ad, bd) = cm.discretize(h).unwrap();
            let x = &xbar + DVector::from_fn(7, |_, _| rng.random_range(-1.0..1.0));
            let u = DVector::from_fn(3, |_, _| rng.random_range(-1e-5..1e-5));
            // Linearized ODE in absolute coordinates: x' = A x + B u + c.
            let c = &drift - &cm.a * &xbar - &cm.b * &ubar;
            let f = |s: &DVector<f64>| &cm.a * s + &cm.b * &u + &c;
            let k1 = f(&x) * h;
            let k2 = f(&(&x + &k1 * 0.5)) * h;
            let k3 = f(&(&x + &k2 * 0.5)) * h;
            let k4 = f(&(&x + &k3)) * h;
            let oracle = &x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) / 6.0;
            let model = &ad * &x + &bd * &u + &g;
            assert!((model - &oracle).amax() <= 1e-12 * oracle.amax());
        }
    }

    #[test]
    fn time_invariant_model_repeats() {
        let m = DiscreteLinearModel::time_invariant(
            DMatrix::<f64>::identity(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(2, 2),
            1.0,
            4,
        )
        .unwrap();
        assert_eq!(m.horizon(), 4);
        assert_eq!(m.a[0], m.a[3]);
        let w = m.window(1, 3).unwrap();
        assert_eq!(w.horizon(), 2);
    }

    #[test]
    fn rejects_indefinite_noise() {
        let noise = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(DiscreteLinearModel::time_invariant(
            DMatrix::<f64>::identity(2, 2),
            DMatrix::zeros(2, 1),
            noise,
            1.0,
            2
        )
        .is_err());
    }
}
