//! Finite-horizon linear-quadratic control on a [`DiscreteLinearModel`]:
//! quadratic costs, the backward Riccati recursion, Q-functions and
//! Gaussian policy rollouts.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linmodel::DiscreteLinearModel;
use crate::scalar::{lit, Scalar};
use crate::serde_rows;
use crate::trajectory::Trajectory;

/// Stage cost `½ [1,x,u]ᵀ M [1,x,u]` with terminal cost
/// `½ xᵀ Q_N x + xᵀ q_N + c_N`.
///
/// `cross_weight` is the `m × n` matrix `P` in `uᵀ P x`. The same running
/// weights apply at every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticCost<T: Scalar> {
    #[serde(rename = "Q", with = "serde_rows::matrix")]
    pub state_weight: DMatrix<T>,
    #[serde(rename = "R", with = "serde_rows::matrix")]
    pub control_weight: DMatrix<T>,
    #[serde(rename = "P", with = "serde_rows::matrix")]
    pub cross_weight: DMatrix<T>,
    #[serde(rename = "q", with = "serde_rows::vector")]
    pub state_linear: DVector<T>,
    #[serde(rename = "r", with = "serde_rows::vector")]
    pub control_linear: DVector<T>,
    /// Corner entry of `M`; contributes `constant / 2` per step.
    #[serde(rename = "const")]
    pub constant: T,
    #[serde(rename = "Q_N", with = "serde_rows::matrix")]
    pub terminal_weight: DMatrix<T>,
    #[serde(rename = "q_N", with = "serde_rows::vector")]
    pub terminal_linear: DVector<T>,
    #[serde(rename = "c_N", default)]
    pub terminal_constant: T,
}

/// `V_k(x) = ½ xᵀ S_k x + xᵀ s_k + c_k` for `k = 0..=N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueQuadratic<T: Scalar> {
    #[serde(rename = "S", with = "serde_rows::matrix_seq")]
    pub quadratic: Vec<DMatrix<T>>,
    #[serde(rename = "s", with = "serde_rows::vector_seq")]
    pub linear: Vec<DVector<T>>,
    #[serde(rename = "c")]
    pub constant: Vec<T>,
}

/// `u_k ~ N(K_k x + l_k, Σ_k)`; zero covariances give the deterministic
/// controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy<T: Scalar> {
    #[serde(rename = "K", with = "serde_rows::matrix_seq")]
    pub gains: Vec<DMatrix<T>>,
    #[serde(rename = "l", with = "serde_rows::vector_seq")]
    pub offsets: Vec<DVector<T>>,
    #[serde(rename = "Sigma_u", with = "serde_rows::matrix_seq")]
    pub covariances: Vec<DMatrix<T>>,
}

impl<T: Scalar> QuadraticCost<T> {
    /// Pure quadratic cost `½xᵀQx + ½uᵀRu` with the terminal weight tied to `Q`.
    pub fn diagonal(state_weight: DMatrix<T>, control_weight: DMatrix<T>) -> Self {
        let n = state_weight.nrows();
        let m = control_weight.nrows();
        Self {
            terminal_weight: state_weight.clone(),
            state_weight,
            control_weight,
            cross_weight: DMatrix::zeros(m, n),
            state_linear: DVector::zeros(n),
            control_linear: DVector::zeros(m),
            constant: T::zero(),
            terminal_linear: DVector::zeros(n),
            terminal_constant: T::zero(),
        }
    }

    /// Unpacks a `(1+n+m)`-square block matrix. The terminal cost is tied to
    /// the running state terms: `Q_N = Q`, `q_N = q`, `c_N = M₀₀/2`.
    pub fn from_block(block: &DMatrix<T>, state_dim: usize) -> Result<Self> {
        let dim = block.nrows();
        if block.ncols() != dim || dim < state_dim + 1 {
            return Err(Error::DimensionMismatch(format!(
                "block matrix {}x{} cannot hold {state_dim} states",
                block.nrows(),
                block.ncols()
            )));
        }
        let n = state_dim;
        let m = dim - 1 - n;
        let sym = (block + block.transpose()) * lit::<T>(0.5);
        let state_weight = sym.view((1, 1), (n, n)).into_owned();
        let state_linear = sym.view((1, 0), (n, 1)).column(0).into_owned();
        let constant = sym[(0, 0)];
        Ok(Self {
            terminal_weight: state_weight.clone(),
            terminal_linear: state_linear.clone(),
            terminal_constant: constant * lit(0.5),
            state_weight,
            control_weight: sym.view((1 + n, 1 + n), (m, m)).into_owned(),
            cross_weight: sym.view((1 + n, 1), (m, n)).into_owned(),
            state_linear,
            control_linear: sym.view((1 + n, 0), (m, 1)).column(0).into_owned(),
            constant,
        })
    }

    /// Assembles `M = [[c, qᵀ, rᵀ], [q, Q, Pᵀ], [r, P, R]]`.
    pub fn block_matrix(&self) -> DMatrix<T> {
        let n = self.state_dim();
        let m = self.control_dim();
        let mut block = DMatrix::zeros(1 + n + m, 1 + n + m);
        block[(0, 0)] = self.constant;
        block.view_mut((1, 0), (n, 1)).copy_from(&self.state_linear);
        block
            .view_mut((0, 1), (1, n))
            .copy_from(&self.state_linear.transpose());
        block
            .view_mut((1 + n, 0), (m, 1))
            .copy_from(&self.control_linear);
        block
            .view_mut((0, 1 + n), (1, m))
            .copy_from(&self.control_linear.transpose());
        block.view_mut((1, 1), (n, n)).copy_from(&self.state_weight);
        block
            .view_mut((1 + n, 1 + n), (m, m))
            .copy_from(&self.control_weight);
        block
            .view_mut((1 + n, 1), (m, n))
            .copy_from(&self.cross_weight);
        block
            .view_mut((1, 1 + n), (n, m))
            .copy_from(&self.cross_weight.transpose());
        block
    }

    pub fn state_dim(&self) -> usize {
        self.state_weight.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.control_weight.nrows()
    }

    /// Every scalar weight multiplied by `factor`.
    pub fn scaled(&self, factor: T) -> Self {
        Self {
            state_weight: &self.state_weight * factor,
            control_weight: &self.control_weight * factor,
            cross_weight: &self.cross_weight * factor,
            state_linear: &self.state_linear * factor,
            control_linear: &self.control_linear * factor,
            constant: self.constant * factor,
            terminal_weight: &self.terminal_weight * factor,
            terminal_linear: &self.terminal_linear * factor,
            terminal_constant: self.terminal_constant * factor,
        }
    }

    fn check_shapes(&self) -> Result<()> {
        let n = self.state_dim();
        let m = self.control_dim();
        let ok = self.state_weight.ncols() == n
            && self.control_weight.ncols() == m
            && self.cross_weight.shape() == (m, n)
            && self.state_linear.len() == n
            && self.control_linear.len() == m
            && self.terminal_weight.shape() == (n, n)
            && self.terminal_linear.len() == n;
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(
                "inconsistent cost block shapes".into(),
            ))
        }
    }

    /// Checks shapes, symmetry, and that `[[Q, Pᵀ], [P, R]]` and `Q_N` are
    /// positive semidefinite.
    pub fn validate(&self) -> Result<()> {
        self.check_shapes()?;
        let n = self.state_dim();
        let m = self.control_dim();
        let joint = self
            .block_matrix()
            .view((1, 1), (n + m, n + m))
            .into_owned();
        for (name, mat) in [("running", &joint), ("terminal", &self.terminal_weight)] {
            let scale = mat.amax().max(T::one());
            let tol = lit::<T>(1e-9) * scale;
            if (mat - mat.transpose()).amax() > tol {
                return Err(Error::InvalidInput(format!(
                    "{name} weight is not symmetric"
                )));
            }
            let min_eig = mat.clone().symmetric_eigenvalues().min();
            if min_eig < -tol {
                return Err(Error::InvalidInput(format!(
                    "{name} weight is not positive semidefinite (eigenvalue {min_eig:e})"
                )));
            }
        }
        Ok(())
    }
}

impl<T: Scalar> ValueQuadratic<T> {
    pub fn evaluate(&self, k: usize, x: &DVector<T>) -> T {
        (x.transpose() * &self.quadratic[k] * x)[(0, 0)] * lit(0.5)
            + x.dot(&self.linear[k])
            + self.constant[k]
    }
}

impl<T: Scalar> GaussianPolicy<T> {
    pub fn horizon(&self) -> usize {
        self.gains.len()
    }

    pub fn mean(&self, k: usize, x: &DVector<T>) -> DVector<T> {
        &self.gains[k] * x + &self.offsets[k]
    }

    /// Same means with every covariance set to zero.
    pub fn deterministic(&self) -> Self {
        Self {
            gains: self.gains.clone(),
            offsets: self.offsets.clone(),
            covariances: self
                .covariances
                .iter()
                .map(|c| DMatrix::zeros(c.nrows(), c.ncols()))
                .collect(),
        }
    }
}

fn check_pair<T: Scalar>(x: &DVector<T>, u: &DVector<T>, cost: &QuadraticCost<T>) -> Result<()> {
    if x.len() != cost.state_dim() || u.len() != cost.control_dim() {
        return Err(Error::DimensionMismatch(format!(
            "(x, u) of sizes ({}, {}) against a {}x{} cost",
            x.len(),
            u.len(),
            cost.state_dim(),
            cost.control_dim()
        )));
    }
    Ok(())
}

/// `xᵀq + uᵀr + ½xᵀQx + ½uᵀRu + uᵀPx + ½M₀₀`.
pub fn running_cost<T: Scalar>(
    x: &DVector<T>,
    u: &DVector<T>,
    cost: &QuadraticCost<T>,
) -> Result<T> {
    check_pair(x, u, cost)?;
    let half = lit::<T>(0.5);
    Ok(x.dot(&cost.state_linear)
        + u.dot(&cost.control_linear)
        + (x.transpose() * &cost.state_weight * x)[(0, 0)] * half
        + (u.transpose() * &cost.control_weight * u)[(0, 0)] * half
        + (u.transpose() * &cost.cross_weight * x)[(0, 0)]
        + cost.constant * half)
}

/// `½ [1,x,u]ᵀ M [1,x,u]` evaluated through the assembled block matrix.
pub fn running_cost_block<T: Scalar>(
    x: &DVector<T>,
    u: &DVector<T>,
    cost: &QuadraticCost<T>,
) -> Result<T> {
    check_pair(x, u, cost)?;
    let z = feature_vector(x, u);
    Ok((z.transpose() * cost.block_matrix() * &z)[(0, 0)] * lit(0.5))
}

pub fn terminal_cost<T: Scalar>(x: &DVector<T>, cost: &QuadraticCost<T>) -> Result<T> {
    if x.len() != cost.state_dim() {
        return Err(Error::DimensionMismatch("terminal state size".into()));
    }
    Ok(
        (x.transpose() * &cost.terminal_weight * x)[(0, 0)] * lit(0.5)
            + x.dot(&cost.terminal_linear)
            + cost.terminal_constant,
    )
}

/// Total cost of a trajectory: running costs plus the terminal cost.
pub fn trajectory_cost<T: Scalar>(
    trajectory: &Trajectory<T>,
    cost: &QuadraticCost<T>,
) -> Result<T> {
    let mut total = T::zero();
    for (x, u) in trajectory.states.iter().zip(&trajectory.controls) {
        total += running_cost(x, u, cost)?;
    }
    Ok(total + terminal_cost(trajectory.states.last().expect("nonempty"), cost)?)
}

/// The stacked feature `[1, x, u]`.
pub fn feature_vector<T: Scalar>(x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
    let mut z = DVector::zeros(1 + x.len() + u.len());
    z[0] = T::one();
    z.rows_mut(1, x.len()).copy_from(x);
    z.rows_mut(1 + x.len(), u.len()).copy_from(u);
    z
}

/// Coefficients of the stage Q-function
/// `½xᵀH_xx x + uᵀH_ux x + ½uᵀH_uu u + xᵀh_x + uᵀh_u + h_0`.
struct StageExpansion<T: Scalar> {
    h_xx: DMatrix<T>,
    h_ux: DMatrix<T>,
    h_uu: DMatrix<T>,
    h_x: DVector<T>,
    h_u: DVector<T>,
    h_0: T,
}

fn stage_expansion<T: Scalar>(
    k: usize,
    model: &DiscreteLinearModel<T>,
    cost: &QuadraticCost<T>,
    s_next: &DMatrix<T>,
    v_next: &DVector<T>,
    c_next: T,
) -> StageExpansion<T> {
    let (a, b, g) = (&model.a[k], &model.b[k], &model.g[k]);
    let half = lit::<T>(0.5);
    let sa = s_next * a;
    let sb = s_next * b;
    let drift = v_next + s_next * g;
    StageExpansion {
        h_xx: &cost.state_weight + a.transpose() * &sa,
        h_ux: &cost.cross_weight + b.transpose() * &sa,
        h_uu: &cost.control_weight + b.transpose() * &sb,
        h_x: &cost.state_linear + a.transpose() * &drift,
        h_u: &cost.control_linear + b.transpose() * &drift,
        h_0: cost.constant * half
            + (g.transpose() * s_next * g)[(0, 0)] * half
            + v_next.dot(g)
            + c_next,
    }
}

fn symmetrize<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * lit::<T>(0.5)
}

fn check_model_cost<T: Scalar>(
    model: &DiscreteLinearModel<T>,
    cost: &QuadraticCost<T>,
) -> Result<()> {
    cost.check_shapes()?;
    if model.state_dim() != cost.state_dim() || model.control_dim() != cost.control_dim() {
        return Err(Error::DimensionMismatch(format!(
            "model is {}x{}, cost is {}x{}",
            model.state_dim(),
            model.control_dim(),
            cost.state_dim(),
            cost.control_dim()
        )));
    }
    Ok(())
}

/// Backward recursion shared by the optimal controller and the soft
/// (maximum-entropy) solution.
///
/// In soft mode `V_k(x) = -log ∫ exp(-Q_k(x,u)) du`, which adds
/// `½ log det H_uu - (m/2) log 2π` to the constant, and the expected value
/// of the successor under process noise adds `½ tr(S Σ_x)`. The policy
/// covariance is then `H_uu⁻¹`.
pub(crate) fn backward_pass<T: Scalar>(
    model: &DiscreteLinearModel<T>,
    cost: &QuadraticCost<T>,
    soft: bool,
) -> Result<(ValueQuadratic<T>, GaussianPolicy<T>)> {
    check_model_cost(model, cost)?;
    let horizon = model.horizon();
    let m = cost.control_dim();
    let half = lit::<T>(0.5);
    let log_two_pi = (T::two_pi()).ln();

    let mut quadratic = vec![DMatrix::zeros(0, 0); horizon + 1];
    let mut linear = vec![DVector::zeros(0); horizon + 1];
    let mut constant = vec![T::zero(); horizon + 1];
    quadratic[horizon] = symmetrize(&cost.terminal_weight);
    linear[horizon] = cost.terminal_linear.clone();
    constant[horizon] = cost.terminal_constant;

    let mut gains = vec![DMatrix::zeros(0, 0); horizon];
    let mut offsets = vec![DVector::zeros(0); horizon];
    let mut covariances = vec![DMatrix::zeros(0, 0); horizon];

    for k in (0..horizon).rev() {
        let e = stage_expansion(
            k,
            model,
            cost,
            &quadratic[k + 1],
            &linear[k + 1],
            constant[k + 1],
        );
        let chol =
            Cholesky::<T, Dyn>::new(symmetrize(&e.h_uu)).ok_or(Error::IllPosedCost { step: k })?;
        let gain = -chol.solve(&e.h_ux);
        let offset = -chol.solve(&e.h_u);
        let s = symmetrize(&(&e.h_xx + e.h_ux.transpose() * &gain));
        let v = &e.h_x + e.h_ux.transpose() * &offset;
        let mut c = e.h_0 + e.h_u.dot(&offset) * half;
        if soft {
            let log_det = chol.l().diagonal().map(|d| d.ln()).sum() * lit(2.0);
            let noise = (&quadratic[k + 1] * &model.process_noise).trace();
            c += half * log_det - half * T::from_usize_lossy(m) * log_two_pi + half * noise;
            covariances[k] = symmetrize(&chol.inverse());
        } else {
            covariances[k] = DMatrix::zeros(m, m);
        }
        quadratic[k] = s;
        linear[k] = v;
        constant[k] = c;
        gains[k] = gain;
        offsets[k] = offset;
    }

    Ok((
        ValueQuadratic {
            quadratic,
            linear,
            constant,
        },
        GaussianPolicy {
            gains,
            offsets,
            covariances,
        },
    ))
}

/// Optimal value function and deterministic affine controller
/// `u_k = K_k x + l_k` by backward Riccati recursion from
/// `S_N = Q_N`, `s_N = q_N`, `c_N`.
///
/// Fails with [`Error::IllPosedCost`] if `R + BᵀS_{k+1}B` is not positive
/// definite at some step.
pub fn riccati_backward<T: Scalar>(
    model: &DiscreteLinearModel<T>,
    cost: &QuadraticCost<T>,
) -> Result<(ValueQuadratic<T>, GaussianPolicy<T>)> {
    backward_pass(model, cost, false)
}

/// `l(x,u) + V_{k+1}(A_k x + B_k u + g_k)`.
pub fn q_function<T: Scalar>(
    x: &DVector<T>,
    u: &DVector<T>,
    k: usize,
    model: &DiscreteLinearModel<T>,
    cost: &QuadraticCost<T>,
    value: &ValueQuadratic<T>,
) -> Result<T> {
    check_model_cost(model, cost)?;
    if k >= model.horizon() || k + 1 >= value.quadratic.len() {
        return Err(Error::InvalidInput(format!("step {k} outside horizon")));
    }
    let next = model.step_state(k, x, u);
    Ok(running_cost(x, u, cost)? + value.evaluate(k + 1, &next))
}

/// Block matrix `W_k` with `Q_k(x,u) = ½ [1,x,u]ᵀ W_k [1,x,u]`.
pub fn q_block<T: Scalar>(
    k: usize,
    model: &DiscreteLinearModel<T>,
    cost: &QuadraticCost<T>,
    value: &ValueQuadratic<T>,
) -> Result<DMatrix<T>> {
    check_model_cost(model, cost)?;
    if k >= model.horizon() || k + 1 >= value.quadratic.len() {
        return Err(Error::InvalidInput(format!("step {k} outside horizon")));
    }
    let e = stage_expansion(
        k,
        model,
        cost,
        &value.quadratic[k + 1],
        &value.linear[k + 1],
        value.constant[k + 1],
    );
    let n = cost.state_dim();
    let m = cost.control_dim();
    let mut w = DMatrix::zeros(1 + n + m, 1 + n + m);
    w[(0, 0)] = e.h_0 * lit(2.0);
    w.view_mut((1, 0), (n, 1)).copy_from(&e.h_x);
    w.view_mut((0, 1), (1, n)).copy_from(&e.h_x.transpose());
    w.view_mut((1 + n, 0), (m, 1)).copy_from(&e.h_u);
    w.view_mut((0, 1 + n), (1, m)).copy_from(&e.h_u.transpose());
    w.view_mut((1, 1), (n, n)).copy_from(&e.h_xx);
    w.view_mut((1 + n, 1), (m, n)).copy_from(&e.h_ux);
    w.view_mut((1, 1 + n), (n, m))
        .copy_from(&e.h_ux.transpose());
    w.view_mut((1 + n, 1 + n), (m, m)).copy_from(&e.h_uu);
    Ok(w)
}

/// Matrix `F` with `F Fᵀ = cov`, from the eigendecomposition so that
/// singular covariances are allowed. Negative round-off eigenvalues are
/// clipped to zero.
pub fn covariance_factor<T: Scalar>(cov: &DMatrix<T>) -> DMatrix<T> {
    let eig = symmetrize(cov).symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(T::zero()).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

pub(crate) fn standard_normal<T: Scalar, R: Rng>(rng: &mut R, n: usize) -> DVector<T> {
    DVector::from_fn(n, |_, _| lit::<T>(rng.sample::<f64, _>(StandardNormal)))
}

/// Simulates the linear model under `policy` from `x0`.
///
/// With `stochastic` set, actions are drawn from the policy covariance and
/// process noise from the model; otherwise both are suppressed. Runs with
/// the same seed are identical.
pub fn rollout<T: Scalar>(
    model: &DiscreteLinearModel<T>,
    policy: &GaussianPolicy<T>,
    x0: &DVector<T>,
    seed: u64,
    stochastic: bool,
) -> Result<Trajectory<T>> {
    let horizon = model.horizon();
    if policy.horizon() < horizon {
        return Err(Error::InvalidInput(format!(
            "policy covers {} steps, model needs {horizon}",
            policy.horizon()
        )));
    }
    if x0.len() != model.state_dim() {
        return Err(Error::DimensionMismatch("initial state size".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.state_dim();
    let m = model.control_dim();
    let noise_factor = covariance_factor(&model.process_noise);

    let mut times = Vec::with_capacity(horizon + 1);
    let mut states = Vec::with_capacity(horizon + 1);
    let mut controls = Vec::with_capacity(horizon);
    let mut x = x0.clone();
    for k in 0..horizon {
        let mut u = policy.mean(k, &x);
        let mut next_noise = DVector::zeros(n);
        if stochastic {
            u += covariance_factor(&policy.covariances[k]) * standard_normal::<T, _>(&mut rng, m);
            next_noise = &noise_factor * standard_normal::<T, _>(&mut rng, n);
        }
        let next = model.step_state(k, &x, &u) + next_noise;
        times.push(model.step * T::from_usize_lossy(k));
        states.push(std::mem::replace(&mut x, next));
        controls.push(u);
    }
    times.push(model.step * T::from_usize_lossy(horizon));
    states.push(x);
    Trajectory::new(times, states, controls)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{EnvironmentParams, StateVector};
    use crate::linmodel::linearize;
    use nalgebra::Vector3;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
    }

    /// PSD joint block with a strictly positive definite `R`.
    fn random_cost(rng: &mut ChaCha8Rng, n: usize, m: usize) -> QuadraticCost<f64> {
        let f = random_matrix(rng, n + m, n + m);
        let joint = &f * f.transpose() + DMatrix::identity(n + m, n + m) * 0.1;
        let g = random_matrix(rng, n, n);
        QuadraticCost {
            state_weight: joint.view((0, 0), (n, n)).into_owned(),
            control_weight: joint.view((n, n), (m, m)).into_owned(),
            cross_weight: joint.view((n, 0), (m, n)).into_owned(),
            state_linear: random_vector(rng, n),
            control_linear: random_vector(rng, m),
            constant: rng.random_range(-1.0..1.0),
            terminal_weight: &g * g.transpose(),
            terminal_linear: random_vector(rng, n),
            terminal_constant: 0.0,
        }
    }

    fn random_model(
        rng: &mut ChaCha8Rng,
        n: usize,
        m: usize,
        horizon: usize,
    ) -> DiscreteLinearModel<f64> {
        DiscreteLinearModel::new(
            (0..horizon).map(|_| random_matrix(rng, n, n)).collect(),
            (0..horizon).map(|_| random_matrix(rng, n, m)).collect(),
            (0..horizon).map(|_| random_vector(rng, n)).collect(),
            DMatrix::zeros(n, n),
            1.0,
        )
        .unwrap()
    }

    fn scalar_problem() -> (DiscreteLinearModel<f64>, QuadraticCost<f64>) {
        let one = DMatrix::from_element(1, 1, 1.0);
        let model = DiscreteLinearModel::time_invariant(
            one.clone(),
            one.clone(),
            DMatrix::zeros(1, 1),
            1.0,
            1,
        )
        .unwrap();
        (model, QuadraticCost::diagonal(one.clone(), one))
    }

    fn open_loop_cost(
        model: &DiscreteLinearModel<f64>,
        cost: &QuadraticCost<f64>,
        x0: &DVector<f64>,
        controls: &[DVector<f64>],
    ) -> f64 {
        let mut x = x0.clone();
        let mut total = 0.0;
        for (k, u) in controls.iter().enumerate() {
            total += running_cost(&x, u, cost).unwrap();
            x = model.step_state(k, &x, u);
        }
        total + terminal_cost(&x, cost).unwrap()
    }

    #[test]
    fn running_cost_hand_values() {
        let cost = QuadraticCost::diagonal(DMatrix::<f64>::identity(3, 3), DMatrix::identity(2, 2));
        let zero3 = DVector::zeros(3);
        let zero2 = DVector::zeros(2);
        assert_eq!(running_cost(&zero3, &zero2, &cost).unwrap(), 0.0);
        let x = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let u = DVector::from_vec(vec![1.0, 0.0]);
        assert!((running_cost(&x, &u, &cost).unwrap() - 1.0).abs() < 1e-15);
        assert!(running_cost(&zero2, &zero2, &cost).is_err());
    }

    #[test]
    fn block_and_expanded_forms_agree() {
        let mut r = rng(1);
        let cost = random_cost(&mut r, 4, 2);
        for _ in 0..100 {
            let x = random_vector(&mut r, 4) * 10.0;
            let u = random_vector(&mut r, 2) * 10.0;
            let a = running_cost(&x, &u, &cost).unwrap();
            let b = running_cost_block(&x, &u, &cost).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn block_roundtrip_and_json_labels() {
        let mut r = rng(2);
        let cost = random_cost(&mut r, 3, 2);
        let back = QuadraticCost::from_block(&cost.block_matrix(), 3).unwrap();
        assert_eq!(back.cross_weight, cost.cross_weight);
        assert_eq!(back.control_linear, cost.control_linear);
        assert_eq!(back.terminal_weight, cost.state_weight);
        let json = serde_json::to_value(&cost).unwrap();
        for key in ["Q", "R", "P", "q", "r", "const", "Q_N", "q_N", "c_N"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        let parsed: QuadraticCost<f64> = serde_json::from_value(json).unwrap();
        assert_eq!(parsed, cost);
    }

    #[test]
    fn validation_rejects_indefinite_block() {
        let mut cost =
            QuadraticCost::diagonal(DMatrix::<f64>::identity(2, 2), DMatrix::identity(1, 1));
        assert!(cost.validate().is_ok());
        cost.cross_weight = DMatrix::from_row_slice(1, 2, &[2.0, 0.0]);
        assert!(cost.validate().is_err());
    }

    #[test]
    fn scalar_single_step_hand_values() {
        let (model, cost) = scalar_problem();
        let (value, policy) = riccati_backward(&model, &cost).unwrap();
        assert!((value.quadratic[0][(0, 0)] - 1.5).abs() < 1e-15);
        assert!((policy.gains[0][(0, 0)] + 0.5).abs() < 1e-15);
        assert_eq!(value.quadratic[1][(0, 0)], 1.0);
    }

    #[test]
    fn zero_cost_gives_zero_policy() {
        let mut r = rng(3);
        let model = random_model(&mut r, 3, 2, 6);
        let mut cost = QuadraticCost::diagonal(DMatrix::zeros(3, 3), DMatrix::identity(2, 2));
        cost.terminal_weight = DMatrix::zeros(3, 3);
        let mut model = model;
        model.g.iter_mut().for_each(|g| g.fill(0.0));
        let (value, policy) = riccati_backward(&model, &cost).unwrap();
        for k in 0..6 {
            assert!(policy.gains[k].amax() == 0.0);
            assert!(value.quadratic[k].amax() == 0.0);
        }
    }

    #[test]
    fn singular_control_hessian_is_reported() {
        let mut r = rng(4);
        let model = random_model(&mut r, 2, 1, 3);
        let mut cost = QuadraticCost::diagonal(DMatrix::zeros(2, 2), DMatrix::zeros(1, 1));
        cost.terminal_weight = DMatrix::zeros(2, 2);
        assert_eq!(
            riccati_backward(&model, &cost).unwrap_err(),
            Error::IllPosedCost { step: 2 }
        );
    }

    /// Minimizes the summed cost over the stacked control sequence using a
    /// finite-difference gradient and Hessian of the black-box objective.
    /// The objective is quadratic, so one Newton step from zero is exact.
    fn brute_force_controls(
        model: &DiscreteLinearModel<f64>,
        cost: &QuadraticCost<f64>,
        x0: &DVector<f64>,
    ) -> Vec<DVector<f64>> {
        let (n_steps, m) = (model.horizon(), model.control_dim());
        let dim = n_steps * m;
        let objective = |flat: &DVector<f64>| {
            let controls: Vec<_> = (0..n_steps)
                .map(|k| flat.rows(k * m, m).into_owned())
                .collect();
            open_loop_cost(model, cost, x0, &controls)
        };
        let h = 1e-2;
        let base = DVector::zeros(dim);
        let e = |i: usize| {
            let mut v = DVector::zeros(dim);
            v[i] = h;
            v
        };
        let grad = DVector::from_fn(dim, |i, _| {
            (objective(&e(i)) - objective(&-e(i))) / (2.0 * h)
        });
        let hess = DMatrix::from_fn(dim, dim, |i, j| {
            let (ei, ej) = (e(i), e(j));
            (objective(&(&ei + &ej)) - objective(&(&ei - &ej)) - objective(&(&ej - &ei))
                + objective(&(-&ei - &ej)))
                / (4.0 * h * h)
        });
        let step = hess.lu().solve(&grad).unwrap();
        let best = base - step;
        (0..n_steps)
            .map(|k| best.rows(k * m, m).into_owned())
            .collect()
    }

    #[test]
    fn riccati_matches_brute_force_minimization() {
        let mut r = rng(5);
        for _ in 0..5 {
            let model = random_model(&mut r, 4, 2, 5);
            let cost = random_cost(&mut r, 4, 2);
            let x0 = random_vector(&mut r, 4);
            let (_, policy) = riccati_backward(&model, &cost).unwrap();
            let traj = rollout(&model, &policy, &x0, 0, false).unwrap();
            let oracle = brute_force_controls(&model, &cost, &x0);
            for (u, v) in traj.controls.iter().zip(&oracle) {
                assert!((u - v).amax() < 1e-6, "{u} vs {v}");
            }
        }
    }

    #[test]
    fn bellman_and_block_forms_agree() {
        let mut r = rng(6);
        let model = random_model(&mut r, 4, 2, 4);
        let cost = random_cost(&mut r, 4, 2);
        let (value, policy) = riccati_backward(&model, &cost).unwrap();
        for k in 0..4 {
            let w = q_block(k, &model, &cost, &value).unwrap();
            for _ in 0..25 {
                let x = random_vector(&mut r, 4);
                let u = random_vector(&mut r, 2);
                let direct = q_function(&x, &u, k, &model, &cost, &value).unwrap();
                let z = feature_vector(&x, &u);
                let block = (z.transpose() * &w * &z)[(0, 0)] * 0.5;
                assert!((direct - block).abs() <= 1e-12 * direct.abs().max(1.0));
            }
            let x = random_vector(&mut r, 4);
            let u_star = policy.mean(k, &x);
            let q_star = q_function(&x, &u_star, k, &model, &cost, &value).unwrap();
            assert!((q_star - value.evaluate(k, &x)).abs() <= 1e-10 * q_star.abs().max(1.0));
        }
    }

    #[test]
    fn value_is_minimum_of_q_and_argmin_is_policy() {
        let mut r = rng(7);
        let model = random_model(&mut r, 4, 2, 5);
        let cost = random_cost(&mut r, 4, 2);
        let (value, policy) = riccati_backward(&model, &cost).unwrap();
        for k in 0..5 {
            let w = q_block(k, &model, &cost, &value).unwrap();
            let h_uu = w.view((5, 5), (2, 2)).into_owned();
            for _ in 0..20 {
                let x = random_vector(&mut r, 4) * 5.0;
                let z = feature_vector(&x, &DVector::zeros(0));
                let coupling = w.view((5, 0), (2, 5)) * &z;
                let u_min = -h_uu.clone().lu().solve(&coupling).unwrap();
                let q_min = q_function(&x, &u_min, k, &model, &cost, &value).unwrap();
                let v = value.evaluate(k, &x);
                assert!((q_min - v).abs() <= 1e-10 * v.abs().max(1.0));
                assert!((u_min - policy.mean(k, &x)).amax() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_state_q_reads_corner() {
        let mut r = rng(8);
        let mut model = random_model(&mut r, 3, 1, 2);
        model.g.iter_mut().for_each(|g| g.fill(0.0));
        let mut cost = random_cost(&mut r, 3, 1);
        cost.terminal_linear.fill(0.0);
        cost.state_linear.fill(0.0);
        let (value, _) = riccati_backward(&model, &cost).unwrap();
        let q = q_function(
            &DVector::zeros(3),
            &DVector::zeros(1),
            1,
            &model,
            &cost,
            &value,
        )
        .unwrap();
        assert!((q - (value.constant[2] + 0.5 * cost.constant)).abs() < 1e-14);
        assert_eq!(value.linear[2].amax(), 0.0);
    }

    /// Constant update without the ½ factors on the drift and offset terms.
    #[test]
    fn unhalved_constant_recursion_breaks_bellman_consistency() {
        let mut r = rng(9);
        let model = random_model(&mut r, 3, 2, 1);
        let mut cost = random_cost(&mut r, 3, 2);
        cost.constant = 0.0;
        let (value, _) = riccati_backward(&model, &cost).unwrap();
        let (b, g) = (&model.b[0], &model.g[0]);
        let (s1, v1) = (&value.quadratic[1], &value.linear[1]);
        let h_uu = &cost.control_weight + b.transpose() * s1 * b;
        let h_u = b.transpose() * s1 * g + b.transpose() * v1 + &cost.control_linear;
        let unhalved = (g.transpose() * s1 * g)[(0, 0)] + 2.0 * v1.dot(g) + value.constant[1]
            - (h_u.transpose() * h_uu.clone().lu().solve(&h_u).unwrap())[(0, 0)];
        let x = DVector::zeros(3);
        let (_, policy) = riccati_backward(&model, &cost).unwrap();
        let best = q_function(&x, &policy.mean(0, &x), 0, &model, &cost, &value).unwrap();
        assert!((value.constant[0] - best).abs() < 1e-12);
        assert!((unhalved - best).abs() > 1e-3);
    }

    #[test]
    fn value_matrices_stay_psd() {
        let mut r = rng(10);
        let model = random_model(&mut r, 4, 2, 8);
        let cost = random_cost(&mut r, 4, 2);
        let (value, _) = riccati_backward(&model, &cost).unwrap();
        for s in &value.quadratic {
            assert_eq!(s, &s.transpose());
            assert!(s.clone().symmetric_eigenvalues().min() > -1e-9 * s.amax().max(1.0));
        }
    }

    #[test]
    fn rollout_zero_and_repeatable() {
        let mut r = rng(11);
        let mut model = random_model(&mut r, 3, 2, 5);
        model.g.iter_mut().for_each(|g| g.fill(0.0));
        let cost = random_cost(&mut r, 3, 2);
        let (_, mut policy) = riccati_backward(&model, &cost).unwrap();
        policy.offsets.iter_mut().for_each(|l| l.fill(0.0));
        let zero = rollout(&model, &policy, &DVector::zeros(3), 1, true).unwrap();
        assert!(zero.states.iter().all(|x| x.amax() == 0.0));

        model.process_noise = DMatrix::identity(3, 3) * 0.01;
        policy
            .covariances
            .iter_mut()
            .for_each(|c| *c = DMatrix::identity(2, 2) * 0.1);
        let x0 = random_vector(&mut r, 3);
        let a = rollout(&model, &policy, &x0, 42, true).unwrap();
        let b = rollout(&model, &policy, &x0, 42, true).unwrap();
        let c = rollout(&model, &policy, &x0, 43, true).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn perturbed_controls_never_beat_policy() {
        let mut r = rng(12);
        let model = random_model(&mut r, 4, 2, 5);
        let cost = random_cost(&mut r, 4, 2);
        let x0 = random_vector(&mut r, 4);
        let (_, policy) = riccati_backward(&model, &cost).unwrap();
        let traj = rollout(&model, &policy, &x0, 0, false).unwrap();
        let best = trajectory_cost(&traj, &cost).unwrap();
        assert!((best - open_loop_cost(&model, &cost, &x0, &traj.controls)).abs() < 1e-9);
        for _ in 0..100 {
            let perturbed: Vec<_> = traj
                .controls
                .iter()
                .map(|u| u + random_vector(&mut r, 2) * 0.1)
                .collect();
            assert!(open_loop_cost(&model, &cost, &x0, &perturbed) >= best - 1e-12);
        }
    }

    #[test]
    fn geo_value_converges_backwards() {
        let env = EnvironmentParams::<f64>::earth();
        let radius = 42164.0;
        let speed = (env.mu / radius).sqrt();
        let state = StateVector::new(
            Vector3::new(radius, 0.0, 0.0),
            Vector3::new(0.0, speed, 0.0),
            20.0,
        );
        let (a, b) = linearize(&state, &env).unwrap().discretize(60.0).unwrap();
        let model =
            DiscreteLinearModel::time_invariant(a, b, DMatrix::zeros(7, 7), 60.0, 400).unwrap();
        let mut q = DMatrix::<f64>::identity(7, 7);
        q[(6, 6)] = 0.0;
        let cost = QuadraticCost::diagonal(q, DMatrix::identity(3, 3) * 1e10);
        let (value, _) = riccati_backward(&model, &cost).unwrap();
        let diffs: Vec<f64> = (0..400)
            .rev()
            .map(|k| (&value.quadratic[k] - &value.quadratic[k + 1]).norm())
            .collect();
        // Single-step differences oscillate while the gain settles; the
        // envelope over 20-step blocks shrinks until round-off.
        let floor = 1e-10 * value.quadratic[0].norm();
        let envelope: Vec<f64> = diffs
            .chunks(20)
            .map(|c| c.iter().cloned().fold(0.0, f64::max))
            .take_while(|&d| d > floor)
            .collect();
        assert!(envelope.len() > 3 && envelope.len() < 20);
        assert!(envelope.windows(2).all(|w| w[1] < w[0]), "{envelope:?}");
    }
}
