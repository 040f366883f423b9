//! Maximum-causal-entropy inverse optimal control.
//!
//! For a linear model and quadratic cost the maximum-entropy policy is the
//! Gibbs distribution `π(u|x) ∝ exp(-Q(x,u))`, a Gaussian around the LQR
//! action. The learner adjusts the block weight matrix `M` until the
//! expected feature moments `Σ_k E[m mᵀ]`, `m = [1, x, u]`, under that policy
//! match the demonstrations.
//!
//! Costs are used throughout. With `L(M)` the causal log-likelihood of the
//! demonstrations, `dL/dM = -½ (empirical - model)`, so ascent on `L` is the
//! update `M ← M - η ∇` where `∇ = empirical - model`.

pub mod mdp;

pub use mdp::{hard_value_iteration_mdp, soft_value_iteration_mdp, DiscreteMDP, MdpSolution};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linmodel::DiscreteLinearModel;
use crate::lqg::{backward_pass, feature_vector, GaussianPolicy, QuadraticCost, ValueQuadratic};
use crate::scalar::{lit, Scalar};
use crate::trajectory::Trajectory;

/// Feature second moments averaged over trajectories.
///
/// `running` is `Σ_{k<N} E[m_k m_kᵀ]` over `[1, x_k, u_k]`; `terminal` is
/// `E[[1, x_N][1, x_N]ᵀ]`, which enters the gradient because the learned
/// terminal cost is tied to the running state weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMoments<T: Scalar> {
    pub running: DMatrix<T>,
    pub terminal: DMatrix<T>,
    pub trajectory_count: usize,
}

impl<T: Scalar> FeatureMoments<T> {
    pub fn dim(&self) -> usize {
        self.running.nrows()
    }

    /// Moments paired with a block matrix whose terminal cost is tied:
    /// `running` plus `terminal` embedded in the leading `(1+n)` block.
    pub fn tied(&self) -> DMatrix<T> {
        let mut out = self.running.clone();
        let t = self.terminal.nrows();
        let mut corner = out.view_mut((0, 0), (t, t));
        corner += &self.terminal;
        out
    }

    /// Trajectory-weighted average of several moment sets.
    pub fn combine(parts: &[FeatureMoments<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Empty("no moments to combine".into()))?;
        let total: usize = parts.iter().map(|p| p.trajectory_count).sum();
        if total == 0 {
            return Err(Error::Empty("moments carry no trajectories".into()));
        }
        let mut running = DMatrix::zeros(first.dim(), first.dim());
        let mut terminal = DMatrix::zeros(first.terminal.nrows(), first.terminal.ncols());
        for part in parts {
            if part.running.shape() != running.shape() || part.terminal.shape() != terminal.shape()
            {
                return Err(Error::DimensionMismatch("moment shapes differ".into()));
            }
            let w = T::from_usize_lossy(part.trajectory_count) / T::from_usize_lossy(total);
            running += &part.running * w;
            terminal += &part.terminal * w;
        }
        Ok(Self {
            running,
            terminal,
            trajectory_count: total,
        })
    }
}

/// Soft value function and Gibbs policy `π(u|x) ∝ exp(-Q(x,u))`.
///
/// The mean is the LQR action `K_k x + l_k` and the covariance is
/// `(R + BᵀS_{k+1}B)⁻¹`. The value constant carries the log-partition terms,
/// so `log π(u|x) = V_k(x) - Q_k(x,u)`.
pub fn gibbs_policy_lqr<T: Scalar>(
    model: &DiscreteLinearModel<T>,
    cost: &QuadraticCost<T>,
) -> Result<(ValueQuadratic<T>, GaussianPolicy<T>)> {
    backward_pass(model, cost, true)
}

/// `Σ_k E[H(u_k | x_k)]` for a Gaussian policy: `Σ_k ½ log det(2πe Σ_k)`.
pub fn causal_entropy<T: Scalar>(policy: &GaussianPolicy<T>) -> Result<T> {
    let half = lit::<T>(0.5);
    let mut total = T::zero();
    for (k, cov) in policy.covariances.iter().enumerate() {
        let m = T::from_usize_lossy(cov.nrows());
        let chol = Cholesky::<T, Dyn>::new(cov.clone()).ok_or(Error::IllPosedCost { step: k })?;
        let log_det = chol.l().diagonal().map(|d| d.ln()).sum() * lit(2.0);
        total += half * (log_det + m * (T::two_pi().ln() + T::one()));
    }
    Ok(total)
}

fn outer<T: Scalar>(v: &DVector<T>) -> DMatrix<T> {
    v * v.transpose()
}

fn terminal_feature<T: Scalar>(x: &DVector<T>) -> DVector<T> {
    feature_vector(x, &DVector::zeros(0))
}

/// Average over trajectories of `Σ_k [1,x_k,u_k][1,x_k,u_k]ᵀ`.
pub fn empirical_moments<T: Scalar>(trajectories: &[Trajectory<T>]) -> Result<FeatureMoments<T>> {
    let first = trajectories
        .first()
        .ok_or_else(|| Error::Empty("no demonstrations".into()))?;
    let (horizon, n, m) = (first.horizon(), first.state_dim(), first.control_dim());
    let d = 1 + n + m;
    let mut running = DMatrix::zeros(d, d);
    let mut terminal = DMatrix::zeros(1 + n, 1 + n);
    for (index, traj) in trajectories.iter().enumerate() {
        if traj.horizon() != horizon || traj.state_dim() != n || traj.control_dim() != m {
            return Err(Error::Trajectory {
                index,
                source: Box::new(Error::DimensionMismatch(format!(
                    "expected horizon {horizon} with {n} states and {m} controls"
                ))),
            });
        }
        for (x, u) in traj.states.iter().zip(&traj.controls) {
            running += outer(&feature_vector(x, u));
        }
        terminal += outer(&terminal_feature(traj.states.last().expect("nonempty")));
    }
    let count = T::from_usize_lossy(trajectories.len());
    Ok(FeatureMoments {
        running: running / count,
        terminal: terminal / count,
        trajectory_count: trajectories.len(),
    })
}

/// Closed-form moments of `[1, x_k, u_k]` under `policy` and the model's
/// process noise, with `x_0 ~ N(x0_mean, x0_cov)`.
///
/// Mean and covariance are pushed forward exactly and each step contributes
/// `μ μᵀ + Σ`.
pub fn model_moments<T: Scalar>(
    model: &DiscreteLinearModel<T>,
    policy: &GaussianPolicy<T>,
    x0_mean: &DVector<T>,
    x0_cov: &DMatrix<T>,
) -> Result<FeatureMoments<T>> {
    let (horizon, n, m) = (model.horizon(), model.state_dim(), model.control_dim());
    if policy.horizon() != horizon {
        return Err(Error::DimensionMismatch(format!(
            "policy horizon {} vs model horizon {horizon}",
            policy.horizon()
        )));
    }
    if x0_mean.len() != n || x0_cov.shape() != (n, n) {
        return Err(Error::DimensionMismatch("initial distribution size".into()));
    }
    let d = 1 + n + m;
    let mut running = DMatrix::zeros(d, d);
    let mut mean = x0_mean.clone();
    let mut cov = x0_cov.clone();
    for k in 0..horizon {
        let gain = &policy.gains[k];
        let u_mean = policy.mean(k, &mean);
        let ux = gain * &cov;
        let uu = &ux * gain.transpose() + &policy.covariances[k];
        let mut joint = DMatrix::zeros(d, d);
        joint.view_mut((1, 1), (n, n)).copy_from(&cov);
        joint.view_mut((1 + n, 1), (m, n)).copy_from(&ux);
        joint
            .view_mut((1, 1 + n), (n, m))
            .copy_from(&ux.transpose());
        joint.view_mut((1 + n, 1 + n), (m, m)).copy_from(&uu);
        running += outer(&feature_vector(&mean, &u_mean)) + &joint;

        let (a, b) = (&model.a[k], &model.b[k]);
        let next_cov = a * &cov * a.transpose()
            + a * ux.transpose() * b.transpose()
            + b * &ux * a.transpose()
            + b * &uu * b.transpose()
            + &model.process_noise;
        mean = model.step_state(k, &mean, &u_mean);
        cov = (&next_cov + next_cov.transpose()) * lit::<T>(0.5);
    }
    let mut terminal = outer(&terminal_feature(&mean));
    let mut tail = terminal.view_mut((1, 1), (n, n));
    tail += &cov;
    Ok(FeatureMoments {
        running,
        terminal,
        trajectory_count: 1,
    })
}

/// `∇ = empirical - model` over the tied moments, symmetrized.
pub fn mce_gradient<T: Scalar>(
    empirical: &FeatureMoments<T>,
    model: &FeatureMoments<T>,
) -> Result<DMatrix<T>> {
    if empirical.running.shape() != model.running.shape()
        || empirical.terminal.shape() != model.terminal.shape()
    {
        return Err(Error::DimensionMismatch("moment shapes differ".into()));
    }
    let diff = empirical.tied() - model.tied();
    Ok((&diff + diff.transpose()) * lit::<T>(0.5))
}

/// Demonstrations that share one linear model (same horizon and time grid).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoGroup<T: Scalar> {
    pub model: DiscreteLinearModel<T>,
    pub trajectories: Vec<Trajectory<T>>,
}

impl<T: Scalar> DemoGroup<T> {
    fn validate(&self) -> Result<()> {
        if self.trajectories.is_empty() {
            return Err(Error::Empty(
                "demonstration group without trajectories".into(),
            ));
        }
        let (h, n, m) = (
            self.model.horizon(),
            self.model.state_dim(),
            self.model.control_dim(),
        );
        for (index, t) in self.trajectories.iter().enumerate() {
            if t.horizon() != h || t.state_dim() != n || t.control_dim() != m {
                return Err(Error::Trajectory {
                    index,
                    source: Box::new(Error::DimensionMismatch(format!(
                        "trajectory does not match the {h}-step {n}x{m} model"
                    ))),
                });
            }
        }
        Ok(())
    }

    /// Sample mean and (population) covariance of the initial states.
    pub fn initial_state_stats(&self) -> (DVector<T>, DMatrix<T>) {
        let n = self.model.state_dim();
        let count = T::from_usize_lossy(self.trajectories.len());
        let mean = self
            .trajectories
            .iter()
            .fold(DVector::zeros(n), |acc, t| acc + &t.states[0])
            / count;
        let cov = self
            .trajectories
            .iter()
            .fold(DMatrix::zeros(n, n), |acc, t| {
                acc + outer(&(&t.states[0] - &mean))
            })
            / count;
        (mean, cov)
    }
}

/// Average over trajectories of `Σ_k log π(u_k | x_k)` under the Gibbs policy.
pub fn causal_log_likelihood<T: Scalar>(
    groups: &[DemoGroup<T>],
    cost: &QuadraticCost<T>,
) -> Result<T> {
    let mut total = T::zero();
    let mut count = 0usize;
    let half = lit::<T>(0.5);
    for group in groups {
        group.validate()?;
        let (_, policy) = gibbs_policy_lqr(&group.model, cost)?;
        let mut factors = Vec::with_capacity(policy.horizon());
        for (k, cov) in policy.covariances.iter().enumerate() {
            factors
                .push(Cholesky::<T, Dyn>::new(cov.clone()).ok_or(Error::IllPosedCost { step: k })?);
        }
        for traj in &group.trajectories {
            for (k, chol) in factors.iter().enumerate() {
                let resid = &traj.controls[k] - policy.mean(k, &traj.states[k]);
                let white = chol
                    .l()
                    .solve_lower_triangular(&resid)
                    .expect("nonsingular factor");
                let log_det = chol.l().diagonal().map(|d| d.ln()).sum() * lit(2.0);
                let m = T::from_usize_lossy(resid.len());
                total -= half * (white.norm_squared() + log_det + m * T::two_pi().ln());
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Empty("no demonstrations".into()));
    }
    Ok(total / T::from_usize_lossy(count))
}

/// The maximum-entropy dual `avg(V_0(x_0) - J(τ))`, whose gradient in `M` is
/// exactly `-½ (empirical - model)` with the terminal cost tied. It equals
/// [`causal_log_likelihood`] when the model has no process noise.
pub fn dual_objective<T: Scalar>(groups: &[DemoGroup<T>], cost: &QuadraticCost<T>) -> Result<T> {
    let block = cost.block_matrix();
    let mut parts = Vec::with_capacity(groups.len());
    for group in groups {
        group.validate()?;
        let (value, _) = gibbs_policy_lqr(&group.model, cost)?;
        let emp = empirical_moments(&group.trajectories)?;
        parts.push((
            group_dual(&value, group, &emp, &block),
            group.trajectories.len(),
        ));
    }
    weighted_mean(&parts)
}

fn group_dual<T: Scalar>(
    value: &ValueQuadratic<T>,
    group: &DemoGroup<T>,
    emp: &FeatureMoments<T>,
    block: &DMatrix<T>,
) -> T {
    let half = lit::<T>(0.5);
    let (mean, cov) = group.initial_state_stats();
    let start = value.evaluate(0, &mean) + half * (&value.quadratic[0] * &cov).trace();
    start - half * block.component_mul(&emp.tied()).sum()
}

fn weighted_mean<T: Scalar>(parts: &[(T, usize)]) -> Result<T> {
    let total: usize = parts.iter().map(|p| p.1).sum();
    if total == 0 {
        return Err(Error::Empty("no demonstrations".into()));
    }
    let sum = parts
        .iter()
        .fold(T::zero(), |acc, &(v, c)| acc + v * T::from_usize_lossy(c));
    Ok(sum / T::from_usize_lossy(total))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMethod {
    Plain,
    Momentum,
    /// Limited-memory quasi-Newton steps; `learning_rate` only sets the
    /// first step.
    Lbfgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IrlConfig<T: Scalar> {
    pub learning_rate: T,
    pub max_iterations: usize,
    /// Stop once `‖∇‖_F` in standardized coordinates falls below this.
    pub tolerance: T,
    pub method: GradientMethod,
    pub momentum: T,
    /// Backtrack (and then grow) the step so the dual never decreases.
    pub line_search: bool,
    /// Rescale features to unit RMS before learning.
    pub standardize: bool,
    /// Feature indices (`0` is the constant, then states, then controls)
    /// whose rows and columns of `M` stay at their initial values.
    pub frozen: Vec<usize>,
    /// Recorded for provenance of runs; the learner itself is deterministic.
    pub seed: u64,
}

impl<T: Scalar> Default for IrlConfig<T> {
    fn default() -> Self {
        Self {
            learning_rate: lit(1e-3),
            max_iterations: 5000,
            tolerance: lit(1e-6),
            method: GradientMethod::Momentum,
            momentum: lit(0.9),
            line_search: true,
            standardize: true,
            frozen: Vec::new(),
            seed: 0,
        }
    }
}

impl<T: Scalar> IrlConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > T::zero()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if !(self.tolerance > T::zero()) {
            return Err(Error::config("tolerance", "must be positive"));
        }
        if !(self.momentum >= T::zero() && self.momentum < T::one()) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord<T: Scalar> {
    pub iteration: usize,
    pub gradient_norm: T,
    pub objective: T,
    pub step_size: T,
    /// Caller-supplied diagnostic, e.g. an error against a known cost.
    pub metric: Option<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnResult<T: Scalar> {
    pub cost: QuadraticCost<T>,
    pub trace: Vec<IterationRecord<T>>,
    pub converged: bool,
}

/// Iterations over which a tenfold gradient-norm growth counts as divergence.
pub const DIVERGENCE_WINDOW: usize = 50;
/// Growth of `M` (standardized) past its starting norm treated as runaway.
pub const RUNAWAY_GROWTH: f64 = 1e12;
/// Smallest eigenvalue kept in the joint state-control weight.
pub const EIGENVALUE_FLOOR: f64 = 1e-8;

struct PreparedGroup<T: Scalar> {
    model: DiscreteLinearModel<T>,
    group: DemoGroup<T>,
    empirical: FeatureMoments<T>,
    x0_mean: DVector<T>,
    x0_cov: DMatrix<T>,
}

struct Evaluation<T: Scalar> {
    objective: T,
    gradient: DMatrix<T>,
}

/// Learns `M` from demonstrations; see [`learn_cost_observed`].
pub fn learn_cost<T: Scalar>(
    groups: &[DemoGroup<T>],
    config: &IrlConfig<T>,
    initial: &QuadraticCost<T>,
) -> Result<LearnResult<T>> {
    learn_cost_observed(groups, config, initial, |_| None)
}

/// Gradient ascent on the causal log-likelihood over the block matrix `M`.
///
/// The terminal cost of every iterate is tied to `M`; `initial` contributes
/// only its running blocks. After each step `M` is symmetrized and the
/// joint `[[Q, Pᵀ], [P, R]]` block is projected onto eigenvalues
/// `≥ EIGENVALUE_FLOOR`. `observer` is called on every iterate and its value
/// is stored in the trace.
pub fn learn_cost_observed<T, F>(
    groups: &[DemoGroup<T>],
    config: &IrlConfig<T>,
    initial: &QuadraticCost<T>,
    mut observer: F,
) -> Result<LearnResult<T>>
where
    T: Scalar,
    F: FnMut(&QuadraticCost<T>) -> Option<T>,
{
    config.validate()?;
    if groups.is_empty() {
        return Err(Error::Empty("no demonstrations".into()));
    }
    for group in groups {
        group.validate()?;
    }
    let n = initial.state_dim();
    let d = initial.block_matrix().nrows();
    if groups[0].model.state_dim() != n || 1 + n + groups[0].model.control_dim() != d {
        return Err(Error::DimensionMismatch(
            "initial cost does not match the model".into(),
        ));
    }
    if let Some(&bad) = config.frozen.iter().find(|&&i| i >= d) {
        return Err(Error::config(
            "frozen",
            format!("feature index {bad} out of range"),
        ));
    }

    let raw: Vec<_> = groups
        .iter()
        .map(|g| empirical_moments(&g.trajectories))
        .collect::<Result<_>>()?;
    let overall = FeatureMoments::combine(&raw)?;
    let scale = feature_scale(&overall, config.standardize);
    let prepared: Vec<PreparedGroup<T>> = groups
        .iter()
        .map(|g| prepare_group(g, &scale, n))
        .collect::<Result<_>>()?;

    let to_scaled = |block: &DMatrix<T>| scale_block(block, &scale, false);
    let from_scaled =
        |block: &DMatrix<T>| QuadraticCost::from_block(&scale_block(block, &scale, true), n);

    let anchor = project(&to_scaled(&initial.block_matrix()), None, &config.frozen);
    let mut block = anchor.clone();
    let mut current = evaluate(&prepared, &block, n, &config.frozen)?;
    let mut velocity = DMatrix::zeros(d, d);
    let mut memory = Lbfgs::new(LBFGS_MEMORY);
    let mut step = config.learning_rate;
    let mut trace: Vec<IterationRecord<T>> = Vec::new();

    for iteration in 0..=config.max_iterations {
        let cost = from_scaled(&block)?;
        let gradient_norm = current.gradient.norm();
        trace.push(IterationRecord {
            iteration,
            gradient_norm,
            objective: current.objective,
            step_size: step,
            metric: observer(&cost),
        });
        if gradient_norm < config.tolerance {
            return Ok(LearnResult {
                cost,
                trace,
                converged: true,
            });
        }
        // Under a line search the objective rises monotonically, so a
        // growing gradient alone only means a steeper region; it counts as
        // divergence when the window brought no gain.
        let stalled =
            |past: &IterationRecord<T>| !config.line_search || current.objective <= past.objective;
        if iteration >= DIVERGENCE_WINDOW
            && gradient_norm > trace[iteration - DIVERGENCE_WINDOW].gradient_norm * lit(10.0)
            && stalled(&trace[iteration - DIVERGENCE_WINDOW])
        {
            return Err(Error::Divergence {
                iteration,
                trace: trace.iter().map(|r| r.gradient_norm.as_f64()).collect(),
            });
        }
        // The dual has no maximizer when the demonstrations beat every
        // policy the model admits; `M` then grows without bound.
        if block.norm() > anchor.norm().max(T::one()) * lit(RUNAWAY_GROWTH) {
            return Err(Error::Divergence {
                iteration,
                trace: trace.iter().map(|r| r.gradient_norm.as_f64()).collect(),
            });
        }
        if iteration == config.max_iterations {
            break;
        }

        let direction = match config.method {
            GradientMethod::Plain => current.gradient.clone(),
            GradientMethod::Momentum => {
                velocity = &velocity * config.momentum + &current.gradient;
                velocity.clone()
            }
            GradientMethod::Lbfgs => {
                step = T::one();
                memory.direction(&current.gradient)
            }
        };
        let mut accepted = None;
        for _ in 0..60 {
            let candidate = project(&(&block - &direction * step), Some(&anchor), &config.frozen);
            let trial = evaluate(&prepared, &candidate, n, &config.frozen);
            let improves = match &trial {
                Ok(t) => {
                    // Sufficient increase along the realized (projected) move.
                    let predicted = half_weighted_inner(&current.gradient, &(&block - &candidate));
                    // A projected move that predicts no increase is not an ascent step.
                    !config.line_search
                        || (predicted > T::zero()
                            && t.objective >= current.objective + predicted * lit(1e-4))
                }
                Err(Error::IllPosedCost { .. }) => false,
                Err(e) => return Err(e.clone()),
            };
            if improves {
                accepted = Some((candidate, trial?));
                break;
            }
            if !config.line_search {
                return Err(trial.err().unwrap_or(Error::NonConvergence(iteration)));
            }
            step *= lit(0.5);
        }
        let Some((candidate, trial)) = accepted else {
            if config.method == GradientMethod::Lbfgs && !memory.is_empty() {
                // Stale curvature pairs; restart from steepest ascent.
                memory.clear();
                continue;
            }
            if config.method == GradientMethod::Momentum && velocity.iter().any(|v| *v != T::zero())
            {
                velocity.fill(T::zero());
                step = config.learning_rate;
                continue;
            }
            // No ascent step found: the iterate is stationary to precision.
            break;
        };
        match config.method {
            GradientMethod::Lbfgs => memory.push(
                &(&candidate - &block),
                &(&trial.gradient - &current.gradient),
            ),
            GradientMethod::Momentum if config.line_search && step < config.learning_rate => {
                velocity.fill(T::zero())
            }
            _ => {}
        }
        block = candidate;
        current = trial;
        if config.line_search && config.method != GradientMethod::Lbfgs {
            step *= lit(1.25);
        }
    }

    let cost = from_scaled(&block)?;
    Ok(LearnResult {
        cost,
        trace,
        converged: false,
    })
}

/// Curvature pairs kept by the quasi-Newton update.
pub const LBFGS_MEMORY: usize = 10;

/// `Σ_ij a_ij b_ij / 2`: the first-order change of the dual along a
/// symmetric displacement `b` when `a` is the moment gradient.
fn half_weighted_inner<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    a.component_mul(b).sum() * lit(0.5)
}

/// Limited-memory BFGS on symmetric matrices, minimizing `-L`.
///
/// With the inner product `⟨a, b⟩ = Σ a_ij b_ij / 2` the moment gradient `∇`
/// is exactly the gradient of `-L`, so the two-loop recursion runs on the
/// matrices directly.
struct Lbfgs<T: Scalar> {
    capacity: usize,
    pairs: std::collections::VecDeque<(DMatrix<T>, DMatrix<T>, T)>,
}

impl<T: Scalar> Lbfgs<T> {
    fn new(capacity: usize) -> Self {
        Self {
            capacity,
            pairs: std::collections::VecDeque::new(),
        }
    }

    fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn clear(&mut self) {
        self.pairs.clear();
    }

    /// Records the iterate change `s` and gradient change `y` (new minus old).
    fn push(&mut self, s: &DMatrix<T>, y: &DMatrix<T>) {
        let sy = half_weighted_inner(s, y);
        if !(sy
            > T::default_epsilon()
                * half_weighted_inner(y, y).sqrt()
                * half_weighted_inner(s, s).sqrt())
        {
            return;
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s.clone(), y.clone(), T::one() / sy));
    }

    /// Quasi-Newton step `p` with the update `M ← M - t p`.
    fn direction(&self, gradient: &DMatrix<T>) -> DMatrix<T> {
        let Some((s_last, y_last, _)) = self.pairs.back() else {
            let norm = gradient.norm();
            return gradient / norm.max(T::one());
        };
        let mut q = gradient.clone();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let alpha = *rho * half_weighted_inner(s, &q);
            q -= y * alpha;
            alphas.push(alpha);
        }
        let gamma = half_weighted_inner(s_last, y_last) / half_weighted_inner(y_last, y_last);
        let mut r = q * gamma;
        for ((s, y, rho), alpha) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let beta = *rho * half_weighted_inner(y, &r);
            r += s * (alpha - beta);
        }
        if half_weighted_inner(&r, gradient) > T::zero() {
            r
        } else {
            gradient.clone()
        }
    }
}

/// Per-feature RMS over all demonstration steps (`1` for the constant and
/// for features that never vary).
fn feature_scale<T: Scalar>(moments: &FeatureMoments<T>, enabled: bool) -> DVector<T> {
    let d = moments.dim();
    let steps = moments.running[(0, 0)];
    DVector::from_fn(d, |i, _| {
        if !enabled || i == 0 {
            return T::one();
        }
        let rms = (moments.running[(i, i)] / steps).sqrt();
        if rms > T::zero() && rms.is_finite() {
            rms
        } else {
            T::one()
        }
    })
}

/// `D M D` (into standardized coordinates) or `D⁻¹ M D⁻¹` (back), where
/// `m = D m̃`.
fn scale_block<T: Scalar>(block: &DMatrix<T>, scale: &DVector<T>, inverse: bool) -> DMatrix<T> {
    DMatrix::from_fn(block.nrows(), block.ncols(), |i, j| {
        if inverse {
            block[(i, j)] / (scale[i] * scale[j])
        } else {
            block[(i, j)] * scale[i] * scale[j]
        }
    })
}

fn prepare_group<T: Scalar>(
    group: &DemoGroup<T>,
    scale: &DVector<T>,
    n: usize,
) -> Result<PreparedGroup<T>> {
    let m = group.model.control_dim();
    let x_scale = scale.rows(1, n).map(|s| T::one() / s);
    let u_scale = scale.rows(1 + n, m).map(|s| T::one() / s);
    let model = group.model.rescaled(&x_scale, &u_scale);
    let trajectories = group
        .trajectories
        .iter()
        .map(|t| Trajectory {
            times: t.times.clone(),
            states: t.states.iter().map(|x| x.component_mul(&x_scale)).collect(),
            controls: t
                .controls
                .iter()
                .map(|u| u.component_mul(&u_scale))
                .collect(),
        })
        .collect();
    let scaled = DemoGroup {
        model: model.clone(),
        trajectories,
    };
    let empirical = empirical_moments(&scaled.trajectories)?;
    let (x0_mean, x0_cov) = scaled.initial_state_stats();
    Ok(PreparedGroup {
        model,
        group: scaled,
        empirical,
        x0_mean,
        x0_cov,
    })
}

fn evaluate<T: Scalar>(
    prepared: &[PreparedGroup<T>],
    block: &DMatrix<T>,
    n: usize,
    frozen: &[usize],
) -> Result<Evaluation<T>> {
    let cost = QuadraticCost::from_block(block, n)?;
    let parts: Vec<(T, FeatureMoments<T>)> = prepared
        .par_iter()
        .map(|p| {
            let (value, policy) = gibbs_policy_lqr(&p.model, &cost)?;
            let moments = model_moments(&p.model, &policy, &p.x0_mean, &p.x0_cov)?;
            let dual = group_dual(&value, &p.group, &p.empirical, block);
            let count = p.group.trajectories.len();
            Ok((
                dual,
                FeatureMoments {
                    trajectory_count: count,
                    ..moments
                },
            ))
        })
        .collect::<Result<_>>()?;
    let objective = weighted_mean(
        &parts
            .iter()
            .map(|(v, m)| (*v, m.trajectory_count))
            .collect::<Vec<_>>(),
    )?;
    let model_all = FeatureMoments::combine(&parts.into_iter().map(|p| p.1).collect::<Vec<_>>())?;
    let empirical_all = FeatureMoments::combine(
        &prepared
            .iter()
            .map(|p| p.empirical.clone())
            .collect::<Vec<_>>(),
    )?;
    let mut gradient = mce_gradient(&empirical_all, &model_all)?;
    for &i in frozen {
        gradient.row_mut(i).fill(T::zero());
        gradient.column_mut(i).fill(T::zero());
    }
    Ok(Evaluation {
        objective,
        gradient,
    })
}

/// Symmetrizes, floors the joint weight spectrum, and restores frozen
/// rows and columns from `anchor`.
fn project<T: Scalar>(
    block: &DMatrix<T>,
    anchor: Option<&DMatrix<T>>,
    frozen: &[usize],
) -> DMatrix<T> {
    let d = block.nrows();
    let mut out = (block + block.transpose()) * lit::<T>(0.5);
    if let Some(anchor) = anchor {
        for &i in frozen {
            out.row_mut(i).copy_from(&anchor.row(i));
            out.column_mut(i).copy_from(&anchor.column(i));
        }
    }
    let joint = out.view((1, 1), (d - 1, d - 1)).into_owned();
    let eig = joint.symmetric_eigen();
    let floor = lit::<T>(EIGENVALUE_FLOOR);
    if eig.eigenvalues.min() < floor {
        let clipped = eig.eigenvalues.map(|l| l.max(floor));
        let rebuilt =
            &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
        out.view_mut((1, 1), (d - 1, d - 1))
            .copy_from(&((&rebuilt + rebuilt.transpose()) * lit::<T>(0.5)));
    }
    out
}

#[cfg(test)]
mod tests;
