//! Tabular soft and hard value iteration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// Finite MDP with rewards `r(s, a)` and transitions `P(s' | s, a)`.
///
/// Terminal states are absorbing with zero value. With `horizon = Some(N)`
/// the solvers run exactly `N` backups from a zero terminal value and report
/// the first-stage tables; with `None` they iterate to a fixed point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMDP<T: Scalar> {
    /// `transitions[s][a][s']`.
    pub transitions: Vec<Vec<Vec<T>>>,
    /// `rewards[s][a]`.
    pub rewards: Vec<Vec<T>>,
    pub discount: T,
    pub horizon: Option<usize>,
    pub terminal: Vec<bool>,
}

/// Value tables from a value-iteration run. `continuation[s][a]` is
/// `γ Σ_s' P(s'|s,a) V(s')`; the action value is `rewards + continuation`.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpSolution<T: Scalar> {
    pub continuation: Vec<Vec<T>>,
    pub values: Vec<T>,
    /// `policy[s][a]`; rows sum to one.
    pub policy: Vec<Vec<T>>,
    pub iterations: usize,
}

/// Cap on fixed-point backups for infinite-horizon problems.
pub const MAX_SWEEPS: usize = 100_000;

/// Grid cell `(row, col)`.
pub type Cell = (usize, usize);

impl<T: Scalar> DiscreteMDP<T> {
    pub fn state_count(&self) -> usize {
        self.rewards.len()
    }

    pub fn action_count(&self) -> usize {
        self.rewards.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let s_count = self.state_count();
        let a_count = self.action_count();
        if s_count == 0 || a_count == 0 {
            return Err(Error::Empty("MDP needs states and actions".into()));
        }
        if !(self.discount >= T::zero() && self.discount < T::one()) {
            return Err(Error::InvalidInput("discount must lie in [0, 1)".into()));
        }
        if self.transitions.len() != s_count || self.terminal.len() != s_count {
            return Err(Error::DimensionMismatch(
                "per-state tables differ in length".into(),
            ));
        }
        let tol = lit::<T>(1e-12);
        for (s, (rows, rewards)) in self.transitions.iter().zip(&self.rewards).enumerate() {
            if rows.len() != a_count || rewards.len() != a_count {
                return Err(Error::DimensionMismatch(format!("state {s} action count")));
            }
            for row in rows {
                if row.len() != s_count || row.iter().any(|&p| p < T::zero()) {
                    return Err(Error::InvalidInput(format!(
                        "state {s} has an invalid transition row"
                    )));
                }
                let total = row.iter().fold(T::zero(), |acc, &p| acc + p);
                if (total - T::one()).abs() > tol {
                    return Err(Error::InvalidInput(format!(
                        "state {s} transition row sums to {total}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Rewards multiplied by `beta`.
    pub fn scaled(&self, beta: T) -> Self {
        let mut out = self.clone();
        for row in &mut out.rewards {
            row.iter_mut().for_each(|r| *r *= beta);
        }
        out
    }

    /// Deterministic grid with actions up, right, down, left. Moves into a
    /// blocked cell or off the grid leave the agent in place. Every action
    /// earns `step_reward`; entering `goal` adds `goal_reward`, and the goal
    /// is terminal.
    #[allow(clippy::too_many_arguments)]
    pub fn gridworld(
        rows: usize,
        cols: usize,
        blocked: &[Cell],
        goal: Cell,
        step_reward: T,
        goal_reward: T,
        discount: T,
        horizon: Option<usize>,
    ) -> Self {
        let index = |(r, c): Cell| r * cols + c;
        let n = rows * cols;
        let moves: [(isize, isize); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];
        let mut transitions = vec![vec![vec![T::zero(); n]; 4]; n];
        let mut rewards = vec![vec![step_reward; 4]; n];
        let mut terminal = vec![false; n];
        terminal[index(goal)] = true;
        for r in 0..rows {
            for c in 0..cols {
                let s = index((r, c));
                for (a, (dr, dc)) in moves.iter().enumerate() {
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    let inside = nr >= 0 && nc >= 0 && (nr as usize) < rows && (nc as usize) < cols;
                    let target = (nr as usize, nc as usize);
                    let next = if inside && !blocked.contains(&target) {
                        target
                    } else {
                        (r, c)
                    };
                    transitions[s][a][index(next)] = T::one();
                    if next == goal && s != index(goal) {
                        rewards[s][a] += goal_reward;
                    }
                }
            }
        }
        Self {
            transitions,
            rewards,
            discount,
            horizon,
            terminal,
        }
    }
}

fn log_sum_exp<T: Scalar>(values: &[T]) -> T {
    let max = values.iter().cloned().fold(T::min_value().unwrap(), T::max);
    let sum = values
        .iter()
        .fold(T::zero(), |acc, &v| acc + (v - max).exp());
    max + sum.ln()
}

fn hard_max<T: Scalar>(values: &[T]) -> T {
    values.iter().cloned().fold(T::min_value().unwrap(), T::max)
}

fn continuation<T: Scalar>(mdp: &DiscreteMDP<T>, values: &[T]) -> Vec<Vec<T>> {
    mdp.transitions
        .iter()
        .map(|rows| {
            rows.iter()
                .map(|row| {
                    mdp.discount
                        * row
                            .iter()
                            .zip(values)
                            .fold(T::zero(), |acc, (&p, &v)| acc + p * v)
                })
                .collect()
        })
        .collect()
}

fn backup<T: Scalar>(mdp: &DiscreteMDP<T>, cont: &[Vec<T>], combine: fn(&[T]) -> T) -> Vec<T> {
    (0..mdp.state_count())
        .map(|s| {
            if mdp.terminal[s] {
                return T::zero();
            }
            let q: Vec<T> = mdp.rewards[s]
                .iter()
                .zip(&cont[s])
                .map(|(&r, &c)| r + c)
                .collect();
            combine(&q)
        })
        .collect()
}

fn iterate<T: Scalar>(
    mdp: &DiscreteMDP<T>,
    combine: fn(&[T]) -> T,
    tolerance: T,
) -> Result<(Vec<Vec<T>>, Vec<T>, usize)> {
    mdp.validate()?;
    let mut values = vec![T::zero(); mdp.state_count()];
    let mut cont = continuation(mdp, &values);
    let sweeps = mdp.horizon.unwrap_or(MAX_SWEEPS);
    for sweep in 1..=sweeps {
        let next = backup(mdp, &cont, combine);
        let change = next
            .iter()
            .zip(&values)
            .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs()));
        let scale = next.iter().fold(T::one(), |acc, &v| acc.max(v.abs()));
        values = next;
        let next_cont = continuation(mdp, &values);
        match mdp.horizon {
            // Report the continuation that produced the first-stage values.
            Some(n) if sweep == n => return Ok((cont, values, sweep)),
            None if change <= tolerance * scale => return Ok((next_cont, values, sweep)),
            _ => cont = next_cont,
        }
    }
    match mdp.horizon {
        Some(_) => Ok((cont, values, 0)),
        None => Err(Error::NonConvergence(MAX_SWEEPS)),
    }
}

/// Relative change at which infinite-horizon iteration stops.
fn default_tolerance<T: Scalar>() -> T {
    T::default_epsilon() * lit(64.0)
}

/// Soft value iteration: `V(s) = log Σ_a exp(r(s,a) + Q(s,a))` with
/// `Q(s,a) = γ Σ_s' P(s'|s,a) V(s')` and policy
/// `π(a|s) = exp(r(s,a) + Q(s,a) - V(s))`.
pub fn soft_value_iteration_mdp<T: Scalar>(mdp: &DiscreteMDP<T>) -> Result<MdpSolution<T>> {
    let (cont, values, iterations) = iterate(mdp, log_sum_exp, default_tolerance())?;
    let a_count = mdp.action_count();
    let policy = (0..mdp.state_count())
        .map(|s| {
            if mdp.terminal[s] {
                return vec![T::one() / T::from_usize_lossy(a_count); a_count];
            }
            let q: Vec<T> = mdp.rewards[s]
                .iter()
                .zip(&cont[s])
                .map(|(&r, &c)| r + c)
                .collect();
            let norm = log_sum_exp(&q);
            q.iter().map(|&v| (v - norm).exp()).collect()
        })
        .collect();
    Ok(MdpSolution {
        continuation: cont,
        values,
        policy,
        iterations,
    })
}

/// Bellman-optimal value iteration with a greedy one-hot policy (lowest
/// action index on ties).
pub fn hard_value_iteration_mdp<T: Scalar>(mdp: &DiscreteMDP<T>) -> Result<MdpSolution<T>> {
    let (cont, values, iterations) = iterate(mdp, hard_max, default_tolerance())?;
    let a_count = mdp.action_count();
    let policy = (0..mdp.state_count())
        .map(|s| {
            let q: Vec<T> = mdp.rewards[s]
                .iter()
                .zip(&cont[s])
                .map(|(&r, &c)| r + c)
                .collect();
            let best = q
                .iter()
                .enumerate()
                .fold(0, |best, (a, &v)| if v > q[best] { a } else { best });
            (0..a_count)
                .map(|a| if a == best { T::one() } else { T::zero() })
                .collect()
        })
        .collect();
    Ok(MdpSolution {
        continuation: cont,
        values,
        policy,
        iterations,
    })
}
