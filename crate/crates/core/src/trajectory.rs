use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Time-indexed record of states and the controls applied between them.
///
/// `states` holds `N + 1` samples and `controls` holds `N`; control `k` is
/// held from `times[k]` to `times[k + 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<T: Scalar> {
    pub times: Vec<T>,
    pub states: Vec<DVector<T>>,
    pub controls: Vec<DVector<T>>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn new(times: Vec<T>, states: Vec<DVector<T>>, controls: Vec<DVector<T>>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Empty("trajectory has no states".into()));
        }
        if times.len() != states.len() || controls.len() + 1 != states.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} times, {} states, {} controls",
                times.len(),
                states.len(),
                controls.len()
            )));
        }
        Ok(Self {
            times,
            states,
            controls,
        })
    }

    /// Number of control steps.
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn control_dim(&self) -> usize {
        self.controls.first().map_or(0, |u| u.len())
    }

    /// Sub-trajectory covering control steps `start..end` (states `start..=end`).
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.horizon() {
            return Err(Error::InvalidInput(format!(
                "slice {start}..{end} outside horizon {}",
                self.horizon()
            )));
        }
        Ok(Self {
            times: self.times[start..=end].to_vec(),
            states: self.states[start..=end].to_vec(),
            controls: self.controls[start..end].to_vec(),
        })
    }
}
