//! Value vectors and row-stochastic policies over a finite state/action space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on row sums and entry signs for anything claimed to be a distribution.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// State value vector `V ∈ ℝ^|S|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateValue(Vec<f64>);

impl StateValue {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "state value entry {i} is not finite"
            )));
        }
        Ok(StateValue(values))
    }

    pub fn zeros(num_states: usize) -> Self {
        StateValue(vec![0.0; num_states])
    }

    pub fn constant(num_states: usize, c: f64) -> Self {
        StateValue(vec![c; num_states])
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        StateValue(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `‖self − other‖_∞`.
    pub fn sup_dist(&self, other: &StateValue) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// `self + c·1`.
    pub fn shifted(&self, c: f64) -> StateValue {
        StateValue(self.0.iter().map(|v| v + c).collect())
    }

    /// Expectation under a distribution over states.
    pub fn dot(&self, weights: &[f64]) -> f64 {
        self.0.iter().zip(weights).map(|(v, w)| v * w).sum()
    }
}

impl std::ops::Index<usize> for StateValue {
    type Output = f64;
    fn index(&self, s: usize) -> &f64 {
        &self.0[s]
    }
}

/// Action value matrix `Q ∈ ℝ^{|S|×|A|}`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionValue {
    num_states: usize,
    num_actions: usize,
    values: Vec<f64>,
}

impl ActionValue {
    pub fn new(num_states: usize, num_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != num_states * num_actions {
            return Err(Error::dims(
                "action value",
                num_states * num_actions,
                values.len(),
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "action value entry ({}, {}) is not finite",
                i / num_actions,
                i % num_actions
            )));
        }
        Ok(ActionValue {
            num_states,
            num_actions,
            values,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let num_states = rows.len();
        let num_actions = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != num_actions) {
            return Err(Error::dims("action value row", num_actions, bad.len()));
        }
        Self::new(num_states, num_actions, rows.concat())
    }

    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        ActionValue {
            num_states,
            num_actions,
            values: vec![0.0; num_states * num_actions],
        }
    }

    pub(crate) fn from_vec_unchecked(
        num_states: usize,
        num_actions: usize,
        values: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(values.len(), num_states * num_actions);
        ActionValue {
            num_states,
            num_actions,
            values,
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.num_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.num_actions.max(1))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sup_dist(&self, other: &ActionValue) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Row-wise maximum, `max_a Q(s, a)`.
    pub fn row_max(&self) -> StateValue {
        StateValue(
            self.rows()
                .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect(),
        )
    }

    pub fn shifted(&self, c: f64) -> ActionValue {
        ActionValue {
            num_states: self.num_states,
            num_actions: self.num_actions,
            values: self.values.iter().map(|v| v + c).collect(),
        }
    }
}

/// A stochastic policy `π(a|s)`, stored row-major as an `|S|×|A|` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if num_actions == 0 {
            return Err(Error::InvalidArgument(
                "policy needs at least one action".into(),
            ));
        }
        if probs.len() != num_states * num_actions {
            return Err(Error::dims("policy", num_states * num_actions, probs.len()));
        }
        for (s, row) in probs.chunks_exact(num_actions).enumerate() {
            check_simplex_row(row).map_err(|reason| Error::InvalidPolicy { state: s, reason })?;
        }
        Ok(Policy {
            num_states,
            num_actions,
            probs,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let num_actions = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != num_actions) {
            return Err(Error::dims("policy row", num_actions, bad.len()));
        }
        Self::new(rows.len(), num_actions, rows.concat())
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Policy {
            num_states,
            num_actions,
            probs: vec![1.0 / num_actions as f64; num_states * num_actions],
        }
    }

    /// Deterministic policy taking `actions[s]` in state `s`.
    pub fn deterministic(num_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * num_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= num_actions {
                return Err(Error::InvalidPolicy {
                    state: s,
                    reason: format!("action {a} out of range"),
                });
            }
            probs[s * num_actions + a] = 1.0;
        }
        Ok(Policy {
            num_states: actions.len(),
            num_actions,
            probs,
        })
    }

    pub(crate) fn from_vec_unchecked(
        num_states: usize,
        num_actions: usize,
        probs: Vec<f64>,
    ) -> Self {
        debug_assert!(probs
            .chunks_exact(num_actions)
            .all(|r| check_simplex_row(r).is_ok()));
        Policy {
            num_states,
            num_actions,
            probs,
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.num_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks_exact(self.num_actions)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn min_prob(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.probs.iter().all(|&p| p > 0.0)
    }

    /// `max_{s,a} |π(a|s) − π'(a|s)|`.
    pub fn max_abs_diff(&self, other: &Policy) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Checks that `row` lies in the simplex; returns a human-readable reason otherwise.
pub(crate) fn check_simplex_row(row: &[f64]) -> std::result::Result<(), String> {
    if row.is_empty() {
        return Err("empty row".into());
    }
    if let Some((a, p)) = row
        .iter()
        .enumerate()
        .find(|(_, p)| !p.is_finite() || **p < 0.0)
    {
        return Err(format!("entry {a} = {p} is negative or not finite"));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(format!("row sums to {sum}, not 1"));
    }
    Ok(())
}

/// Validates a probability vector, e.g. an initial-state distribution.
pub fn check_distribution(weights: &[f64], expected_len: usize) -> Result<()> {
    if weights.len() != expected_len {
        return Err(Error::dims("distribution", expected_len, weights.len()));
    }
    check_simplex_row(weights).map_err(Error::InvalidDistribution)
}
