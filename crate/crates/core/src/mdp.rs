//! Finite discounted MDPs, their Bellman operators, and exact oracles.
//!
//! All operators are pure functions of an immutable [`TabularMdp`] and the
//! supplied value/policy, so they can be shared freely across threads.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::values::{check_distribution, ActionValue, Policy, StateValue};

/// Tolerance on transition row sums.
pub const TRANSITION_TOL: f64 = 1e-12;

/// A finite MDP `(S, A, P, r, γ)` with rewards in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpFile", into = "MdpFile")]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    /// `r(s, a)` at `s·|A| + a`.
    rewards: Vec<f64>,
    /// `P(s'|s, a)` at `(s·|A| + a)·|S| + s'`.
    transitions: Vec<f64>,
}

impl TabularMdp {
    /// Builds an MDP from flat row-major storage, validating every invariant.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        gamma: f64,
        rewards: Vec<f64>,
        transitions: Vec<f64>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidMdp(
                "num_states and num_actions must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidMdp(format!(
                "gamma = {gamma} is not in [0, 1)"
            )));
        }
        if rewards.len() != num_states * num_actions {
            return Err(Error::dims(
                "rewards",
                num_states * num_actions,
                rewards.len(),
            ));
        }
        if transitions.len() != num_states * num_actions * num_states {
            return Err(Error::dims(
                "transitions",
                num_states * num_actions * num_states,
                transitions.len(),
            ));
        }
        for (i, &r) in rewards.iter().enumerate() {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidMdp(format!(
                    "reward at state {}, action {} is {r}, outside [0, 1]",
                    i / num_actions,
                    i % num_actions
                )));
            }
        }
        for (i, row) in transitions.chunks_exact(num_states).enumerate() {
            let (s, a) = (i / num_actions, i % num_actions);
            if let Some((sp, p)) = row
                .iter()
                .enumerate()
                .find(|(_, p)| !p.is_finite() || **p < 0.0)
            {
                return Err(Error::InvalidMdp(format!(
                    "transition P({sp}|{s},{a}) = {p} is negative or not finite"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > TRANSITION_TOL {
                return Err(Error::InvalidMdp(format!(
                    "transition row for state {s}, action {a} sums to {sum}, not 1"
                )));
            }
        }
        Ok(TabularMdp {
            num_states,
            num_actions,
            gamma,
            rewards,
            transitions,
        })
    }

    /// Builds an MDP from nested `rewards[s][a]` and `transitions[s][a][s']`.
    pub fn from_nested(
        gamma: f64,
        rewards: &[Vec<f64>],
        transitions: &[Vec<Vec<f64>>],
    ) -> Result<Self> {
        MdpFile {
            num_states: rewards.len(),
            num_actions: rewards.first().map_or(0, Vec::len),
            gamma,
            rewards: rewards.to_vec(),
            transitions: transitions.to_vec(),
        }
        .try_into()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.num_actions + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    /// `P(·|s, a)`.
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transitions[start..start + self.num_states]
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transitions
    }

    /// Same dynamics and rewards under a different discount.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(
            self.num_states,
            self.num_actions,
            gamma,
            self.rewards.clone(),
            self.transitions.clone(),
        )
    }

    /// Upper bound `1/(1−γ)` on any policy value.
    pub fn value_bound(&self) -> f64 {
        1.0 / (1.0 - self.gamma)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("MDP serialization cannot fail")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    fn check_state_value(&self, v: &StateValue) -> Result<()> {
        if v.len() != self.num_states {
            return Err(Error::dims("state value", self.num_states, v.len()));
        }
        Ok(())
    }

    fn check_action_value(&self, q: &ActionValue) -> Result<()> {
        if q.num_states() != self.num_states || q.num_actions() != self.num_actions {
            return Err(Error::dims(
                "action value",
                self.num_states * self.num_actions,
                q.num_states() * q.num_actions(),
            ));
        }
        Ok(())
    }

    pub(crate) fn check_policy(&self, pi: &Policy) -> Result<()> {
        if pi.num_states() != self.num_states || pi.num_actions() != self.num_actions {
            return Err(Error::dims(
                "policy",
                self.num_states * self.num_actions,
                pi.num_states() * pi.num_actions(),
            ));
        }
        Ok(())
    }

    /// `Q(s,a) = r(s,a) + γ Σ_{s'} P(s'|s,a) v(s')`.
    pub fn induce_q(&self, v: &StateValue) -> Result<ActionValue> {
        self.check_state_value(v)?;
        Ok(self.induce_q_unchecked(v.as_slice()))
    }

    pub(crate) fn induce_q_unchecked(&self, v: &[f64]) -> ActionValue {
        let values = self
            .transitions
            .chunks_exact(self.num_states)
            .zip(&self.rewards)
            .map(|(row, r)| r + self.gamma * dot(row, v))
            .collect();
        ActionValue::from_vec_unchecked(self.num_states, self.num_actions, values)
    }

    /// `(T^π v)(s) = Σ_a π(a|s) Q(s,a)` with `Q = induce_q(v)`.
    pub fn bellman_pi(&self, pi: &Policy, v: &StateValue) -> Result<StateValue> {
        self.check_policy(pi)?;
        self.check_state_value(v)?;
        Ok(policy_average(pi, &self.induce_q_unchecked(v.as_slice())))
    }

    /// `(T v)(s) = max_a Q(s,a)`.
    pub fn bellman_opt(&self, v: &StateValue) -> Result<StateValue> {
        self.check_state_value(v)?;
        Ok(self.induce_q_unchecked(v.as_slice()).row_max())
    }

    /// `(F^π Q)(s,a) = r(s,a) + γ Σ_{s'} P(s'|s,a) Σ_{a'} π(a'|s') Q(s',a')`.
    ///
    /// Evaluated as `induce_q(Σ_a' π Q)`, so `F^π induce_q(v) = induce_q(T^π v)`
    /// holds bit-for-bit.
    pub fn bellman_q(&self, pi: &Policy, q: &ActionValue) -> Result<ActionValue> {
        self.check_policy(pi)?;
        self.check_action_value(q)?;
        Ok(self.induce_q_unchecked(policy_average(pi, q).as_slice()))
    }

    /// `(F Q)(s,a) = r(s,a) + γ Σ_{s'} P(s'|s,a) max_{a'} Q(s',a')`.
    pub fn bellman_q_opt(&self, q: &ActionValue) -> Result<ActionValue> {
        self.check_action_value(q)?;
        Ok(self.induce_q_unchecked(q.row_max().as_slice()))
    }

    /// State transition matrix `P^π` (row-major `|S|×|S|`) and reward vector `r^π`.
    pub fn policy_kernel(&self, pi: &Policy) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_policy(pi)?;
        let n = self.num_states;
        let mut p_pi = vec![0.0; n * n];
        let mut r_pi = vec![0.0; n];
        for s in 0..n {
            for a in 0..self.num_actions {
                let w = pi.prob(s, a);
                if w == 0.0 {
                    continue;
                }
                r_pi[s] += w * self.reward(s, a);
                for (dst, p) in p_pi[s * n..(s + 1) * n]
                    .iter_mut()
                    .zip(self.transition_row(s, a))
                {
                    *dst += w * p;
                }
            }
        }
        Ok((p_pi, r_pi))
    }

    /// Exact `V^π` from the linear system `(I − γP^π)V = r^π`.
    pub fn policy_value_exact(&self, pi: &Policy) -> Result<StateValue> {
        let (p_pi, r_pi) = self.policy_kernel(pi)?;
        let v = linalg::solve_resolvent(self.num_states, &p_pi, self.gamma, &r_pi)?;
        Ok(StateValue::from_vec_unchecked(v))
    }

    /// Exact `Q^π = induce_q(V^π)`.
    pub fn policy_q_exact(&self, pi: &Policy) -> Result<ActionValue> {
        let v = self.policy_value_exact(pi)?;
        Ok(self.induce_q_unchecked(v.as_slice()))
    }

    /// Value iteration to certified sup-norm accuracy `tol`, plus optimal
    /// action sets (within `opt_tol`) and the action gap Δ.
    pub fn optimal_values(&self, tol: f64, opt_tol: f64) -> Result<OptimalityData> {
        if !(tol > 0.0 && tol.is_finite()) || !(opt_tol > 0.0 && opt_tol.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "tolerances must be positive and finite (tol = {tol}, opt_tol = {opt_tol})"
            )));
        }
        let mut v = vec![0.0; self.num_states];
        if self.gamma == 0.0 {
            v = self.induce_q_unchecked(&v).row_max().into_vec();
        } else {
            // ‖TV − V‖ ≤ ε(1−γ)/(2γ) implies ‖TV − V*‖ ≤ ε/2.
            let stop = tol * (1.0 - self.gamma) / (2.0 * self.gamma);
            loop {
                let next = self.induce_q_unchecked(&v).row_max().into_vec();
                let residual = sup_dist(&next, &v);
                v = next;
                if residual <= stop {
                    break;
                }
            }
        }
        let v_star = StateValue::from_vec_unchecked(v);
        let q_star = self.induce_q_unchecked(v_star.as_slice());

        let mut optimal_action_sets = Vec::with_capacity(self.num_states);
        let mut delta: Option<f64> = None;
        for row in q_star.rows() {
            let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let set: BTreeSet<usize> = row
                .iter()
                .enumerate()
                .filter(|(_, q)| best - **q <= opt_tol)
                .map(|(a, _)| a)
                .collect();
            for (a, q) in row.iter().enumerate() {
                if !set.contains(&a) {
                    let gap = best - q;
                    delta = Some(delta.map_or(gap, |d| d.min(gap)));
                }
            }
            optimal_action_sets.push(set);
        }
        Ok(OptimalityData {
            v_star,
            q_star,
            optimal_action_sets,
            delta,
            vi_tolerance: tol,
        })
    }

    /// Discounted state visitation `d^π_μ = (1−γ) μᵀ (I − γP^π)^{-1}`.
    pub fn visitation_measure(&self, pi: &Policy, mu: &[f64]) -> Result<Vec<f64>> {
        check_distribution(mu, self.num_states)?;
        let (p_pi, _) = self.policy_kernel(pi)?;
        let x = linalg::solve_resolvent_transposed(self.num_states, &p_pi, self.gamma, mu)?;
        Ok(x.into_iter().map(|v| (1.0 - self.gamma) * v).collect())
    }

    /// State-action kernel `P_π((s,a) → (s',a')) = P(s'|s,a) π(a'|s')`, row-major over pairs.
    pub fn state_action_kernel(&self, pi: &Policy) -> Result<Vec<f64>> {
        self.check_policy(pi)?;
        let (ns, na) = (self.num_states, self.num_actions);
        let n = ns * na;
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            let row = &self.transitions[i * ns..(i + 1) * ns];
            for (sp, p) in row.iter().enumerate() {
                for ap in 0..na {
                    m[i * n + sp * na + ap] = p * pi.prob(sp, ap);
                }
            }
        }
        Ok(m)
    }

    /// Discounted state-action occupancy `ν^π_ρ` from `(s₀, a₀) ~ ρ`, indexed `s·|A| + a`.
    pub fn visitation_measure_sa(&self, pi: &Policy, rho: &[f64]) -> Result<Vec<f64>> {
        let n = self.num_states * self.num_actions;
        check_distribution(rho, n)?;
        let m = self.state_action_kernel(pi)?;
        let x = linalg::solve_resolvent_transposed(n, &m, self.gamma, rho)?;
        Ok(x.into_iter().map(|v| (1.0 - self.gamma) * v).collect())
    }
}

/// `Σ_a π(a|s) Q(s,a)` for every state.
pub fn policy_average(pi: &Policy, q: &ActionValue) -> StateValue {
    StateValue::from_vec_unchecked(pi.rows().zip(q.rows()).map(|(p, r)| dot(p, r)).collect())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Optimal values together with the optimal-action structure they induce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityData {
    pub v_star: StateValue,
    pub q_star: ActionValue,
    /// `𝒜*_s` per state.
    pub optimal_action_sets: Vec<BTreeSet<usize>>,
    /// Smallest gap between an optimal and a non-optimal action; `None` when
    /// every action is optimal everywhere.
    pub delta: Option<f64>,
    /// Guaranteed `‖v_star − V*‖_∞`.
    pub vi_tolerance: f64,
}

impl OptimalityData {
    /// `b_s^π = Σ_{a ∉ 𝒜*_s} π(a|s)` for every state.
    pub fn suboptimal_mass(&self, pi: &Policy) -> Vec<f64> {
        pi.rows()
            .zip(&self.optimal_action_sets)
            .map(|(row, set)| {
                row.iter()
                    .enumerate()
                    .filter(|(a, _)| !set.contains(a))
                    .map(|(_, p)| p)
                    .sum()
            })
            .collect()
    }

    /// Deterministic optimal policy: per state the lowest-index exact argmax of `Q*`.
    pub fn canonical_policy(&self) -> Policy {
        let actions: Vec<usize> = self.q_star.rows().map(first_argmax).collect();
        Policy::deterministic(self.q_star.num_actions(), &actions)
            .expect("argmax is always a valid action")
    }
}

pub(crate) fn first_argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (a, &q) in row.iter().enumerate().skip(1) {
        if q > row[best] {
            best = a;
        }
    }
    best
}

/// On-disk layout: nested row-major arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MdpFile {
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    rewards: Vec<Vec<f64>>,
    transitions: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<MdpFile> for TabularMdp {
    type Error = Error;

    fn try_from(f: MdpFile) -> Result<Self> {
        if f.rewards.len() != f.num_states {
            return Err(Error::InvalidMdp(format!(
                "rewards has {} rows, expected num_states = {}",
                f.rewards.len(),
                f.num_states
            )));
        }
        if let Some((s, row)) = f
            .rewards
            .iter()
            .enumerate()
            .find(|(_, r)| r.len() != f.num_actions)
        {
            return Err(Error::InvalidMdp(format!(
                "rewards row {s} has {} entries, expected num_actions = {}",
                row.len(),
                f.num_actions
            )));
        }
        if f.transitions.len() != f.num_states {
            return Err(Error::InvalidMdp(format!(
                "transitions has {} blocks, expected num_states = {}",
                f.transitions.len(),
                f.num_states
            )));
        }
        for (s, block) in f.transitions.iter().enumerate() {
            if block.len() != f.num_actions {
                return Err(Error::InvalidMdp(format!(
                    "transitions[{s}] has {} rows, expected num_actions = {}",
                    block.len(),
                    f.num_actions
                )));
            }
            if let Some((a, row)) = block
                .iter()
                .enumerate()
                .find(|(_, r)| r.len() != f.num_states)
            {
                return Err(Error::InvalidMdp(format!(
                    "transitions[{s}][{a}] has {} entries, expected num_states = {}",
                    row.len(),
                    f.num_states
                )));
            }
        }
        TabularMdp::new(
            f.num_states,
            f.num_actions,
            f.gamma,
            f.rewards.concat(),
            f.transitions.concat().concat(),
        )
    }
}

impl From<TabularMdp> for MdpFile {
    fn from(m: TabularMdp) -> Self {
        MdpFile {
            num_states: m.num_states,
            num_actions: m.num_actions,
            gamma: m.gamma,
            rewards: m
                .rewards
                .chunks_exact(m.num_actions)
                .map(<[f64]>::to_vec)
                .collect(),
            transitions: m
                .transitions
                .chunks_exact(m.num_actions * m.num_states)
                .map(|block| {
                    block
                        .chunks_exact(m.num_states)
                        .map(<[f64]>::to_vec)
                        .collect()
                })
                .collect(),
        }
    }
}
