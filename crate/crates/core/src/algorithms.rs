//! Exact runners: TD-PMD, Q-TD-PMD and the plain PMD baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::TabularMdp;
use crate::mirror::{max_policy_divergence, pmd_prox, policy_divergence, MirrorMap};
use crate::values::{ActionValue, Policy, StateValue};

pub const DEFAULT_ETA_FLOOR: f64 = 1e-3;

/// Step-size rule for the proximal policy step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    Constant {
        eta: f64,
    },
    /// `η_k = max(eta_floor, ‖D‖_∞ / (c γ^{2k+1}))` against the greedy policy.
    Adaptive {
        c: f64,
        #[serde(default = "default_eta_floor")]
        eta_floor: f64,
    },
}

fn default_eta_floor() -> f64 {
    DEFAULT_ETA_FLOOR
}

impl StepSchedule {
    pub fn adaptive(c: f64) -> Self {
        StepSchedule::Adaptive {
            c,
            eta_floor: DEFAULT_ETA_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x > 0.0 && x.is_finite();
        match *self {
            StepSchedule::Constant { eta } if !ok(eta) => Err(Error::InvalidArgument(format!(
                "constant step size must be positive, got {eta}"
            ))),
            StepSchedule::Adaptive { c, eta_floor } if !ok(c) || !ok(eta_floor) => {
                Err(Error::InvalidArgument(format!(
                    "adaptive schedule needs c > 0 and eta_floor > 0, got c = {c}, eta_floor = {eta_floor}"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn constant_eta(&self) -> Option<f64> {
        match *self {
            StepSchedule::Constant { eta } => Some(eta),
            StepSchedule::Adaptive { .. } => None,
        }
    }

    pub fn adaptive_c(&self) -> Option<f64> {
        match *self {
            StepSchedule::Adaptive { c, .. } => Some(c),
            StepSchedule::Constant { .. } => None,
        }
    }
}

/// How the value estimate is advanced after each policy step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EvalScheme {
    #[default]
    OneStep,
    NStep {
        n: usize,
    },
    /// Geometric mixture of n-step backups, `n ~ Geo(1 − λ)`.
    Lambda {
        lambda: f64,
    },
}

impl EvalScheme {
    pub fn validate(&self) -> Result<()> {
        match *self {
            EvalScheme::NStep { n: 0 } => Err(Error::InvalidArgument(
                "n-step evaluation needs n >= 1".into(),
            )),
            EvalScheme::Lambda { lambda } if !(0.0..1.0).contains(&lambda) => Err(
                Error::InvalidArgument(format!("lambda must lie in [0, 1), got {lambda}")),
            ),
            _ => Ok(()),
        }
    }

    /// Factor by which a constant offset in `V` contracts per evaluation step.
    pub fn shift_factor(&self, gamma: f64) -> f64 {
        match *self {
            EvalScheme::OneStep => gamma,
            EvalScheme::NStep { n } => gamma.powi(n as i32),
            EvalScheme::Lambda { lambda } => (1.0 - lambda) * gamma / (1.0 - lambda * gamma),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    TdPmd,
    QTdPmd,
    Pmd,
    SampleTdPmd,
    SampleQTdPmd,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::TdPmd => "td_pmd",
            Algorithm::QTdPmd => "q_td_pmd",
            Algorithm::Pmd => "pmd",
            Algorithm::SampleTdPmd => "sample_td_pmd",
            Algorithm::SampleQTdPmd => "sample_q_td_pmd",
        }
    }

    /// Whether the run maintains an action-value iterate.
    pub fn tracks_q(self) -> bool {
        matches!(self, Algorithm::QTdPmd | Algorithm::SampleQTdPmd)
    }

    pub fn is_sampled(self) -> bool {
        matches!(self, Algorithm::SampleTdPmd | Algorithm::SampleQTdPmd)
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "td_pmd" => Algorithm::TdPmd,
            "q_td_pmd" => Algorithm::QTdPmd,
            "pmd" => Algorithm::Pmd,
            "sample_td_pmd" => Algorithm::SampleTdPmd,
            "sample_q_td_pmd" => Algorithm::SampleQTdPmd,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown algorithm `{other}`"
                )))
            }
        })
    }
}

/// The value iterate carried by a run.
#[derive(Debug, Clone, PartialEq)]
pub enum Estimate {
    State(StateValue),
    Action(ActionValue),
}

impl Estimate {
    pub fn as_state(&self) -> Option<&StateValue> {
        match self {
            Estimate::State(v) => Some(v),
            Estimate::Action(_) => None,
        }
    }

    pub fn as_action(&self) -> Option<&ActionValue> {
        match self {
            Estimate::Action(q) => Some(q),
            Estimate::State(_) => None,
        }
    }
}

/// One iteration of a run. Step quantities (`eta`, `div_norm`, `greedy`,
/// `improvement_q`) describe the move from `π_k` to `π_{k+1}` and are absent
/// on the final record.
#[derive(Debug, Clone)]
pub struct IterRecord {
    pub k: usize,
    pub policy: Policy,
    pub value: Estimate,
    /// The action values fed to the proximal step at this iteration.
    pub improvement_q: Option<ActionValue>,
    pub eta: Option<f64>,
    /// `‖D^{π̃_k}_{π_k}‖_∞` (scaled expected divergence for Q runs) when adaptive.
    pub div_norm: Option<f64>,
    pub greedy: Option<Policy>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub algorithm: Algorithm,
    pub map: MirrorMap,
    pub schedule: StepSchedule,
    pub scheme: EvalScheme,
    /// Initialization shift κ₀ (κ̂₀ for Q runs); recorded, never applied.
    pub kappa0: f64,
    pub records: Vec<IterRecord>,
}

impl Trajectory {
    /// Number of iterations `T`; records run from 0 to `T`.
    pub fn horizon(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn variant_tag(&self) -> String {
        let base = match self.algorithm {
            Algorithm::TdPmd => "td",
            Algorithm::QTdPmd => "q_td",
            Algorithm::Pmd => "pmd",
            Algorithm::SampleTdPmd => "sample_td",
            Algorithm::SampleQTdPmd => "sample_q_td",
        };
        format!("{base}_{}", self.map.short_name())
    }

    pub fn final_policy(&self) -> &Policy {
        &self
            .records
            .last()
            .expect("trajectory is never empty")
            .policy
    }

    pub fn policies(&self) -> impl Iterator<Item = &Policy> {
        self.records.iter().map(|r| &r.policy)
    }
}

/// Deterministic greedy policy for `q`. Ties (exact float equality) go to the
/// action with the most reference mass, then to the lowest index.
pub fn greedy_policy(q: &ActionValue, reference: Option<&Policy>) -> Policy {
    let actions: Vec<usize> = q
        .rows()
        .enumerate()
        .map(|(s, row)| {
            let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut pick: Option<usize> = None;
            for (a, &v) in row.iter().enumerate() {
                if v != best {
                    continue;
                }
                pick = match (pick, reference) {
                    (None, _) => Some(a),
                    (Some(b), Some(r)) if r.prob(s, a) > r.prob(s, b) => Some(a),
                    (p, _) => p,
                };
            }
            pick.unwrap_or(0)
        })
        .collect();
    Policy::deterministic(q.num_actions(), &actions).expect("argmax is a valid action")
}

/// `max(eta_floor, ‖D^{π̃}_{π_k}‖_∞ / (c γ^{2k+1}))`.
pub fn adaptive_eta(
    map: MirrorMap,
    pi_k: &Policy,
    pi_tilde: &Policy,
    k: usize,
    gamma: f64,
    c: f64,
    eta_floor: f64,
) -> Result<f64> {
    let div = max_policy_divergence(map, pi_tilde, pi_k)?;
    adaptive_eta_from_divergence(div, k, gamma, c, eta_floor)
}

/// The adaptive rule given the divergence numerator directly (Q runs pass
/// `γ‖D̂‖_∞`).
pub fn adaptive_eta_from_divergence(
    div: f64,
    k: usize,
    gamma: f64,
    c: f64,
    eta_floor: f64,
) -> Result<f64> {
    if div.is_nan() || div < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "divergence {div} is not a valid norm"
        )));
    }
    if div == 0.0 {
        return Ok(eta_floor);
    }
    let exponent = i32::try_from(2 * k + 1)
        .map_err(|_| Error::InvalidArgument(format!("iteration {k} too large")))?;
    let eta = (div / (c * gamma.powi(exponent))).max(eta_floor);
    if !eta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "adaptive step size overflowed at iteration {k}"
        )));
    }
    Ok(eta)
}

/// `max_{s,a} Σ_{s'} P(s'|s,a) D(target(·|s'), base(·|s'))`.
pub fn max_expected_divergence(
    mdp: &TabularMdp,
    map: MirrorMap,
    target: &Policy,
    base: &Policy,
) -> Result<f64> {
    mdp.check_policy(target)?;
    mdp.check_policy(base)?;
    let per_state: Vec<f64> = policy_divergence(map, target, base)?
        .into_iter()
        .map(|d| d.value())
        .collect();
    let ns = mdp.num_states();
    let mut worst = 0.0f64;
    for row in mdp.transitions().chunks_exact(ns) {
        let mut acc = 0.0;
        for (sp, (&p, &d)) in row.iter().zip(&per_state).enumerate() {
            if p > 0.0 {
                if !d.is_finite() {
                    return Err(Error::InfiniteDivergence { state: sp });
                }
                acc += p * d;
            }
        }
        worst = worst.max(acc);
    }
    Ok(worst)
}

/// `κ₀ = max{0, max_s [V⁰ − T^{π₀}V⁰](s) / (1−γ)}` and `Ṽ⁰ = V⁰ − κ₀·1`.
pub fn init_shift(mdp: &TabularMdp, pi0: &Policy, v0: &StateValue) -> Result<(f64, StateValue)> {
    let tv = mdp.bellman_pi(pi0, v0)?;
    let worst = v0
        .as_slice()
        .iter()
        .zip(tv.as_slice())
        .fold(f64::NEG_INFINITY, |m, (v, t)| m.max(v - t));
    let kappa0 = (worst / (1.0 - mdp.gamma())).max(0.0);
    Ok((kappa0, v0.shifted(-kappa0)))
}

/// Action-value analogue: `κ̂₀ = max{0, max_{s,a} [Q⁰ − F^{π₀}Q⁰] / (1−γ)}`.
pub fn init_shift_q(
    mdp: &TabularMdp,
    pi0: &Policy,
    q0: &ActionValue,
) -> Result<(f64, ActionValue)> {
    let fq = mdp.bellman_q(pi0, q0)?;
    let worst = q0
        .as_slice()
        .iter()
        .zip(fq.as_slice())
        .fold(f64::NEG_INFINITY, |m, (v, t)| m.max(v - t));
    let kappa0 = (worst / (1.0 - mdp.gamma())).max(0.0);
    Ok((kappa0, q0.shifted(-kappa0)))
}

/// Advances a value estimate under `pi` with the chosen evaluation scheme.
pub fn td_eval(
    mdp: &TabularMdp,
    pi: &Policy,
    v: &StateValue,
    scheme: EvalScheme,
) -> Result<StateValue> {
    scheme.validate()?;
    match scheme {
        EvalScheme::OneStep | EvalScheme::Lambda { lambda: 0.0 } => mdp.bellman_pi(pi, v),
        EvalScheme::NStep { n } => {
            let mut out = mdp.bellman_pi(pi, v)?;
            for _ in 1..n {
                out = mdp.bellman_pi(pi, &out)?;
            }
            Ok(out)
        }
        EvalScheme::Lambda { lambda } => {
            // V + (I − λγP^π)^{-1} (T^π V − V)
            let tv = mdp.bellman_pi(pi, v)?;
            let (p_pi, _) = mdp.policy_kernel(pi)?;
            let diff: Vec<f64> = tv
                .as_slice()
                .iter()
                .zip(v.as_slice())
                .map(|(a, b)| a - b)
                .collect();
            let x = linalg::solve_resolvent(mdp.num_states(), &p_pi, lambda * mdp.gamma(), &diff)?;
            Ok(StateValue::from_vec_unchecked(
                v.as_slice().iter().zip(&x).map(|(a, b)| a + b).collect(),
            ))
        }
    }
}

/// Row-wise proximal step.
pub fn prox_policy(map: MirrorMap, q: &ActionValue, pi: &Policy, eta: f64) -> Result<Policy> {
    let mut probs = Vec::with_capacity(pi.as_slice().len());
    for (q_row, p_row) in q.rows().zip(pi.rows()) {
        probs.extend(pmd_prox(map, q_row, p_row, eta)?);
    }
    Ok(Policy::from_vec_unchecked(
        pi.num_states(),
        pi.num_actions(),
        probs,
    ))
}

pub(crate) fn check_run_inputs(
    mdp: &TabularMdp,
    map: MirrorMap,
    schedule: &StepSchedule,
    pi0: &Policy,
    iterations: usize,
) -> Result<()> {
    schedule.validate()?;
    mdp.check_policy(pi0)?;
    if iterations == 0 {
        return Err(Error::InvalidArgument(
            "iteration count must be at least 1".into(),
        ));
    }
    if matches!(schedule, StepSchedule::Adaptive { .. }) && mdp.gamma() == 0.0 {
        return Err(Error::Precondition(
            "adaptive step sizes are undefined for gamma = 0".into(),
        ));
    }
    if map == MirrorMap::NegEntropy && !pi0.is_strictly_positive() {
        return Err(Error::Precondition(
            "negative-entropy runs need a strictly positive initial policy".into(),
        ));
    }
    Ok(())
}

/// Which divergence feeds the adaptive rule.
#[derive(Clone, Copy)]
pub(crate) enum DivergenceKind {
    State,
    Expected,
}

pub(crate) struct Step {
    pub policy: Policy,
    pub eta: f64,
    pub div_norm: Option<f64>,
    pub greedy: Option<Policy>,
}

/// One policy-improvement step from `q`, including the adaptive step size.
pub(crate) fn improve(
    mdp: &TabularMdp,
    map: MirrorMap,
    schedule: &StepSchedule,
    kind: DivergenceKind,
    q: &ActionValue,
    pi: &Policy,
    k: usize,
) -> Result<Step> {
    let (eta, div_norm, greedy) = match *schedule {
        StepSchedule::Constant { eta } => (eta, None, None),
        StepSchedule::Adaptive { c, eta_floor } => {
            let greedy = greedy_policy(q, Some(pi));
            let div = match kind {
                DivergenceKind::State => max_policy_divergence(map, &greedy, pi)?,
                DivergenceKind::Expected => {
                    mdp.gamma() * max_expected_divergence(mdp, map, &greedy, pi)?
                }
            };
            let eta = adaptive_eta_from_divergence(div, k, mdp.gamma(), c, eta_floor)?;
            (eta, Some(div), Some(greedy))
        }
    };
    Ok(Step {
        policy: prox_policy(map, q, pi, eta)?,
        eta,
        div_norm,
        greedy,
    })
}

/// TD-PMD: `π_{k+1} = prox(Q^k)`, `Q^k = induce_q(V^k)`, `V^{k+1} = td_eval(π_{k+1}, V^k)`.
pub fn td_pmd(
    mdp: &TabularMdp,
    map: MirrorMap,
    schedule: StepSchedule,
    scheme: EvalScheme,
    v0: &StateValue,
    pi0: &Policy,
    iterations: usize,
) -> Result<Trajectory> {
    check_run_inputs(mdp, map, &schedule, pi0, iterations)?;
    scheme.validate()?;
    let (kappa0, _) = init_shift(mdp, pi0, v0)?;
    let mut records = Vec::with_capacity(iterations + 1);
    let mut v = v0.clone();
    let mut pi = pi0.clone();
    for k in 0..iterations {
        let q = mdp.induce_q(&v)?;
        let step = improve(mdp, map, &schedule, DivergenceKind::State, &q, &pi, k)?;
        let v_next = td_eval(mdp, &step.policy, &v, scheme)?;
        records.push(IterRecord {
            k,
            policy: std::mem::replace(&mut pi, step.policy),
            value: Estimate::State(std::mem::replace(&mut v, v_next)),
            improvement_q: Some(q),
            eta: Some(step.eta),
            div_norm: step.div_norm,
            greedy: step.greedy,
        });
    }
    records.push(final_record(iterations, pi, Estimate::State(v)));
    Ok(Trajectory {
        algorithm: Algorithm::TdPmd,
        map,
        schedule,
        scheme,
        kappa0,
        records,
    })
}

/// Q-TD-PMD: `π_{k+1} = prox(Q^k)`, `Q^{k+1} = F^{π_{k+1}} Q^k`.
pub fn q_td_pmd(
    mdp: &TabularMdp,
    map: MirrorMap,
    schedule: StepSchedule,
    q0: &ActionValue,
    pi0: &Policy,
    iterations: usize,
) -> Result<Trajectory> {
    check_run_inputs(mdp, map, &schedule, pi0, iterations)?;
    let (kappa0, _) = init_shift_q(mdp, pi0, q0)?;
    let mut records = Vec::with_capacity(iterations + 1);
    let mut q = q0.clone();
    let mut pi = pi0.clone();
    for k in 0..iterations {
        let step = improve(mdp, map, &schedule, DivergenceKind::Expected, &q, &pi, k)?;
        let q_next = mdp.bellman_q(&step.policy, &q)?;
        records.push(IterRecord {
            k,
            policy: std::mem::replace(&mut pi, step.policy),
            value: Estimate::Action(std::mem::replace(&mut q, q_next)),
            improvement_q: None,
            eta: Some(step.eta),
            div_norm: step.div_norm,
            greedy: step.greedy,
        });
    }
    records.push(final_record(iterations, pi, Estimate::Action(q)));
    Ok(Trajectory {
        algorithm: Algorithm::QTdPmd,
        map,
        schedule,
        scheme: EvalScheme::OneStep,
        kappa0,
        records,
    })
}

/// Policy mirror descent with exact `Q^{π_k}`; the stored value is `V^{π_k}`.
pub fn pmd_baseline(
    mdp: &TabularMdp,
    map: MirrorMap,
    schedule: StepSchedule,
    pi0: &Policy,
    iterations: usize,
) -> Result<Trajectory> {
    check_run_inputs(mdp, map, &schedule, pi0, iterations)?;
    let mut records = Vec::with_capacity(iterations + 1);
    let mut pi = pi0.clone();
    for k in 0..iterations {
        let v = mdp.policy_value_exact(&pi)?;
        let q = mdp.induce_q(&v)?;
        let step = improve(mdp, map, &schedule, DivergenceKind::State, &q, &pi, k)?;
        records.push(IterRecord {
            k,
            policy: std::mem::replace(&mut pi, step.policy),
            value: Estimate::State(v),
            improvement_q: Some(q),
            eta: Some(step.eta),
            div_norm: step.div_norm,
            greedy: step.greedy,
        });
    }
    let v = mdp.policy_value_exact(&pi)?;
    records.push(final_record(iterations, pi, Estimate::State(v)));
    Ok(Trajectory {
        algorithm: Algorithm::Pmd,
        map,
        schedule,
        scheme: EvalScheme::OneStep,
        kappa0: 0.0,
        records,
    })
}

pub(crate) fn final_record(k: usize, policy: Policy, value: Estimate) -> IterRecord {
    IterRecord {
        k,
        policy,
        value,
        improvement_q: None,
        eta: None,
        div_norm: None,
        greedy: None,
    }
}

/// The action values used at step `k`: stored improvement values, or the
/// iterate itself for Q runs.
pub fn step_q(traj: &Trajectory, k: usize) -> Option<&ActionValue> {
    let rec = traj.records.get(k)?;
    if k >= traj.horizon() {
        return None;
    }
    rec.improvement_q.as_ref().or_else(|| rec.value.as_action())
}
