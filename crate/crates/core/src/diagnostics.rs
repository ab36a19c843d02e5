//! Convergence metrics and executable checks over trajectories.
//!
//! Every check reports the observation closest to (or furthest beyond) its
//! allowance. `worst_violation` is `lhs − rhs` for an inequality `lhs ≤ rhs`,
//! and the report fails iff it exceeds `tolerance`.

use serde::{Deserialize, Serialize};

use crate::algorithms::{
    max_expected_divergence, step_q, td_pmd, Algorithm, Estimate, EvalScheme, StepSchedule,
    Trajectory,
};
use crate::error::{Error, Result};
use crate::mdp::{OptimalityData, TabularMdp};
use crate::mirror::{max_policy_divergence, three_point_residual, MirrorMap};
use crate::values::{ActionValue, Policy, StateValue};

/// Slack on the chain inequalities of the monotone check.
pub const MONOTONE_TOL: f64 = 1e-9;
pub const SHIFT_POLICY_TOL: f64 = 1e-9;
pub const SHIFT_VALUE_TOL: f64 = 1e-8;
pub const THREE_POINT_TOL: f64 = 1e-9;
pub const SUBOPT_MASS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub status: CheckStatus,
    pub worst_violation: f64,
    pub worst_iteration: Option<usize>,
    pub tolerance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl CheckReport {
    pub fn not_applicable(name: &str, reason: impl Into<String>) -> Self {
        CheckReport {
            name: name.to_string(),
            status: CheckStatus::NotApplicable,
            worst_violation: 0.0,
            worst_iteration: None,
            tolerance: 0.0,
            detail: Some(reason.into()),
        }
    }

    pub fn passed(&self) -> bool {
        self.status == CheckStatus::Pass
    }

    pub fn failed(&self) -> bool {
        self.status == CheckStatus::Fail
    }
}

/// Tracks the observation with the largest excess over its own tolerance.
struct Tracker {
    name: &'static str,
    excess: f64,
    violation: f64,
    tolerance: f64,
    at: Option<usize>,
}

impl Tracker {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Tracker {
            name,
            excess: f64::NEG_INFINITY,
            violation: 0.0,
            tolerance,
            at: None,
        }
    }

    /// Records the inequality `lhs ≤ rhs + tol` at iteration `k`.
    fn observe(&mut self, k: usize, lhs: f64, rhs: f64, tol: f64) {
        let violation = lhs - rhs;
        let excess = if violation.is_nan() {
            f64::INFINITY
        } else {
            violation - tol
        };
        if excess > self.excess {
            self.excess = excess;
            self.violation = if violation.is_nan() {
                f64::INFINITY
            } else {
                violation
            };
            self.tolerance = tol;
            self.at = Some(k);
        }
    }

    fn finish(self, detail: Option<String>) -> CheckReport {
        CheckReport {
            name: self.name.to_string(),
            status: if self.excess > 0.0 {
                CheckStatus::Fail
            } else {
                CheckStatus::Pass
            },
            worst_violation: self.violation,
            worst_iteration: self.at,
            tolerance: self.tolerance,
            detail,
        }
    }
}

/// Per-iteration error metrics of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    /// `‖V* − V^k‖_∞`, or `‖Q* − Q^k‖_∞` for action-value runs.
    pub v_err: Vec<f64>,
    /// `‖V* − V^{π_k}‖_∞` from exact evaluation.
    pub pol_err: Vec<f64>,
    /// `‖Q* − Q^{π_k}‖_∞`, for action-value runs only.
    pub pol_err_q: Option<Vec<f64>>,
    /// `max_s Σ_{a ∉ 𝒜*_s} π_k(a|s)`.
    pub subopt_mass: Vec<f64>,
    /// Step size used to leave iterate `k` (absent for the last one).
    pub eta: Vec<Option<f64>>,
    /// Remaining initialization offset `ρ^k κ₀`, `ρ` the scheme's shift factor.
    pub kappa_term: Vec<f64>,
    /// `max_{s,a} [Q^k(s,a) − V*(s)]`.
    pub max_advantage: Vec<f64>,
}

impl MetricSeries {
    pub fn len(&self) -> usize {
        self.v_err.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_err.is_empty()
    }

    /// Policy error in the run's own value space.
    pub fn policy_errors(&self) -> &[f64] {
        self.pol_err_q.as_deref().unwrap_or(&self.pol_err)
    }
}

fn max_of(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(0.0, f64::max)
}

fn check_dims(mdp: &TabularMdp, opt: &OptimalityData, traj: &Trajectory) -> Result<()> {
    if opt.v_star.len() != mdp.num_states() || opt.q_star.num_actions() != mdp.num_actions() {
        return Err(Error::InvalidArgument(
            "optimality data belongs to a different MDP".into(),
        ));
    }
    for rec in &traj.records {
        mdp.check_policy(&rec.policy)?;
    }
    Ok(())
}

pub fn compute_metrics(
    mdp: &TabularMdp,
    opt: &OptimalityData,
    traj: &Trajectory,
) -> Result<MetricSeries> {
    check_dims(mdp, opt, traj)?;
    let factor = match traj.algorithm {
        Algorithm::QTdPmd | Algorithm::SampleQTdPmd => mdp.gamma(),
        _ => traj.scheme.shift_factor(mdp.gamma()),
    };
    let tracks_q = traj.algorithm.tracks_q();
    let n = traj.records.len();
    let mut m = MetricSeries {
        v_err: Vec::with_capacity(n),
        pol_err: Vec::with_capacity(n),
        pol_err_q: tracks_q.then(|| Vec::with_capacity(n)),
        subopt_mass: Vec::with_capacity(n),
        eta: Vec::with_capacity(n),
        kappa_term: Vec::with_capacity(n),
        max_advantage: Vec::with_capacity(n),
    };
    let mut kappa_term = traj.kappa0;
    for (k, rec) in traj.records.iter().enumerate() {
        let v_pi = match (&rec.value, traj.algorithm) {
            (Estimate::State(v), Algorithm::Pmd) => v.clone(),
            _ => mdp.policy_value_exact(&rec.policy)?,
        };
        m.pol_err.push(opt.v_star.sup_dist(&v_pi));
        let q_k = match &rec.value {
            Estimate::State(v) => {
                if v.len() != mdp.num_states() {
                    return Err(Error::dims("trajectory value", mdp.num_states(), v.len()));
                }
                m.v_err.push(opt.v_star.sup_dist(v));
                match step_q(traj, k) {
                    Some(q) => q.clone(),
                    None => mdp.induce_q(v)?,
                }
            }
            Estimate::Action(q) => {
                m.v_err.push(opt.q_star.sup_dist(q));
                let q_pi = mdp.induce_q(&v_pi)?;
                if let Some(p) = m.pol_err_q.as_mut() {
                    p.push(opt.q_star.sup_dist(&q_pi));
                }
                q.clone()
            }
        };
        m.max_advantage.push(
            q_k.rows()
                .zip(opt.v_star.as_slice())
                .flat_map(|(row, v)| row.iter().map(move |q| q - v))
                .fold(f64::NEG_INFINITY, f64::max),
        );
        m.subopt_mass
            .push(max_of(opt.suboptimal_mass(&rec.policy).into_iter()));
        m.eta.push(rec.eta);
        m.kappa_term.push(kappa_term);
        kappa_term *= factor;
    }
    Ok(m)
}

/// Chain `V* ≥ V^{π_{k+1}} ≥ V^{k+1} ≥ T^{π_k}V^k ≥ V^k` (and its Q analogue)
/// for runs started from a good initialization.
pub fn check_monotone(
    mdp: &TabularMdp,
    opt: &OptimalityData,
    traj: &Trajectory,
) -> Result<CheckReport> {
    const NAME: &str = "monotone";
    check_dims(mdp, opt, traj)?;
    let one_step = traj.scheme == EvalScheme::OneStep;
    if !matches!(traj.algorithm, Algorithm::TdPmd | Algorithm::QTdPmd) || !one_step {
        return Ok(CheckReport::not_applicable(
            NAME,
            "needs an exact one-step TD-PMD or Q-TD-PMD run",
        ));
    }
    let mut t = Tracker::new(NAME, MONOTONE_TOL);
    let vi = opt.vi_tolerance;
    let first = &traj.records[0];
    // Applicability: T^{π₀}V⁰ ≥ V⁰ − 1e-10.
    let (lhs, rhs) = backup_pair(mdp, &first.policy, &first.value)?;
    let init_gap = lhs
        .iter()
        .zip(&rhs)
        .fold(f64::NEG_INFINITY, |m, (v, tv)| m.max(v - tv));
    if init_gap > 1e-10 {
        return Ok(CheckReport::not_applicable(
            NAME,
            format!("initialization is not improving (max of V0 - T V0 = {init_gap:e})"),
        ));
    }
    for w in traj.records.windows(2) {
        let (cur, next) = (&w[0], &w[1]);
        let k = cur.k;
        let (vk, tvk) = backup_pair(mdp, &cur.policy, &cur.value)?;
        let next_vals = flat(&next.value);
        let v_pi_next = mdp.policy_value_exact(&next.policy)?;
        let (exact_next, star): (Vec<f64>, Vec<f64>) = match &next.value {
            Estimate::State(_) => (v_pi_next.into_vec(), opt.v_star.as_slice().to_vec()),
            Estimate::Action(_) => (
                mdp.induce_q(&v_pi_next)?.as_slice().to_vec(),
                opt.q_star.as_slice().to_vec(),
            ),
        };
        for i in 0..vk.len() {
            t.observe(k, vk[i], tvk[i], MONOTONE_TOL);
            t.observe(k + 1, tvk[i], next_vals[i], MONOTONE_TOL);
            t.observe(k + 1, next_vals[i], exact_next[i], MONOTONE_TOL);
            t.observe(k + 1, exact_next[i], star[i] + vi, MONOTONE_TOL);
        }
    }
    Ok(t.finish(None))
}

fn flat(e: &Estimate) -> Vec<f64> {
    match e {
        Estimate::State(v) => v.as_slice().to_vec(),
        Estimate::Action(q) => q.as_slice().to_vec(),
    }
}

/// `(X, B^π X)` flattened, with `B` the policy backup matching the estimate's kind.
fn backup_pair(mdp: &TabularMdp, pi: &Policy, e: &Estimate) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok(match e {
        Estimate::State(v) => (v.as_slice().to_vec(), mdp.bellman_pi(pi, v)?.into_vec()),
        Estimate::Action(q) => (
            q.as_slice().to_vec(),
            mdp.bellman_q(pi, q)?.as_slice().to_vec(),
        ),
    })
}

/// Runs TD-PMD from `(V⁰, π₀)` and from `(V⁰ − κ₀·1, π₀)` and compares them.
#[allow(clippy::too_many_arguments)]
pub fn check_shift(
    mdp: &TabularMdp,
    map: MirrorMap,
    schedule: StepSchedule,
    scheme: EvalScheme,
    v0: &StateValue,
    pi0: &Policy,
    iterations: usize,
) -> Result<CheckReport> {
    let raw = td_pmd(mdp, map, schedule, scheme, v0, pi0, iterations)?;
    let shifted_init = v0.shifted(-raw.kappa0);
    let shifted = td_pmd(mdp, map, schedule, scheme, &shifted_init, pi0, iterations)?;
    Ok(shift_report(
        &raw,
        &shifted,
        scheme.shift_factor(mdp.gamma()),
        raw.kappa0,
    ))
}

/// Compares two runs that should agree in policy and differ in value by
/// `factor^k · offset`.
pub fn shift_report(
    raw: &Trajectory,
    shifted: &Trajectory,
    factor: f64,
    offset: f64,
) -> CheckReport {
    let mut t = Tracker::new("shift", SHIFT_VALUE_TOL);
    if raw.records.len() != shifted.records.len() {
        t.observe(0, f64::INFINITY, 0.0, SHIFT_VALUE_TOL);
        return t.finish(Some("trajectories have different lengths".into()));
    }
    let mut expected = offset;
    for (a, b) in raw.records.iter().zip(&shifted.records) {
        t.observe(a.k, a.policy.max_abs_diff(&b.policy), 0.0, SHIFT_POLICY_TOL);
        let (va, vb) = (flat(&a.value), flat(&b.value));
        let err = va
            .iter()
            .zip(&vb)
            .fold(0.0f64, |m, (x, y)| m.max((x - y - expected).abs()));
        t.observe(a.k, err, 0.0, SHIFT_VALUE_TOL);
        expected *= factor;
    }
    t.finish(Some(format!(
        "kappa0 = {offset:e}, per-step factor = {factor}"
    )))
}

/// Canonical reference optimal policy and the initial divergence term of the
/// sublinear bound (`‖D^{π*}_{π₀}‖_∞`, or `γ‖D̂^{π*}_{π₀}‖_∞` for Q runs).
fn initial_divergence(mdp: &TabularMdp, opt: &OptimalityData, traj: &Trajectory) -> Result<f64> {
    let pi_star = opt.canonical_policy();
    let pi0 = &traj.records[0].policy;
    if traj.algorithm.tracks_q() {
        Ok(mdp.gamma() * max_expected_divergence(mdp, traj.map, &pi_star, pi0)?)
    } else {
        max_policy_divergence(traj.map, &pi_star, pi0)
    }
}

/// `(1/(T+1)) (1/(1−γ)² + (‖X⁰‖ + κ₀)/(1−γ) + D₀/(η(1−γ)))`.
pub fn sublinear_bound(
    gamma: f64,
    init_norm: f64,
    kappa0: f64,
    div0: f64,
    eta: f64,
    t: usize,
) -> f64 {
    let g = 1.0 - gamma;
    (1.0 / (g * g) + (init_norm + kappa0) / g + div0 / (eta * g)) / (t as f64 + 1.0)
}

fn init_norm(traj: &Trajectory) -> f64 {
    match &traj.records[0].value {
        Estimate::State(v) => v.sup_norm(),
        Estimate::Action(q) => q.sup_norm(),
    }
}

pub fn check_sublinear(
    mdp: &TabularMdp,
    opt: &OptimalityData,
    traj: &Trajectory,
    metrics: &MetricSeries,
) -> Result<CheckReport> {
    const NAME: &str = "sublinear";
    let Some(eta) = traj.schedule.constant_eta() else {
        return Ok(CheckReport::not_applicable(
            NAME,
            "needs a constant step size",
        ));
    };
    if !matches!(traj.algorithm, Algorithm::TdPmd | Algorithm::QTdPmd) {
        return Ok(CheckReport::not_applicable(
            NAME,
            "needs an exact TD-PMD or Q-TD-PMD run",
        ));
    }
    let div0 = match initial_divergence(mdp, opt, traj) {
        Ok(d) => d,
        Err(Error::InfiniteDivergence { state }) => {
            return Ok(CheckReport::not_applicable(
                NAME,
                format!("reference optimal policy leaves the initial support at state {state}"),
            ))
        }
        Err(e) => return Err(e),
    };
    let gamma = mdp.gamma();
    let slack = 2.0 * opt.vi_tolerance;
    let norm0 = init_norm(traj);
    let mut t = Tracker::new(NAME, slack);
    for k in 0..metrics.len() {
        let b = sublinear_bound(gamma, norm0, traj.kappa0, div0, eta, k);
        t.observe(k, metrics.policy_errors()[k], b, slack);
        t.observe(k, metrics.v_err[k], b + metrics.kappa_term[k], slack);
    }
    Ok(t.finish(Some(format!(
        "reference optimal policy: lowest-index argmax of Q*; initial divergence = {div0:e}"
    ))))
}

/// `γ^T (E₀ + c/(1−γ))` plus the error-level term, with `E₀ = ‖X* − X⁰‖_∞`.
pub fn linear_value_bound(gamma: f64, e0: f64, c: f64, t: usize, delta_term: f64) -> f64 {
    gamma.powi(t as i32) * (e0 + c / (1.0 - gamma)) + delta_term
}

pub fn linear_policy_bound(gamma: f64, e0: f64, c: f64, t: usize, delta_term: f64) -> f64 {
    2.0 * gamma.powi(t as i32 - 1) / (1.0 - gamma) * (e0 + c / (1.0 - gamma)) + delta_term
}

/// γ-rate bounds for adaptive runs; `delta` adds the error-level terms for
/// sample-based runs.
pub fn check_linear(
    mdp: &TabularMdp,
    opt: &OptimalityData,
    traj: &Trajectory,
    metrics: &MetricSeries,
    delta: Option<f64>,
) -> Result<CheckReport> {
    const NAME: &str = "linear";
    let Some(c) = traj.schedule.adaptive_c() else {
        return Ok(CheckReport::not_applicable(
            NAME,
            "needs an adaptive step size",
        ));
    };
    if traj.algorithm == Algorithm::Pmd || traj.scheme != EvalScheme::OneStep {
        return Ok(CheckReport::not_applicable(
            NAME,
            "needs a one-step TD-PMD or Q-TD-PMD run",
        ));
    }
    let gamma = mdp.gamma();
    let d = if traj.algorithm.is_sampled() {
        delta.unwrap_or(0.0)
    } else {
        0.0
    };
    let g = 1.0 - gamma;
    let (v_extra, p_extra) = if traj.algorithm.tracks_q() {
        (d / g, 3.0 * d / (g * g))
    } else {
        (3.0 * d / g, 7.0 * d / (g * g))
    };
    let slack = 4.0 * opt.vi_tolerance;
    let e0 = metrics.v_err[0];
    let mut t = Tracker::new(NAME, slack);
    for k in 0..metrics.len() {
        t.observe(
            k,
            metrics.v_err[k],
            linear_value_bound(gamma, e0, c, k, v_extra),
            slack,
        );
        if k >= 1 {
            t.observe(
                k,
                metrics.policy_errors()[k],
                linear_policy_bound(gamma, e0, c, k, p_extra),
                slack,
            );
        }
    }
    Ok(t.finish(Some(format!("c = {c}, error level = {d}"))))
}

/// Per-step contraction `‖X* − X^{k+1}‖ ≤ γ‖X* − X^k‖ + ‖D_k‖/η_k + 2·vi_tolerance`.
pub fn check_contraction(
    mdp: &TabularMdp,
    opt: &OptimalityData,
    traj: &Trajectory,
    metrics: &MetricSeries,
) -> Result<CheckReport> {
    const NAME: &str = "contraction";
    if traj.schedule.adaptive_c().is_none()
        || !matches!(traj.algorithm, Algorithm::TdPmd | Algorithm::QTdPmd)
        || traj.scheme != EvalScheme::OneStep
    {
        return Ok(CheckReport::not_applicable(
            NAME,
            "needs an exact one-step adaptive TD-PMD or Q-TD-PMD run",
        ));
    }
    let gamma = mdp.gamma();
    let slack = 2.0 * opt.vi_tolerance;
    let mut t = Tracker::new(NAME, slack);
    for rec in &traj.records[..traj.horizon()] {
        let k = rec.k;
        let (Some(eta), Some(div)) = (rec.eta, rec.div_norm) else {
            return Ok(CheckReport::not_applicable(
                NAME,
                "record lacks step-size data",
            ));
        };
        let rhs = gamma * metrics.v_err[k] + div / eta;
        t.observe(k + 1, metrics.v_err[k + 1], rhs, slack);
    }
    Ok(t.finish(None))
}

/// Iteration bound after which TD-PQA iterates are optimal.
pub fn pqa_horizon(gamma: f64, eta: f64, gap: f64, v0_norm: f64, kappa0: f64, div0: f64) -> f64 {
    let eps = eta * gamma * gap * gap / (2.0 * eta * gamma * gap + 2.0);
    let g = 1.0 - gamma;
    let first = 2.0 * gamma / eps * (1.0 / (g * g) + (v0_norm + kappa0) / g + div0 / (eta * g));
    let t0 = if kappa0 > 0.0 {
        let second = (eps.ln() - (2.0 * gamma).ln() - kappa0.ln()) / gamma.ln();
        first.max(second)
    } else {
        first
    };
    t0.ceil()
}

/// First iterate from which the suboptimal mass is exactly zero to the end.
pub fn first_optimal_iterate(metrics: &MetricSeries) -> Option<usize> {
    let last_bad = metrics.subopt_mass.iter().rposition(|&b| b != 0.0);
    match last_bad {
        None => Some(0),
        Some(i) if i + 1 < metrics.len() => Some(i + 1),
        Some(_) => None,
    }
}

pub fn check_pqa_finite(
    mdp: &TabularMdp,
    opt: &OptimalityData,
    traj: &Trajectory,
    metrics: &MetricSeries,
) -> Result<CheckReport> {
    const NAME: &str = "pqa_finite";
    let Some(eta) = traj.schedule.constant_eta() else {
        return Ok(CheckReport::not_applicable(
            NAME,
            "needs a constant step size",
        ));
    };
    if traj.map != MirrorMap::Euclidean
        || traj.algorithm != Algorithm::TdPmd
        || traj.scheme != EvalScheme::OneStep
    {
        return Ok(CheckReport::not_applicable(
            NAME,
            "needs an exact one-step TD-PQA run",
        ));
    }
    let Some(gap) = opt.delta else {
        return Ok(CheckReport::not_applicable(NAME, "every action is optimal"));
    };
    let gamma = mdp.gamma();
    if gamma == 0.0 {
        return Ok(CheckReport::not_applicable(
            NAME,
            "horizon formula needs gamma > 0",
        ));
    }
    let div0 = initial_divergence(mdp, opt, traj)?;
    let t0 = pqa_horizon(gamma, eta, gap, init_norm(traj), traj.kappa0, div0);
    // Nothing is claimed before T0, which may lie beyond the horizon.
    let start = if t0 < metrics.len() as f64 {
        t0 as usize
    } else {
        metrics.len()
    };
    let slack = 2.0 * opt.vi_tolerance;
    let mut t = Tracker::new(NAME, slack);
    for k in start..metrics.len() {
        t.observe(k, metrics.subopt_mass[k], 0.0, 0.0);
        t.observe(k, metrics.pol_err[k], 0.0, slack);
    }
    let first = first_optimal_iterate(metrics);
    Ok(t.finish(Some(format!(
        "T0 = {t0:e}; first exactly-optimal iterate = {}; reference optimal policy: lowest-index argmax of Q*",
        first.map_or("none".to_string(), |k| k.to_string())
    ))))
}

/// `b_s ≤ ‖V* − V^π‖_∞/Δ` at every iterate, plus an optional cap on the
/// final suboptimal mass.
pub fn check_npg_policy_convergence(
    opt: &OptimalityData,
    traj: &Trajectory,
    metrics: &MetricSeries,
    final_threshold: Option<f64>,
) -> CheckReport {
    const NAME: &str = "npg_policy";
    if traj.map != MirrorMap::NegEntropy {
        return CheckReport::not_applicable(NAME, "needs a negative-entropy run");
    }
    let Some(gap) = opt.delta else {
        return CheckReport::not_applicable(NAME, "every action is optimal");
    };
    // v_star carries error vi_tolerance, which enters divided by Δ.
    let tol = SUBOPT_MASS_TOL + opt.vi_tolerance / gap;
    let mut t = Tracker::new(NAME, tol);
    for k in 0..metrics.len() {
        t.observe(k, metrics.subopt_mass[k], metrics.pol_err[k] / gap, tol);
    }
    if let Some(cap) = final_threshold {
        let last = metrics.len() - 1;
        t.observe(last, metrics.subopt_mass[last], cap, 0.0);
    }
    t.finish(Some(format!(
        "final suboptimal mass = {:e}",
        metrics.subopt_mass.last().copied().unwrap_or(0.0)
    )))
}

/// Three-point descent inequality at every step, against `π_k`, the greedy
/// policy (when recorded) and the canonical optimal policy.
pub fn check_three_point(opt: &OptimalityData, traj: &Trajectory) -> Result<CheckReport> {
    const NAME: &str = "three_point";
    let pi_star = opt.canonical_policy();
    let mut t = Tracker::new(NAME, THREE_POINT_TOL);
    let mut skipped = 0usize;
    for w in traj.records.windows(2) {
        let (cur, next) = (&w[0], &w[1]);
        let (Some(q), Some(eta)) = (step_q(traj, cur.k), cur.eta) else {
            continue;
        };
        for s in 0..q.num_states() {
            let q_row = q.row(s);
            // Rounding in η⟨p, q⟩ grows with the step size.
            let scale = eta * q_row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let tol = THREE_POINT_TOL * scale.max(1.0);
            let mut refs: Vec<&[f64]> = vec![cur.policy.row(s), pi_star.row(s)];
            if let Some(g) = &cur.greedy {
                refs.push(g.row(s));
            }
            for p_ref in refs {
                match three_point_residual(
                    traj.map,
                    q_row,
                    cur.policy.row(s),
                    next.policy.row(s),
                    p_ref,
                    eta,
                ) {
                    Ok(r) => t.observe(cur.k, -r, 0.0, tol),
                    Err(Error::IncompatibleSupport) => skipped += 1,
                    Err(e) => return Err(e),
                }
            }
        }
    }
    Ok(t.finish(
        (skipped > 0).then(|| format!("{skipped} support-incompatible references skipped")),
    ))
}

/// `‖X* − X^{π_T}‖ ≤ (‖X* − X^T‖ + ‖X* − X^{T−1}‖)/(1−γ)` for exact one-step runs.
pub fn check_error_decomposition(
    mdp: &TabularMdp,
    opt: &OptimalityData,
    traj: &Trajectory,
    metrics: &MetricSeries,
) -> CheckReport {
    const NAME: &str = "error_decomposition";
    if !matches!(traj.algorithm, Algorithm::TdPmd | Algorithm::QTdPmd)
        || traj.scheme != EvalScheme::OneStep
    {
        return CheckReport::not_applicable(NAME, "needs an exact one-step TD-PMD or Q-TD-PMD run");
    }
    let slack = 4.0 * opt.vi_tolerance;
    let mut t = Tracker::new(NAME, slack);
    let g = 1.0 - mdp.gamma();
    for k in 1..metrics.len() {
        let rhs = (metrics.v_err[k] + metrics.v_err[k - 1]) / g;
        t.observe(k, metrics.policy_errors()[k], rhs, slack);
    }
    t.finish(None)
}

/// Names accepted by [`run_checks`].
pub const CHECK_NAMES: [&str; 9] = [
    "monotone",
    "shift",
    "sublinear",
    "linear",
    "contraction",
    "pqa_finite",
    "npg_policy",
    "three_point",
    "error_decomposition",
];

/// Runs the named trajectory checks. `shift` needs a rerun and is handled
/// by the caller; here it is skipped.
pub fn run_checks(
    names: &[String],
    mdp: &TabularMdp,
    opt: &OptimalityData,
    traj: &Trajectory,
    metrics: &MetricSeries,
    delta: Option<f64>,
) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    for name in names {
        let report = match name.as_str() {
            "monotone" => check_monotone(mdp, opt, traj)?,
            "sublinear" => check_sublinear(mdp, opt, traj, metrics)?,
            "linear" => check_linear(mdp, opt, traj, metrics, delta)?,
            "contraction" => check_contraction(mdp, opt, traj, metrics)?,
            "pqa_finite" => check_pqa_finite(mdp, opt, traj, metrics)?,
            "npg_policy" => check_npg_policy_convergence(opt, traj, metrics, None),
            "three_point" => check_three_point(opt, traj)?,
            "error_decomposition" => check_error_decomposition(mdp, opt, traj, metrics),
            "shift" => continue,
            other => return Err(Error::Config(format!("unknown check `{other}`"))),
        };
        out.push(report);
    }
    Ok(out)
}

/// `‖Q* − Q^π‖_∞` for a policy, used by Q-run summaries.
pub fn q_policy_error(mdp: &TabularMdp, opt: &OptimalityData, pi: &Policy) -> Result<f64> {
    let q_pi: ActionValue = mdp.policy_q_exact(pi)?;
    Ok(opt.q_star.sup_dist(&q_pi))
}
