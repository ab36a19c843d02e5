//! Generative-model simulation and the sample-based runners.
//!
//! Every estimator call advances an epoch counter. Within an epoch, each
//! `(state, action)` query draws from its own ChaCha8 stream, selected by
//! mixing `(estimator tag, epoch, state, action)` with splitmix64. Draws are
//! therefore independent of evaluation order and thread placement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algorithms::{
    check_run_inputs, final_record, improve, init_shift, init_shift_q, Algorithm, DivergenceKind,
    Estimate, EvalScheme, IterRecord, StepSchedule, Trajectory,
};
use crate::error::{Error, Result};
use crate::mdp::{dot, TabularMdp};
use crate::mirror::MirrorMap;
use crate::values::{ActionValue, Policy, StateValue};

const TAG_Q: u64 = 1;
const TAG_V: u64 = 2;
const TAG_FQ: u64 = 3;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn stream_id(tag: u64, epoch: u64, s: usize, a: usize) -> u64 {
    let mut h = splitmix64(tag);
    for part in [epoch, s as u64, a as u64] {
        h = splitmix64(h ^ part);
    }
    h
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    p.iter()
        .scan(0.0, |acc, x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

/// Inverse-CDF draw; never returns a zero-probability index.
fn draw(cdf: &[f64], probs: &[f64], u: f64) -> usize {
    let i = cdf.partition_point(|&c| c <= u);
    if i < cdf.len() {
        i
    } else {
        probs
            .iter()
            .rposition(|&p| p > 0.0)
            .unwrap_or(probs.len() - 1)
    }
}

/// Sampling oracle over a fixed MDP with a seeded, replayable stream.
#[derive(Debug, Clone)]
pub struct GenerativeModel {
    mdp: TabularMdp,
    base: ChaCha8Rng,
    seed: u64,
    epoch: u64,
    cdfs: Vec<Vec<f64>>,
}

impl GenerativeModel {
    pub fn new(mdp: TabularMdp, seed: u64) -> Self {
        let ns = mdp.num_states();
        let cdfs = mdp.transitions().chunks_exact(ns).map(cumulative).collect();
        GenerativeModel {
            mdp,
            base: ChaCha8Rng::seed_from_u64(seed),
            seed,
            epoch: 0,
            cdfs,
        }
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of estimator calls made so far.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    fn rng(&self, tag: u64, s: usize, a: usize) -> ChaCha8Rng {
        let mut rng = self.base.clone();
        rng.set_stream(stream_id(tag, self.epoch, s, a));
        rng
    }

    fn next_state(&self, rng: &mut ChaCha8Rng, s: usize, a: usize) -> usize {
        let idx = s * self.mdp.num_actions() + a;
        draw(
            &self.cdfs[idx],
            self.mdp.transition_row(s, a),
            rng.random::<f64>(),
        )
    }

    /// `m` independent next-state draws from `P(·|s,a)`, for statistical tests.
    pub fn sample_next_states(&mut self, s: usize, a: usize, m: usize) -> Vec<usize> {
        let mut rng = self.rng(0, s, a);
        self.epoch += 1;
        (0..m).map(|_| self.next_state(&mut rng, s, a)).collect()
    }

    fn check_bounded(&self, norm: f64, count: usize, what: &str) -> Result<()> {
        if count == 0 {
            return Err(Error::Precondition(format!(
                "{what} needs at least one sample"
            )));
        }
        let bound = self.mdp.value_bound();
        if norm > bound * (1.0 + 1e-12) {
            return Err(Error::Precondition(format!(
                "{what} needs sup-norm at most 1/(1-gamma) = {bound}, got {norm}"
            )));
        }
        Ok(())
    }

    /// `Q̂(s,a) = r(s,a) + γ · mean_i v(s'_i)`, `s'_i ~ P(·|s,a)`.
    pub fn sample_q_hat(&mut self, v: &StateValue, m_q: usize) -> Result<ActionValue> {
        let ns = self.mdp.num_states();
        if v.len() != ns {
            return Err(Error::dims("state value", ns, v.len()));
        }
        self.check_bounded(v.sup_norm(), m_q, "Q estimation")?;
        let na = self.mdp.num_actions();
        let gamma = self.mdp.gamma();
        let mut freq = vec![0.0; ns];
        let mut values = Vec::with_capacity(ns * na);
        for s in 0..ns {
            for a in 0..na {
                let mut rng = self.rng(TAG_Q, s, a);
                let mut counts = vec![0usize; ns];
                for _ in 0..m_q {
                    counts[self.next_state(&mut rng, s, a)] += 1;
                }
                for (f, c) in freq.iter_mut().zip(&counts) {
                    *f = *c as f64 / m_q as f64;
                }
                values.push(self.mdp.reward(s, a) + gamma * dot(&freq, v.as_slice()));
            }
        }
        self.epoch += 1;
        Ok(ActionValue::from_vec_unchecked(ns, na, values))
    }

    /// Unbiased estimate of `T^π v` from `m_v` draws of `(a, s') ~ π × P` per state.
    pub fn sample_td_hat(&mut self, pi: &Policy, v: &StateValue, m_v: usize) -> Result<StateValue> {
        self.mdp.check_policy(pi)?;
        let ns = self.mdp.num_states();
        if v.len() != ns {
            return Err(Error::dims("state value", ns, v.len()));
        }
        self.check_bounded(v.sup_norm(), m_v, "TD evaluation")?;
        let na = self.mdp.num_actions();
        let gamma = self.mdp.gamma();
        let mut out = Vec::with_capacity(ns);
        for s in 0..ns {
            let probs = pi.row(s);
            let cdf = cumulative(probs);
            let mut rng = self.rng(TAG_V, s, 0);
            let mut counts = vec![0usize; na * ns];
            for _ in 0..m_v {
                let a = draw(&cdf, probs, rng.random::<f64>());
                let sp = self.next_state(&mut rng, s, a);
                counts[a * ns + sp] += 1;
            }
            // Σ_a f_a (r(s,a) + γ Σ_{s'} f_{s'|a} v(s')), mirroring the exact operator.
            let mut per_action = vec![0.0; na];
            let mut weights = vec![0.0; na];
            let mut cond = vec![0.0; ns];
            for a in 0..na {
                let row = &counts[a * ns..(a + 1) * ns];
                let n_a: usize = row.iter().sum();
                weights[a] = n_a as f64 / m_v as f64;
                if n_a > 0 {
                    for (c, n) in cond.iter_mut().zip(row) {
                        *c = *n as f64 / n_a as f64;
                    }
                    per_action[a] = self.mdp.reward(s, a) + gamma * dot(&cond, v.as_slice());
                }
            }
            out.push(dot(&weights, &per_action));
        }
        self.epoch += 1;
        Ok(StateValue::from_vec_unchecked(out))
    }

    /// Unbiased estimate of `F^π q` from `m_q` draws of `(s', a') ~ P × π` per pair.
    pub fn sample_fq_hat(
        &mut self,
        pi: &Policy,
        q: &ActionValue,
        m_q: usize,
    ) -> Result<ActionValue> {
        self.mdp.check_policy(pi)?;
        let ns = self.mdp.num_states();
        let na = self.mdp.num_actions();
        if q.num_states() != ns || q.num_actions() != na {
            return Err(Error::dims(
                "action value",
                ns * na,
                q.num_states() * q.num_actions(),
            ));
        }
        self.check_bounded(q.sup_norm(), m_q, "Q evaluation")?;
        let gamma = self.mdp.gamma();
        let cdfs_pi: Vec<Vec<f64>> = pi.rows().map(cumulative).collect();
        let mut values = Vec::with_capacity(ns * na);
        let mut freq = vec![0.0; ns];
        let mut next_avg = vec![0.0; ns];
        let mut cond = vec![0.0; na];
        for s in 0..ns {
            for a in 0..na {
                let mut rng = self.rng(TAG_FQ, s, a);
                let mut counts = vec![0usize; ns * na];
                for _ in 0..m_q {
                    let sp = self.next_state(&mut rng, s, a);
                    let ap = draw(&cdfs_pi[sp], pi.row(sp), rng.random::<f64>());
                    counts[sp * na + ap] += 1;
                }
                for sp in 0..ns {
                    let row = &counts[sp * na..(sp + 1) * na];
                    let n_s: usize = row.iter().sum();
                    freq[sp] = n_s as f64 / m_q as f64;
                    next_avg[sp] = if n_s > 0 {
                        for (c, n) in cond.iter_mut().zip(row) {
                            *c = *n as f64 / n_s as f64;
                        }
                        dot(&cond, q.row(sp))
                    } else {
                        0.0
                    };
                }
                values.push(self.mdp.reward(s, a) + gamma * dot(&freq, &next_avg));
            }
        }
        self.epoch += 1;
        Ok(ActionValue::from_vec_unchecked(ns, na, values))
    }
}

/// Iteration count, error level and per-entry sample counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub iterations: usize,
    pub delta: f64,
    pub alpha: f64,
    pub m_q: usize,
    pub m_v: usize,
}

impl SampleConfig {
    /// Counts derived from the Hoeffding bounds.
    pub fn derived(
        iterations: usize,
        num_states: usize,
        num_actions: usize,
        gamma: f64,
        delta: f64,
        alpha: f64,
        q_variant: bool,
    ) -> Result<Self> {
        let (m_q, m_v) = hoeffding_sizes(
            iterations,
            num_states,
            num_actions,
            gamma,
            delta,
            alpha,
            q_variant,
        )?;
        Ok(SampleConfig {
            iterations,
            delta,
            alpha,
            m_q,
            m_v,
        })
    }
}

/// Un-rounded Hoeffding sample bounds `(M_Q, M_V)`.
pub fn hoeffding_bounds(
    iterations: usize,
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    delta: f64,
    alpha: f64,
    q_variant: bool,
) -> Result<(f64, f64)> {
    if iterations == 0 || num_states == 0 || num_actions == 0 {
        return Err(Error::InvalidArgument(
            "iterations, states and actions must all be positive".into(),
        ));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!(
            "gamma must lie in [0, 1) for a finite sample size, got {gamma}"
        )));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "error level delta must be positive, got {delta}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "failure probability alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let scale = 1.0 / (2.0 * (1.0 - gamma).powi(2) * delta * delta);
    let t = iterations as f64;
    let (ns, na) = (num_states as f64, num_actions as f64);
    let union = if q_variant { 2.0 } else { 4.0 };
    let m_q = scale * (union * t * ns * na / alpha).ln();
    let m_v = scale * (4.0 * t * ns / alpha).ln();
    Ok((m_q, m_v))
}

/// Per-entry sample counts `(m_q, m_v)`, rounded up.
pub fn hoeffding_sizes(
    iterations: usize,
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    delta: f64,
    alpha: f64,
    q_variant: bool,
) -> Result<(usize, usize)> {
    let (m_q, m_v) = hoeffding_bounds(
        iterations,
        num_states,
        num_actions,
        gamma,
        delta,
        alpha,
        q_variant,
    )?;
    Ok((m_q.ceil().max(1.0) as usize, m_v.ceil().max(1.0) as usize))
}

/// High-probability bound on `‖V* − V^{π_T}‖_∞` (or `‖Q* − Q^{π_T}‖_∞`) after
/// `iterations` sample-based steps.
pub fn sample_error_bound(
    gamma: f64,
    c: f64,
    delta: f64,
    iterations: usize,
    q_variant: bool,
) -> f64 {
    let noise = if q_variant { 3.0 } else { 7.0 };
    let t = iterations as i32;
    (2.0 * (2.0 + c) * gamma.powi(t - 1) + noise * delta) / (1.0 - gamma).powi(2)
}

/// Sample-based TD-PMD.
pub fn sample_td_pmd(
    gm: &mut GenerativeModel,
    map: MirrorMap,
    schedule: StepSchedule,
    config: &SampleConfig,
    v0: &StateValue,
    pi0: &Policy,
) -> Result<Trajectory> {
    let mdp = gm.mdp().clone();
    check_run_inputs(&mdp, map, &schedule, pi0, config.iterations)?;
    if v0.len() != mdp.num_states() {
        return Err(Error::dims("initial value", mdp.num_states(), v0.len()));
    }
    gm.check_bounded(
        v0.sup_norm(),
        config.m_q.min(config.m_v),
        "sample-based TD-PMD",
    )?;
    let (kappa0, _) = init_shift(&mdp, pi0, v0)?;
    let mut records = Vec::with_capacity(config.iterations + 1);
    let mut v = v0.clone();
    let mut pi = pi0.clone();
    for k in 0..config.iterations {
        let q_hat = gm.sample_q_hat(&v, config.m_q)?;
        let step = improve(&mdp, map, &schedule, DivergenceKind::State, &q_hat, &pi, k)?;
        let v_next = gm.sample_td_hat(&step.policy, &v, config.m_v)?;
        records.push(IterRecord {
            k,
            policy: std::mem::replace(&mut pi, step.policy),
            value: Estimate::State(std::mem::replace(&mut v, v_next)),
            improvement_q: Some(q_hat),
            eta: Some(step.eta),
            div_norm: step.div_norm,
            greedy: step.greedy,
        });
    }
    records.push(final_record(config.iterations, pi, Estimate::State(v)));
    Ok(Trajectory {
        algorithm: Algorithm::SampleTdPmd,
        map,
        schedule,
        scheme: EvalScheme::OneStep,
        kappa0,
        records,
    })
}

/// Sample-based Q-TD-PMD.
pub fn sample_q_td_pmd(
    gm: &mut GenerativeModel,
    map: MirrorMap,
    schedule: StepSchedule,
    config: &SampleConfig,
    q0: &ActionValue,
    pi0: &Policy,
) -> Result<Trajectory> {
    let mdp = gm.mdp().clone();
    check_run_inputs(&mdp, map, &schedule, pi0, config.iterations)?;
    if q0.num_states() != mdp.num_states() || q0.num_actions() != mdp.num_actions() {
        return Err(Error::dims(
            "initial action value",
            mdp.num_states() * mdp.num_actions(),
            q0.num_states() * q0.num_actions(),
        ));
    }
    gm.check_bounded(q0.sup_norm(), config.m_q, "sample-based Q-TD-PMD")?;
    let (kappa0, _) = init_shift_q(&mdp, pi0, q0)?;
    let mut records = Vec::with_capacity(config.iterations + 1);
    let mut q = q0.clone();
    let mut pi = pi0.clone();
    for k in 0..config.iterations {
        let step = improve(&mdp, map, &schedule, DivergenceKind::Expected, &q, &pi, k)?;
        let q_next = gm.sample_fq_hat(&step.policy, &q, config.m_q)?;
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
    records.push(final_record(config.iterations, pi, Estimate::Action(q)));
    Ok(Trajectory {
        algorithm: Algorithm::SampleQTdPmd,
        map,
        schedule,
        scheme: EvalScheme::OneStep,
        kappa0,
        records,
    })
}
