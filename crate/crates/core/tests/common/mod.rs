//! Naive reference implementations used as test oracles. Nothing here calls
//! into the library's numerical routines.
#![allow(dead_code)]

use tdpmd::harness::random_mdp;
use tdpmd::TabularMdp;

pub fn seeded(seed: u64, s: usize, a: usize, gamma: f64) -> TabularMdp {
    random_mdp(seed, s, a, gamma).unwrap()
}

pub fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `Q(s,a) = r(s,a) + γ Σ_s' P(s'|s,a) v(s')` by explicit loops.
pub fn q_of(m: &TabularMdp, v: &[f64]) -> Vec<Vec<f64>> {
    let mut q = vec![vec![0.0; m.num_actions()]; m.num_states()];
    for s in 0..m.num_states() {
        for a in 0..m.num_actions() {
            let mut acc = 0.0;
            for sp in 0..m.num_states() {
                acc += m.transition_row(s, a)[sp] * v[sp];
            }
            q[s][a] = m.reward(s, a) + m.gamma() * acc;
        }
    }
    q
}

pub fn backup(m: &TabularMdp, pi: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    let q = q_of(m, v);
    (0..m.num_states())
        .map(|s| (0..m.num_actions()).map(|a| pi[s][a] * q[s][a]).sum())
        .collect()
}

pub fn backup_q(m: &TabularMdp, pi: &[Vec<f64>], q: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; m.num_actions()]; m.num_states()];
    for s in 0..m.num_states() {
        for a in 0..m.num_actions() {
            let mut acc = 0.0;
            for sp in 0..m.num_states() {
                for ap in 0..m.num_actions() {
                    acc += m.transition_row(s, a)[sp] * pi[sp][ap] * q[sp][ap];
                }
            }
            out[s][a] = m.reward(s, a) + m.gamma() * acc;
        }
    }
    out
}

/// Fixed point of `T^π` by repeated application.
pub fn power_value(m: &TabularMdp, pi: &[Vec<f64>], iters: usize) -> Vec<f64> {
    let mut v = vec![0.0; m.num_states()];
    for _ in 0..iters {
        v = backup(m, pi, &v);
    }
    v
}

/// `(1−γ) Σ_{t≤T} γ^t μᵀ(P^π)^t`.
pub fn visitation_series(m: &TabularMdp, pi: &[Vec<f64>], mu: &[f64], terms: usize) -> Vec<f64> {
    let n = m.num_states();
    let mut dist = mu.to_vec();
    let mut acc = vec![0.0; n];
    let mut w = 1.0;
    for _ in 0..=terms {
        for s in 0..n {
            acc[s] += w * dist[s];
        }
        let mut next = vec![0.0; n];
        for s in 0..n {
            for a in 0..m.num_actions() {
                for sp in 0..n {
                    next[sp] += dist[s] * pi[s][a] * m.transition_row(s, a)[sp];
                }
            }
        }
        dist = next;
        w *= m.gamma();
    }
    acc.iter().map(|x| (1.0 - m.gamma()) * x).collect()
}

/// State-action analogue, indexed `s·|A| + a`.
pub fn visitation_series_sa(
    m: &TabularMdp,
    pi: &[Vec<f64>],
    rho: &[f64],
    terms: usize,
) -> Vec<f64> {
    let (ns, na) = (m.num_states(), m.num_actions());
    let mut dist = rho.to_vec();
    let mut acc = vec![0.0; ns * na];
    let mut w = 1.0;
    for _ in 0..=terms {
        for i in 0..ns * na {
            acc[i] += w * dist[i];
        }
        let mut next = vec![0.0; ns * na];
        for s in 0..ns {
            for a in 0..na {
                for sp in 0..ns {
                    for ap in 0..na {
                        next[sp * na + ap] +=
                            dist[s * na + a] * m.transition_row(s, a)[sp] * pi[sp][ap];
                    }
                }
            }
        }
        dist = next;
        w *= m.gamma();
    }
    acc.iter().map(|x| (1.0 - m.gamma()) * x).collect()
}

/// Euclidean projection onto the simplex by bisection on the threshold.
pub fn project_bisect(x: &[f64]) -> Vec<f64> {
    let hi0 = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (hi0 - 1.0, hi0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let mass: f64 = x.iter().map(|v| (v - mid).max(0.0)).sum();
        if mass > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = 0.5 * (lo + hi);
    let p: Vec<f64> = x.iter().map(|v| (v - tau).max(0.0)).collect();
    let z: f64 = p.iter().sum();
    p.iter().map(|v| v / z).collect()
}

/// Multiplicative-weights step `p ∝ π exp(ηq)`.
pub fn softmax_step(p: &[f64], q: &[f64], eta: f64) -> Vec<f64> {
    let m = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = p
        .iter()
        .zip(q)
        .map(|(p, q)| p * (eta * (q - m)).exp())
        .collect();
    let z: f64 = w.iter().sum();
    w.iter().map(|v| v / z).collect()
}

pub fn rows_of(pi: &tdpmd::Policy) -> Vec<Vec<f64>> {
    pi.rows().map(|r| r.to_vec()).collect()
}

pub fn uniform_rows(s: usize, a: usize) -> Vec<Vec<f64>> {
    vec![vec![1.0 / a as f64; a]; s]
}

/// Value iteration until the residual stops shrinking at rounding level.
pub fn v_star(m: &TabularMdp) -> Vec<f64> {
    let mut v = vec![0.0; m.num_states()];
    for _ in 0..200_000 {
        let next: Vec<f64> = q_of(m, &v)
            .iter()
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let d = sup(&next, &v);
        v = next;
        if d < 1e-13 {
            break;
        }
    }
    v
}

/// Random strictly positive policy rows.
pub fn random_rows(rng: &mut impl rand::Rng, s: usize, a: usize) -> Vec<Vec<f64>> {
    (0..s)
        .map(|_| {
            let w: Vec<f64> = (0..a).map(|_| rng.random::<f64>() + 0.01).collect();
            let z: f64 = w.iter().sum();
            w.iter().map(|x| x / z).collect()
        })
        .collect()
}
