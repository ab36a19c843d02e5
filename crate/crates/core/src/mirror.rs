//! Bregman geometries on the probability simplex and the proximal
//! policy-improvement step `argmax_p η⟨p, q⟩ − D(p, p_old)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::values::{check_simplex_row, Policy};

/// Mirror map generating the Bregman divergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MirrorMap {
    /// `h(p) = ½‖p‖²`; the step is a Euclidean projection (projected Q-ascent).
    Euclidean,
    /// `h(p) = Σ p log p`; the step is a multiplicative-weights update (natural policy gradient).
    NegEntropy,
}

impl MirrorMap {
    pub fn short_name(self) -> &'static str {
        match self {
            MirrorMap::Euclidean => "pqa",
            MirrorMap::NegEntropy => "npg",
        }
    }
}

/// A Bregman divergence value; `Infinite` when supports are incompatible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BregmanValue {
    Finite(f64),
    Infinite,
}

impl BregmanValue {
    pub fn value(self) -> f64 {
        match self {
            BregmanValue::Finite(v) => v,
            BregmanValue::Infinite => f64::INFINITY,
        }
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            BregmanValue::Finite(v) => Some(v),
            BregmanValue::Infinite => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, BregmanValue::Finite(_))
    }
}

fn check_simplex(p: &[f64]) -> Result<()> {
    check_simplex_row(p).map_err(Error::NotSimplex)
}

/// `D_h(p, q)` for simplex vectors `p`, `q`.
pub fn bregman(map: MirrorMap, p: &[f64], q: &[f64]) -> Result<BregmanValue> {
    if p.len() != q.len() {
        return Err(Error::dims("bregman argument", p.len(), q.len()));
    }
    check_simplex(p)?;
    check_simplex(q)?;
    Ok(bregman_unchecked(map, p, q))
}

pub(crate) fn bregman_unchecked(map: MirrorMap, p: &[f64], q: &[f64]) -> BregmanValue {
    match map {
        MirrorMap::Euclidean => {
            let sq: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
            BregmanValue::Finite(0.5 * sq)
        }
        MirrorMap::NegEntropy => {
            // Σ [p log(p/q) − p + q]: every term is non-negative, and the
            // linear part vanishes on the simplex.
            let mut total = 0.0;
            for (&a, &b) in p.iter().zip(q) {
                if a > 0.0 {
                    if b <= 0.0 {
                        return BregmanValue::Infinite;
                    }
                    total += a * (a / b).ln() - a + b;
                } else {
                    total += b;
                }
            }
            BregmanValue::Finite(total.max(0.0))
        }
    }
}

/// Euclidean projection onto the probability simplex (sort and threshold).
pub fn project_simplex(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::EmptyVector);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "projection input is not finite".into(),
        ));
    }
    // Shift by the maximum so the surviving coordinates are computed without
    // cancellation when x is large (adaptive steps make η·q huge).
    let top = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let u: Vec<f64> = x.iter().map(|v| v - top).collect();
    let mut sorted = u.clone();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));

    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &uj) in sorted.iter().enumerate() {
        cumsum += uj;
        let theta = (cumsum - 1.0) / (j + 1) as f64;
        if uj - theta > 0.0 {
            tau = theta;
        } else {
            break;
        }
    }
    let mut y: Vec<f64> = u.iter().map(|v| (v - tau).max(0.0)).collect();
    let sum: f64 = y.iter().sum();
    if sum != 1.0 {
        y.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(y)
}

/// The proximal policy step for one state:
/// `argmax_{p ∈ Δ} η⟨p, q_row⟩ − D_h(p, p_row)`.
pub fn pmd_prox(map: MirrorMap, q_row: &[f64], p_row: &[f64], eta: f64) -> Result<Vec<f64>> {
    if q_row.len() != p_row.len() {
        return Err(Error::dims("q row", p_row.len(), q_row.len()));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "step size {eta} must be positive and finite"
        )));
    }
    check_simplex(p_row)?;
    match map {
        MirrorMap::Euclidean => {
            let x: Vec<f64> = p_row.iter().zip(q_row).map(|(p, q)| p + eta * q).collect();
            project_simplex(&x)
        }
        MirrorMap::NegEntropy => {
            if let Some(action) = p_row.iter().position(|&p| p <= 0.0) {
                return Err(Error::ZeroSupport { action });
            }
            let q_max = q_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut w: Vec<f64> = p_row
                .iter()
                .zip(q_row)
                .map(|(p, q)| p * (eta * (q - q_max)).exp())
                .collect();
            let z: f64 = w.iter().sum();
            // The exact update is strictly positive; keep it representable.
            w.iter_mut()
                .for_each(|v| *v = (*v / z).max(f64::MIN_POSITIVE));
            Ok(w)
        }
    }
}

/// Proximal objective `η⟨p, q⟩ − D_h(p, p_old)`; `-∞` off the divergence's domain.
pub fn prox_objective(map: MirrorMap, q_row: &[f64], p_old: &[f64], p: &[f64], eta: f64) -> f64 {
    let lin: f64 = p.iter().zip(q_row).map(|(a, b)| a * b).sum();
    eta * lin - bregman_unchecked(map, p, p_old).value()
}

/// Slack of the three-point descent inequality
/// `η⟨p_new − p_ref, q⟩ − [D(p_new, p_old) + D(p_ref, p_new) − D(p_ref, p_old)]`,
/// which is non-negative when `p_new` is the proximal step from `p_old`.
pub fn three_point_residual(
    map: MirrorMap,
    q_row: &[f64],
    p_old: &[f64],
    p_new: &[f64],
    p_ref: &[f64],
    eta: f64,
) -> Result<f64> {
    let n = q_row.len();
    for v in [p_old, p_new, p_ref] {
        if v.len() != n {
            return Err(Error::dims("three-point argument", n, v.len()));
        }
        check_simplex(v)?;
    }
    let d_new_old = bregman_unchecked(map, p_new, p_old);
    let d_ref_new = bregman_unchecked(map, p_ref, p_new);
    let d_ref_old = bregman_unchecked(map, p_ref, p_old);
    let (Some(a), Some(b), Some(c)) = (d_new_old.finite(), d_ref_new.finite(), d_ref_old.finite())
    else {
        return Err(Error::IncompatibleSupport);
    };
    let lin: f64 = p_new
        .iter()
        .zip(p_ref)
        .zip(q_row)
        .map(|((x, y), q)| (x - y) * q)
        .sum();
    Ok(eta * lin - (a + b - c))
}

/// Per-state divergences `D(target(·|s), base(·|s))`.
pub fn policy_divergence(
    map: MirrorMap,
    target: &Policy,
    base: &Policy,
) -> Result<Vec<BregmanValue>> {
    if target.num_states() != base.num_states() || target.num_actions() != base.num_actions() {
        return Err(Error::dims(
            "policy",
            base.num_states() * base.num_actions(),
            target.num_states() * target.num_actions(),
        ));
    }
    Ok(target
        .rows()
        .zip(base.rows())
        .map(|(t, b)| bregman_unchecked(map, t, b))
        .collect())
}

/// `max_s D(target(·|s), base(·|s))`, erroring on an infinite divergence.
pub fn max_policy_divergence(map: MirrorMap, target: &Policy, base: &Policy) -> Result<f64> {
    let divs = policy_divergence(map, target, base)?;
    let mut worst: f64 = 0.0;
    for (state, d) in divs.into_iter().enumerate() {
        match d {
            BregmanValue::Finite(v) => worst = worst.max(v),
            BregmanValue::Infinite => return Err(Error::InfiniteDivergence { state }),
        }
    }
    Ok(worst)
}
