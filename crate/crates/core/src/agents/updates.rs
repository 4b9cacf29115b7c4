//! The individual network update rules shared by the trainers.

use super::ActorCriticState;
use crate::dataset::Normalizer;
use crate::error::{Error, Result};
use crate::rngutil::standard_normal;
use crate::substrate::{adam_step, AdamState, Approximator};
use rand::Rng;

/// Asymmetric squared loss |tau - 1{u<0}| u^2.
pub fn expectile_loss(u: f64, tau: f64) -> f64 {
    let w = if u < 0.0 { tau - 1.0 } else { tau }.abs();
    w * u * u
}

/// Smoothed twin-min bootstrap at a raw state: the target policy action is
/// perturbed by clipped Gaussian noise and the perturbed action is clipped
/// to [-C, C] before querying the frozen critics.
pub fn td3_bootstrap<R: Rng>(
    state: &ActorCriticState,
    normalizer: &Normalizer,
    raw_state: &[f64],
    sigma: f64,
    clip: f64,
    rng: &mut R,
) -> f64 {
    let sn = normalizer.apply_obs(raw_state);
    let mut action = state.policy.arch.forward(&state.policy_target.shadow, &sn);
    for a in action.iter_mut() {
        let noise = (sigma * standard_normal(rng)).clamp(-clip, clip);
        *a = (*a + noise).clamp(-clip, clip);
    }
    let mut input = sn;
    input.extend(action);
    state.min_q_target(&input)
}

/// Regresses one critic to fixed targets by mean squared error.
/// `batch` rows are ([normalized s | action], y).
pub fn critic_update(
    q: &mut Approximator,
    adam: &mut AdamState,
    batch: &[(Vec<f64>, f64)],
) -> Result<f64> {
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; q.params.len()];
    let mut loss = 0.0;
    for (input, y) in batch {
        let (out, cache) = q.arch.forward_cached(&q.params, input);
        let d = out[0] - y;
        loss += d * d * scale;
        q.arch
            .backward(&q.params, &cache, &[2.0 * d * scale], &mut grad);
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("critic loss".into()));
    }
    adam_step(adam, &mut q.params, &grad)?;
    Ok(loss)
}

/// Value-net update: expectile regression of V toward min target-Q when
/// `expectile` is set, plain MSE otherwise. Rows are (normalized s, min Q).
pub fn iql_v_update(
    v: &mut Approximator,
    adam: &mut AdamState,
    batch: &[(Vec<f64>, f64)],
    expectile: Option<f64>,
) -> Result<f64> {
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; v.params.len()];
    let mut loss = 0.0;
    for (input, min_q) in batch {
        let (out, cache) = v.arch.forward_cached(&v.params, input);
        let u = min_q - out[0];
        let (l, dl_dv) = match expectile {
            Some(tau) => {
                let w = if u < 0.0 { tau - 1.0 } else { tau }.abs();
                (w * u * u, -2.0 * w * u)
            }
            None => (u * u, -2.0 * u),
        };
        loss += l * scale;
        v.arch
            .backward(&v.params, &cache, &[dl_dv * scale], &mut grad);
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("value loss".into()));
    }
    adam_step(adam, &mut v.params, &grad)?;
    Ok(loss)
}

/// TD3+BC policy step: ascends
/// `lambda Q1(s, pi(s)) - |a - pi(s)|^2` with
/// `lambda = alpha / mean|Q1(s, pi(s))|` held constant for the step.
/// Gradients flow through Q1's action input into the policy; Q1 itself is
/// not updated. Returns (loss, lambda).
pub fn td3bc_actor_update(
    policy: &mut Approximator,
    q1: &Approximator,
    adam: &mut AdamState,
    batch: &[(Vec<f64>, Vec<f64>)],
    bc_alpha: f64,
) -> Result<(f64, f64)> {
    let b = batch.len() as f64;
    let state_dim = batch[0].0.len();
    let mut pi_all = Vec::with_capacity(batch.len());
    let mut q_all = Vec::with_capacity(batch.len());
    for (s, _) in batch {
        let (pi, pi_cache) = policy.arch.forward_cached(&policy.params, s);
        let mut qin = s.clone();
        qin.extend_from_slice(&pi);
        let (q, q_cache) = q1.arch.forward_cached(&q1.params, &qin);
        pi_all.push((pi, pi_cache));
        q_all.push((q[0], q_cache));
    }
    let mean_abs_q = q_all.iter().map(|(q, _)| q.abs()).sum::<f64>() / b;
    let lambda = bc_alpha / mean_abs_q;
    let mut grad = vec![0.0; policy.params.len()];
    let mut q_scratch = vec![0.0; q1.params.len()];
    let mut loss = 0.0;
    for (((pi, pi_cache), (q, q_cache)), (_, a)) in
        pi_all.iter().zip(q_all.iter()).zip(batch.iter())
    {
        let bc: f64 = pi
            .iter()
            .zip(a.iter())
            .map(|(p, a)| (p - a) * (p - a))
            .sum();
        loss += (-lambda * q + bc) / b;
        // dLoss/d pi = -lambda/b * dQ/da + 2 (pi - a)/b
        let q_in_grad = q1
            .arch
            .backward(&q1.params, q_cache, &[-lambda / b], &mut q_scratch);
        let mut d_pi: Vec<f64> = q_in_grad[state_dim..].to_vec();
        for (g, (p, a)) in d_pi.iter_mut().zip(pi.iter().zip(a.iter())) {
            *g += 2.0 * (p - a) / b;
        }
        policy
            .arch
            .backward(&policy.params, pi_cache, &d_pi, &mut grad);
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("td3bc actor loss".into()));
    }
    adam_step(adam, &mut policy.params, &grad)?;
    Ok((loss, lambda))
}

/// Advantage-weighted regression: minimizes
/// `-mean w log pi(a|s)` with `w = min(exp(beta * advantage), max_weight)`
/// under a Gaussian policy whose mean is the tanh-bounded net output and
/// whose per-dimension log-std is a free parameter. Rows are
/// (normalized s, action, advantage). Returns (loss, max weight seen).
pub fn awr_actor_update(
    policy: &mut Approximator,
    log_std: &mut [f64],
    adam: &mut AdamState,
    batch: &[(Vec<f64>, Vec<f64>, f64)],
    beta: f64,
    max_weight: f64,
) -> Result<(f64, f64)> {
    let b = batch.len() as f64;
    let ln_tau = (2.0 * std::f64::consts::PI).ln();
    let mut grad = vec![0.0; policy.params.len() + log_std.len()];
    let (grad_mlp, grad_std) = grad.split_at_mut(policy.params.len());
    let mut loss = 0.0;
    let mut top_w = 0.0f64;
    for (s, a, adv) in batch {
        let w = (beta * adv).exp().min(max_weight);
        top_w = top_w.max(w);
        let (mu, cache) = policy.arch.forward_cached(&policy.params, s);
        let mut d_mu = Vec::with_capacity(mu.len());
        let mut logp = 0.0;
        for d in 0..mu.len() {
            let sd = log_std[d].exp();
            let z = (a[d] - mu[d]) / sd;
            logp += -0.5 * ln_tau - log_std[d] - 0.5 * z * z;
            d_mu.push(-w * z / sd / b);
            grad_std[d] += -w * (z * z - 1.0) / b;
        }
        loss += -w * logp / b;
        policy.arch.backward(&policy.params, &cache, &d_mu, grad_mlp);
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("awr actor loss".into()));
    }
    let mut params: Vec<f64> = policy.params.clone();
    params.extend_from_slice(log_std);
    adam_step(adam, &mut params, &grad)?;
    let (p_mlp, p_std) = params.split_at(policy.params.len());
    policy.params.copy_from_slice(p_mlp);
    log_std.copy_from_slice(p_std);
    Ok((loss, top_w))
}
