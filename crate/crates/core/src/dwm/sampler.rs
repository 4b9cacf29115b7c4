//! Guided, conditioned reverse-process sampling with stride acceleration.
//!
//! The initial state-action pair is written over the leading window
//! coordinates before the first denoising step and again after every
//! posterior step, so those coordinates are bit-identical to the inputs
//! throughout the reverse process.

use super::model::DiffusionWorldModel;
use super::schedule::NoiseSchedule;
use crate::dwm::epsnet::EpsNet;
use crate::error::{Error, Result};
use crate::rngutil::{rng_from, standard_normal, standard_normal_vec};
use rand::Rng;

/// N = ceil(r * K) reverse steps, rounded evenly spaced over 1..=K with the
/// last step pinned to K; N = 1 degenerates to {K}.
pub fn stride_steps(k_steps: usize, infer_ratio: f64) -> Vec<usize> {
    assert!(infer_ratio > 0.0 && infer_ratio <= 1.0);
    let n = (infer_ratio * k_steps as f64).ceil() as usize;
    if n <= 1 {
        return vec![k_steps];
    }
    let mut steps: Vec<usize> = (0..n)
        .map(|i| {
            let x = 1.0 + (k_steps - 1) as f64 * i as f64 / (n - 1) as f64;
            x.round() as usize
        })
        .collect();
    steps.dedup();
    *steps.last_mut().unwrap() = k_steps;
    steps.dedup();
    steps
}

/// Classifier-free guided prediction:
/// eps_hat = omega * eps(x, k, g) + (1 - omega) * eps(x, k, null).
pub fn guided_epsilon(
    net: &EpsNet,
    params: &[f64],
    x: &[f64],
    k: usize,
    g_eval: f64,
    omega: f64,
) -> Vec<f64> {
    let cond = net.forward(params, x, k, g_eval, 0.0);
    let uncond = net.forward(params, x, k, 0.0, 1.0);
    cond.iter()
        .zip(uncond.iter())
        .map(|(c, u)| omega * c + (1.0 - omega) * u)
        .collect()
}

/// One reverse step from level `k` down to `k_prev` (< k). Reconstructs
/// x0_hat = (x^k - sqrt(1-abar_k) eps_hat) / sqrt(abar_k), forms the
/// stride posterior with alpha~ = abar_k/abar_prev, beta~ = 1 - alpha~:
///
///   mean = sqrt(abar_prev) beta~ / (1-abar_k) * x0_hat
///        + sqrt(alpha~) (1-abar_prev) / (1-abar_k) * x^k
///   var  = beta~ (1-abar_prev) / (1-abar_k)
///
/// and samples N(mean, temperature^2 var I). The final step (k_prev = 0)
/// returns the mean with no noise.
#[allow(clippy::too_many_arguments)]
pub fn posterior_step<R: Rng>(
    x_k: &[f64],
    eps_hat: &[f64],
    k_prev: usize,
    k: usize,
    schedule: &NoiseSchedule,
    temperature: f64,
    x0_clip: f64,
    rng: &mut R,
) -> Vec<f64> {
    assert!(k_prev < k && k <= schedule.k_steps);
    let ab_k = schedule.alpha_bar(k);
    let ab_prev = schedule.alpha_bar(k_prev);
    let inv_sqrt = 1.0 / ab_k.sqrt();
    let noise_coef = (1.0 - ab_k).sqrt();
    let mut x0_hat: Vec<f64> = x_k
        .iter()
        .zip(eps_hat.iter())
        .map(|(x, e)| inv_sqrt * (x - noise_coef * e))
        .collect();
    if x0_clip > 0.0 {
        for v in x0_hat.iter_mut() {
            *v = v.clamp(-x0_clip, x0_clip);
        }
    }
    let alpha_tilde = ab_k / ab_prev;
    let beta_tilde = 1.0 - alpha_tilde;
    let c0 = ab_prev.sqrt() * beta_tilde / (1.0 - ab_k);
    let ck = alpha_tilde.sqrt() * (1.0 - ab_prev) / (1.0 - ab_k);
    let mut out: Vec<f64> = x0_hat
        .iter()
        .zip(x_k.iter())
        .map(|(x0, xk)| c0 * x0 + ck * xk)
        .collect();
    if k_prev > 0 {
        let std = (beta_tilde * (1.0 - ab_prev) / (1.0 - ab_k)).max(0.0).sqrt();
        for v in out.iter_mut() {
            *v += temperature * std * standard_normal(rng);
        }
    }
    out
}

/// Denormalized model output: rewards for steps t..t+T-1 and states for
/// steps t+1..t+T-1.
#[derive(Debug, Clone, PartialEq)]
pub struct DwmPrediction {
    pub rewards: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl DiffusionWorldModel {
    fn inpaint(&self, x: &mut [f64], cond: &[f64]) {
        x[..cond.len()].copy_from_slice(cond);
    }

    /// Runs the reverse process over an explicit descending step set,
    /// returning the final normalized window and, when `trace` is set, the
    /// window after the initial draw and after every denoising step.
    pub fn sample_window_with_steps<R: Rng>(
        &self,
        steps: &[usize],
        state: &[f64],
        action: &[f64],
        g_eval: f64,
        rng: &mut R,
        mut trace: Option<&mut Vec<Vec<f64>>>,
    ) -> Result<Vec<f64>> {
        if state.len() != self.layout.state_dim || action.len() != self.layout.action_dim {
            return Err(Error::DimMismatch {
                context: "sample conditioning",
                expected: self.layout.state_dim + self.layout.action_dim,
                got: state.len() + action.len(),
            });
        }
        if !g_eval.is_finite() {
            return Err(Error::NonFinite("g_eval".into()));
        }
        let mut cond = self.normalizer.apply_obs(state);
        cond.extend_from_slice(action);
        let params = self.sampling_params();
        let mut x = standard_normal_vec(rng, self.layout.dim());
        self.inpaint(&mut x, &cond);
        if let Some(t) = trace.as_deref_mut() {
            t.push(x.clone());
        }
        for (i, &k) in steps.iter().enumerate().rev() {
            let k_prev = if i == 0 { 0 } else { steps[i - 1] };
            let eps_hat = guided_epsilon(&self.net, params, &x, k, g_eval, self.config.guidance);
            x = posterior_step(
                &x,
                &eps_hat,
                k_prev,
                k,
                &self.schedule,
                self.config.temperature,
                self.config.x0_clip,
                rng,
            );
            self.inpaint(&mut x, &cond);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "sample at diffusion step {k} -> {k_prev}"
                )));
            }
            if let Some(t) = trace.as_deref_mut() {
                t.push(x.clone());
            }
        }
        Ok(x)
    }

    /// Samples the normalized window under the configured stride schedule.
    pub fn sample_window<R: Rng>(
        &self,
        state: &[f64],
        action: &[f64],
        g_eval: f64,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let steps = stride_steps(self.config.k_steps, self.config.infer_ratio);
        self.sample_window_with_steps(&steps, state, action, g_eval, rng, None)
    }

    fn unflatten(&self, x: &[f64]) -> DwmPrediction {
        let t_len = self.layout.seq_len;
        let rewards = (0..t_len)
            .map(|j| {
                self.normalizer
                    .invert_reward(x[self.layout.reward_offset(j)])
            })
            .collect();
        let states = (1..t_len)
            .map(|j| {
                let off = self.layout.state_offset(j);
                self.normalizer
                    .invert_obs(&x[off..off + self.layout.state_dim])
            })
            .collect();
        DwmPrediction { rewards, states }
    }

    /// Predicts the future from a raw (state, action, target-return) triple.
    pub fn sample<R: Rng>(
        &self,
        state: &[f64],
        action: &[f64],
        g_eval: f64,
        rng: &mut R,
    ) -> Result<DwmPrediction> {
        let x = self.sample_window(state, action, g_eval, rng)?;
        Ok(self.unflatten(&x))
    }

    /// Seedable batch sampling; item i uses an independent stream derived
    /// from (seed, i), so results do not depend on batch composition.
    pub fn sample_batch(
        &self,
        pairs: &[(&[f64], &[f64])],
        g_eval: f64,
        seed: u64,
    ) -> Result<Vec<DwmPrediction>> {
        pairs
            .iter()
            .enumerate()
            .map(|(i, (s, a))| {
                let mut rng = rng_from(seed, i as u64);
                self.sample(s, a, g_eval, &mut rng)
            })
            .collect()
    }
}
