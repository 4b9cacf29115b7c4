//! Baseline one-step Gaussian dynamics model and recursive imagination.
//!
//! Two MLPs map (state, action) to the mean and diagonal variance of
//! (next state, reward), trained by maximizing the Gaussian log-likelihood
//! of single-step transitions. Multi-step prediction queries the model
//! recursively, which is exactly where compounding error comes from.

use crate::dataset::{Normalizer, OfflineDataset};
use crate::error::{Error, Result};
use crate::rngutil::{rng_from, standard_normal};
use crate::substrate::{
    adam_step, read_checkpoint, write_checkpoint, Activation, AdamParams, AdamState, Approximator,
    MlpArch, OutputActivation,
};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OneStepConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for OneStepConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            lr: 1e-3,
            batch_size: 128,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OneStepModel {
    pub mean: Approximator,
    pub variance: Approximator,
    pub normalizer: Normalizer,
    pub state_dim: usize,
    pub action_dim: usize,
}

/// Normalized supervised pairs: input [s | a], target [s' | r].
#[derive(Debug, Clone)]
pub struct TransitionBatch {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

/// Negative log-density of `target` under N(mean, diag(var)).
pub fn gaussian_nll(mean: &[f64], var: &[f64], target: &[f64]) -> f64 {
    let ln_tau = (2.0 * std::f64::consts::PI).ln();
    mean.iter()
        .zip(var.iter())
        .zip(target.iter())
        .map(|((m, v), t)| {
            let d = t - m;
            0.5 * (ln_tau + v.ln() + d * d / v)
        })
        .sum()
}

impl OneStepModel {
    pub fn new<R: Rng>(
        state_dim: usize,
        action_dim: usize,
        config: &OneStepConfig,
        normalizer: Normalizer,
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend_from_slice(&config.hidden);
        sizes.push(state_dim + 1);
        let mean = Approximator::init(
            MlpArch::new(sizes.clone(), Activation::Relu, OutputActivation::Linear),
            rng,
        );
        let variance = Approximator::init(
            MlpArch::new(sizes, Activation::Relu, OutputActivation::Softplus),
            rng,
        );
        Self {
            mean,
            variance,
            normalizer,
            state_dim,
            action_dim,
        }
    }

    /// Builds the normalized batch for the given (trajectory, t) indices;
    /// requires t < L-1 so the stored next state exists.
    pub fn batch_from(&self, dataset: &OfflineDataset, idx: &[(usize, usize)]) -> TransitionBatch {
        let mut inputs = Vec::with_capacity(idx.len());
        let mut targets = Vec::with_capacity(idx.len());
        for &(ti, t) in idx {
            let traj = &dataset.trajectories[ti];
            let mut input = self.normalizer.apply_obs(&traj.states[t]);
            input.extend_from_slice(&traj.actions[t]);
            let mut target = self.normalizer.apply_obs(&traj.states[t + 1]);
            target.push(self.normalizer.apply_reward(traj.rewards[t]));
            inputs.push(input);
            targets.push(target);
        }
        TransitionBatch { inputs, targets }
    }

    /// Mean NLL over the batch; gradients accumulate into the two buffers.
    pub fn nll_loss_and_grad(
        &self,
        mean_params: &[f64],
        var_params: &[f64],
        batch: &TransitionBatch,
        grad_mean: &mut [f64],
        grad_var: &mut [f64],
    ) -> f64 {
        let scale = 1.0 / batch.inputs.len() as f64;
        let ln_tau = (2.0 * std::f64::consts::PI).ln();
        let mut loss = 0.0;
        for (input, target) in batch.inputs.iter().zip(batch.targets.iter()) {
            let (mu, mu_cache) = self.mean.arch.forward_cached(mean_params, input);
            let (var, var_cache) = self.variance.arch.forward_cached(var_params, input);
            let mut g_mu = Vec::with_capacity(mu.len());
            let mut g_var = Vec::with_capacity(var.len());
            for ((m, v), t) in mu.iter().zip(var.iter()).zip(target.iter()) {
                let d = t - m;
                loss += 0.5 * (ln_tau + v.ln() + d * d / v) * scale;
                g_mu.push(-d / v * scale);
                g_var.push(0.5 * (1.0 / v - d * d / (v * v)) * scale);
            }
            self.mean.arch.backward(mean_params, &mu_cache, &g_mu, grad_mean);
            self.variance
                .arch
                .backward(var_params, &var_cache, &g_var, grad_var);
        }
        loss
    }

    pub fn training_step(
        &mut self,
        batch: &TransitionBatch,
        adam_mean: &mut AdamState,
        adam_var: &mut AdamState,
    ) -> Result<f64> {
        let mut g_mean = vec![0.0; self.mean.params.len()];
        let mut g_var = vec![0.0; self.variance.params.len()];
        let loss = self.nll_loss_and_grad(
            &self.mean.params,
            &self.variance.params,
            batch,
            &mut g_mean,
            &mut g_var,
        );
        if !loss.is_finite() {
            return Err(Error::NonFinite("one-step NLL".into()));
        }
        adam_step(adam_mean, &mut self.mean.params, &g_mean)?;
        adam_step(adam_var, &mut self.variance.params, &g_var)?;
        Ok(loss)
    }

    /// Samples (s', r) from the learned Gaussian at a raw (s, a) pair.
    /// `deterministic` returns the mean prediction.
    pub fn sample<R: Rng>(
        &self,
        state: &[f64],
        action: &[f64],
        rng: &mut R,
        deterministic: bool,
    ) -> Result<(Vec<f64>, f64)> {
        if state.len() != self.state_dim || action.len() != self.action_dim {
            return Err(Error::DimMismatch {
                context: "onestep sample",
                expected: self.state_dim + self.action_dim,
                got: state.len() + action.len(),
            });
        }
        let mut input = self.normalizer.apply_obs(state);
        input.extend_from_slice(action);
        let mu = self.mean.forward(&input);
        let y: Vec<f64> = if deterministic {
            mu
        } else {
            let var = self.variance.forward(&input);
            mu.iter()
                .zip(var.iter())
                .map(|(m, v)| m + v.sqrt() * standard_normal(rng))
                .collect()
        };
        let next = self.normalizer.invert_obs(&y[..self.state_dim]);
        let reward = self.normalizer.invert_reward(y[self.state_dim]);
        Ok((next, reward))
    }

    /// Imagines H steps from (s_t, a_t): the first transition uses a_t, the
    /// rest query `action_fn(h, state)` on raw imagined states. Aborts when
    /// the imagined state norm exceeds `norm_guard`.
    pub fn rollout<R: Rng>(
        &self,
        state: &[f64],
        action: &[f64],
        horizon: usize,
        mut action_fn: impl FnMut(usize, &[f64]) -> Vec<f64>,
        rng: &mut R,
        deterministic: bool,
        norm_guard: f64,
    ) -> Result<ImaginedRollout> {
        assert!(horizon >= 1);
        let mut rewards = Vec::with_capacity(horizon);
        let mut states = Vec::with_capacity(horizon);
        let mut cur = state.to_vec();
        let mut act = action.to_vec();
        for h in 0..horizon {
            if h > 0 {
                act = action_fn(h, &cur);
            }
            let (next, reward) = self.sample(&cur, &act, rng, deterministic)?;
            let norm = next.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > norm_guard {
                return Err(Error::Numerical(format!(
                    "imagined rollout diverged at step {h}: |s| = {norm:.3e} > {norm_guard:.3e}"
                )));
            }
            rewards.push(reward);
            states.push(next.clone());
            cur = next;
        }
        Ok(ImaginedRollout { rewards, states })
    }
}

/// H rewards (steps t..t+H-1) and H states (steps t+1..t+H).
#[derive(Debug, Clone, PartialEq)]
pub struct ImaginedRollout {
    pub rewards: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OneStepLogRow {
    pub iteration: usize,
    pub loss: f64,
}

pub fn train_onestep(
    dataset: &OfflineDataset,
    config: &OneStepConfig,
    seed: u64,
    iterations: usize,
    log_every: usize,
    mut on_log: impl FnMut(&OneStepLogRow),
) -> Result<OneStepModel> {
    let mut init_rng = rng_from(seed, 0x11);
    let mut model = OneStepModel::new(
        dataset.counts.state_dim,
        dataset.counts.action_dim,
        config,
        dataset.normalizer.clone(),
        &mut init_rng,
    );
    let hp = AdamParams::with_lr(config.lr);
    let mut adam_mean = AdamState::new(model.mean.params.len(), hp);
    let mut adam_var = AdamState::new(model.variance.params.len(), hp);
    let mut rng = rng_from(seed, 0x12);
    for it in 1..=iterations {
        let idx = dataset.sample_transitions(config.batch_size, &mut rng);
        let batch = model.batch_from(dataset, &idx);
        let loss = model.training_step(&batch, &mut adam_mean, &mut adam_var)?;
        if it % log_every.max(1) == 0 || it == iterations {
            on_log(&OneStepLogRow {
                iteration: it,
                loss,
            });
        }
    }
    Ok(model)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OneStepMeta {
    hidden: Vec<usize>,
    state_dim: usize,
    action_dim: usize,
    normalizer: Normalizer,
}

pub fn save_onestep_checkpoint(model: &OneStepModel, path: &Path, seed: u64) -> Result<()> {
    let hidden = model.mean.arch.sizes[1..model.mean.arch.sizes.len() - 1].to_vec();
    let meta = serde_json::to_value(OneStepMeta {
        hidden,
        state_dim: model.state_dim,
        action_dim: model.action_dim,
        normalizer: model.normalizer.clone(),
    })
    .map_err(|e| Error::Header(e.to_string()))?;
    write_checkpoint(
        path,
        "onestep",
        seed,
        meta,
        &[
            ("mean", &model.mean.params),
            ("variance", &model.variance.params),
        ],
    )
}

pub fn load_onestep_checkpoint(path: &Path) -> Result<OneStepModel> {
    let ck = read_checkpoint(path)?;
    if ck.header.kind != "onestep" {
        return Err(Error::Header(format!(
            "expected onestep checkpoint, found '{}'",
            ck.header.kind
        )));
    }
    let meta: OneStepMeta = serde_json::from_value(ck.header.meta.clone())
        .map_err(|e| Error::Header(format!("onestep meta: {e}")))?;
    let mut sizes = vec![meta.state_dim + meta.action_dim];
    sizes.extend_from_slice(&meta.hidden);
    sizes.push(meta.state_dim + 1);
    let mean = Approximator::from_params(
        MlpArch::new(sizes.clone(), Activation::Relu, OutputActivation::Linear),
        ck.section("mean")?.to_vec(),
    )?;
    let variance = Approximator::from_params(
        MlpArch::new(sizes, Activation::Relu, OutputActivation::Softplus),
        ck.section("variance")?.to_vec(),
    )?;
    Ok(OneStepModel {
        mean,
        variance,
        normalizer: meta.normalizer,
        state_dim: meta.state_dim,
        action_dim: meta.action_dim,
    })
}
