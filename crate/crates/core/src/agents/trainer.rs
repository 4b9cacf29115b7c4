//! Stage-two training: offline actor-critic updates against targets built
//! from world-model imagination.
//!
//! Per iteration: sample (s, a) pairs, imagine continuations with the frozen
//! world model, compute expansion targets from the frozen target networks,
//! then update critics (and value net), the actor at its cadence, and the
//! target networks at theirs. Single-threaded and bit-reproducible.

use super::updates::{awr_actor_update, critic_update, iql_v_update, td3_bootstrap, td3bc_actor_update};
use super::{ActorCriticState, AgentConfig, AlgoKind};
use crate::dataset::OfflineDataset;
use crate::dwm::DiffusionWorldModel;
use crate::envsim::EnvSpec;
use crate::error::Result;
use crate::evalharness::{policy_returns, Anchors, ReturnReport};
use crate::onestep::OneStepModel;
use crate::rngutil::{derive_seed, rng_from};
use crate::value_target::{
    diff_mve_target, lambda_return_target, pql_rewards, ImaginedSeq, ModelSource,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::time::Instant;

/// A frozen, pretrained world model used as the imagination source.
#[derive(Clone, Copy)]
pub enum WorldModel<'a> {
    Dwm(&'a DiffusionWorldModel),
    OneStep(&'a OneStepModel),
}

impl WorldModel<'_> {
    /// Largest usable simulation horizon, if the model bounds it.
    pub fn max_horizon(&self) -> Option<usize> {
        match self {
            WorldModel::Dwm(m) => Some(m.config.seq_len - 1),
            WorldModel::OneStep(_) => None,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            WorldModel::Dwm(_) => "dwm",
            WorldModel::OneStep(_) => "onestep",
        }
    }
}

/// Environment and normalization anchors for periodic policy evaluation.
pub struct EvalContext {
    pub env: EnvSpec,
    pub anchors: Anchors,
}

#[derive(Debug, Clone, Serialize)]
pub struct AgentLogRow {
    pub iteration: usize,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub value_loss: f64,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    pub eval_norm_return: f64,
    pub wall_clock_s: f64,
}

pub struct TrainAgentResult {
    pub state: ActorCriticState,
    pub log: Vec<AgentLogRow>,
    /// Normalized return of the final evaluation, when evaluation ran.
    pub final_norm_return: Option<f64>,
}

/// Expansion target under the configured mixing: lambda-return when set,
/// plain H-step expansion otherwise.
pub fn expansion_target(
    seq: &ImaginedSeq,
    cfg: &AgentConfig,
    bootstrap: impl FnMut(&[f64]) -> f64,
) -> Result<f64> {
    match cfg.lambda {
        Some(l) => lambda_return_target(seq, cfg.horizon, cfg.gamma, l, bootstrap),
        None => diff_mve_target(seq, cfg.horizon, cfg.gamma, bootstrap),
    }
}

/// Imagines a continuation of (s, a). PQL draws `ensemble` samples and
/// merges them into sequence 1 with uncertainty-penalized rewards.
fn imagine(
    wm: &WorldModel,
    state: &ActorCriticState,
    dataset: &OfflineDataset,
    cfg: &AgentConfig,
    s_raw: &[f64],
    a_raw: &[f64],
    g_eval: f64,
    guard: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ImaginedSeq> {
    let m = if cfg.algo == AlgoKind::Pql {
        cfg.ensemble
    } else {
        1
    };
    let mut seqs = Vec::with_capacity(m);
    for _ in 0..m {
        let seq = match wm {
            WorldModel::Dwm(model) => {
                let pred = model.sample(s_raw, a_raw, g_eval, rng)?;
                let t_len = model.config.seq_len;
                ImaginedSeq {
                    rewards: pred.rewards[..t_len - 1].to_vec(),
                    states: pred.states,
                    source: ModelSource::Dwm,
                    g_eval,
                }
            }
            WorldModel::OneStep(model) => {
                // TD3+BC imagines with the target policy, IQL/PQL with the
                // live policy mean
                let use_target = cfg.algo == AlgoKind::Td3Bc;
                let roll = model.rollout(
                    s_raw,
                    a_raw,
                    cfg.horizon,
                    |_, sr| {
                        if use_target {
                            state.act_target(sr, &dataset.normalizer)
                        } else {
                            state.act(sr, &dataset.normalizer)
                        }
                    },
                    rng,
                    false,
                    guard,
                )?;
                ImaginedSeq {
                    rewards: roll.rewards,
                    states: roll.states,
                    source: ModelSource::OneStep,
                    g_eval,
                }
            }
        };
        seqs.push(seq);
    }
    if m == 1 {
        Ok(seqs.pop().unwrap())
    } else {
        let penalized = pql_rewards(&seqs, cfg.kappa)?;
        let mut first = seqs.swap_remove(0);
        first.rewards = penalized;
        Ok(first)
    }
}

pub fn train_offline_agent(
    dataset: &OfflineDataset,
    wm: WorldModel,
    cfg: &AgentConfig,
    seed: u64,
    eval: Option<&EvalContext>,
) -> Result<TrainAgentResult> {
    let seq_cap = wm.max_horizon().map(|h| h + 1).unwrap_or(cfg.horizon + 1);
    cfg.validate(seq_cap)?;
    let mut init_rng = rng_from(seed, 0x21);
    let mut state = ActorCriticState::new(
        dataset.counts.state_dim,
        dataset.counts.action_dim,
        cfg,
        &mut init_rng,
    )?;
    let mut rng = rng_from(seed, 0x22);
    let guard = 1e3 * dataset.mean_state_norm().max(1.0);
    let start = Instant::now();
    let mut log = Vec::new();
    let mut final_norm = None;
    let (mut acc_critic, mut acc_actor, mut acc_value) = (0.0, 0.0, 0.0);
    let (mut n_critic, mut n_actor, mut n_value) = (0usize, 0usize, 0usize);

    for it in 1..=cfg.iterations as u64 {
        state.iter = it;
        let idx = dataset.sample_state_actions(cfg.batch_size, &mut rng);
        let g_eval = cfg.g_eval[rng.gen_range(0..cfg.g_eval.len())];

        // target construction against frozen networks
        let mut critic_batch = Vec::with_capacity(idx.len());
        let mut v_batch = Vec::with_capacity(idx.len());
        for &(ti, t) in &idx {
            let traj = &dataset.trajectories[ti];
            let (s_raw, a_raw) = (&traj.states[t], &traj.actions[t]);
            let seq = imagine(&wm, &state, dataset, cfg, s_raw, a_raw, g_eval, guard, &mut rng)?;
            let y = match cfg.algo {
                AlgoKind::Td3Bc => expansion_target(&seq, cfg, |sr| {
                    td3_bootstrap(
                        &state,
                        &dataset.normalizer,
                        sr,
                        cfg.policy_noise,
                        cfg.noise_clip,
                        &mut rng,
                    )
                })?,
                AlgoKind::Iql | AlgoKind::Pql => {
                    let v = state.v.as_ref().expect("value net");
                    expansion_target(&seq, cfg, |sr| {
                        v.forward(&dataset.normalizer.apply_obs(sr))[0]
                    })?
                }
            };
            let sn = dataset.normalizer.apply_obs(s_raw);
            let mut qin = sn.clone();
            qin.extend_from_slice(a_raw);
            if cfg.algo.uses_value_net() {
                v_batch.push((sn, state.min_q_target(&qin)));
            }
            critic_batch.push((qin, y));
        }

        // network updates
        if cfg.algo.uses_value_net() {
            let expectile = match cfg.algo {
                AlgoKind::Iql => Some(cfg.expectile),
                _ => None,
            };
            let v = state.v.as_mut().expect("value net");
            let adam_v = state.adam_v.as_mut().expect("value adam");
            acc_value += iql_v_update(v, adam_v, &v_batch, expectile)?;
            n_value += 1;
        }
        acc_critic += critic_update(&mut state.q1, &mut state.adam_q1, &critic_batch)?;
        acc_critic += critic_update(&mut state.q2, &mut state.adam_q2, &critic_batch)?;
        n_critic += 2;

        match cfg.algo {
            AlgoKind::Td3Bc => {
                if it % cfg.policy_delay == 0 {
                    let batch: Vec<(Vec<f64>, Vec<f64>)> = critic_batch
                        .iter()
                        .map(|(qin, _)| {
                            let d_s = dataset.counts.state_dim;
                            (qin[..d_s].to_vec(), qin[d_s..].to_vec())
                        })
                        .collect();
                    let (loss, _) = td3bc_actor_update(
                        &mut state.policy,
                        &state.q1,
                        &mut state.adam_policy,
                        &batch,
                        cfg.bc_alpha,
                    )?;
                    acc_actor += loss;
                    n_actor += 1;
                }
            }
            AlgoKind::Iql | AlgoKind::Pql => {
                let d_s = dataset.counts.state_dim;
                let v = state.v.as_ref().expect("value net");
                let batch: Vec<(Vec<f64>, Vec<f64>, f64)> = critic_batch
                    .iter()
                    .map(|(qin, _)| {
                        let sn = qin[..d_s].to_vec();
                        let adv = state.min_q_target(qin) - v.forward(&sn)[0];
                        (sn, qin[d_s..].to_vec(), adv)
                    })
                    .collect();
                let mut log_std = std::mem::take(&mut state.log_std);
                let (loss, _) = awr_actor_update(
                    &mut state.policy,
                    &mut log_std,
                    &mut state.adam_policy,
                    &batch,
                    cfg.awr_beta,
                    cfg.max_weight,
                )?;
                state.log_std = log_std;
                acc_actor += loss;
                n_actor += 1;
            }
        }

        if it % cfg.target_update_every == 0 {
            state.update_targets()?;
        }

        if it % cfg.eval_every as u64 == 0 || it == cfg.iterations as u64 {
            let (mean, std, norm) = match eval {
                Some(ctx) => {
                    let returns = policy_returns(
                        &ctx.env,
                        |s| state.act(s, &dataset.normalizer),
                        cfg.eval_episodes,
                        derive_seed(seed, 0xE000 + it),
                    )?;
                    let report = ReturnReport::from_returns(&returns, &ctx.anchors)?;
                    final_norm = Some(report.normalized_mean);
                    (report.mean, report.std, report.normalized_mean)
                }
                None => (f64::NAN, f64::NAN, f64::NAN),
            };
            log.push(AgentLogRow {
                iteration: it as usize,
                critic_loss: acc_critic / n_critic.max(1) as f64,
                actor_loss: acc_actor / n_actor.max(1) as f64,
                value_loss: acc_value / n_value.max(1) as f64,
                eval_return_mean: mean,
                eval_return_std: std,
                eval_norm_return: norm,
                wall_clock_s: start.elapsed().as_secs_f64(),
            });
            (acc_critic, acc_actor, acc_value) = (0.0, 0.0, 0.0);
            (n_critic, n_actor, n_value) = (0, 0, 0);
        }
    }
    Ok(TrainAgentResult {
        state,
        log,
        final_norm_return: final_norm,
    })
}
