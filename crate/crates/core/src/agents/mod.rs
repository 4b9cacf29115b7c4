//! Offline actor-critic trainers: TD3+BC, IQL, and PQL variants driven by
//! either world model, sharing one update loop.

mod trainer;
mod updates;

pub use trainer::{train_offline_agent, AgentLogRow, EvalContext, TrainAgentResult, WorldModel};
pub use updates::{
    awr_actor_update, critic_update, expectile_loss, iql_v_update, td3_bootstrap,
    td3bc_actor_update,
};

use crate::dataset::Normalizer;
use crate::error::{Error, Result};
use crate::substrate::{
    read_checkpoint, write_checkpoint, Activation, AdamParams, AdamState, Approximator, EmaTracker,
    MlpArch, OutputActivation,
};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgoKind {
    #[serde(rename = "td3bc")]
    Td3Bc,
    Iql,
    Pql,
}

impl AlgoKind {
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "td3bc" => Ok(Self::Td3Bc),
            "iql" => Ok(Self::Iql),
            "pql" => Ok(Self::Pql),
            other => Err(Error::Config(format!("unknown algorithm '{other}'"))),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Self::Td3Bc => "td3bc",
            Self::Iql => "iql",
            Self::Pql => "pql",
        }
    }

    pub fn uses_value_net(&self) -> bool {
        matches!(self, Self::Iql | Self::Pql)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WmSource {
    Dwm,
    #[serde(rename = "onestep")]
    OneStep,
}

impl WmSource {
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "dwm" => Ok(Self::Dwm),
            "onestep" => Ok(Self::OneStep),
            other => Err(Error::Config(format!("unknown world-model source '{other}'"))),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Self::Dwm => "dwm",
            Self::OneStep => "onestep",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub algo: AlgoKind,
    pub wm_source: WmSource,
    /// Simulation horizon H for value expansion.
    pub horizon: usize,
    /// Evaluation RTG candidates; one is drawn per batch.
    pub g_eval: Vec<f64>,
    pub gamma: f64,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub batch_size: usize,
    pub iterations: usize,
    /// Target networks refresh every n iterations...
    pub target_update_every: u64,
    /// ...by shadow += w (live - shadow).
    pub target_mix: f64,
    pub policy_noise: f64,
    pub noise_clip: f64,
    pub bc_alpha: f64,
    pub policy_delay: u64,
    pub expectile: f64,
    pub awr_beta: f64,
    pub max_weight: f64,
    pub kappa: f64,
    pub ensemble: usize,
    /// Lambda-return mixing; None uses the plain H-step expansion.
    pub lambda: Option<f64>,
    pub eval_every: usize,
    pub eval_episodes: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            algo: AlgoKind::Td3Bc,
            wm_source: WmSource::Dwm,
            horizon: 3,
            g_eval: vec![0.8],
            gamma: 0.99,
            hidden: vec![128, 128],
            lr: 3e-4,
            batch_size: 64,
            iterations: 50_000,
            target_update_every: 2,
            target_mix: 0.005,
            policy_noise: 0.2,
            noise_clip: 0.5,
            bc_alpha: 2.5,
            policy_delay: 2,
            expectile: 0.7,
            awr_beta: 3.0,
            max_weight: 100.0,
            kappa: 0.1,
            ensemble: 3,
            lambda: None,
            eval_every: 1000,
            eval_episodes: 10,
        }
    }
}

impl AgentConfig {
    /// Algorithm defaults: the lambda-return is on for DWM-IQL only.
    pub fn for_algo(algo: AlgoKind, wm_source: WmSource) -> Self {
        let lambda = match (algo, wm_source) {
            (AlgoKind::Iql, WmSource::Dwm) => Some(0.95),
            _ => None,
        };
        Self {
            algo,
            wm_source,
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self, seq_len: usize) -> Result<()> {
        let max_h = seq_len - 1;
        if self.horizon < 1 || (self.wm_source == WmSource::Dwm && self.horizon > max_h) {
            return Err(Error::Config(format!(
                "horizon must be in 1..={max_h} for the sequence model, got {}",
                self.horizon
            )));
        }
        if self.g_eval.is_empty() || self.g_eval.iter().any(|g| !g.is_finite()) {
            return Err(Error::Config("g_eval list must be non-empty and finite".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config("gamma must be in (0,1)".into()));
        }
        if let Some(l) = self.lambda {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::Config(format!("lambda must be in [0,1], got {l}")));
            }
        }
        if !(self.expectile > 0.5 && self.expectile < 1.0) {
            return Err(Error::Config("expectile must be in (0.5,1)".into()));
        }
        if self.algo == AlgoKind::Pql && self.ensemble < 2 {
            return Err(Error::Config("pql needs ensemble >= 2".into()));
        }
        if self.kappa < 0.0 {
            return Err(Error::Config("kappa must be >= 0".into()));
        }
        if self.target_update_every == 0 || self.policy_delay == 0 {
            return Err(Error::Config("update cadences must be >= 1".into()));
        }
        Ok(())
    }
}

/// Live networks, their frozen EMA targets, and optimizer state.
#[derive(Debug, Clone)]
pub struct ActorCriticState {
    pub policy: Approximator,
    /// Per-dimension log std of the Gaussian policy (IQL/PQL); empty for a
    /// deterministic policy.
    pub log_std: Vec<f64>,
    pub q1: Approximator,
    pub q2: Approximator,
    pub v: Option<Approximator>,
    pub policy_target: EmaTracker,
    pub q1_target: EmaTracker,
    pub q2_target: EmaTracker,
    pub adam_policy: AdamState,
    pub adam_q1: AdamState,
    pub adam_q2: AdamState,
    pub adam_v: Option<AdamState>,
    pub iter: u64,
}

impl ActorCriticState {
    pub fn new<R: Rng>(
        state_dim: usize,
        action_dim: usize,
        cfg: &AgentConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let mut policy_sizes = vec![state_dim];
        policy_sizes.extend_from_slice(&cfg.hidden);
        policy_sizes.push(action_dim);
        let policy = Approximator::init(
            MlpArch::new(policy_sizes, Activation::Relu, OutputActivation::Tanh),
            rng,
        );
        let mut q_sizes = vec![state_dim + action_dim];
        q_sizes.extend_from_slice(&cfg.hidden);
        q_sizes.push(1);
        let q1 = Approximator::init(
            MlpArch::new(q_sizes.clone(), Activation::Relu, OutputActivation::Linear),
            rng,
        );
        let q2 = Approximator::init(
            MlpArch::new(q_sizes, Activation::Relu, OutputActivation::Linear),
            rng,
        );
        let (v, adam_v) = if cfg.algo.uses_value_net() {
            let mut v_sizes = vec![state_dim];
            v_sizes.extend_from_slice(&cfg.hidden);
            v_sizes.push(1);
            let v = Approximator::init(
                MlpArch::new(v_sizes, Activation::Relu, OutputActivation::Linear),
                rng,
            );
            let adam = AdamState::new(v.params.len(), AdamParams::with_lr(cfg.lr));
            (Some(v), Some(adam))
        } else {
            (None, None)
        };
        let log_std = if cfg.algo.uses_value_net() {
            vec![-1.0; action_dim]
        } else {
            Vec::new()
        };
        let hp = AdamParams::with_lr(cfg.lr);
        Ok(Self {
            policy_target: EmaTracker::new(policy.params.clone(), cfg.target_mix)?,
            q1_target: EmaTracker::new(q1.params.clone(), cfg.target_mix)?,
            q2_target: EmaTracker::new(q2.params.clone(), cfg.target_mix)?,
            adam_policy: AdamState::new(policy.params.len() + log_std.len(), hp),
            adam_q1: AdamState::new(q1.params.len(), hp),
            adam_q2: AdamState::new(q2.params.len(), hp),
            policy,
            log_std,
            q1,
            q2,
            v,
            adam_v,
            iter: 0,
        })
    }

    /// Deterministic action at a raw state: tanh-bounded mean.
    pub fn act(&self, raw_state: &[f64], normalizer: &Normalizer) -> Vec<f64> {
        self.policy.forward(&normalizer.apply_obs(raw_state))
    }

    /// Action from the frozen target policy at a raw state.
    pub fn act_target(&self, raw_state: &[f64], normalizer: &Normalizer) -> Vec<f64> {
        self.policy
            .arch
            .forward(&self.policy_target.shadow, &normalizer.apply_obs(raw_state))
    }

    /// min of the two frozen target critics at a normalized (s, a) input.
    pub fn min_q_target(&self, input: &[f64]) -> f64 {
        let a = self.q1.arch.forward(&self.q1_target.shadow, input)[0];
        let b = self.q2.arch.forward(&self.q2_target.shadow, input)[0];
        a.min(b)
    }

    /// EMA refresh of all target networks.
    pub fn update_targets(&mut self) -> Result<()> {
        self.policy_target.update(&self.policy.params)?;
        self.q1_target.update(&self.q1.params)?;
        self.q2_target.update(&self.q2.params)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PolicyMeta {
    algo: AlgoKind,
    env: String,
    hidden: Vec<usize>,
    state_dim: usize,
    action_dim: usize,
    normalizer: Normalizer,
}

/// Saves just what `eval-agent` needs to act: the policy net and context.
pub fn save_policy_checkpoint(
    state: &ActorCriticState,
    env_name: &str,
    algo: AlgoKind,
    normalizer: &Normalizer,
    path: &Path,
    seed: u64,
) -> Result<()> {
    let sizes = &state.policy.arch.sizes;
    let meta = serde_json::to_value(PolicyMeta {
        algo,
        env: env_name.to_string(),
        hidden: sizes[1..sizes.len() - 1].to_vec(),
        state_dim: sizes[0],
        action_dim: *sizes.last().unwrap(),
        normalizer: normalizer.clone(),
    })
    .map_err(|e| Error::Header(e.to_string()))?;
    write_checkpoint(
        path,
        "policy",
        seed,
        meta,
        &[
            ("policy", &state.policy.params),
            ("log_std", &state.log_std),
        ],
    )
}

/// A loaded policy ready for evaluation.
pub struct LoadedPolicy {
    pub policy: Approximator,
    pub normalizer: Normalizer,
    pub env_name: String,
    pub algo: AlgoKind,
}

impl LoadedPolicy {
    pub fn act(&self, raw_state: &[f64]) -> Vec<f64> {
        self.policy.forward(&self.normalizer.apply_obs(raw_state))
    }
}

pub fn load_policy_checkpoint(path: &Path) -> Result<LoadedPolicy> {
    let ck = read_checkpoint(path)?;
    if ck.header.kind != "policy" {
        return Err(Error::Header(format!(
            "expected policy checkpoint, found '{}'",
            ck.header.kind
        )));
    }
    let meta: PolicyMeta = serde_json::from_value(ck.header.meta.clone())
        .map_err(|e| Error::Header(format!("policy meta: {e}")))?;
    let mut sizes = vec![meta.state_dim];
    sizes.extend_from_slice(&meta.hidden);
    sizes.push(meta.action_dim);
    let policy = Approximator::from_params(
        MlpArch::new(sizes, Activation::Relu, OutputActivation::Tanh),
        ck.section("policy")?.to_vec(),
    )?;
    Ok(LoadedPolicy {
        policy,
        normalizer: meta.normalizer,
        env_name: meta.env,
        algo: meta.algo,
    })
}
