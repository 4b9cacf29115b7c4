//! Deterministic toy environments and scripted behavior policies.
//!
//! Two fixed-length, terminal-free tasks with rewards shaped into (0, 1]:
//! a 2D point mass steered toward the origin and a torque-limited pendulum
//! swing-up. Scripted policies at random/medium/expert tiers generate the
//! offline data.

use crate::dataset::Trajectory;
use crate::error::{Error, Result};
use crate::rngutil::{rng_from, standard_normal};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum EnvKind {
    PointMass { v_max: f64 },
    Pendulum { gravity: f64, length: f64, mass: f64, torque_scale: f64, max_speed: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub kind: EnvKind,
    pub state_dim: usize,
    pub action_dim: usize,
    pub dt: f64,
    pub episode_len: usize,
}

impl EnvSpec {
    /// Point mass on the plane: state (px, py, vx, vy), acceleration control,
    /// reward exp(-|p'|^2).
    pub fn point_mass() -> Self {
        Self {
            name: "pointmass".into(),
            kind: EnvKind::PointMass { v_max: 2.0 },
            state_dim: 4,
            action_dim: 2,
            dt: 0.1,
            episode_len: 100,
        }
    }

    /// Pendulum swing-up: state (theta, theta_dot) with theta = 0 upright,
    /// reward exp(-(theta^2 + 0.1*theta_dot^2)).
    pub fn pendulum() -> Self {
        Self {
            name: "pendulum".into(),
            kind: EnvKind::Pendulum {
                gravity: 10.0,
                length: 1.0,
                mass: 1.0,
                torque_scale: 2.0,
                max_speed: 8.0,
            },
            state_dim: 2,
            action_dim: 1,
            dt: 0.05,
            episode_len: 100,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "pointmass" => Ok(Self::point_mass()),
            "pendulum" => Ok(Self::pendulum()),
            other => Err(Error::Config(format!("unknown env '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub vec: Vec<f64>,
    pub step: usize,
}

/// Draws an initial state: point mass starts at p ~ U[-1,1]^2 with zero
/// velocity; pendulum at theta ~ U[-2,2] rad at rest.
pub fn init_state<R: Rng>(spec: &EnvSpec, rng: &mut R) -> EnvState {
    let vec = match spec.kind {
        EnvKind::PointMass { .. } => {
            vec![rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0), 0.0, 0.0]
        }
        EnvKind::Pendulum { .. } => vec![rng.gen_range(-2.0..=2.0), 0.0],
    };
    EnvState { vec, step: 0 }
}

fn wrap_angle(theta: f64) -> f64 {
    let mut t = (theta + PI) % (2.0 * PI);
    if t < 0.0 {
        t += 2.0 * PI;
    }
    t - PI
}

fn clip_action(spec: &EnvSpec, action: &[f64]) -> Vec<f64> {
    debug_assert_eq!(action.len(), spec.action_dim);
    action.iter().map(|a| a.clamp(-1.0, 1.0)).collect()
}

/// Advances one step. Pure function of (state, action); out-of-bounds actions
/// are clipped, non-finite inputs are hard errors.
pub fn env_step(spec: &EnvSpec, state: &EnvState, action: &[f64]) -> Result<(EnvState, f64)> {
    if state.vec.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("env_step state".into()));
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("env_step action".into()));
    }
    if action.len() != spec.action_dim {
        return Err(Error::DimMismatch {
            context: "env_step action",
            expected: spec.action_dim,
            got: action.len(),
        });
    }
    if state.step >= spec.episode_len {
        return Err(Error::Config(format!(
            "episode over: step {} >= length {}",
            state.step, spec.episode_len
        )));
    }
    let a = clip_action(spec, action);
    let dt = spec.dt;
    match spec.kind {
        EnvKind::PointMass { v_max } => {
            let (px, py, vx, vy) = (state.vec[0], state.vec[1], state.vec[2], state.vec[3]);
            let npx = px + vx * dt;
            let npy = py + vy * dt;
            let mut nvx = vx + a[0] * dt;
            let mut nvy = vy + a[1] * dt;
            let speed = (nvx * nvx + nvy * nvy).sqrt();
            if speed > v_max {
                nvx *= v_max / speed;
                nvy *= v_max / speed;
            }
            let reward = (-(npx * npx + npy * npy)).exp();
            Ok((
                EnvState {
                    vec: vec![npx, npy, nvx, nvy],
                    step: state.step + 1,
                },
                reward,
            ))
        }
        EnvKind::Pendulum {
            gravity,
            length,
            mass,
            torque_scale,
            max_speed,
        } => {
            let (theta, omega) = (state.vec[0], state.vec[1]);
            let torque = torque_scale * a[0];
            // theta measured from upright; gravity pushes away from it
            let accel = (gravity / length) * theta.sin() + torque / (mass * length * length);
            let nomega = (omega + accel * dt).clamp(-max_speed, max_speed);
            let ntheta = wrap_angle(theta + nomega * dt);
            let reward = (-(ntheta * ntheta + 0.1 * nomega * nomega)).exp();
            Ok((
                EnvState {
                    vec: vec![ntheta, nomega],
                    step: state.step + 1,
                },
                reward,
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyLevel {
    Random,
    Medium,
    Expert,
}

impl PolicyLevel {
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "random" => Ok(Self::Random),
            "medium" => Ok(Self::Medium),
            "expert" => Ok(Self::Expert),
            other => Err(Error::Config(format!("unknown policy level '{other}'"))),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::Medium => "medium",
            Self::Expert => "expert",
        }
    }
}

/// Seeded scripted controller. Point-mass tiers are PD controllers with
/// exploration noise; pendulum mixes energy pumping with a PD capture near
/// the top. Actions are always clipped to bounds.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    pub level: PolicyLevel,
    kp: f64,
    kd: f64,
    noise_scale: f64,
    rng: ChaCha8Rng,
}

pub fn make_scripted_policy(level: PolicyLevel, seed: u64) -> ScriptedPolicy {
    let (kp, kd, noise_scale) = match level {
        PolicyLevel::Expert => (4.0, 3.0, 0.0),
        PolicyLevel::Medium => (1.5, 1.0, 0.3),
        PolicyLevel::Random => (0.0, 0.0, 0.0),
    };
    ScriptedPolicy {
        level,
        kp,
        kd,
        noise_scale,
        rng: rng_from(seed, 0x70_6f_6c),
    }
}

impl ScriptedPolicy {
    pub fn action(&mut self, spec: &EnvSpec, state: &EnvState) -> Vec<f64> {
        match (self.level, &spec.kind) {
            (PolicyLevel::Random, _) => (0..spec.action_dim)
                .map(|_| self.rng.gen_range(-1.0..=1.0))
                .collect(),
            (_, EnvKind::PointMass { .. }) => {
                let mut a = vec![
                    -self.kp * state.vec[0] - self.kd * state.vec[2],
                    -self.kp * state.vec[1] - self.kd * state.vec[3],
                ];
                for v in a.iter_mut() {
                    if self.noise_scale > 0.0 {
                        *v += self.noise_scale * standard_normal(&mut self.rng);
                    }
                    *v = v.clamp(-1.0, 1.0);
                }
                a
            }
            (
                level,
                EnvKind::Pendulum {
                    gravity,
                    length,
                    mass,
                    torque_scale,
                    ..
                },
            ) => {
                let (theta, omega) = (state.vec[0], state.vec[1]);
                let ml2 = mass * length * length;
                // energy relative to resting upright
                let energy = 0.5 * ml2 * omega * omega + mass * gravity * length * (theta.cos() - 1.0);
                let torque = if level == PolicyLevel::Expert
                    && (theta.abs() > 0.35 || omega.abs() > 2.5)
                {
                    // pump energy toward the upright manifold
                    4.0 * (0.0 - energy) * omega
                } else {
                    -self.kp * 3.0 * theta - self.kd * omega
                };
                let mut a = torque / torque_scale;
                if self.noise_scale > 0.0 {
                    a += self.noise_scale * standard_normal(&mut self.rng);
                }
                vec![a.clamp(-1.0, 1.0)]
            }
        }
    }
}

/// Runs one seeded episode and records (s, a, r) for `len` steps.
pub fn rollout(
    spec: &EnvSpec,
    policy: &mut ScriptedPolicy,
    seed: u64,
    len: usize,
) -> Result<Trajectory> {
    let mut rng = rng_from(seed, 0x65_6e_76);
    let mut state = init_state(spec, &mut rng);
    let mut states = Vec::with_capacity(len);
    let mut actions = Vec::with_capacity(len);
    let mut rewards = Vec::with_capacity(len);
    for _ in 0..len {
        let action = policy.action(spec, &state);
        let (next, reward) = env_step(spec, &state, &action)?;
        states.push(state.vec.clone());
        actions.push(action);
        rewards.push(reward);
        state = next;
    }
    Ok(Trajectory {
        states,
        actions,
        rewards,
        seed,
        policy_tag: policy.level.tag().to_string(),
    })
}

/// Dataset tiers mirroring the usual offline-RL splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tier {
    Medium,
    MediumReplay,
    MediumExpert,
    Random,
    Expert,
}

impl Tier {
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "medium" => Ok(Self::Medium),
            "medium-replay" => Ok(Self::MediumReplay),
            "medium-expert" => Ok(Self::MediumExpert),
            "random" => Ok(Self::Random),
            "expert" => Ok(Self::Expert),
            other => Err(Error::Config(format!("unknown tier '{other}'"))),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Self::Medium => "medium",
            Self::MediumReplay => "medium-replay",
            Self::MediumExpert => "medium-expert",
            Self::Random => "random",
            Self::Expert => "expert",
        }
    }

    /// Policy mix: single level, or a 50/50 split.
    fn levels(&self) -> (PolicyLevel, Option<PolicyLevel>) {
        match self {
            Self::Medium => (PolicyLevel::Medium, None),
            Self::MediumReplay => (PolicyLevel::Random, Some(PolicyLevel::Medium)),
            Self::MediumExpert => (PolicyLevel::Medium, Some(PolicyLevel::Expert)),
            Self::Random => (PolicyLevel::Random, None),
            Self::Expert => (PolicyLevel::Expert, None),
        }
    }
}

/// Generates the episodes for one tier. 50/50 tiers alternate policies so
/// any episode count splits evenly.
pub fn generate_tier_trajectories(
    spec: &EnvSpec,
    tier: Tier,
    episodes: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let (first, second) = tier.levels();
    let mut out = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let level = match second {
            Some(s) if ep % 2 == 1 => s,
            _ => first,
        };
        let ep_seed = crate::rngutil::derive_seed(seed, ep as u64);
        let mut policy = make_scripted_policy(level, ep_seed);
        out.push(rollout(spec, &mut policy, ep_seed, spec.episode_len)?);
    }
    Ok(out)
}
