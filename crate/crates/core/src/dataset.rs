//! Offline dataset construction: return-to-go labels, normalization,
//! subtrajectory windows, and bit-exact persistence.
//!
//! Values are quantized to f32 when a dataset is built, matching the file
//! payload precision, so `load(save(d)) == d` holds byte-for-byte. All
//! downstream arithmetic stays in f64.

use crate::error::{Error, Result};
use crate::rngutil::derive_seed;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;

pub const DATASET_MAGIC: &[u8; 5] = b"DWMT1";

/// One fixed-length episode: `states[t]`, `actions[t]`, `rewards[t]` for
/// t in 0..len. The post-episode state is never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub seed: u64,
    pub policy_tag: String,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.len() != self.rewards.len() || self.actions.len() != self.rewards.len() {
            return Err(Error::DimMismatch {
                context: "trajectory lengths",
                expected: self.rewards.len(),
                got: self.states.len().min(self.actions.len()),
            });
        }
        let finite = self
            .states
            .iter()
            .chain(self.actions.iter())
            .flatten()
            .chain(self.rewards.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("trajectory".into()));
        }
        Ok(())
    }

    fn quantize_f32(&mut self) {
        for row in self.states.iter_mut().chain(self.actions.iter_mut()) {
            for v in row.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
        for v in self.rewards.iter_mut() {
            *v = *v as f32 as f64;
        }
    }
}

/// Per-dimension observation statistics and optional reward statistics.
/// Standard deviations are floored at 1e-6.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub obs_mean: Vec<f64>,
    pub obs_std: Vec<f64>,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub normalize_obs: bool,
    pub normalize_reward: bool,
}

pub const STD_FLOOR: f64 = 1e-6;

impl Normalizer {
    pub fn identity(state_dim: usize) -> Self {
        Self {
            obs_mean: vec![0.0; state_dim],
            obs_std: vec![1.0; state_dim],
            reward_mean: 0.0,
            reward_std: 1.0,
            normalize_obs: false,
            normalize_reward: false,
        }
    }

    pub fn apply_obs(&self, s: &[f64]) -> Vec<f64> {
        if !self.normalize_obs {
            return s.to_vec();
        }
        s.iter()
            .zip(self.obs_mean.iter().zip(self.obs_std.iter()))
            .map(|(x, (m, sd))| (x - m) / sd)
            .collect()
    }

    pub fn invert_obs(&self, z: &[f64]) -> Vec<f64> {
        if !self.normalize_obs {
            return z.to_vec();
        }
        z.iter()
            .zip(self.obs_mean.iter().zip(self.obs_std.iter()))
            .map(|(x, (m, sd))| x * sd + m)
            .collect()
    }

    pub fn apply_reward(&self, r: f64) -> f64 {
        if !self.normalize_reward {
            r
        } else {
            (r - self.reward_mean) / self.reward_std
        }
    }

    pub fn invert_reward(&self, z: f64) -> f64 {
        if !self.normalize_reward {
            z
        } else {
            z * self.reward_std + self.reward_mean
        }
    }
}

/// Fits per-dimension moments over every state (and reward) in the dataset.
/// Returns the indices of dimensions whose std hit the floor.
pub fn fit_normalizer(
    trajectories: &[Trajectory],
    normalize_obs: bool,
    normalize_reward: bool,
) -> Result<(Normalizer, Vec<usize>)> {
    let first = trajectories
        .first()
        .ok_or_else(|| Error::Config("cannot fit normalizer on empty dataset".into()))?;
    let d_s = first.states[0].len();
    let mut count = 0usize;
    let mut mean = vec![0.0; d_s];
    let mut rew_sum = 0.0;
    for traj in trajectories {
        for s in &traj.states {
            for (m, v) in mean.iter_mut().zip(s.iter()) {
                *m += v;
            }
        }
        rew_sum += traj.rewards.iter().sum::<f64>();
        count += traj.len();
    }
    let n = count as f64;
    for m in mean.iter_mut() {
        *m /= n;
    }
    let reward_mean = rew_sum / n;
    let mut var = vec![0.0; d_s];
    let mut rew_var = 0.0;
    for traj in trajectories {
        for s in &traj.states {
            for (v, (x, m)) in var.iter_mut().zip(s.iter().zip(mean.iter())) {
                *v += (x - m) * (x - m);
            }
        }
        for r in &traj.rewards {
            rew_var += (r - reward_mean) * (r - reward_mean);
        }
    }
    let mut floored = Vec::new();
    let std: Vec<f64> = var
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let s = (v / n).sqrt();
            if s < STD_FLOOR {
                floored.push(i);
                STD_FLOOR
            } else {
                s
            }
        })
        .collect();
    let reward_std = {
        let s = (rew_var / n).sqrt();
        if s < STD_FLOOR {
            STD_FLOOR
        } else {
            s
        }
    };
    Ok((
        Normalizer {
            obs_mean: mean,
            obs_std: std,
            reward_mean,
            reward_std,
            normalize_obs,
            normalize_reward,
        },
        floored,
    ))
}

/// Discounted return-to-go of `rewards` from index `t` to episode end,
/// divided by `reward_scale`.
pub fn compute_rtg(rewards: &[f64], t: usize, gamma: f64, reward_scale: f64) -> f64 {
    debug_assert!(t < rewards.len());
    debug_assert!(gamma > 0.0 && gamma < 1.0 || gamma == 0.0);
    debug_assert!(reward_scale > 0.0);
    let mut acc = 0.0;
    for &r in rewards[t..].iter().rev() {
        acc = r + gamma * acc;
    }
    acc / reward_scale
}

/// How the conditioning return of a training window is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RtgMode {
    /// Discounted to episode end (default).
    #[default]
    Episode,
    /// Discounted over the T-step window only.
    Window,
}

/// Flat training window with layout
/// `[s_t | a_t | r_t | s_{t+1} | r_{t+1} | .. | s_{t+T-1} | r_{t+T-1}]`
/// (normalized values) plus its conditioning return.
#[derive(Debug, Clone, PartialEq)]
pub struct SubtrajWindow {
    pub x0: Vec<f64>,
    pub rtg: f64,
    pub traj_idx: usize,
    pub start: usize,
}

/// Index arithmetic for the flat window layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowLayout {
    pub state_dim: usize,
    pub action_dim: usize,
    pub seq_len: usize,
}

impl WindowLayout {
    pub fn dim(&self) -> usize {
        self.seq_len * self.state_dim + self.action_dim + self.seq_len
    }

    /// Number of leading coordinates pinned by conditioning: (s_t, a_t).
    pub fn conditioned_dim(&self) -> usize {
        self.state_dim + self.action_dim
    }

    pub fn state_offset(&self, j: usize) -> usize {
        debug_assert!(j < self.seq_len);
        if j == 0 {
            0
        } else {
            self.state_dim + self.action_dim + 1 + (j - 1) * (self.state_dim + 1)
        }
    }

    pub fn reward_offset(&self, j: usize) -> usize {
        debug_assert!(j < self.seq_len);
        if j == 0 {
            self.state_dim + self.action_dim
        } else {
            self.state_offset(j) + self.state_dim
        }
    }

    pub fn action_offset(&self) -> usize {
        self.state_dim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub n_trajectories: usize,
    pub episode_len: usize,
    pub state_dim: usize,
    pub action_dim: usize,
}

/// The offline dataset: immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub trajectories: Vec<Trajectory>,
    pub normalizer: Normalizer,
    pub reward_scale: f64,
    pub gamma: f64,
    pub env_name: String,
    pub tier: String,
    pub seed: u64,
    pub rtg_mode: RtgMode,
    pub counts: DatasetCounts,
    /// Normalized episode RTG labels per (trajectory, t); derived field.
    rtgs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuildOptions {
    pub gamma: f64,
    pub normalize_obs: bool,
    pub normalize_reward: bool,
    pub rtg_mode: RtgMode,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            normalize_obs: true,
            normalize_reward: true,
            rtg_mode: RtgMode::Episode,
        }
    }
}

fn percentile_95(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    let idx = ((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1;
    values[idx]
}

impl OfflineDataset {
    /// Builds a dataset from raw trajectories: quantizes to f32 precision,
    /// fits the normalizer, sets `reward_scale` to the 95th percentile of
    /// discounted episode returns, and labels RTGs.
    pub fn build(
        mut trajectories: Vec<Trajectory>,
        env_name: &str,
        tier: &str,
        seed: u64,
        opts: &BuildOptions,
    ) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::Config("dataset needs at least one trajectory".into()));
        }
        if !(opts.gamma > 0.0 && opts.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must be in (0,1), got {}", opts.gamma)));
        }
        for t in trajectories.iter_mut() {
            t.validate()?;
            t.quantize_f32();
        }
        let episode_len = trajectories[0].len();
        let state_dim = trajectories[0].states[0].len();
        let action_dim = trajectories[0].actions[0].len();
        if trajectories
            .iter()
            .any(|t| t.len() != episode_len || t.states[0].len() != state_dim)
        {
            return Err(Error::Config("all trajectories must share one env spec".into()));
        }
        let (normalizer, floored) =
            fit_normalizer(&trajectories, opts.normalize_obs, opts.normalize_reward)?;
        for dim in floored {
            eprintln!("warning: observation dim {dim} has zero variance; std floored");
        }
        let returns: Vec<f64> = trajectories
            .iter()
            .map(|t| compute_rtg(&t.rewards, 0, opts.gamma, 1.0))
            .collect();
        let reward_scale = percentile_95(returns);
        if !(reward_scale > 0.0) {
            return Err(Error::Numerical("reward scale must be positive".into()));
        }
        let rtgs = trajectories
            .iter()
            .map(|t| label_rtgs(&t.rewards, opts.gamma, reward_scale))
            .collect();
        Ok(Self {
            counts: DatasetCounts {
                n_trajectories: trajectories.len(),
                episode_len,
                state_dim,
                action_dim,
            },
            trajectories,
            normalizer,
            reward_scale,
            gamma: opts.gamma,
            env_name: env_name.to_string(),
            tier: tier.to_string(),
            seed,
            rtg_mode: opts.rtg_mode,
            rtgs,
        })
    }

    pub fn layout(&self, seq_len: usize) -> WindowLayout {
        WindowLayout {
            state_dim: self.counts.state_dim,
            action_dim: self.counts.action_dim,
            seq_len,
        }
    }

    /// Normalized episode RTG label g_t.
    pub fn rtg(&self, traj_idx: usize, t: usize) -> f64 {
        self.rtgs[traj_idx][t]
    }

    /// Conditioning return for a window starting at (traj, t) under the
    /// configured mode.
    pub fn window_rtg(&self, traj_idx: usize, t: usize, seq_len: usize) -> f64 {
        match self.rtg_mode {
            RtgMode::Episode => self.rtgs[traj_idx][t],
            RtgMode::Window => {
                let rewards = &self.trajectories[traj_idx].rewards[t..t + seq_len];
                compute_rtg(rewards, 0, self.gamma, self.reward_scale)
            }
        }
    }

    /// Builds the normalized flat window at (traj, start).
    pub fn window_at(&self, traj_idx: usize, start: usize, seq_len: usize) -> SubtrajWindow {
        let layout = self.layout(seq_len);
        let traj = &self.trajectories[traj_idx];
        let mut x0 = Vec::with_capacity(layout.dim());
        x0.extend(self.normalizer.apply_obs(&traj.states[start]));
        x0.extend(traj.actions[start].iter().copied());
        x0.push(self.normalizer.apply_reward(traj.rewards[start]));
        for j in 1..seq_len {
            x0.extend(self.normalizer.apply_obs(&traj.states[start + j]));
            x0.push(self.normalizer.apply_reward(traj.rewards[start + j]));
        }
        debug_assert_eq!(x0.len(), layout.dim());
        SubtrajWindow {
            x0,
            rtg: self.window_rtg(traj_idx, start, seq_len),
            traj_idx,
            start,
        }
    }

    /// Samples a batch of windows uniformly over (trajectory, start) with
    /// start <= L-T, so windows never cross episode ends.
    pub fn sample_windows<R: Rng>(
        &self,
        seq_len: usize,
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<SubtrajWindow>> {
        let len = self.counts.episode_len;
        if seq_len > len {
            return Err(Error::Config(format!(
                "window length {seq_len} exceeds episode length {len}"
            )));
        }
        if batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        let max_start = len - seq_len;
        Ok((0..batch)
            .map(|_| {
                let traj_idx = rng.gen_range(0..self.trajectories.len());
                let start = rng.gen_range(0..=max_start);
                self.window_at(traj_idx, start, seq_len)
            })
            .collect())
    }

    /// Samples raw (s, a) pairs uniformly over all timesteps.
    pub fn sample_state_actions<R: Rng>(
        &self,
        batch: usize,
        rng: &mut R,
    ) -> Vec<(usize, usize)> {
        (0..batch)
            .map(|_| {
                let traj_idx = rng.gen_range(0..self.trajectories.len());
                let t = rng.gen_range(0..self.counts.episode_len);
                (traj_idx, t)
            })
            .collect()
    }

    /// Samples (traj, t) with t < L-1, so a stored next-state exists.
    pub fn sample_transitions<R: Rng>(&self, batch: usize, rng: &mut R) -> Vec<(usize, usize)> {
        (0..batch)
            .map(|_| {
                let traj_idx = rng.gen_range(0..self.trajectories.len());
                let t = rng.gen_range(0..self.counts.episode_len - 1);
                (traj_idx, t)
            })
            .collect()
    }

    pub fn mean_state_norm(&self) -> f64 {
        let mut acc = 0.0;
        let mut n = 0usize;
        for traj in &self.trajectories {
            for s in &traj.states {
                acc += s.iter().map(|v| v * v).sum::<f64>().sqrt();
                n += 1;
            }
        }
        acc / n as f64
    }

    /// Mean undiscounted episode return of the behavior data.
    pub fn mean_episode_return(&self) -> f64 {
        let total: f64 = self
            .trajectories
            .iter()
            .map(|t| t.rewards.iter().sum::<f64>())
            .sum();
        total / self.trajectories.len() as f64
    }

    /// Deciles (0%, 10%, .., 100%) of all normalized RTG labels.
    pub fn rtg_deciles(&self) -> Vec<f64> {
        let mut all: Vec<f64> = self.rtgs.iter().flatten().copied().collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        (0..=10)
            .map(|q| {
                let idx = (q as f64 / 10.0 * (all.len() - 1) as f64).round() as usize;
                all[idx]
            })
            .collect()
    }

    pub fn rtg_percentile(&self, p: f64) -> f64 {
        let mut all: Vec<f64> = self.rtgs.iter().flatten().copied().collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let idx = ((p * all.len() as f64).ceil() as usize).clamp(1, all.len()) - 1;
        all[idx]
    }
}

/// RTG labels for a whole episode via the backward recursion
/// `g_t = r_t + gamma * g_{t+1}`, then scaled.
pub fn label_rtgs(rewards: &[f64], gamma: f64, reward_scale: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (i, &r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[i] = acc / reward_scale;
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetHeader {
    version: u32,
    env: String,
    tier: String,
    gamma: f64,
    reward_scale: f64,
    rtg_mode: RtgMode,
    normalizer: Normalizer,
    counts: DatasetCounts,
    seed: u64,
    traj_seeds: Vec<u64>,
    traj_tags: Vec<String>,
}

const DATASET_VERSION: u32 = 1;

pub fn save_dataset(dataset: &OfflineDataset, path: &Path) -> Result<()> {
    let header = DatasetHeader {
        version: DATASET_VERSION,
        env: dataset.env_name.clone(),
        tier: dataset.tier.clone(),
        gamma: dataset.gamma,
        reward_scale: dataset.reward_scale,
        rtg_mode: dataset.rtg_mode,
        normalizer: dataset.normalizer.clone(),
        counts: dataset.counts.clone(),
        seed: dataset.seed,
        traj_seeds: dataset.trajectories.iter().map(|t| t.seed).collect(),
        traj_tags: dataset
            .trajectories
            .iter()
            .map(|t| t.policy_tag.clone())
            .collect(),
    };
    let mut payload = Vec::new();
    for traj in &dataset.trajectories {
        for row in &traj.states {
            for &v in row {
                payload.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        for row in &traj.actions {
            for &v in row {
                payload.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        for &v in &traj.rewards {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&payload);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut file = fs::File::create(path)?;
    file.write_all(DATASET_MAGIC)?;
    file.write_all(b"\n")?;
    serde_json::to_writer(&mut file, &header)
        .map_err(|e| Error::Header(format!("dataset header encode: {e}")))?;
    file.write_all(b"\n")?;
    file.write_all(&crc.to_le_bytes())?;
    file.write_all(&payload)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<OfflineDataset> {
    let bytes = fs::read(path).map_err(|_| Error::MissingArtifact(path.to_path_buf()))?;
    if bytes.len() < DATASET_MAGIC.len() + 1 || &bytes[..5] != DATASET_MAGIC {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(5)]).into_owned();
        return Err(Error::VersionMismatch {
            found,
            expected: String::from_utf8_lossy(DATASET_MAGIC).into_owned(),
        });
    }
    let rest = &bytes[6..];
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Header("dataset header line missing".into()))?;
    let header: DatasetHeader = serde_json::from_slice(&rest[..nl])
        .map_err(|e| Error::Header(format!("dataset header decode: {e}")))?;
    if header.version != DATASET_VERSION {
        return Err(Error::VersionMismatch {
            found: header.version.to_string(),
            expected: DATASET_VERSION.to_string(),
        });
    }
    let body = &rest[nl + 1..];
    if body.len() < 4 {
        return Err(Error::Truncated {
            expected: 4,
            got: body.len(),
        });
    }
    let stored_crc = u32::from_le_bytes(body[..4].try_into().unwrap());
    let payload = &body[4..];
    let c = &header.counts;
    let per_traj = c.episode_len * (c.state_dim + c.action_dim + 1);
    let expected = c.n_trajectories * per_traj * 4;
    if payload.len() != expected {
        return Err(Error::Truncated {
            expected,
            got: payload.len(),
        });
    }
    let computed = crc32fast::hash(payload);
    if computed != stored_crc {
        return Err(Error::Checksum {
            stored: stored_crc,
            computed,
        });
    }
    let mut trajectories = Vec::with_capacity(c.n_trajectories);
    let mut off = 0usize;
    let read_f64 = |off: &mut usize| -> f64 {
        let b: [u8; 4] = payload[*off..*off + 4].try_into().unwrap();
        *off += 4;
        f32::from_le_bytes(b) as f64
    };
    for i in 0..c.n_trajectories {
        let mut states = Vec::with_capacity(c.episode_len);
        for _ in 0..c.episode_len {
            states.push((0..c.state_dim).map(|_| read_f64(&mut off)).collect());
        }
        let mut actions = Vec::with_capacity(c.episode_len);
        for _ in 0..c.episode_len {
            actions.push((0..c.action_dim).map(|_| read_f64(&mut off)).collect());
        }
        let rewards = (0..c.episode_len).map(|_| read_f64(&mut off)).collect();
        trajectories.push(Trajectory {
            states,
            actions,
            rewards,
            seed: header.traj_seeds[i],
            policy_tag: header.traj_tags[i].clone(),
        });
    }
    let rtgs = trajectories
        .iter()
        .map(|t| label_rtgs(&t.rewards, header.gamma, header.reward_scale))
        .collect();
    Ok(OfflineDataset {
        trajectories,
        normalizer: header.normalizer,
        reward_scale: header.reward_scale,
        gamma: header.gamma,
        env_name: header.env,
        tier: header.tier,
        seed: header.seed,
        rtg_mode: header.rtg_mode,
        counts: header.counts,
        rtgs,
    })
}

/// Convenience for tests and the CLI: roll a tier and build the dataset.
pub fn generate_dataset(
    env: &crate::envsim::EnvSpec,
    tier: crate::envsim::Tier,
    episodes: usize,
    seed: u64,
    opts: &BuildOptions,
) -> Result<OfflineDataset> {
    let trajs = crate::envsim::generate_tier_trajectories(env, tier, episodes, seed)?;
    OfflineDataset::build(
        trajs,
        &env.name,
        tier.tag(),
        derive_seed(seed, 0xda7a),
        opts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsim::{EnvSpec, Tier};
    use crate::rngutil::rng_from;

    fn small_dataset() -> OfflineDataset {
        generate_dataset(
            &EnvSpec::point_mass(),
            Tier::Medium,
            10,
            42,
            &BuildOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn rtg_three_ones() {
        let g = compute_rtg(&[1.0, 1.0, 1.0], 0, 0.99, 1.0);
        assert!((g - 2.9701).abs() < 1e-12, "{g}");
    }

    #[test]
    fn rtg_gamma_zero_degenerates() {
        let g = compute_rtg(&[0.7, 0.3], 0, 0.0, 2.0);
        assert!((g - 0.35).abs() < 1e-15);
    }

    #[test]
    fn rtg_matches_brute_force_oracle() {
        let mut rng = rng_from(9, 0);
        for _ in 0..20 {
            let rewards: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..1.0)).collect();
            let t = rng.gen_range(0..10);
            let gamma = 0.97;
            let scale = 3.0;
            let got = compute_rtg(&rewards, t, gamma, scale);
            let mut oracle = 0.0;
            for (h, &r) in rewards[t..].iter().enumerate() {
                oracle += gamma.powi(h as i32) * r;
            }
            oracle /= scale;
            assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
        }
    }

    #[test]
    fn rtg_labels_satisfy_bellman() {
        let ds = small_dataset();
        for (ti, traj) in ds.trajectories.iter().enumerate() {
            for t in 0..traj.len() - 1 {
                let lhs = ds.rtg(ti, t) * ds.reward_scale;
                let rhs = traj.rewards[t] + ds.gamma * ds.rtg(ti, t + 1) * ds.reward_scale;
                assert!((lhs - rhs).abs() < 1e-10, "t={t}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn normalizer_round_trip() {
        let ds = small_dataset();
        let s = &ds.trajectories[0].states[5];
        let z = ds.normalizer.apply_obs(s);
        let back = ds.normalizer.invert_obs(&z);
        for (a, b) in s.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalizer_matches_sample_moments_oracle() {
        let mut rng = rng_from(3, 1);
        let n = 100_000;
        let raw: Vec<f64> = (0..n)
            .map(|_| 2.5 + 1.7 * crate::rngutil::standard_normal(&mut rng))
            .collect();
        // oracle moments
        let mean: f64 = raw.iter().sum::<f64>() / n as f64;
        let var: f64 = raw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        // pre-standardize, then fit: moments must come out 0/1
        let std_data: Vec<Vec<f64>> = raw.iter().map(|v| vec![(v - mean) / std]).collect();
        let traj = Trajectory {
            actions: vec![vec![0.0]; n],
            rewards: vec![0.5; n],
            states: std_data,
            seed: 0,
            policy_tag: "x".into(),
        };
        let (norm, _) = fit_normalizer(&[traj], true, false).unwrap();
        assert!(norm.obs_mean[0].abs() < 1e-9, "{}", norm.obs_mean[0]);
        assert!((norm.obs_std[0] - 1.0).abs() < 1e-9, "{}", norm.obs_std[0]);
    }

    #[test]
    fn constant_feature_floors_std() {
        let traj = Trajectory {
            states: vec![vec![3.0]; 10],
            actions: vec![vec![0.0]; 10],
            rewards: vec![1.0; 10],
            seed: 0,
            policy_tag: "x".into(),
        };
        let (norm, floored) = fit_normalizer(&[traj], true, false).unwrap();
        assert_eq!(floored, vec![0]);
        assert_eq!(norm.obs_std[0], STD_FLOOR);
        let z = norm.apply_obs(&[3.0]);
        assert_eq!(z[0], 0.0);
    }

    #[test]
    fn window_layout_dim_formula() {
        let layout = WindowLayout {
            state_dim: 4,
            action_dim: 2,
            seq_len: 8,
        };
        assert_eq!(layout.dim(), 8 * 4 + 2 + 8);
        assert_eq!(layout.state_offset(0), 0);
        assert_eq!(layout.action_offset(), 4);
        assert_eq!(layout.reward_offset(0), 6);
        assert_eq!(layout.state_offset(1), 7);
        assert_eq!(layout.reward_offset(7), layout.dim() - 1);
    }

    #[test]
    fn window_equal_to_episode_len_starts_at_zero() {
        let ds = small_dataset();
        let len = ds.counts.episode_len;
        let mut rng = rng_from(0, 0);
        let windows = ds.sample_windows(len, 32, &mut rng).unwrap();
        assert!(windows.iter().all(|w| w.start == 0));
        assert!(ds.sample_windows(len + 1, 1, &mut rng).is_err());
    }

    #[test]
    fn window_values_match_source() {
        let ds = small_dataset();
        let w = ds.window_at(2, 5, 8);
        let layout = ds.layout(8);
        let traj = &ds.trajectories[2];
        for j in 0..8 {
            let off = layout.state_offset(j);
            let expect = ds.normalizer.apply_obs(&traj.states[5 + j]);
            assert_eq!(&w.x0[off..off + 4], expect.as_slice());
            let r = w.x0[layout.reward_offset(j)];
            assert_eq!(r, ds.normalizer.apply_reward(traj.rewards[5 + j]));
        }
        assert_eq!(
            &w.x0[layout.action_offset()..layout.action_offset() + 2],
            traj.actions[5].as_slice()
        );
    }

    #[test]
    fn window_starts_are_uniform() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let ds = generate_dataset(
            &EnvSpec::point_mass(),
            Tier::Medium,
            5,
            7,
            &BuildOptions::default(),
        )
        .unwrap();
        let seq_len = 93; // leaves 8 possible starts
        let n_starts = ds.counts.episode_len - seq_len + 1;
        let cells = ds.trajectories.len() * n_starts;
        let mut counts = vec![0usize; cells];
        let mut rng = rng_from(100, 0);
        let draws = 100_000;
        for w in ds
            .sample_windows(seq_len, draws, &mut rng)
            .unwrap()
        {
            counts[w.traj_idx * n_starts + w.start] += 1;
        }
        let expected = draws as f64 / cells as f64;
        let stat: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        let dist = ChiSquared::new((cells - 1) as f64).unwrap();
        let crit = dist.inverse_cdf(0.99);
        assert!(stat < crit, "chi^2 {stat} >= {crit}");
    }

    #[test]
    fn save_load_round_trip() {
        let ds = small_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.dwmt1");
        save_dataset(&ds, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(ds, loaded);
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let ds = small_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.dwmt1");
        save_dataset(&ds, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 3] ^= 0xff;
        fs::write(&path, &bytes).unwrap();
        match load_dataset(&path) {
            Err(Error::Checksum { .. }) => {}
            other => panic!("expected checksum error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_structured_error() {
        let ds = small_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.dwmt1");
        save_dataset(&ds, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 64);
        fs::write(&path, &bytes).unwrap();
        match load_dataset(&path) {
            Err(Error::Truncated { .. }) => {}
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_version_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.dwmt1");
        fs::write(&path, b"DWMT2\n{}").unwrap();
        match load_dataset(&path) {
            Err(Error::VersionMismatch { .. }) => {}
            other => panic!("expected version mismatch, got {other:?}"),
        }
    }
}
