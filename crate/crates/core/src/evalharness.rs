//! Measurement surfaces: world-model prediction error (per timestep and
//! averaged), anchored policy evaluation, and seeded sweep grids over
//! horizons and evaluation returns.

use crate::agents::{
    save_policy_checkpoint, train_offline_agent, AgentConfig, EvalContext, WorldModel,
};
use crate::dataset::OfflineDataset;
use crate::envsim::{env_step, init_state, make_scripted_policy, EnvSpec, PolicyLevel};
use crate::error::{Error, Result};
use crate::rngutil::{derive_seed, rng_from};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::fs;
use std::path::Path;

/// Normalization anchors: mean undiscounted returns of the scripted random
/// and expert policies on the real environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Anchors {
    pub r_random: f64,
    pub r_expert: f64,
}

fn scripted_mean_return(
    env: &EnvSpec,
    level: PolicyLevel,
    episodes: usize,
    seed: u64,
) -> Result<f64> {
    let mut total = 0.0;
    for ep in 0..episodes {
        let ep_seed = derive_seed(seed, 0xA0_0000 + ep as u64);
        let mut policy = make_scripted_policy(level, ep_seed);
        let traj = crate::envsim::rollout(env, &mut policy, ep_seed, env.episode_len)?;
        total += traj.rewards.iter().sum::<f64>();
    }
    Ok(total / episodes as f64)
}

/// Computes anchors from `episodes` scripted episodes per tier.
pub fn compute_anchors(env: &EnvSpec, episodes: usize, seed: u64) -> Result<Anchors> {
    let r_random = scripted_mean_return(env, PolicyLevel::Random, episodes, seed)?;
    let r_expert = scripted_mean_return(env, PolicyLevel::Expert, episodes, seed)?;
    if r_expert <= r_random {
        return Err(Error::Numerical(format!(
            "degenerate anchors: expert {r_expert} <= random {r_random}"
        )));
    }
    Ok(Anchors { r_random, r_expert })
}

/// Undiscounted episode returns of a deterministic policy closure.
pub fn policy_returns(
    env: &EnvSpec,
    mut act: impl FnMut(&[f64]) -> Vec<f64>,
    episodes: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut returns = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let mut rng = rng_from(seed, 0xB0_0000 + ep as u64);
        let mut state = init_state(env, &mut rng);
        let mut total = 0.0;
        for _ in 0..env.episode_len {
            let action = act(&state.vec);
            let (next, reward) = env_step(env, &state, &action)?;
            total += reward;
            state = next;
        }
        returns.push(total);
    }
    Ok(returns)
}

/// Raw and anchor-normalized returns over evaluation episodes.
#[derive(Debug, Clone, Serialize)]
pub struct ReturnReport {
    pub raw_returns: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub normalized_mean: f64,
    pub normalized_std: f64,
    pub anchors: Anchors,
}

impl ReturnReport {
    pub fn from_returns(returns: &[f64], anchors: &Anchors) -> Result<Self> {
        if returns.is_empty() {
            return Err(Error::Config("no evaluation returns".into()));
        }
        let span = anchors.r_expert - anchors.r_random;
        if span <= 0.0 {
            return Err(Error::Numerical("degenerate anchors".into()));
        }
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        Ok(Self {
            raw_returns: returns.to_vec(),
            mean,
            std,
            normalized_mean: (mean - anchors.r_random) / span,
            normalized_std: std / span,
            anchors: *anchors,
        })
    }
}

pub fn evaluate_policy(
    env: &EnvSpec,
    act: impl FnMut(&[f64]) -> Vec<f64>,
    episodes: usize,
    seed: u64,
    anchors: &Anchors,
) -> Result<ReturnReport> {
    let returns = policy_returns(env, act, episodes, seed)?;
    ReturnReport::from_returns(&returns, anchors)
}

/// Per-timestep and averaged prediction error of a world model on windows
/// drawn from the dataset.
#[derive(Debug, Clone, Serialize)]
pub struct PredErrorReport {
    pub model_tag: String,
    pub g_eval: f64,
    pub seq_len: usize,
    pub n_windows: usize,
    pub seed: u64,
    /// Mean squared state error per window step; index 0 is the conditioned
    /// state and is zero by construction.
    pub state_mse: Vec<f64>,
    pub reward_mse: Vec<f64>,
    pub avg_state_mse: f64,
    pub avg_reward_mse: f64,
}

pub(crate) struct WindowTruth<'a> {
    pub states: &'a [Vec<f64>],
    pub actions: &'a [Vec<f64>],
    pub rewards: &'a [f64],
}

/// Shared measurement core; `predict` maps a ground-truth window to
/// (rewards[0..T], states[1..T]) predictions. Returns the report plus the
/// raw per-window squared state errors (window-major, step-minor).
pub(crate) fn prediction_error_core(
    dataset: &OfflineDataset,
    seq_len: usize,
    n_windows: usize,
    seed: u64,
    g_eval: f64,
    model_tag: &str,
    mut predict: impl FnMut(&WindowTruth, &mut ChaCha8Rng) -> Result<(Vec<f64>, Vec<Vec<f64>>)>,
) -> Result<(PredErrorReport, Vec<Vec<f64>>)> {
    let len = dataset.counts.episode_len;
    if seq_len > len {
        return Err(Error::Config(format!(
            "window length {seq_len} exceeds episode length {len}"
        )));
    }
    let mut pick_rng = rng_from(seed, 0xE7);
    let mut state_acc = vec![0.0; seq_len];
    let mut reward_acc = vec![0.0; seq_len];
    let mut per_window = Vec::with_capacity(n_windows);
    use rand::Rng;
    for w in 0..n_windows {
        let ti = pick_rng.gen_range(0..dataset.trajectories.len());
        let start = pick_rng.gen_range(0..=len - seq_len);
        let traj = &dataset.trajectories[ti];
        let truth = WindowTruth {
            states: &traj.states[start..start + seq_len],
            actions: &traj.actions[start..start + seq_len],
            rewards: &traj.rewards[start..start + seq_len],
        };
        let mut rng = rng_from(seed, 0x9000 + w as u64);
        let (rewards, states) = predict(&truth, &mut rng)?;
        if rewards.len() != seq_len || states.len() != seq_len - 1 {
            return Err(Error::DimMismatch {
                context: "prediction shape",
                expected: seq_len,
                got: rewards.len(),
            });
        }
        let mut row = vec![0.0; seq_len];
        for j in 1..seq_len {
            let err: f64 = states[j - 1]
                .iter()
                .zip(truth.states[j].iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            state_acc[j] += err;
            row[j] = err;
        }
        for j in 0..seq_len {
            let d = rewards[j] - truth.rewards[j];
            reward_acc[j] += d * d;
        }
        per_window.push(row);
    }
    let n = n_windows as f64;
    let state_mse: Vec<f64> = state_acc.iter().map(|v| v / n).collect();
    let reward_mse: Vec<f64> = reward_acc.iter().map(|v| v / n).collect();
    let avg_state_mse = state_mse.iter().sum::<f64>() / seq_len as f64;
    let avg_reward_mse = reward_mse.iter().sum::<f64>() / seq_len as f64;
    Ok((
        PredErrorReport {
            model_tag: model_tag.to_string(),
            g_eval,
            seq_len,
            n_windows,
            seed,
            state_mse,
            reward_mse,
            avg_state_mse,
            avg_reward_mse,
        },
        per_window,
    ))
}

fn model_predict(
    wm: &WorldModel,
    dataset: &OfflineDataset,
    g_eval: f64,
    seq_len: usize,
    truth: &WindowTruth,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    match wm {
        WorldModel::Dwm(model) => {
            let pred = model.sample(&truth.states[0], &truth.actions[0], g_eval, rng)?;
            Ok((pred.rewards, pred.states))
        }
        WorldModel::OneStep(model) => {
            let guard = 1e3 * dataset.mean_state_norm().max(1.0);
            let roll = model.rollout(
                &truth.states[0],
                &truth.actions[0],
                seq_len,
                |h, _| truth.actions[h].clone(),
                rng,
                false,
                guard,
            )?;
            let states = roll.states[..seq_len - 1].to_vec();
            Ok((roll.rewards, states))
        }
    }
}

/// Prediction error of a trained world model. Conditions each window on its
/// true (s_t, a_t) and `g_eval`; one-step models imagine recursively with
/// the dataset's recorded actions.
pub fn wm_prediction_error(
    wm: &WorldModel,
    dataset: &OfflineDataset,
    g_eval: f64,
    seq_len: usize,
    n_windows: usize,
    seed: u64,
) -> Result<PredErrorReport> {
    if let WorldModel::Dwm(model) = wm {
        if model.config.seq_len != seq_len {
            return Err(Error::DimMismatch {
                context: "prediction window length",
                expected: model.config.seq_len,
                got: seq_len,
            });
        }
    }
    prediction_error_core(dataset, seq_len, n_windows, seed, g_eval, wm.tag(), |t, r| {
        model_predict(wm, dataset, g_eval, seq_len, t, r)
    })
    .map(|(report, _)| report)
}

/// Per-window, per-step squared state errors (for medians and quantiles).
pub fn wm_per_step_state_errors(
    wm: &WorldModel,
    dataset: &OfflineDataset,
    g_eval: f64,
    seq_len: usize,
    n_windows: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    prediction_error_core(dataset, seq_len, n_windows, seed, g_eval, wm.tag(), |t, r| {
        model_predict(wm, dataset, g_eval, seq_len, t, r)
    })
    .map(|(_, rows)| rows)
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// One trained sweep cell.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub model: String,
    pub horizon: usize,
    pub g_eval: f64,
    pub seed: u64,
    pub norm_return: f64,
    pub raw_mean: f64,
    pub raw_std: f64,
}

struct SweepCell {
    model_idx: usize,
    horizon: usize,
    g_eval: Option<f64>,
    seed: u64,
}

fn sweep_threads() -> usize {
    std::env::var("DWMLAB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

fn run_cells(
    dataset: &OfflineDataset,
    models: &[(String, WorldModel)],
    base: &AgentConfig,
    env: &EnvSpec,
    anchors: &Anchors,
    cells: Vec<SweepCell>,
    out_dir: Option<&Path>,
) -> Result<Vec<SweepRow>> {
    let ctx = EvalContext {
        env: env.clone(),
        anchors: *anchors,
    };
    let run_one = |cell: &SweepCell| -> Result<SweepRow> {
        let (tag, wm) = &models[cell.model_idx];
        let mut cfg = base.clone();
        cfg.horizon = cell.horizon;
        if let Some(g) = cell.g_eval {
            cfg.g_eval = vec![g];
        }
        let result = train_offline_agent(dataset, *wm, &cfg, cell.seed, Some(&ctx))?;
        let norm = result.final_norm_return.unwrap_or(f64::NAN);
        let last = result.log.last();
        if let Some(dir) = out_dir {
            let cell_dir = dir.join(format!(
                "cell_{tag}_h{}_g{}_s{}",
                cell.horizon,
                cell.g_eval
                    .map(|g| g.to_string())
                    .unwrap_or_else(|| "base".into()),
                cell.seed
            ));
            fs::create_dir_all(&cell_dir)?;
            save_policy_checkpoint(
                &result.state,
                &env.name,
                cfg.algo,
                &dataset.normalizer,
                &cell_dir.join("policy.ckpt"),
                cell.seed,
            )?;
            write_agent_log_csv(&cell_dir.join("train_log.csv"), &result.log)?;
        }
        Ok(SweepRow {
            model: tag.clone(),
            horizon: cell.horizon,
            g_eval: cell.g_eval.unwrap_or(base.g_eval[0]),
            seed: cell.seed,
            norm_return: norm,
            raw_mean: last.map(|r| r.eval_return_mean).unwrap_or(f64::NAN),
            raw_std: last.map(|r| r.eval_return_std).unwrap_or(f64::NAN),
        })
    };
    let threads = sweep_threads().min(cells.len().max(1));
    if threads <= 1 {
        return cells.iter().map(run_one).collect();
    }
    let chunk = cells.len().div_ceil(threads);
    let mut slots: Vec<Option<Result<SweepRow>>> = (0..cells.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (chunk_cells, chunk_slots) in cells.chunks(chunk).zip(slots.chunks_mut(chunk)) {
            scope.spawn(move || {
                for (cell, slot) in chunk_cells.iter().zip(chunk_slots.iter_mut()) {
                    *slot = Some(run_one(cell));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("cell ran")).collect()
}

/// Trains one agent per (horizon, model, seed) cell and reports normalized
/// returns. Cell artifacts persist under `out_dir` when given; the cell
/// count honors the DWMLAB_THREADS cap for parallel execution.
pub fn horizon_sweep(
    dataset: &OfflineDataset,
    models: &[(String, WorldModel)],
    base: &AgentConfig,
    horizons: &[usize],
    seeds: &[u64],
    env: &EnvSpec,
    anchors: &Anchors,
    out_dir: Option<&Path>,
) -> Result<Vec<SweepRow>> {
    let mut cells = Vec::new();
    for (model_idx, _) in models.iter().enumerate() {
        for &h in horizons {
            for &seed in seeds {
                cells.push(SweepCell {
                    model_idx,
                    horizon: h,
                    g_eval: None,
                    seed,
                });
            }
        }
    }
    run_cells(dataset, models, base, env, anchors, cells, out_dir)
}

/// Result of an evaluation-RTG sweep: returns per cell, prediction error
/// per candidate value, and dataset RTG deciles for context.
pub struct RtgSweepResult {
    pub rows: Vec<SweepRow>,
    pub pred_errors: Vec<PredErrorReport>,
    pub rtg_deciles: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn rtg_sweep(
    dataset: &OfflineDataset,
    models: &[(String, WorldModel)],
    base: &AgentConfig,
    g_evals: &[f64],
    seeds: &[u64],
    env: &EnvSpec,
    anchors: &Anchors,
    pred_windows: usize,
    out_dir: Option<&Path>,
) -> Result<RtgSweepResult> {
    let mut cells = Vec::new();
    for (model_idx, _) in models.iter().enumerate() {
        for &g in g_evals {
            for &seed in seeds {
                cells.push(SweepCell {
                    model_idx,
                    horizon: base.horizon,
                    g_eval: Some(g),
                    seed,
                });
            }
        }
    }
    let rows = run_cells(dataset, models, base, env, anchors, cells, out_dir)?;
    let mut pred_errors = Vec::new();
    for (_, wm) in models {
        if let WorldModel::Dwm(model) = wm {
            for &g in g_evals {
                pred_errors.push(wm_prediction_error(
                    wm,
                    dataset,
                    g,
                    model.config.seq_len,
                    pred_windows,
                    derive_seed(0x9e7, 0xF00D),
                )?);
            }
        }
    }
    Ok(RtgSweepResult {
        rows,
        pred_errors,
        rtg_deciles: dataset.rtg_deciles(),
    })
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut out = String::from("model,horizon,g_eval,seed,norm_return,raw_mean,raw_std\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.model, r.horizon, r.g_eval, r.seed, r.norm_return, r.raw_mean, r.raw_std
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_pred_error_csv(path: &Path, reports: &[PredErrorReport]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut out = String::from("model,g_eval,step,state_mse,reward_mse\n");
    for rep in reports {
        for j in 0..rep.seq_len {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                rep.model_tag, rep.g_eval, j, rep.state_mse[j], rep.reward_mse[j]
            ));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_agent_log_csv(path: &Path, rows: &[crate::agents::AgentLogRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut out = String::from(
        "iteration,critic_loss,actor_loss,value_loss,eval_return_mean,eval_return_std,eval_norm_return,wall_clock_s\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.iteration,
            r.critic_loss,
            r.actor_loss,
            r.value_loss,
            r.eval_return_mean,
            r.eval_return_std,
            r.eval_norm_return,
            r.wall_clock_s
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Markdown pivot of a sweep: one row per (model, horizon, g_eval) with the
/// median normalized return over seeds.
pub fn sweep_markdown(rows: &[SweepRow]) -> String {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<(String, usize, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.model.clone(), r.horizon, format!("{}", r.g_eval)))
            .or_default()
            .push(r.norm_return);
    }
    let mut out = String::from("| model | horizon | g_eval | median norm return | seeds |\n");
    out.push_str("|---|---|---|---|---|\n");
    for ((model, h, g), mut vals) in groups {
        let n = vals.len();
        let med = median(&mut vals);
        out.push_str(&format!("| {model} | {h} | {g} | {med:.4} | {n} |\n"));
    }
    out
}
