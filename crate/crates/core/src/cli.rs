//! Command configs and execution for the `dwmlab` binary.
//!
//! Every command reads a JSON config (schema-validated, unknown keys
//! rejected), applies `--override key=value` patches and the optional
//! `--seed`, echoes the fully resolved config into the run directory, and
//! writes its artifacts there. Identical config + seed reproduces identical
//! artifact bytes; training logs additionally carry a wall-clock column.

use crate::agents::{
    load_policy_checkpoint, save_policy_checkpoint, train_offline_agent, AgentConfig, AlgoKind,
    EvalContext, WmSource, WorldModel,
};
use crate::dataset::{generate_dataset, load_dataset, save_dataset, BuildOptions, RtgMode};
use crate::dwm::{load_dwm_checkpoint, save_dwm_checkpoint, train_dwm, DiffusionWorldModel, DwmConfig};
use crate::envsim::{EnvSpec, Tier};
use crate::error::{Error, Result};
use crate::evalharness::{
    compute_anchors, evaluate_policy, horizon_sweep, rtg_sweep, sweep_markdown,
    wm_prediction_error, write_agent_log_csv, write_pred_error_csv, write_sweep_csv, median,
};
use crate::onestep::{
    load_onestep_checkpoint, save_onestep_checkpoint, train_onestep, OneStepConfig, OneStepModel,
};
use crate::substrate::read_checkpoint;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

/// Seed for computing normalization anchors; fixed so reports from separate
/// commands share the same anchors.
pub const ANCHOR_SEED: u64 = 0xA17C;

fn default_anchor_episodes() -> usize {
    100
}

fn default_episodes() -> usize {
    10
}

fn default_log_every() -> usize {
    200
}

fn default_g_eval() -> f64 {
    0.8
}

fn default_seq_len() -> usize {
    8
}

fn default_windows() -> usize {
    200
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataConfig {
    pub env: String,
    pub tier: String,
    pub episodes: usize,
    #[serde(default = "crate::cli::default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub normalize_obs: bool,
    #[serde(default = "default_true")]
    pub normalize_reward: bool,
    #[serde(default)]
    pub rtg_mode: RtgMode,
}

pub(crate) fn default_gamma() -> f64 {
    0.99
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainWmConfig {
    /// "dwm" or "onestep".
    pub model: String,
    pub dataset: PathBuf,
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default)]
    pub dwm: DwmConfig,
    #[serde(default)]
    pub onestep: OneStepConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalWmConfig {
    pub model_path: PathBuf,
    pub dataset: PathBuf,
    #[serde(default = "default_g_eval")]
    pub g_eval: f64,
    #[serde(default = "default_seq_len")]
    pub seq_len: usize,
    #[serde(default = "default_windows")]
    pub n_windows: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainAgentConfig {
    pub dataset: PathBuf,
    pub wm_path: PathBuf,
    #[serde(default)]
    pub seed: u64,
    pub agent: AgentConfig,
    #[serde(default = "default_true")]
    pub evaluate: bool,
    #[serde(default = "default_anchor_episodes")]
    pub anchor_episodes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalAgentConfig {
    pub policy_path: PathBuf,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_anchor_episodes")]
    pub anchor_episodes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepModel {
    pub tag: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepHorizonConfig {
    pub dataset: PathBuf,
    pub models: Vec<SweepModel>,
    pub horizons: Vec<usize>,
    pub seeds: Vec<u64>,
    pub agent: AgentConfig,
    #[serde(default = "default_anchor_episodes")]
    pub anchor_episodes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRtgConfig {
    pub dataset: PathBuf,
    pub models: Vec<SweepModel>,
    pub g_evals: Vec<f64>,
    pub seeds: Vec<u64>,
    pub agent: AgentConfig,
    #[serde(default = "default_windows")]
    pub pred_windows: usize,
    #[serde(default = "default_anchor_episodes")]
    pub anchor_episodes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    pub sweep_csv: PathBuf,
}

/// A world model loaded from a checkpoint of either kind.
pub enum OwnedWm {
    Dwm(Box<DiffusionWorldModel>),
    OneStep(Box<OneStepModel>),
}

impl OwnedWm {
    pub fn load(path: &Path) -> Result<Self> {
        let header = read_checkpoint(path)?.header;
        match header.kind.as_str() {
            "dwm" => Ok(Self::Dwm(Box::new(load_dwm_checkpoint(path)?))),
            "onestep" => Ok(Self::OneStep(Box::new(load_onestep_checkpoint(path)?))),
            other => Err(Error::Header(format!("unknown world-model kind '{other}'"))),
        }
    }

    pub fn as_world_model(&self) -> WorldModel<'_> {
        match self {
            Self::Dwm(m) => WorldModel::Dwm(m),
            Self::OneStep(m) => WorldModel::OneStep(m),
        }
    }
}

/// Applies one `key=value` override to a JSON document; dotted keys descend
/// into objects, and values parse as JSON with a plain-string fallback.
pub fn apply_override(doc: &mut serde_json::Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{spec}' must be key=value")))?;
    let value: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cursor = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cursor
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override path '{key}' hits a non-object at '{part}'")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cursor = obj
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!()
}

/// Reads a config file, applies overrides and the optional seed flag.
pub fn load_config_value(
    path: &Path,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<serde_json::Value> {
    let text = fs::read_to_string(path).map_err(|_| Error::MissingArtifact(path.to_path_buf()))?;
    let mut doc: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    if let Some(s) = seed {
        apply_override(&mut doc, &format!("seed={s}"))?;
    }
    Ok(doc)
}

fn typed<T: serde::de::DeserializeOwned>(doc: &serde_json::Value) -> Result<T> {
    serde_json::from_value(doc.clone()).map_err(|e| Error::Config(format!("config invalid: {e}")))
}

fn echo_config<T: Serialize>(out_dir: &Path, cfg: &T) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let pretty = serde_json::to_string_pretty(cfg).map_err(|e| Error::Header(e.to_string()))?;
    fs::write(out_dir.join("config.echo.json"), pretty + "\n")?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let pretty = serde_json::to_string_pretty(value).map_err(|e| Error::Header(e.to_string()))?;
    fs::write(path, pretty + "\n")?;
    Ok(())
}

pub fn cmd_gen_data(doc: &serde_json::Value, out_dir: &Path) -> Result<()> {
    let cfg: GenDataConfig = typed(doc)?;
    let env = EnvSpec::by_name(&cfg.env)?;
    let tier = Tier::by_name(&cfg.tier)?;
    let opts = BuildOptions {
        gamma: cfg.gamma,
        normalize_obs: cfg.normalize_obs,
        normalize_reward: cfg.normalize_reward,
        rtg_mode: cfg.rtg_mode,
    };
    let dataset = generate_dataset(&env, tier, cfg.episodes, cfg.seed, &opts)?;
    echo_config(out_dir, &cfg)?;
    let path = out_dir.join(format!("{}-{}.dwmt1", cfg.env, cfg.tier));
    save_dataset(&dataset, &path)?;
    println!(
        "wrote {} ({} episodes, reward scale {:.4})",
        path.display(),
        dataset.counts.n_trajectories,
        dataset.reward_scale
    );
    Ok(())
}

pub fn cmd_train_wm(doc: &serde_json::Value, out_dir: &Path) -> Result<()> {
    let cfg: TrainWmConfig = typed(doc)?;
    let dataset = load_dataset(&cfg.dataset)?;
    echo_config(out_dir, &cfg)?;
    let mut log = String::from("iteration,loss\n");
    match cfg.model.as_str() {
        "dwm" => {
            let model = train_dwm(
                &dataset,
                &cfg.dwm,
                cfg.seed,
                cfg.iterations,
                cfg.log_every,
                |row| log.push_str(&format!("{},{}\n", row.iteration, row.loss)),
            )?;
            let path = out_dir.join("wm_dwm.ckpt");
            save_dwm_checkpoint(&model, &path, cfg.seed)?;
            println!("wrote {}", path.display());
        }
        "onestep" => {
            let model = train_onestep(
                &dataset,
                &cfg.onestep,
                cfg.seed,
                cfg.iterations,
                cfg.log_every,
                |row| log.push_str(&format!("{},{}\n", row.iteration, row.loss)),
            )?;
            let path = out_dir.join("wm_onestep.ckpt");
            save_onestep_checkpoint(&model, &path, cfg.seed)?;
            println!("wrote {}", path.display());
        }
        other => return Err(Error::Config(format!("model must be dwm|onestep, got '{other}'"))),
    }
    fs::write(out_dir.join("train_log.csv"), log)?;
    Ok(())
}

pub fn cmd_eval_wm(doc: &serde_json::Value, out_dir: &Path) -> Result<()> {
    let cfg: EvalWmConfig = typed(doc)?;
    let dataset = load_dataset(&cfg.dataset)?;
    let wm = OwnedWm::load(&cfg.model_path)?;
    echo_config(out_dir, &cfg)?;
    let report = wm_prediction_error(
        &wm.as_world_model(),
        &dataset,
        cfg.g_eval,
        cfg.seq_len,
        cfg.n_windows,
        cfg.seed,
    )?;
    write_json(&out_dir.join("pred_error.json"), &report)?;
    write_pred_error_csv(&out_dir.join("pred_error.csv"), std::slice::from_ref(&report))?;
    println!(
        "{}: avg state mse {:.6}, avg reward mse {:.6}",
        report.model_tag, report.avg_state_mse, report.avg_reward_mse
    );
    Ok(())
}

/// Fills in the lambda-return default (on for DWM-IQL) when the config did
/// not mention the key at all.
fn resolve_lambda_default(doc: &serde_json::Value, agent: &mut AgentConfig) {
    let mentioned = doc
        .get("agent")
        .and_then(|a| a.as_object())
        .map(|o| o.contains_key("lambda"))
        .unwrap_or(false);
    if !mentioned && agent.algo == AlgoKind::Iql && agent.wm_source == WmSource::Dwm {
        agent.lambda = Some(0.95);
    }
}

pub fn cmd_train_agent(doc: &serde_json::Value, out_dir: &Path) -> Result<()> {
    let mut cfg: TrainAgentConfig = typed(doc)?;
    resolve_lambda_default(doc, &mut cfg.agent);
    let dataset = load_dataset(&cfg.dataset)?;
    let wm = OwnedWm::load(&cfg.wm_path)?;
    let wm_ref = wm.as_world_model();
    let expected = match wm_ref {
        WorldModel::Dwm(_) => WmSource::Dwm,
        WorldModel::OneStep(_) => WmSource::OneStep,
    };
    if cfg.agent.wm_source != expected {
        return Err(Error::Config(format!(
            "agent.wm_source is {:?} but checkpoint '{}' holds a {} model",
            cfg.agent.wm_source,
            cfg.wm_path.display(),
            wm_ref.tag()
        )));
    }
    echo_config(out_dir, &cfg)?;
    let env = EnvSpec::by_name(&dataset.env_name)?;
    let eval_ctx = if cfg.evaluate {
        Some(EvalContext {
            anchors: compute_anchors(&env, cfg.anchor_episodes, ANCHOR_SEED)?,
            env: env.clone(),
        })
    } else {
        None
    };
    let result = train_offline_agent(&dataset, wm_ref, &cfg.agent, cfg.seed, eval_ctx.as_ref())?;
    let policy_path = out_dir.join("policy.ckpt");
    save_policy_checkpoint(
        &result.state,
        &env.name,
        cfg.agent.algo,
        &dataset.normalizer,
        &policy_path,
        cfg.seed,
    )?;
    write_agent_log_csv(&out_dir.join("train_log.csv"), &result.log)?;
    if let Some(norm) = result.final_norm_return {
        write_json(
            &out_dir.join("final_eval.json"),
            &serde_json::json!({ "normalized_return": norm }),
        )?;
        println!("final normalized return {norm:.4}");
    }
    println!("wrote {}", policy_path.display());
    Ok(())
}

pub fn cmd_eval_agent(doc: &serde_json::Value, out_dir: &Path) -> Result<()> {
    let cfg: EvalAgentConfig = typed(doc)?;
    let policy = load_policy_checkpoint(&cfg.policy_path)?;
    let env = EnvSpec::by_name(&policy.env_name)?;
    echo_config(out_dir, &cfg)?;
    let anchors = compute_anchors(&env, cfg.anchor_episodes, ANCHOR_SEED)?;
    let report = evaluate_policy(&env, |s| policy.act(s), cfg.episodes, cfg.seed, &anchors)?;
    write_json(&out_dir.join("eval_report.json"), &report)?;
    println!(
        "return {:.3} +- {:.3} (normalized {:.4})",
        report.mean, report.std, report.normalized_mean
    );
    Ok(())
}

fn load_sweep_models(specs: &[SweepModel]) -> Result<Vec<(String, OwnedWm)>> {
    specs
        .iter()
        .map(|m| Ok((m.tag.clone(), OwnedWm::load(&m.path)?)))
        .collect()
}

pub fn cmd_sweep_horizon(doc: &serde_json::Value, out_dir: &Path) -> Result<()> {
    let mut cfg: SweepHorizonConfig = typed(doc)?;
    resolve_lambda_default(doc, &mut cfg.agent);
    let dataset = load_dataset(&cfg.dataset)?;
    let owned = load_sweep_models(&cfg.models)?;
    echo_config(out_dir, &cfg)?;
    let models: Vec<(String, WorldModel)> = owned
        .iter()
        .map(|(tag, wm)| (tag.clone(), wm.as_world_model()))
        .collect();
    let env = EnvSpec::by_name(&dataset.env_name)?;
    let anchors = compute_anchors(&env, cfg.anchor_episodes, ANCHOR_SEED)?;
    let rows = horizon_sweep(
        &dataset,
        &models,
        &cfg.agent,
        &cfg.horizons,
        &cfg.seeds,
        &env,
        &anchors,
        Some(&out_dir.join("cells")),
    )?;
    write_sweep_csv(&out_dir.join("horizon_sweep.csv"), &rows)?;
    println!("{}", sweep_markdown(&rows));
    Ok(())
}

pub fn cmd_sweep_rtg(doc: &serde_json::Value, out_dir: &Path) -> Result<()> {
    let mut cfg: SweepRtgConfig = typed(doc)?;
    resolve_lambda_default(doc, &mut cfg.agent);
    let dataset = load_dataset(&cfg.dataset)?;
    let owned = load_sweep_models(&cfg.models)?;
    echo_config(out_dir, &cfg)?;
    let models: Vec<(String, WorldModel)> = owned
        .iter()
        .map(|(tag, wm)| (tag.clone(), wm.as_world_model()))
        .collect();
    let env = EnvSpec::by_name(&dataset.env_name)?;
    let anchors = compute_anchors(&env, cfg.anchor_episodes, ANCHOR_SEED)?;
    let result = rtg_sweep(
        &dataset,
        &models,
        &cfg.agent,
        &cfg.g_evals,
        &cfg.seeds,
        &env,
        &anchors,
        cfg.pred_windows,
        Some(&out_dir.join("cells")),
    )?;
    write_sweep_csv(&out_dir.join("rtg_sweep.csv"), &result.rows)?;
    write_pred_error_csv(&out_dir.join("rtg_pred_error.csv"), &result.pred_errors)?;
    write_json(
        &out_dir.join("rtg_deciles.json"),
        &serde_json::json!({ "deciles": result.rtg_deciles }),
    )?;
    println!("{}", sweep_markdown(&result.rows));
    Ok(())
}

pub fn cmd_report(doc: &serde_json::Value, out_dir: &Path) -> Result<()> {
    let cfg: ReportConfig = typed(doc)?;
    let text = fs::read_to_string(&cfg.sweep_csv)
        .map_err(|_| Error::MissingArtifact(cfg.sweep_csv.clone()))?;
    echo_config(out_dir, &cfg)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(Error::Header(format!("bad sweep row: '{line}'")));
        }
        rows.push(crate::evalharness::SweepRow {
            model: f[0].to_string(),
            horizon: f[1].parse().map_err(|_| Error::Header("bad horizon".into()))?,
            g_eval: f[2].parse().map_err(|_| Error::Header("bad g_eval".into()))?,
            seed: f[3].parse().map_err(|_| Error::Header("bad seed".into()))?,
            norm_return: f[4].parse().map_err(|_| Error::Header("bad return".into()))?,
            raw_mean: f[5].parse().map_err(|_| Error::Header("bad mean".into()))?,
            raw_std: f[6].parse().map_err(|_| Error::Header("bad std".into()))?,
        });
    }
    let md = sweep_markdown(&rows);
    // headline: best median per model
    use std::collections::BTreeMap;
    let mut best: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in &rows {
        best.entry(r.model.clone()).or_default().push(r.norm_return);
    }
    let mut summary = String::from("\n**Per-model medians across all cells:**\n\n");
    for (model, mut vals) in best {
        summary.push_str(&format!("- {model}: {:.4}\n", median(&mut vals)));
    }
    let full = md + &summary;
    fs::write(out_dir.join("report.md"), &full)?;
    println!("{full}");
    Ok(())
}

/// Dispatches a subcommand on a loaded config document.
pub fn run_command(command: &str, doc: &serde_json::Value, out_dir: &Path) -> Result<()> {
    match command {
        "gen-data" => cmd_gen_data(doc, out_dir),
        "train-wm" => cmd_train_wm(doc, out_dir),
        "eval-wm" => cmd_eval_wm(doc, out_dir),
        "train-agent" => cmd_train_agent(doc, out_dir),
        "eval-agent" => cmd_eval_agent(doc, out_dir),
        "sweep-horizon" => cmd_sweep_horizon(doc, out_dir),
        "sweep-rtg" => cmd_sweep_rtg(doc, out_dir),
        "report" => cmd_report(doc, out_dir),
        other => Err(Error::Config(format!("unknown command '{other}'"))),
    }
}
