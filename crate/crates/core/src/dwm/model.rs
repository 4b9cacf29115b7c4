//! Model state, guided noise-prediction training, and checkpointing.

use super::epsnet::EpsNet;
use super::schedule::{cosine_schedule, forward_noise, NoiseSchedule};
use crate::dataset::{Normalizer, OfflineDataset, SubtrajWindow, WindowLayout};
use crate::error::{Error, Result};
use crate::rngutil::{rng_from, standard_normal_vec};
use crate::substrate::{adam_step, read_checkpoint, write_checkpoint, AdamParams, AdamState, EmaTracker};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DwmConfig {
    /// Window length T (states/rewards modeled jointly).
    pub seq_len: usize,
    /// Diffusion steps K.
    pub k_steps: usize,
    /// Probability of training with the null condition.
    pub p_uncond: f64,
    /// Guidance weight omega at sampling time.
    pub guidance: f64,
    /// Low-temperature sampling factor alpha on the posterior noise.
    pub temperature: f64,
    /// Inference step ratio; N = ceil(r * K) reverse steps.
    pub infer_ratio: f64,
    pub gamma: f64,
    pub hidden: Vec<usize>,
    pub pe_dim: usize,
    pub embed_dim: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub ema_rate: f64,
    pub ema_every: u64,
    /// Clamp on the reconstructed x0 during sampling (z-scored units);
    /// <= 0 disables.
    pub x0_clip: f64,
}

impl Default for DwmConfig {
    fn default() -> Self {
        Self {
            seq_len: 8,
            k_steps: 5,
            p_uncond: 0.25,
            guidance: 1.0,
            temperature: 0.5,
            infer_ratio: 0.5,
            gamma: 0.99,
            hidden: vec![192, 192],
            pe_dim: 16,
            embed_dim: 16,
            lr: 1e-3,
            batch_size: 64,
            ema_rate: 0.005,
            ema_every: 10,
            x0_clip: 10.0,
        }
    }
}

impl DwmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seq_len < 2 {
            return Err(Error::Config("seq_len must be >= 2".into()));
        }
        if self.k_steps < 1 {
            return Err(Error::Config("k_steps must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.p_uncond) {
            return Err(Error::Config("p_uncond must be in [0,1]".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(Error::Config("temperature must be >= 0".into()));
        }
        if !(self.infer_ratio > 0.0 && self.infer_ratio <= 1.0) {
            return Err(Error::Config("infer_ratio must be in (0,1]".into()));
        }
        Ok(())
    }
}

/// Trained (or training) diffusion world model. Sampling uses the EMA
/// parameters; a frozen model is safe to share across threads.
#[derive(Debug, Clone)]
pub struct DiffusionWorldModel {
    pub net: EpsNet,
    pub params: Vec<f64>,
    pub ema: EmaTracker,
    pub config: DwmConfig,
    pub schedule: NoiseSchedule,
    pub normalizer: Normalizer,
    pub layout: WindowLayout,
}

/// One training sample after the noising draws are fixed.
#[derive(Debug, Clone)]
pub struct NoisedItem {
    pub x_k: Vec<f64>,
    pub k: usize,
    pub g: f64,
    pub null_flag: f64,
    pub eps: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct NoisedBatch {
    pub items: Vec<NoisedItem>,
}

impl DiffusionWorldModel {
    pub fn new<R: Rng>(
        layout: WindowLayout,
        config: DwmConfig,
        normalizer: Normalizer,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if layout.seq_len != config.seq_len {
            return Err(Error::DimMismatch {
                context: "dwm layout seq_len",
                expected: config.seq_len,
                got: layout.seq_len,
            });
        }
        let net = EpsNet::new(layout.dim(), &config.hidden, config.pe_dim, config.embed_dim);
        let params = net.init_params(rng);
        let ema = EmaTracker::new(params.clone(), config.ema_rate)?;
        let schedule = cosine_schedule(config.k_steps);
        Ok(Self {
            net,
            params,
            ema,
            config,
            schedule,
            normalizer,
            layout,
        })
    }

    /// Draws (k, eps, null flag) for each window. Draw order per item is
    /// fixed: k, then eps, then the Bernoulli flag. The conditioned
    /// (s_t, a_t) prefix is kept clean in the noised input, matching the
    /// inpainted reverse process, so the predictor learns to read it.
    pub fn prepare_batch<R: Rng>(&self, windows: &[SubtrajWindow], rng: &mut R) -> NoisedBatch {
        let cond = self.layout.conditioned_dim();
        let items = windows
            .iter()
            .map(|w| {
                let k = rng.gen_range(1..=self.config.k_steps);
                let eps = standard_normal_vec(rng, w.x0.len());
                let unconditioned = rng.gen::<f64>() < self.config.p_uncond;
                let mut x_k = forward_noise(&w.x0, k, &eps, &self.schedule).expect("dims checked");
                x_k[..cond].copy_from_slice(&w.x0[..cond]);
                NoisedItem {
                    x_k,
                    k,
                    g: if unconditioned { 0.0 } else { w.rtg },
                    null_flag: if unconditioned { 1.0 } else { 0.0 },
                    eps,
                }
            })
            .collect();
        NoisedBatch { items }
    }

    /// Mean squared noise-prediction error over the batch and its gradient
    /// with respect to `params` (accumulated into `grad`).
    pub fn loss_and_grad(&self, params: &[f64], batch: &NoisedBatch, grad: &mut [f64]) -> f64 {
        let scale = 1.0 / batch.items.len() as f64;
        let mut loss = 0.0;
        for item in &batch.items {
            let (pred, cache) =
                self.net
                    .forward_cached(params, &item.x_k, item.k, item.g, item.null_flag);
            let mut gout = Vec::with_capacity(pred.len());
            for (p, e) in pred.iter().zip(item.eps.iter()) {
                let d = p - e;
                loss += d * d * scale;
                gout.push(2.0 * d * scale);
            }
            self.net.backward(params, &cache, &gout, grad);
        }
        loss
    }

    /// One optimization step on a batch of windows; returns the loss.
    /// The EMA shadow refreshes every `ema_every` steps.
    pub fn training_step<R: Rng>(
        &mut self,
        windows: &[SubtrajWindow],
        adam: &mut AdamState,
        rng: &mut R,
    ) -> Result<f64> {
        let batch = self.prepare_batch(windows, rng);
        let mut grad = vec![0.0; self.params.len()];
        let loss = self.loss_and_grad(&self.params, &batch, &mut grad);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "diffusion loss at step {} (batch of {})",
                adam.step,
                windows.len()
            )));
        }
        adam_step(adam, &mut self.params, &grad)?;
        if adam.step % self.config.ema_every == 0 {
            self.ema.update(&self.params)?;
        }
        Ok(loss)
    }

    /// Parameters used for sampling: the EMA shadow.
    pub fn sampling_params(&self) -> &[f64] {
        &self.ema.shadow
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainLogRow {
    pub iteration: usize,
    pub loss: f64,
}

/// Stage-one training loop: seeded, single-threaded, deterministic.
pub fn train_dwm(
    dataset: &OfflineDataset,
    config: &DwmConfig,
    seed: u64,
    iterations: usize,
    log_every: usize,
    mut on_log: impl FnMut(&TrainLogRow),
) -> Result<DiffusionWorldModel> {
    let mut init_rng = rng_from(seed, 0x01);
    let mut model = DiffusionWorldModel::new(
        dataset.layout(config.seq_len),
        config.clone(),
        dataset.normalizer.clone(),
        &mut init_rng,
    )?;
    let mut adam = AdamState::new(model.params.len(), AdamParams::with_lr(config.lr));
    let mut rng = rng_from(seed, 0x02);
    for it in 1..=iterations {
        let windows = dataset.sample_windows(config.seq_len, config.batch_size, &mut rng)?;
        let loss = model.training_step(&windows, &mut adam, &mut rng)?;
        if it % log_every.max(1) == 0 || it == iterations {
            on_log(&TrainLogRow {
                iteration: it,
                loss,
            });
        }
    }
    Ok(model)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DwmMeta {
    config: DwmConfig,
    layout: WindowLayout,
    normalizer: Normalizer,
}

pub fn save_dwm_checkpoint(model: &DiffusionWorldModel, path: &Path, seed: u64) -> Result<()> {
    let meta = serde_json::to_value(DwmMeta {
        config: model.config.clone(),
        layout: model.layout,
        normalizer: model.normalizer.clone(),
    })
    .map_err(|e| Error::Header(e.to_string()))?;
    write_checkpoint(
        path,
        "dwm",
        seed,
        meta,
        &[("params", &model.params), ("ema", &model.ema.shadow)],
    )
}

pub fn load_dwm_checkpoint(path: &Path) -> Result<DiffusionWorldModel> {
    let ck = read_checkpoint(path)?;
    if ck.header.kind != "dwm" {
        return Err(Error::Header(format!(
            "expected dwm checkpoint, found '{}'",
            ck.header.kind
        )));
    }
    let meta: DwmMeta = serde_json::from_value(ck.header.meta.clone())
        .map_err(|e| Error::Header(format!("dwm meta: {e}")))?;
    let net = EpsNet::new(
        meta.layout.dim(),
        &meta.config.hidden,
        meta.config.pe_dim,
        meta.config.embed_dim,
    );
    let params = ck.section("params")?.to_vec();
    let ema_shadow = ck.section("ema")?.to_vec();
    if params.len() != net.param_count() {
        return Err(Error::DimMismatch {
            context: "dwm checkpoint params",
            expected: net.param_count(),
            got: params.len(),
        });
    }
    let schedule = cosine_schedule(meta.config.k_steps);
    Ok(DiffusionWorldModel {
        net,
        params,
        ema: EmaTracker::new(ema_shadow, meta.config.ema_rate)?,
        config: meta.config,
        schedule,
        normalizer: meta.normalizer,
        layout: meta.layout,
    })
}
