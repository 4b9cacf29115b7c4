//! Cosine noise schedule and the forward (noising) process.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Diffusion schedule over K steps. `alpha_bar` is indexed 0..=K with
/// `alpha_bar(0) = 1`; `beta` and `sigma` are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub k_steps: usize,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
    posterior_std: Vec<f64>,
}

impl NoiseSchedule {
    pub fn beta(&self, k: usize) -> f64 {
        self.betas[k - 1]
    }

    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bars[k]
    }

    /// Posterior std sigma_k with sigma_k^2 = beta_k (1 - abar_{k-1}) / (1 - abar_k).
    pub fn sigma(&self, k: usize) -> f64 {
        self.posterior_std[k - 1]
    }
}

const COSINE_OFFSET: f64 = 0.008;
const BETA_CLIP: f64 = 0.999;

/// Cosine schedule: abar_k tracks f(k)/f(0) with
/// f(k) = cos^2(((k/K + s)/(1 + s)) * pi/2), s = 0.008. Betas are
/// beta_k = 1 - abar_k / abar_{k-1} clipped to <= 0.999, and the stored
/// abar chain is re-derived from the clipped betas so that forward noising
/// and the posterior stay mutually consistent (the unclipped closed form
/// collapses to ~1e-33 at k = K, which makes the x0 inversion singular).
pub fn cosine_schedule(k_steps: usize) -> NoiseSchedule {
    assert!(k_steps >= 1);
    let f = |k: f64| {
        let x = ((k / k_steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET)) * PI / 2.0;
        x.cos().powi(2)
    };
    let f0 = f(0.0);
    let mut betas = Vec::with_capacity(k_steps);
    let mut alpha_bars = Vec::with_capacity(k_steps + 1);
    alpha_bars.push(1.0);
    let mut prev_closed = 1.0;
    let mut abar = 1.0;
    for k in 1..=k_steps {
        let closed = f(k as f64) / f0;
        let beta = (1.0 - closed / prev_closed).min(BETA_CLIP);
        prev_closed = closed;
        abar *= 1.0 - beta;
        betas.push(beta);
        alpha_bars.push(abar);
    }
    let posterior_std = (1..=k_steps)
        .map(|k| {
            let var = betas[k - 1] * (1.0 - alpha_bars[k - 1]) / (1.0 - alpha_bars[k]);
            var.max(0.0).sqrt()
        })
        .collect();
    NoiseSchedule {
        k_steps,
        betas,
        alpha_bars,
        posterior_std,
    }
}

/// x^k = sqrt(abar_k) x0 + sqrt(1 - abar_k) eps.
pub fn forward_noise(
    x0: &[f64],
    k: usize,
    eps: &[f64],
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    if eps.len() != x0.len() {
        return Err(Error::DimMismatch {
            context: "forward_noise",
            expected: x0.len(),
            got: eps.len(),
        });
    }
    assert!(k >= 1 && k <= schedule.k_steps, "k out of range");
    let ab = schedule.alpha_bar(k);
    let (s0, s1) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0
        .iter()
        .zip(eps.iter())
        .map(|(x, e)| s0 * x + s1 * e)
        .collect())
}
