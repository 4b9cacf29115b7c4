//! The noise predictor: an MLP trunk over the noised window concatenated
//! with a projected sinusoidal embedding of the diffusion step and an
//! embedded (return, null-flag) conditioning pair.
//!
//! Null conditioning is the input channel (g = 0, flag = 1); a flag channel
//! rather than a magic return value keeps legitimate g = 0 distinct.

use crate::substrate::{Activation, MlpArch, MlpCache, OutputActivation};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Sinusoidal position encoding of the diffusion step.
pub fn sinusoidal_embedding(k: usize, dim: usize) -> Vec<f64> {
    assert!(dim >= 2 && dim % 2 == 0);
    let mut pe = Vec::with_capacity(dim);
    let half = dim / 2;
    for i in 0..half {
        let freq = 10000f64.powf(-(2.0 * i as f64) / dim as f64);
        let angle = k as f64 * freq;
        pe.push(angle.sin());
        pe.push(angle.cos());
    }
    pe
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsNet {
    pub data_dim: usize,
    pub pe_dim: usize,
    trunk: MlpArch,
    k_proj: MlpArch,
    rtg_proj: MlpArch,
}

impl EpsNet {
    pub fn new(data_dim: usize, hidden: &[usize], pe_dim: usize, embed_dim: usize) -> Self {
        let mut trunk_sizes = vec![data_dim + 2 * embed_dim];
        trunk_sizes.extend_from_slice(hidden);
        trunk_sizes.push(data_dim);
        Self {
            data_dim,
            pe_dim,
            trunk: MlpArch::new(trunk_sizes, Activation::Relu, OutputActivation::Linear),
            // two-layer projection of the step encoding
            k_proj: MlpArch::new(
                vec![pe_dim, 64, embed_dim],
                Activation::Relu,
                OutputActivation::Linear,
            ),
            // three-layer embedding of (return, null flag)
            rtg_proj: MlpArch::new(
                vec![2, 64, 64, embed_dim],
                Activation::Relu,
                OutputActivation::Linear,
            ),
        }
    }

    pub fn param_count(&self) -> usize {
        self.trunk.param_count() + self.k_proj.param_count() + self.rtg_proj.param_count()
    }

    fn trunk_range(&self) -> std::ops::Range<usize> {
        0..self.trunk.param_count()
    }

    fn k_range(&self) -> std::ops::Range<usize> {
        let start = self.trunk.param_count();
        start..start + self.k_proj.param_count()
    }

    fn rtg_range(&self) -> std::ops::Range<usize> {
        let start = self.trunk.param_count() + self.k_proj.param_count();
        start..start + self.rtg_proj.param_count()
    }

    /// Flat index range of the first rtg-projection layer's weights that
    /// multiply the null-flag channel. Used by the classifier-free wiring
    /// gradient probe.
    pub fn flag_weight_indices(&self) -> Vec<usize> {
        let base = self.rtg_range().start;
        let first_out = self.rtg_proj.sizes[1];
        (0..first_out).map(|i| base + i * 2 + 1).collect()
    }

    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = self.trunk.init_params(rng);
        p.extend(self.k_proj.init_params(rng));
        p.extend(self.rtg_proj.init_params(rng));
        p
    }

    pub fn forward(&self, params: &[f64], x: &[f64], k: usize, g: f64, null_flag: f64) -> Vec<f64> {
        debug_assert_eq!(params.len(), self.param_count());
        debug_assert_eq!(x.len(), self.data_dim);
        let pe = sinusoidal_embedding(k, self.pe_dim);
        let ke = self.k_proj.forward(&params[self.k_range()], &pe);
        let ge = self.rtg_proj.forward(&params[self.rtg_range()], &[g, null_flag]);
        let mut input = Vec::with_capacity(self.trunk.input_dim());
        input.extend_from_slice(x);
        input.extend_from_slice(&ke);
        input.extend_from_slice(&ge);
        self.trunk.forward(&params[self.trunk_range()], &input)
    }

    pub fn forward_cached(
        &self,
        params: &[f64],
        x: &[f64],
        k: usize,
        g: f64,
        null_flag: f64,
    ) -> (Vec<f64>, EpsCache) {
        let pe = sinusoidal_embedding(k, self.pe_dim);
        let (ke, k_cache) = self.k_proj.forward_cached(&params[self.k_range()], &pe);
        let (ge, rtg_cache) = self
            .rtg_proj
            .forward_cached(&params[self.rtg_range()], &[g, null_flag]);
        let mut input = Vec::with_capacity(self.trunk.input_dim());
        input.extend_from_slice(x);
        input.extend_from_slice(&ke);
        input.extend_from_slice(&ge);
        let (out, trunk_cache) = self.trunk.forward_cached(&params[self.trunk_range()], &input);
        (
            out,
            EpsCache {
                trunk: trunk_cache,
                k_proj: k_cache,
                rtg_proj: rtg_cache,
            },
        )
    }

    /// Accumulates dL/dparams for one sample given dL/doutput.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &EpsCache,
        grad_out: &[f64],
        grad_params: &mut [f64],
    ) {
        let embed = self.k_proj.output_dim();
        let trunk_range = self.trunk_range();
        let grad_input = self.trunk.backward(
            &params[trunk_range.clone()],
            &cache.trunk,
            grad_out,
            &mut grad_params[trunk_range],
        );
        let k_slice = &grad_input[self.data_dim..self.data_dim + embed];
        let g_slice = &grad_input[self.data_dim + embed..];
        let k_range = self.k_range();
        self.k_proj.backward(
            &params[k_range.clone()],
            &cache.k_proj,
            k_slice,
            &mut grad_params[k_range],
        );
        let rtg_range = self.rtg_range();
        self.rtg_proj.backward(
            &params[rtg_range.clone()],
            &cache.rtg_proj,
            g_slice,
            &mut grad_params[rtg_range],
        );
    }
}

#[derive(Debug, Clone)]
pub struct EpsCache {
    trunk: MlpCache,
    k_proj: MlpCache,
    rtg_proj: MlpCache,
}
