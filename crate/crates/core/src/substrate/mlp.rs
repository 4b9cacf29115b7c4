//! Fully-connected networks over flat parameter vectors.
//!
//! Parameters for layer `l` are stored row-major as `W_l` (out x in) followed
//! by `b_l`, concatenated over layers. `backward` accumulates parameter
//! gradients into a caller-owned buffer and returns the input gradient, which
//! actor updates need to push value gradients through the policy.

use crate::error::{Error, Result};
use crate::rngutil::standard_normal;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Linear,
    Tanh,
    /// softplus(x) + 1e-8; used by variance heads that must stay strictly
    /// positive even when the exponential underflows.
    Softplus,
}

pub(crate) const SOFTPLUS_FLOOR: f64 = 1e-8;

/// Network shape: `sizes = [input, hidden.., output]` plus activation tags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArch {
    pub sizes: Vec<usize>,
    pub hidden: Activation,
    pub output: OutputActivation,
}

impl MlpArch {
    pub fn new(sizes: Vec<usize>, hidden: Activation, output: OutputActivation) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        assert!(sizes.iter().all(|&s| s >= 1));
        Self {
            sizes,
            hidden,
            output,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// He-style init for ReLU, Xavier-style otherwise; biases zero.
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut params = Vec::with_capacity(self.param_count());
        for w in self.sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = match self.hidden {
                Activation::Relu => (2.0 / fan_in as f64).sqrt(),
                Activation::Tanh => (1.0 / fan_in as f64).sqrt(),
            };
            for _ in 0..fan_in * fan_out {
                params.push(standard_normal(rng) * std);
            }
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        params
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimMismatch {
                context: "mlp params",
                expected: self.param_count(),
                got: params.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, params: &[f64], input: &[f64]) -> Vec<f64> {
        let (out, _) = self.forward_impl(params, input, false);
        out
    }

    pub fn forward_cached(&self, params: &[f64], input: &[f64]) -> (Vec<f64>, MlpCache) {
        let (out, cache) = self.forward_impl(params, input, true);
        (out, cache.expect("cache requested"))
    }

    fn forward_impl(
        &self,
        params: &[f64],
        input: &[f64],
        want_cache: bool,
    ) -> (Vec<f64>, Option<MlpCache>) {
        debug_assert_eq!(params.len(), self.param_count());
        debug_assert_eq!(input.len(), self.input_dim());
        let n_layers = self.sizes.len() - 1;
        let mut acts: Vec<Vec<f64>> = if want_cache {
            Vec::with_capacity(n_layers + 1)
        } else {
            Vec::new()
        };
        let mut pre: Vec<Vec<f64>> = if want_cache {
            Vec::with_capacity(n_layers)
        } else {
            Vec::new()
        };
        if want_cache {
            acts.push(input.to_vec());
        }
        let mut cur = input.to_vec();
        let mut offset = 0usize;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &params[offset..offset + n_in * n_out];
            let biases = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let mut z = vec![0.0; n_out];
            for (i, zi) in z.iter_mut().enumerate() {
                let row = &weights[i * n_in..(i + 1) * n_in];
                let mut acc = biases[i];
                for (wij, xj) in row.iter().zip(cur.iter()) {
                    acc += wij * xj;
                }
                *zi = acc;
            }
            if want_cache {
                pre.push(z.clone());
            }
            let last = l == n_layers - 1;
            for v in z.iter_mut() {
                *v = if last {
                    apply_out(self.output, *v)
                } else {
                    apply_hidden(self.hidden, *v)
                };
            }
            if want_cache {
                acts.push(z.clone());
            }
            cur = z;
        }
        (cur, want_cache.then_some(MlpCache { acts, pre }))
    }

    /// Backpropagates `grad_out` (dL/doutput), accumulating dL/dparams into
    /// `grad_params` and returning dL/dinput.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &MlpCache,
        grad_out: &[f64],
        grad_params: &mut [f64],
    ) -> Vec<f64> {
        debug_assert_eq!(grad_params.len(), self.param_count());
        debug_assert_eq!(grad_out.len(), self.output_dim());
        let n_layers = self.sizes.len() - 1;
        // delta for the output layer
        let mut delta: Vec<f64> = grad_out
            .iter()
            .zip(cache.pre[n_layers - 1].iter())
            .map(|(g, &z)| g * out_deriv(self.output, z))
            .collect();
        // walk layers backwards; offsets recomputed per layer
        let mut layer_offsets = Vec::with_capacity(n_layers);
        let mut off = 0usize;
        for w in self.sizes.windows(2) {
            layer_offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        for l in (0..n_layers).rev() {
            let n_in = self.sizes[l];
            let n_out = self.sizes[l + 1];
            let off = layer_offsets[l];
            let inputs = &cache.acts[l];
            {
                let gw = &mut grad_params[off..off + n_in * n_out + n_out];
                for i in 0..n_out {
                    let d = delta[i];
                    let row = &mut gw[i * n_in..(i + 1) * n_in];
                    for (g, x) in row.iter_mut().zip(inputs.iter()) {
                        *g += d * x;
                    }
                }
                for i in 0..n_out {
                    gw[n_in * n_out + i] += delta[i];
                }
            }
            // propagate to previous layer
            let weights = &params[off..off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for (i, &d) in delta.iter().enumerate() {
                let row = &weights[i * n_in..(i + 1) * n_in];
                for (p, wij) in prev.iter_mut().zip(row.iter()) {
                    *p += wij * d;
                }
            }
            if l > 0 {
                for (p, &z) in prev.iter_mut().zip(cache.pre[l - 1].iter()) {
                    *p *= hidden_deriv(self.hidden, z);
                }
            }
            delta = prev;
        }
        delta
    }
}

fn apply_hidden(act: Activation, x: f64) -> f64 {
    match act {
        Activation::Relu => x.max(0.0),
        Activation::Tanh => x.tanh(),
    }
}

fn hidden_deriv(act: Activation, z: f64) -> f64 {
    match act {
        Activation::Relu => {
            if z > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Tanh => {
            let t = z.tanh();
            1.0 - t * t
        }
    }
}

fn apply_out(act: OutputActivation, x: f64) -> f64 {
    match act {
        OutputActivation::Linear => x,
        OutputActivation::Tanh => x.tanh(),
        OutputActivation::Softplus => softplus(x) + SOFTPLUS_FLOOR,
    }
}

fn out_deriv(act: OutputActivation, z: f64) -> f64 {
    match act {
        OutputActivation::Linear => 1.0,
        OutputActivation::Tanh => {
            let t = z.tanh();
            1.0 - t * t
        }
        OutputActivation::Softplus => sigmoid(z),
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Forward-pass cache: `acts[0]` is the input, `acts[l+1]` the activations of
/// layer `l`; `pre[l]` its pre-activations.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub acts: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
}

/// A network shape together with its owned flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Approximator {
    pub arch: MlpArch,
    pub params: Vec<f64>,
}

impl Approximator {
    pub fn init<R: Rng>(arch: MlpArch, rng: &mut R) -> Self {
        let params = arch.init_params(rng);
        Self { arch, params }
    }

    pub fn from_params(arch: MlpArch, params: Vec<f64>) -> Result<Self> {
        if params.len() != arch.param_count() {
            return Err(Error::DimMismatch {
                context: "approximator params",
                expected: arch.param_count(),
                got: params.len(),
            });
        }
        Ok(Self { arch, params })
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.arch.forward(&self.params, input)
    }

    pub fn forward_cached(&self, input: &[f64]) -> (Vec<f64>, MlpCache) {
        self.arch.forward_cached(&self.params, input)
    }

    pub fn backward(&self, cache: &MlpCache, grad_out: &[f64], grad_params: &mut [f64]) -> Vec<f64> {
        self.arch.backward(&self.params, cache, grad_out, grad_params)
    }

    pub fn check(&self) -> Result<()> {
        self.arch.check_params(&self.params)
    }
}
