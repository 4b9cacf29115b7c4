//! Critic target constructions over imagined trajectories: H-step value
//! expansion, the lambda-return variant, uncertainty-penalized rewards, and
//! return-to-go relabeling.
//!
//! Everything here is a pure function of immutable inputs. Bootstrap values
//! enter through a caller-supplied closure over the frozen target networks,
//! so the imagination itself is never influenced by the policy being
//! trained.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    Dwm,
    OneStep,
}

/// An imagined continuation of (s_t, a_t): rewards for steps t..t+n-1 and
/// states for steps t+1..t+n, same length n. Consumers require H <= n.
#[derive(Debug, Clone, PartialEq)]
pub struct ImaginedSeq {
    pub rewards: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub source: ModelSource,
    pub g_eval: f64,
}

impl ImaginedSeq {
    pub fn horizon_available(&self) -> usize {
        self.rewards.len().min(self.states.len())
    }

    fn check_horizon(&self, h: usize) -> Result<()> {
        if h < 1 || h > self.horizon_available() {
            return Err(Error::Config(format!(
                "horizon {h} out of range 1..={}",
                self.horizon_available()
            )));
        }
        if self.rewards.len() != self.states.len() {
            return Err(Error::DimMismatch {
                context: "imagined seq lengths",
                expected: self.rewards.len(),
                got: self.states.len(),
            });
        }
        Ok(())
    }
}

/// H-step value expansion:
/// `sum_{h<H} gamma^h r_{t+h} + gamma^H boot(s_{t+H})`.
///
/// `bootstrap` wraps the frozen target networks (for example
/// `min_i Q_i(s, pi(s))` or `V(s)`); intermediate states are read-only.
pub fn diff_mve_target(
    seq: &ImaginedSeq,
    horizon: usize,
    gamma: f64,
    mut bootstrap: impl FnMut(&[f64]) -> f64,
) -> Result<f64> {
    seq.check_horizon(horizon)?;
    let mut acc = 0.0;
    let mut disc = 1.0;
    for h in 0..horizon {
        acc += disc * seq.rewards[h];
        disc *= gamma;
    }
    Ok(acc + disc * bootstrap(&seq.states[horizon - 1]))
}

/// Same expansion over a one-step model rollout; the formula is shared.
pub fn mve_target(
    seq: &ImaginedSeq,
    horizon: usize,
    gamma: f64,
    bootstrap: impl FnMut(&[f64]) -> f64,
) -> Result<f64> {
    diff_mve_target(seq, horizon, gamma, bootstrap)
}

/// Lambda-return target via the backward recursion
///
///   Q_{t+H} = boot(s_{t+H})
///   Q_{t+h} = r_{t+h} + gamma [(1-lambda) boot(s_{t+h+1}) + lambda Q_{t+h+1}]
///
/// which reduces to the plain expansion at lambda = 1 and to the one-step TD
/// target at lambda = 0.
pub fn lambda_return_target(
    seq: &ImaginedSeq,
    horizon: usize,
    gamma: f64,
    lambda: f64,
    mut bootstrap: impl FnMut(&[f64]) -> f64,
) -> Result<f64> {
    seq.check_horizon(horizon)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda must be in [0,1], got {lambda}")));
    }
    let mut q = bootstrap(&seq.states[horizon - 1]);
    for h in (0..horizon).rev() {
        let mix = if h == horizon - 1 {
            // the h = H-1 step bootstraps purely from s_{t+H}
            q
        } else {
            (1.0 - lambda) * bootstrap(&seq.states[h]) + lambda * q
        };
        q = seq.rewards[h] + gamma * mix;
    }
    Ok(q)
}

/// Uncertainty-penalized rewards from m aligned samples:
///
///   r~_j = mean_i r^i_j - kappa * max_{i,l} (|r^i_j - r^l_j|^2
///                                            + |s^i_{j+1} - s^l_{j+1}|^2)
///
/// Downstream consumers pair the penalized rewards with sequence 1's states.
pub fn pql_rewards(seqs: &[ImaginedSeq], kappa: f64) -> Result<Vec<f64>> {
    if seqs.len() < 2 {
        return Err(Error::Config(format!(
            "pessimistic rewards need m >= 2 samples, got {}",
            seqs.len()
        )));
    }
    if kappa < 0.0 {
        return Err(Error::Config(format!("kappa must be >= 0, got {kappa}")));
    }
    let n = seqs[0].rewards.len();
    if seqs
        .iter()
        .any(|s| s.rewards.len() != n || s.states.len() != n)
    {
        return Err(Error::DimMismatch {
            context: "pql sequences alignment",
            expected: n,
            got: 0,
        });
    }
    let m = seqs.len();
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let mean = seqs.iter().map(|s| s.rewards[j]).sum::<f64>() / m as f64;
        let mut worst = 0.0f64;
        for i in 0..m {
            for l in (i + 1)..m {
                let dr = seqs[i].rewards[j] - seqs[l].rewards[j];
                let ds: f64 = seqs[i].states[j]
                    .iter()
                    .zip(seqs[l].states[j].iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                let d = dr * dr + ds;
                if d > worst {
                    worst = d;
                }
            }
        }
        out.push(mean - kappa * worst);
    }
    Ok(out)
}

/// Return-to-go relabeling: `g~_t = r_t + gamma * max(g_{t+1}, v_next)`,
/// lifting labels that a pessimistic value estimate can improve.
pub fn rtg_relabel(r_t: f64, g_next: f64, v_next: f64, gamma: f64) -> f64 {
    r_t + gamma * g_next.max(v_next)
}
