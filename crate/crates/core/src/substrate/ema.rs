//! Exponential moving average of a parameter vector.
//!
//! `shadow += rate * (live - shadow)`, i.e. `shadow = (1-rate)*shadow +
//! rate*live`. World-model EMA uses rate 0.005 every 10 iterations; target
//! networks use rate 0.005 at their own cadence.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaTracker {
    pub shadow: Vec<f64>,
    pub rate: f64,
}

impl EmaTracker {
    pub fn new(initial: Vec<f64>, rate: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::Config(format!("ema rate must be in [0,1], got {rate}")));
        }
        Ok(Self {
            shadow: initial,
            rate,
        })
    }

    pub fn update(&mut self, live: &[f64]) -> Result<()> {
        ema_update(self, live)
    }
}

pub fn ema_update(tracker: &mut EmaTracker, live: &[f64]) -> Result<()> {
    if live.len() != tracker.shadow.len() {
        return Err(Error::DimMismatch {
            context: "ema_update",
            expected: tracker.shadow.len(),
            got: live.len(),
        });
    }
    if !(0.0..=1.0).contains(&tracker.rate) {
        return Err(Error::Config(format!(
            "ema rate must be in [0,1], got {}",
            tracker.rate
        )));
    }
    let w = tracker.rate;
    for (s, &l) in tracker.shadow.iter_mut().zip(live.iter()) {
        *s += w * (l - *s);
    }
    Ok(())
}
