use serde::{Deserialize, Serialize};

use super::{mean, sample_sd};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierBounds {
    pub low: f64,
    pub high: f64,
}

impl OutlierBounds {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.low && v <= self.high
    }
}

/// `[mean - 3 sd, mean + 3 sd]` with the sample standard deviation.
pub fn outlier_bounds(values: &[f64]) -> Result<OutlierBounds> {
    if values.len() < 2 {
        return Err(Error::Stats(format!(
            "outlier bounds need at least 2 values, got {}",
            values.len()
        )));
    }
    let m = mean(values);
    let s = sample_sd(values);
    Ok(OutlierBounds {
        low: m - 3.0 * s,
        high: m + 3.0 * s,
    })
}

/// Which scores feed the mean and standard deviation of the 3σ rule.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutlierPooling {
    /// Both sides of every pair together.
    #[default]
    Combined,
    /// Each side against its own statistics.
    PerSet,
}

/// Indices of pairs to drop: a pair goes if either member falls outside
/// the bounds.
pub fn outlier_pairs(x: &[f64], y: &[f64], pooling: OutlierPooling) -> Result<Vec<usize>> {
    if x.len() != y.len() {
        return Err(Error::Stats("paired samples differ in length".into()));
    }
    let (bx, by) = match pooling {
        OutlierPooling::Combined => {
            let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
            let b = outlier_bounds(&pooled)?;
            (b, b)
        }
        OutlierPooling::PerSet => (outlier_bounds(x)?, outlier_bounds(y)?),
    };
    Ok((0..x.len())
        .filter(|&i| !bx.contains(x[i]) || !by.contains(y[i]))
        .collect())
}
