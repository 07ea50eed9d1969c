//! Online estimation of the overlap-depth distribution.
//!
//! With decay `gamma < 1` the estimator keeps an exponentially weighted
//! histogram: after `t` observations the sample at time `s` carries weight
//! proportional to `gamma^(t-s)`, so the snapshot tracks drifting overlap
//! laws at the cost of extra variance. `gamma = 1` is the plain empirical
//! histogram. Decay is applied per observation, not per wall-clock tick.
//!
//! Observing is O(1): instead of sweeping all weights by `gamma` each step,
//! new samples are added at an exponentially growing scale and the raw
//! weights are re-based whenever the scale risks overflow.

use crate::distribution::{compensated_total, DistributionError, OverlapHistogram};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("depth {depth} out of range 1..={n}")]
    DepthOutOfRange { depth: usize, n: usize },
    #[error("no samples observed yet")]
    NoSamples,
    #[error("decay must lie in (0, 1) for this quantity, got {0}")]
    BadDecay(f64),
    #[error("invalid estimator state: {0}")]
    Invalid(String),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

/// Re-base the raw weights once the incremental scale passes this bound.
const RESCALE_THRESHOLD: f64 = 1e100;

/// Decayed per-depth weights over `1..=N`.
///
/// A single writer mutates the estimator; snapshots are plain immutable
/// histograms safe to share across threads.
#[derive(Debug, Clone)]
pub struct EstimatorState {
    n_positions: usize,
    decay: f64,
    /// Raw weights; logical weight is `raw * inv_scale` where `inv_scale`
    /// shrinks by `gamma` per observation.
    raw: Vec<f64>,
    /// Weight a new sample is added with; grows by `1/gamma` per step.
    scale: f64,
    sample_count: u64,
    /// Observations that arrived above `N` and were clamped down to it.
    clamped: u64,
}

/// Serialized form: `{"n", "gamma", "weights", "count"}`. Weights are the
/// logical (de-scaled) values so files are independent of the internal
/// re-basing state.
#[derive(Serialize, Deserialize)]
struct EstimatorFile {
    n: usize,
    gamma: f64,
    weights: Vec<f64>,
    count: u64,
}

impl EstimatorState {
    /// Creates an empty estimator over depths `1..=n_positions` with decay
    /// `gamma` in `(0, 1]`; `gamma = 1` keeps every sample at full weight.
    pub fn new(n_positions: usize, decay: f64) -> Result<Self, EstimatorError> {
        if n_positions == 0 {
            return Err(EstimatorError::Invalid("need at least one depth".into()));
        }
        if !(decay > 0.0 && decay <= 1.0) {
            return Err(EstimatorError::BadDecay(decay));
        }
        Ok(Self {
            n_positions,
            decay,
            raw: vec![0.0; n_positions],
            scale: 1.0,
            sample_count: 0,
            clamped: 0,
        })
    }

    pub fn n_positions(&self) -> usize {
        self.n_positions
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn sample_count(&self) -> u64 {
        self.sample_count
    }

    /// Number of observations clamped down from beyond `N`.
    pub fn clamped_count(&self) -> u64 {
        self.clamped
    }

    /// Total logical weight: `(1 - gamma^t) / (1 - gamma)` for `gamma < 1`,
    /// `t` for the plain empirical histogram.
    pub fn weight_total(&self) -> f64 {
        let t = self.sample_count as f64;
        if self.decay < 1.0 {
            (1.0 - self.decay.powf(t)) / (1.0 - self.decay)
        } else {
            t
        }
    }

    /// Logical per-depth weights (decayed, unnormalized).
    pub fn weights(&self) -> Vec<f64> {
        self.raw.iter().map(|&w| w / self.scale).collect()
    }

    /// Records one overlap observation. All prior weights decay by `gamma`
    /// and the observed depth gains weight 1, in O(1) amortized time.
    pub fn observe(&mut self, depth: usize) -> Result<(), EstimatorError> {
        if depth < 1 || depth > self.n_positions {
            return Err(EstimatorError::DepthOutOfRange {
                depth,
                n: self.n_positions,
            });
        }
        self.scale /= self.decay;
        if self.scale > RESCALE_THRESHOLD {
            for w in &mut self.raw {
                *w /= self.scale;
            }
            self.scale = 1.0;
        }
        self.raw[depth - 1] += self.scale;
        self.sample_count += 1;
        Ok(())
    }

    /// Like [`observe`](Self::observe), but depths beyond `N` (overlap
    /// longer than the tracked prefix) are clamped to `N` and counted for
    /// diagnostics instead of rejected. Depth 0 is still an error.
    pub fn observe_clamped(&mut self, depth: usize) -> Result<(), EstimatorError> {
        if depth > self.n_positions {
            self.clamped += 1;
            self.observe(self.n_positions)
        } else {
            self.observe(depth)
        }
    }

    /// Normalized histogram of the current weights.
    pub fn snapshot(&self) -> Result<OverlapHistogram, EstimatorError> {
        if self.sample_count == 0 {
            return Err(EstimatorError::NoSamples);
        }
        Ok(OverlapHistogram::from_counts(&self.weights())?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&EstimatorFile {
            n: self.n_positions,
            gamma: self.decay,
            weights: self.weights(),
            count: self.sample_count,
        })
        .expect("estimator serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, EstimatorError> {
        let file: EstimatorFile = serde_json::from_str(s)
            .map_err(|e| EstimatorError::Invalid(format!("invalid estimator JSON: {e}")))?;
        if file.weights.len() != file.n {
            return Err(EstimatorError::Invalid(format!(
                "expected {} weights, found {}",
                file.n,
                file.weights.len()
            )));
        }
        if file.weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(EstimatorError::Invalid(
                "weights must be finite and non-negative".into(),
            ));
        }
        let mut state = Self::new(file.n, file.gamma)?;
        state.raw = file.weights;
        state.sample_count = file.count;
        Ok(state)
    }
}

/// Variance part of the tracking bound for the exponentially weighted
/// histogram: `sqrt(N (1-gamma)/(1+gamma) (1+gamma^t)/(1-gamma^t))`.
///
/// Strictly decreasing in `t`; for large `t` it settles at
/// `sqrt(N (1-gamma)/(1+gamma))`.
pub fn variance_term(decay: f64, sample_count: u64, n_positions: usize) -> Result<f64, EstimatorError> {
    if !(decay > 0.0 && decay < 1.0) {
        return Err(EstimatorError::BadDecay(decay));
    }
    assert!(sample_count >= 1, "variance term needs at least one sample");
    let g_t = decay.powf(sample_count as f64);
    Ok((n_positions as f64 * (1.0 - decay) / (1.0 + decay) * (1.0 + g_t) / (1.0 - g_t)).sqrt())
}

/// Worst-case bias of the exponentially weighted histogram under bounded
/// per-step drift `delta`: `delta * gamma / (1 - gamma)`.
pub fn bias_bound(drift_per_step: f64, decay: f64) -> Result<f64, EstimatorError> {
    if !(decay > 0.0 && decay < 1.0) {
        return Err(EstimatorError::BadDecay(decay));
    }
    assert!(drift_per_step >= 0.0, "drift must be non-negative");
    Ok(drift_per_step * decay / (1.0 - decay))
}

/// Exact bias of the weighted histogram at time `t` (1-based) for a known
/// distribution path: `sum_s w_{t,s} ||p_s - p_t||_1` with
/// `w_{t,s} = (1-gamma) gamma^(t-s) / (1-gamma^t)`.
///
/// The closed-form [`bias_bound`] is the large-`t` simplification of this
/// sum under bounded drift; tests against a known path should prefer the
/// exact value.
pub fn weighted_bias(decay: f64, path: &[Vec<f64>], t: usize) -> Result<f64, EstimatorError> {
    if !(decay > 0.0 && decay < 1.0) {
        return Err(EstimatorError::BadDecay(decay));
    }
    assert!(t >= 1 && t <= path.len(), "t must index into the path");
    let p_t = &path[t - 1];
    let norm = (1.0 - decay) / (1.0 - decay.powf(t as f64));
    let mut bias = 0.0;
    for s in 1..=t {
        let w = norm * decay.powf((t - s) as f64);
        let l1 = compensated_total(
            path[s - 1]
                .iter()
                .zip(p_t)
                .map(|(&a, &b)| (a - b).abs()),
        );
        bias += w * l1;
    }
    Ok(bias)
}
