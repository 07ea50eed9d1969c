//! Overlap-depth distributions.
//!
//! An [`OverlapHistogram`] holds the probability that a future request
//! overlaps a cached prefix to depth `t` for `t` in `1..=N`, together with
//! the prefix sums the placement DP needs in O(1). Histograms are dense:
//! target workloads keep `N` at a few hundred thousand at most, and dense
//! storage is what makes the prefix-sum queries constant-time.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on the normalization invariant `sum(mass) == 1`.
pub const NORM_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum DistributionError {
    #[error("all counts are zero")]
    AllZero,
    #[error("histogram needs at least one position")]
    BadLength,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("delta must lie in (0, 1), got {0}")]
    BadDelta(f64),
    #[error("bad shape parameters: {0}")]
    BadParams(String),
}

/// Running compensated (Neumaier) sum. Keeps prefix-array error at a few
/// ulps regardless of length, which the 1e-12 normalization invariant needs
/// once `N` reaches 1e5.
#[derive(Clone, Copy, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub(crate) fn compensated_total(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = CompensatedSum::default();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Probability mass over overlap depths `1..=N` with cached prefix sums.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapHistogram {
    n_positions: usize,
    /// `mass[t-1]` is the probability of overlap depth `t`.
    mass: Vec<f64>,
    /// `prefix_mass[j]` is `sum_{t<=j} p_t`; index 0 is the zero sentinel.
    prefix_mass: Vec<f64>,
    /// `prefix_moment[j]` is `sum_{t<=j} t*p_t`; index 0 is the zero sentinel.
    prefix_moment: Vec<f64>,
}

/// Serialized form: `{"n": N, "mass": [p_1, ..., p_N]}`.
#[derive(Serialize, Deserialize)]
struct HistogramFile {
    n: usize,
    mass: Vec<f64>,
}

impl OverlapHistogram {
    /// Builds a normalized histogram from non-negative counts (or weights).
    ///
    /// Inputs are re-normalized rather than rejected: estimator weights
    /// carry rounding, so exact unit mass on input is not required.
    pub fn from_counts(counts: &[f64]) -> Result<Self, DistributionError> {
        if counts.is_empty() {
            return Err(DistributionError::BadLength);
        }
        if counts.iter().any(|&c| !c.is_finite() || c < 0.0) {
            return Err(DistributionError::BadParams(
                "counts must be finite and non-negative".into(),
            ));
        }
        let total = compensated_total(counts.iter().copied());
        if total <= 0.0 {
            return Err(DistributionError::AllZero);
        }
        let mass: Vec<f64> = counts.iter().map(|&c| c / total).collect();
        Ok(Self::from_normalized(mass))
    }

    fn from_normalized(mass: Vec<f64>) -> Self {
        let n = mass.len();
        let mut prefix_mass = Vec::with_capacity(n + 1);
        let mut prefix_moment = Vec::with_capacity(n + 1);
        prefix_mass.push(0.0);
        prefix_moment.push(0.0);
        let mut acc_mass = CompensatedSum::default();
        let mut acc_moment = CompensatedSum::default();
        for (i, &p) in mass.iter().enumerate() {
            acc_mass.add(p);
            acc_moment.add(p * (i + 1) as f64);
            // Non-negative mass keeps these non-decreasing; the max guards
            // against last-ulp dips from the compensation term.
            let pm = acc_mass.value().max(prefix_mass[i]);
            let tm = acc_moment.value().max(prefix_moment[i]);
            prefix_mass.push(pm);
            prefix_moment.push(tm);
        }
        debug_assert!((prefix_mass[n] - 1.0).abs() <= NORM_TOL);
        Self {
            n_positions: n,
            mass,
            prefix_mass,
            prefix_moment,
        }
    }

    /// Number of tracked depths `N`.
    pub fn n_positions(&self) -> usize {
        self.n_positions
    }

    /// Probability of overlap depth `t` (1-based).
    pub fn mass_at(&self, t: usize) -> f64 {
        self.mass[t - 1]
    }

    /// Mass vector `p_1..p_N`.
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// `P_j = sum_{t<=j} p_t`, valid for `j` in `0..=N`.
    pub fn prefix_mass_at(&self, j: usize) -> f64 {
        self.prefix_mass[j]
    }

    /// `T_j = sum_{t<=j} t*p_t`, valid for `j` in `0..=N`.
    pub fn prefix_moment_at(&self, j: usize) -> f64 {
        self.prefix_moment[j]
    }

    /// Expected overlap depth `E[T]`: the recurrent work a cache-less system
    /// pays per retained hit.
    pub fn no_cache_baseline(&self) -> f64 {
        self.prefix_moment[self.n_positions]
    }

    /// L1 distance `sum_t |p_t - q_t|` (twice the total variation; the
    /// stability and plug-in bounds are all stated in this norm).
    pub fn l1_distance(&self, other: &Self) -> Result<f64, DistributionError> {
        if self.n_positions != other.n_positions {
            return Err(DistributionError::LengthMismatch(
                self.n_positions,
                other.n_positions,
            ));
        }
        Ok(compensated_total(
            self.mass
                .iter()
                .zip(&other.mass)
                .map(|(&p, &q)| (p - q).abs()),
        ))
    }

    /// Restricts the histogram to depths `1..=n` and re-normalizes.
    ///
    /// Returns `AllZero` when no mass lies at or below `n`.
    pub fn truncated(&self, n: usize) -> Result<Self, DistributionError> {
        if n == 0 {
            return Err(DistributionError::BadLength);
        }
        let n = n.min(self.n_positions);
        Self::from_counts(&self.mass[..n])
    }

    /// Largest depth with positive mass, or 0 for the (impossible) all-zero
    /// case.
    pub fn support_max(&self) -> usize {
        self.mass
            .iter()
            .rposition(|&p| p > 0.0)
            .map_or(0, |i| i + 1)
    }

    /// Inverse-CDF sample: maps uniform `u` in `[0, 1)` to the smallest
    /// depth `j` with `P_j > u`.
    pub fn sample_depth_from_uniform(&self, u: f64) -> usize {
        debug_assert!((0.0..1.0).contains(&u));
        let j = self.prefix_mass.partition_point(|&p| p <= u);
        j.clamp(1, self.n_positions)
    }

    /// Serializes to the histogram file format `{"n", "mass"}`.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&HistogramFile {
            n: self.n_positions,
            mass: self.mass.clone(),
        })
        .expect("histogram serialization cannot fail")
    }

    /// Parses the histogram file format, re-normalizing the mass vector.
    pub fn from_json(s: &str) -> Result<Self, DistributionError> {
        let file: HistogramFile = serde_json::from_str(s)
            .map_err(|e| DistributionError::BadParams(format!("invalid histogram JSON: {e}")))?;
        if file.mass.len() != file.n {
            return Err(DistributionError::LengthMismatch(file.n, file.mass.len()));
        }
        Self::from_counts(&file.mass)
    }
}

/// High-probability L1 bound for an empirical histogram built from
/// `n_samples` i.i.d. draws over `n_positions` depths:
/// `sqrt(N/n) + sqrt(2*ln(1/delta)/n)`.
///
/// Callers multiply by `2N` to bound the excess cost of the plug-in
/// schedule.
pub fn plugin_bound(
    n_samples: usize,
    n_positions: usize,
    delta: f64,
) -> Result<f64, DistributionError> {
    assert!(n_samples >= 1, "plugin_bound requires at least one sample");
    if !(delta > 0.0 && delta < 1.0) {
        return Err(DistributionError::BadDelta(delta));
    }
    let n = n_samples as f64;
    let mean_term = (n_positions as f64 / n).sqrt();
    let tail_term = (2.0 * (1.0 / delta).ln() / n).sqrt();
    Ok(mean_term + tail_term)
}

/// Synthetic histogram shapes mirroring the workload families we target:
/// a near-uniform spread, a sharp spike at the end of the prefix (documents
/// re-asked in full), a wide multimodal spread, and mass concentrated at
/// short prefixes (shared system prompts).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "shape")]
pub enum Shape {
    Uniform,
    EndSpike { spike_mass: f64, spike_width: usize },
    HeadHeavy { head_mass: f64, head_width: usize },
    Multimodal { n_modes: usize },
}

impl Shape {
    fn validate(&self, n: usize) -> Result<(), DistributionError> {
        if n < 2 {
            return Err(DistributionError::BadParams(format!(
                "synthetic shapes need n_positions >= 2, got {n}"
            )));
        }
        let check_mass = |m: f64, name: &str| {
            if !(m > 0.0 && m <= 1.0) {
                Err(DistributionError::BadParams(format!(
                    "{name} must lie in (0, 1], got {m}"
                )))
            } else {
                Ok(())
            }
        };
        let check_width = |w: usize, name: &str| {
            if w == 0 || w > n {
                Err(DistributionError::BadParams(format!(
                    "{name} must lie in 1..={n}, got {w}"
                )))
            } else {
                Ok(())
            }
        };
        match *self {
            Shape::Uniform => Ok(()),
            Shape::EndSpike {
                spike_mass,
                spike_width,
            } => {
                check_mass(spike_mass, "spike_mass")?;
                check_width(spike_width, "spike_width")
            }
            Shape::HeadHeavy { head_mass, head_width } => {
                check_mass(head_mass, "head_mass")?;
                check_width(head_width, "head_width")
            }
            Shape::Multimodal { n_modes } => {
                if n_modes == 0 {
                    return Err(DistributionError::BadParams(
                        "n_modes must be at least 1".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

/// Unnormalized truncated discrete Gaussian profile over `1..=n`.
fn gaussian_profile(n: usize, center: f64, sigma: f64) -> Vec<f64> {
    (1..=n)
        .map(|t| {
            let z = (t as f64 - center) / sigma;
            (-0.5 * z * z).exp()
        })
        .collect()
}

/// Builds a synthetic overlap histogram. Deterministic under `seed`; only
/// the multimodal shape consumes randomness (mode centers, widths, and
/// weights).
pub fn synth_distribution(
    shape: Shape,
    n_positions: usize,
    seed: u64,
) -> Result<OverlapHistogram, DistributionError> {
    shape.validate(n_positions)?;
    let n = n_positions;
    let weights = match shape {
        Shape::Uniform => vec![1.0; n],
        Shape::EndSpike {
            spike_mass,
            spike_width,
        } => {
            // Gaussian lobe centered mid-window so the spike does not pile
            // mass onto the exact prefix end, plus a uniform floor over the
            // body carrying the leftover mass.
            let lo = n - spike_width + 1;
            let center = n as f64 - spike_width as f64 / 2.0;
            let sigma = (spike_width as f64 / 6.0).max(0.5);
            let mut w = vec![0.0; n];
            let lobe = gaussian_profile(n, center, sigma);
            let lobe_total: f64 = lobe[lo - 1..].iter().sum();
            for t in lo..=n {
                w[t - 1] = spike_mass * lobe[t - 1] / lobe_total;
            }
            let body = n - spike_width;
            if body > 0 && spike_mass < 1.0 {
                let floor = (1.0 - spike_mass) / body as f64;
                for slot in w.iter_mut().take(body) {
                    *slot += floor;
                }
            }
            w
        }
        Shape::HeadHeavy { head_mass, head_width } => {
            // Shared-prompt reuse: most requests match the whole prompt,
            // so overlap clusters tightly at the prompt boundary
            // `head_width`, with a small spread for early divergence and a
            // floor over the deeper tail.
            let center = head_width as f64;
            let sigma = (head_width as f64 / 16.0).clamp(1.0, 4.0);
            let mut w = vec![0.0; n];
            let lobe = gaussian_profile(n, center, sigma);
            let lobe_total: f64 = lobe[..head_width].iter().sum();
            for t in 1..=head_width {
                w[t - 1] = head_mass * lobe[t - 1] / lobe_total;
            }
            let tail = n - head_width;
            if tail > 0 && head_mass < 1.0 {
                let floor = (1.0 - head_mass) / tail as f64;
                for slot in w.iter_mut().skip(head_width) {
                    *slot += floor;
                }
            }
            w
        }
        Shape::Multimodal { n_modes } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut w = vec![0.0; n];
            for _ in 0..n_modes {
                let center = rng.random_range(1.0..=n as f64);
                let sigma = rng.random_range(n as f64 / 40.0..=n as f64 / 8.0).max(0.5);
                let weight = rng.random_range(0.5..=1.5);
                let lobe = gaussian_profile(n, center, sigma);
                let lobe_total: f64 = lobe.iter().sum();
                for t in 1..=n {
                    w[t - 1] += weight * lobe[t - 1] / lobe_total;
                }
            }
            w
        }
    };
    OverlapHistogram::from_counts(&weights)
}
