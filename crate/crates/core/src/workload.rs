//! Synthetic grouped request streams with controlled overlap structure.
//!
//! Each group shares a random base token sequence; every request copies a
//! prefix of the base whose length is drawn from an overlap histogram and
//! appends fresh suffix tokens drawn from a disjoint id range, so the LCP
//! against the base equals the sampled prefix length by construction.
//! Real tokenized text has no such guarantee; feed real traces through the
//! JSONL ingestion path instead.

use crate::distribution::{DistributionError, OverlapHistogram};
use crate::simulator::{DepthRecord, Request};
use crate::trie::Token;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Base-sequence tokens come from `[0, SUFFIX_TOKEN_BASE)`; fresh suffix
/// tokens from `[SUFFIX_TOKEN_BASE, 2 * SUFFIX_TOKEN_BASE)`.
pub const SUFFIX_TOKEN_BASE: Token = 1 << 20;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("bad workload parameters: {0}")]
    BadRange(String),
    #[error("drift infeasible: {0}")]
    BadDrift(String),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

/// Parameters for a grouped synthetic trace. The overlap histogram doubles
/// as the base-sequence length: prefixes are sampled over `1..=N`.
#[derive(Debug, Clone)]
pub struct TraceSpec {
    pub n_groups: usize,
    pub requests_per_group: usize,
    pub overlap: OverlapHistogram,
    /// Inclusive range of fresh-suffix lengths.
    pub suffix_len: (usize, usize),
    pub seed: u64,
}

/// One generated group, with its base sequence kept for invariant checks.
#[derive(Debug, Clone)]
pub struct GeneratedGroup {
    pub label: String,
    pub base: Vec<Token>,
    pub requests: Vec<Request>,
}

fn validate(spec: &TraceSpec) -> Result<(), WorkloadError> {
    if spec.n_groups == 0 || spec.requests_per_group == 0 {
        return Err(WorkloadError::BadRange(
            "need at least one group and one request per group".into(),
        ));
    }
    if spec.suffix_len.0 > spec.suffix_len.1 {
        return Err(WorkloadError::BadRange(format!(
            "suffix range {}..={} is empty",
            spec.suffix_len.0, spec.suffix_len.1
        )));
    }
    Ok(())
}

/// Generates the per-group requests. Request ids are globally sequential
/// in group-major order; arrival times are the within-group index and are
/// meant to be reassigned by [`poisson_interleave`].
pub fn gen_groups(spec: &TraceSpec) -> Result<Vec<GeneratedGroup>, WorkloadError> {
    validate(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.overlap.n_positions();
    let mut groups = Vec::with_capacity(spec.n_groups);
    let mut next_id: u64 = 0;
    for g in 0..spec.n_groups {
        let label = format!("g{g}");
        let base: Vec<Token> = (0..n).map(|_| rng.random_range(0..SUFFIX_TOKEN_BASE)).collect();
        let mut requests = Vec::with_capacity(spec.requests_per_group);
        for k in 0..spec.requests_per_group {
            let prefix_len = spec.overlap.sample_depth_from_uniform(rng.random());
            let suffix_len = rng.random_range(spec.suffix_len.0..=spec.suffix_len.1);
            let mut tokens = base[..prefix_len].to_vec();
            tokens.extend(
                (0..suffix_len).map(|_| rng.random_range(SUFFIX_TOKEN_BASE..2 * SUFFIX_TOKEN_BASE)),
            );
            requests.push(Request {
                id: next_id,
                group: label.clone(),
                tokens,
                arrival_time: k as f64,
            });
            next_id += 1;
        }
        groups.push(GeneratedGroup {
            label,
            base,
            requests,
        });
    }
    Ok(groups)
}

/// Flattened group-major trace with arrival times rewritten to the global
/// sequence order. Use [`poisson_interleave`] for realistic interleaving.
pub fn gen_grouped_trace(spec: &TraceSpec) -> Result<Vec<Request>, WorkloadError> {
    let groups = gen_groups(spec)?;
    let mut out: Vec<Request> = groups.into_iter().flat_map(|g| g.requests).collect();
    for (i, r) in out.iter_mut().enumerate() {
        r.arrival_time = i as f64;
    }
    Ok(out)
}

fn exponential(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return -u.ln() / rate;
        }
    }
}

/// Assigns each group cumulative exponential inter-arrival times at its
/// rate and merges the streams by arrival, breaking ties by (group, id).
/// The output is a permutation of the input requests.
pub fn poisson_interleave_rates(
    groups: Vec<Vec<Request>>,
    rates: &[f64],
    seed: u64,
) -> Result<Vec<Request>, WorkloadError> {
    if rates.len() != groups.len() {
        return Err(WorkloadError::BadRange(format!(
            "{} rates for {} groups",
            rates.len(),
            groups.len()
        )));
    }
    if rates.iter().any(|&r| r.is_nan() || r <= 0.0) {
        return Err(WorkloadError::BadRange("rates must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut merged: Vec<Request> = Vec::new();
    for (group, &rate) in groups.into_iter().zip(rates) {
        let mut clock = 0.0;
        for mut request in group {
            clock += exponential(&mut rng, rate);
            request.arrival_time = clock;
            merged.push(request);
        }
    }
    merged.sort_by(|a, b| {
        a.arrival_time
            .partial_cmp(&b.arrival_time)
            .expect("arrival times are finite")
            .then_with(|| a.group.cmp(&b.group))
            .then_with(|| a.id.cmp(&b.id))
    });
    Ok(merged)
}

/// [`poisson_interleave_rates`] with one shared rate.
pub fn poisson_interleave(groups: Vec<Vec<Request>>, rate_per_group: f64, seed: u64) -> Vec<Request> {
    let rates = vec![rate_per_group; groups.len()];
    poisson_interleave_rates(groups, &rates, seed).expect("single positive rate is always valid")
}

/// Depth-mode trace sampled along a drifting distribution path, plus the
/// exact per-step distributions for bias evaluation.
#[derive(Debug, Clone)]
pub struct DriftTrace {
    pub records: Vec<DepthRecord>,
    /// `path[s]` is the mass vector the depth at step `s` was drawn from.
    pub path: Vec<Vec<f64>>,
}

/// Walks from `start` to `end` along the straight-line mixture path at
/// exactly `drift_per_step` L1 per step (the final step may be shorter),
/// then stays at `end`. Every intermediate point is a valid distribution.
pub fn drift_trace(
    n_requests: usize,
    start: &OverlapHistogram,
    end: &OverlapHistogram,
    drift_per_step: f64,
    seed: u64,
) -> Result<DriftTrace, WorkloadError> {
    if n_requests == 0 {
        return Err(WorkloadError::BadRange("need at least one request".into()));
    }
    if drift_per_step < 0.0 {
        return Err(WorkloadError::BadRange("drift must be non-negative".into()));
    }
    let total = start.l1_distance(end)?;
    let reachable = drift_per_step * n_requests.saturating_sub(1) as f64;
    if total > reachable * (1.0 + 1e-12) {
        return Err(WorkloadError::BadDrift(format!(
            "endpoints are {total:.6} apart in L1 but at most {reachable:.6} is reachable \
             in {n_requests} steps of {drift_per_step}"
        )));
    }
    let alpha_step = if total > 0.0 {
        drift_per_step / total
    } else {
        0.0
    };
    let n = start.n_positions();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n_requests);
    let mut path = Vec::with_capacity(n_requests);
    let mut alpha = 0.0f64;
    for s in 0..n_requests {
        let mix: Vec<f64> = start
            .mass()
            .iter()
            .zip(end.mass())
            .map(|(&a, &b)| (1.0 - alpha) * a + alpha * b)
            .collect();
        let step = OverlapHistogram::from_counts(&mix)?;
        let depth = step.sample_depth_from_uniform(rng.random());
        records.push(DepthRecord {
            id: s as u64,
            overlap_depth: depth,
            length: n,
        });
        path.push(step.mass().to_vec());
        alpha = (alpha + alpha_step).min(1.0);
    }
    Ok(DriftTrace { records, path })
}
