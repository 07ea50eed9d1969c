//! Checkpoint sets, cost evaluation, and placement algorithms.
//!
//! A checkpoint at position `c` stores the exact recurrent state after
//! token `c`; a request overlapping to depth `t` resumes from the deepest
//! checkpoint at or below `t` and replays the remaining `t - l` tokens.
//! This module evaluates that cost against an overlap histogram and
//! computes placements: the fixed baselines (balanced, block, sqrt,
//! logarithmic), post-hoc block clipping, and the exact distribution-aware
//! dynamic program, both the O(NM) convex-hull-trick solver and the
//! O(N^2 M) direct recurrence kept as a testing oracle.

use crate::distribution::{CompensatedSum, DistributionError, OverlapHistogram};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PlacementError {
    #[error("depth {depth} out of range 1..={n}")]
    DepthOutOfRange { depth: usize, n: usize },
    #[error("length mismatch: histogram has {0} positions, checkpoint set {1}")]
    LengthMismatch(usize, usize),
    #[error("budget {budget} exceeds {n} positions")]
    BudgetTooLarge { budget: usize, n: usize },
    #[error("invalid checkpoint set: {0}")]
    Invalid(String),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

/// Sorted checkpoint positions `c_1 < ... < c_M` within a prefix of length
/// `N`. With sentinels `c_0 = 0` and `c_{M+1} = N+1`, the gaps are positive
/// and sum to `N+1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointSet {
    n_positions: usize,
    positions: Vec<usize>,
}

/// Serialized form: `{"n": N, "positions": [c_1, ..., c_M]}`.
#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    n: usize,
    positions: Vec<usize>,
}

impl CheckpointSet {
    /// Builds a set from strictly increasing positions in `[1, n]`.
    pub fn new(n_positions: usize, positions: Vec<usize>) -> Result<Self, PlacementError> {
        let mut prev = 0usize;
        for &c in &positions {
            if c <= prev {
                return Err(PlacementError::Invalid(format!(
                    "positions must be strictly increasing, saw {c} after {prev}"
                )));
            }
            if c > n_positions {
                return Err(PlacementError::Invalid(format!(
                    "position {c} exceeds prefix length {n_positions}"
                )));
            }
            prev = c;
        }
        Ok(Self {
            n_positions,
            positions,
        })
    }

    pub fn empty(n_positions: usize) -> Self {
        Self {
            n_positions,
            positions: Vec::new(),
        }
    }

    pub fn n_positions(&self) -> usize {
        self.n_positions
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Gap lengths including the sentinels: `c_1 - 0`, `c_2 - c_1`, ...,
    /// `N + 1 - c_M`. Always non-empty; sums to `N + 1`.
    pub fn gaps(&self) -> Vec<usize> {
        let mut gaps = Vec::with_capacity(self.positions.len() + 1);
        let mut prev = 0;
        for &c in &self.positions {
            gaps.push(c - prev);
            prev = c;
        }
        gaps.push(self.n_positions + 1 - prev);
        gaps
    }

    /// Deepest checkpoint at or below depth `t`, or 0 when none exists.
    pub fn reusable_depth(&self, t: usize) -> Result<usize, PlacementError> {
        if t < 1 || t > self.n_positions {
            return Err(PlacementError::DepthOutOfRange {
                depth: t,
                n: self.n_positions,
            });
        }
        let idx = self.positions.partition_point(|&c| c <= t);
        Ok(if idx == 0 { 0 } else { self.positions[idx - 1] })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&CheckpointFile {
            n: self.n_positions,
            positions: self.positions.clone(),
        })
        .expect("checkpoint serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, PlacementError> {
        let file: CheckpointFile = serde_json::from_str(s)
            .map_err(|e| PlacementError::Invalid(format!("invalid checkpoint JSON: {e}")))?;
        Self::new(file.n, file.positions)
    }
}

fn serialize_reduction<S: serde::Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_some(v)
    } else {
        s.serialize_none()
    }
}

fn deserialize_reduction<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    let v: Option<f64> = Option::deserialize(d)?;
    Ok(v.unwrap_or(f64::INFINITY))
}

/// Cost report for a placement under an overlap histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementCost {
    /// `E[r(T;C)]` in tokens.
    pub expected_recompute: f64,
    /// `max_t r(t;C)` over all depths, whether or not they carry mass.
    pub worst_case_recompute: usize,
    /// No-cache baseline `E[T]`.
    pub no_cache: f64,
    /// `1 - expected_recompute / no_cache`, in `[0, 1]`.
    pub savings: f64,
    /// `no_cache / expected_recompute`; infinite when nothing is recomputed
    /// (serialized as JSON null).
    #[serde(
        serialize_with = "serialize_reduction",
        deserialize_with = "deserialize_reduction"
    )]
    pub reduction_factor: f64,
}

/// Evaluates `E[r(T;C)] = sum_t p_t (t - l(t;C))` plus the derived metrics.
///
/// The worst case is distribution-free: it ranges over every depth in
/// `1..=N`, including zero-mass ones, and equals the largest sentinel gap
/// minus one.
pub fn expected_cost(
    h: &OverlapHistogram,
    c: &CheckpointSet,
) -> Result<PlacementCost, PlacementError> {
    if h.n_positions() != c.n_positions() {
        return Err(PlacementError::LengthMismatch(
            h.n_positions(),
            c.n_positions(),
        ));
    }
    let n = h.n_positions();
    let mut acc = CompensatedSum::default();
    let mut ckpt_idx = 0;
    let mut reusable = 0usize;
    let positions = c.positions();
    for t in 1..=n {
        while ckpt_idx < positions.len() && positions[ckpt_idx] <= t {
            reusable = positions[ckpt_idx];
            ckpt_idx += 1;
        }
        acc.add(h.mass_at(t) * (t - reusable) as f64);
    }
    let expected = acc.value().max(0.0);
    let worst = c.gaps().into_iter().max().unwrap_or(n + 1) - 1;
    let no_cache = h.no_cache_baseline();
    let savings = (1.0 - expected / no_cache).clamp(0.0, 1.0);
    let reduction_factor = if expected > 0.0 {
        no_cache / expected
    } else {
        f64::INFINITY
    };
    Ok(PlacementCost {
        expected_recompute: expected,
        worst_case_recompute: worst,
        no_cache,
        savings,
        reduction_factor,
    })
}

fn check_budget(n: usize, budget: usize) -> Result<(), PlacementError> {
    if budget > n {
        Err(PlacementError::BudgetTooLarge { budget, n })
    } else {
        Ok(())
    }
}

/// Evenly spaced schedule `c_i = floor(i (N+1) / (M+1))`. All gaps differ
/// by at most one, which is optimal under uniform overlap and minimax
/// optimal for any overlap law.
pub fn balanced_placement(n: usize, budget: usize) -> Result<CheckpointSet, PlacementError> {
    check_budget(n, budget)?;
    let positions: Vec<usize> = (1..=budget)
        .map(|i| i * (n + 1) / (budget + 1))
        .filter(|&c| c > 0)
        .collect();
    CheckpointSet::new(n, positions)
}

/// Closed-form optimal expected recompute under uniform overlap:
/// `((K - rho) q(q-1)/2 + rho q(q+1)/2) / N` with `K = M+1` and
/// `N + 1 = qK + rho`.
pub fn uniform_optimal_cost(n: usize, budget: usize) -> Result<f64, PlacementError> {
    check_budget(n, budget)?;
    let k = (budget + 1) as u128;
    let q = (n as u128 + 1) / k;
    let rho = (n as u128 + 1) % k;
    let numer = (k - rho) * q * (q.saturating_sub(1)) / 2 + rho * q * (q + 1) / 2;
    Ok(numer as f64 / n as f64)
}

/// Minimax recompute over all depths: `ceil((N+1)/(M+1)) - 1`, attained by
/// any balanced schedule.
pub fn worst_case_optimal(n: usize, budget: usize) -> Result<usize, PlacementError> {
    check_budget(n, budget)?;
    Ok((n + 1).div_ceil(budget + 1) - 1)
}

/// Block-boundary schedule `B, 2B, ..., floor(N/B) B`.
pub fn block_placement(n: usize, block: usize) -> CheckpointSet {
    assert!(block >= 1, "block size must be at least 1");
    let positions: Vec<usize> = (1..=n / block).map(|i| i * block).collect();
    CheckpointSet::new(n, positions).expect("multiples of B are strictly increasing")
}

/// `floor(sqrt(N))`-spaced schedule.
pub fn sqrt_placement(n: usize) -> CheckpointSet {
    assert!(n >= 1, "prefix length must be at least 1");
    block_placement(n, n.isqrt().max(1))
}

/// Schedule with geometrically growing gaps, dense near the start:
/// `c_i = round(N (2^i - 1) / (2^M - 1))`, deduplicated and clamped to
/// `[1, N]`.
///
/// The gap ratio is one reasonable reading of "exponentially increasing
/// gaps"; no canonical schedule exists, so treat this as a family member,
/// not a reference.
pub fn logarithmic_placement(n: usize, budget: usize) -> Result<CheckpointSet, PlacementError> {
    check_budget(n, budget)?;
    let mut positions: Vec<usize> = (1..=budget)
        .map(|i| {
            // (2^i - 1) / (2^M - 1) computed as 2^(i-M) (1 - 2^-i) / (1 - 2^-M)
            // so large budgets neither overflow nor hit inf/inf.
            let ratio = (i as f64 - budget as f64).exp2() * (1.0 - (-(i as f64)).exp2())
                / (1.0 - (-(budget as f64)).exp2());
            ((n as f64 * ratio).round() as usize).clamp(1, n)
        })
        .collect();
    positions.dedup();
    CheckpointSet::new(n, positions)
}

/// Clips every checkpoint down to the block grid: `c -> floor(c/B) B`.
/// Clipping down preserves feasibility (a state stored above depth `t`
/// cannot serve depth `t`); zeros are dropped and duplicates merged.
pub fn clip_to_blocks(c: &CheckpointSet, block: usize) -> CheckpointSet {
    assert!(block >= 1, "block size must be at least 1");
    let mut positions: Vec<usize> = c
        .positions()
        .iter()
        .map(|&p| p / block * block)
        .filter(|&p| p > 0)
        .collect();
    positions.dedup();
    CheckpointSet::new(c.n_positions(), positions).expect("flooring preserves order")
}

/// Line `y = slope * x + intercept` tagged with the candidate index that
/// produced it.
#[derive(Clone, Copy)]
struct Line {
    slope: f64,
    intercept: f64,
}

impl Line {
    fn eval(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// Lower envelope for lines added in non-decreasing slope order and queried
/// at non-increasing points; the query pointer only ever advances, so each
/// layer runs in amortized O(1) per operation. Coincident query points from
/// zero-mass depths just repeat the same x, which the pointer handles.
struct MonotoneHull {
    lines: Vec<Line>,
    ptr: usize,
}

impl MonotoneHull {
    fn new() -> Self {
        Self {
            lines: Vec::new(),
            ptr: 0,
        }
    }

    /// x-coordinate where `b` drops below `a` (slopes strictly increasing
    /// from `a` to `b`).
    fn cross(a: &Line, b: &Line) -> f64 {
        (b.intercept - a.intercept) / (a.slope - b.slope)
    }

    fn add(&mut self, line: Line) {
        if let Some(last) = self.lines.last() {
            debug_assert!(line.slope >= last.slope - 1e-12);
            if line.slope == last.slope {
                if line.intercept <= last.intercept {
                    self.lines.pop();
                } else {
                    return;
                }
            }
        }
        while self.lines.len() >= 2 {
            let a = &self.lines[self.lines.len() - 2];
            let b = &self.lines[self.lines.len() - 1];
            // `b` never wins once the new line overtakes `a` at least as
            // early (queries move left).
            if Self::cross(a, &line) >= Self::cross(a, b) {
                self.lines.pop();
            } else {
                break;
            }
        }
        self.lines.push(line);
        self.ptr = self.ptr.min(self.lines.len() - 1);
    }

    fn query(&mut self, x: f64) -> f64 {
        debug_assert!(!self.lines.is_empty());
        while self.ptr + 1 < self.lines.len()
            && self.lines[self.ptr + 1].eval(x) <= self.lines[self.ptr].eval(x)
        {
            self.ptr += 1;
        }
        self.lines[self.ptr].eval(x)
    }
}

/// Shared scaffolding for the DP: candidate positions plus prefix-sum
/// helpers with the `c = 0` sentinel convention.
struct DpContext<'a> {
    h: &'a OverlapHistogram,
    /// Candidate checkpoint positions, strictly increasing.
    cand: Vec<usize>,
}

impl<'a> DpContext<'a> {
    fn new(h: &'a OverlapHistogram, grid: Option<usize>) -> Self {
        let n = h.n_positions();
        let cand = match grid {
            // A checkpoint strictly between mass points always improves by
            // moving up to the next mass point (it serves the same depths
            // at a smaller distance), so positive-mass positions suffice.
            None => (1..=n).filter(|&t| h.mass_at(t) > 0.0).collect(),
            Some(b) => {
                assert!(b >= 1, "candidate grid stride must be at least 1");
                (1..=n / b).map(|i| i * b).collect()
            }
        };
        Self { h, cand }
    }

    /// `(P_{c-1}, T_{c-1})` with zeros at the sentinel.
    fn before(&self, c: usize) -> (f64, f64) {
        if c == 0 {
            (0.0, 0.0)
        } else {
            (
                self.h.prefix_mass_at(c - 1),
                self.h.prefix_moment_at(c - 1),
            )
        }
    }

    /// Cost of depths `[max(c,1), N]` with deepest checkpoint `c`.
    fn tail_cost(&self, c: usize) -> f64 {
        let n = self.h.n_positions();
        let (pm, tm) = self.before(c);
        (self.h.prefix_moment_at(n) - tm) - c as f64 * (self.h.prefix_mass_at(n) - pm)
    }

    /// Cost of depths `[max(c,1), next-1]` with deepest checkpoint `c`.
    fn head_cost(&self, c: usize, next: usize) -> f64 {
        let (pm, tm) = self.before(c);
        let (pm_next, tm_next) = self.before(next);
        (tm_next - tm) - c as f64 * (pm_next - pm)
    }

    /// Mass on `[c, next-1]`; zero means the checkpoint at `c` serves
    /// nothing before `next` takes over.
    fn served_mass(&self, c: usize, next: usize) -> f64 {
        let (pm, _) = self.before(c);
        let (pm_next, _) = self.before(next);
        pm_next - pm
    }
}

/// Optimal checkpoint placement for histogram `h` with at most `budget`
/// checkpoints, solved by the exact dynamic program with a monotone
/// convex-hull-trick inner loop: O(N M) time.
///
/// `candidate_grid = Some(B)` restricts positions to multiples of `B`
/// (exact optimization under the block constraint, as opposed to the
/// post-hoc [`clip_to_blocks`]).
///
/// Among equal-cost placements the result is deterministic: the greedy
/// reconstruction prefers stopping early and then the smallest next
/// position, and checkpoints serving zero probability mass are pruned, so
/// the returned set can be smaller than the budget.
pub fn dp_optimal(
    h: &OverlapHistogram,
    budget: usize,
    candidate_grid: Option<usize>,
) -> Result<CheckpointSet, PlacementError> {
    let n = h.n_positions();
    check_budget(n, budget)?;
    let ctx = DpContext::new(h, candidate_grid);
    let g = ctx.cand.len();
    let effective = budget.min(g);
    if effective == 0 {
        return Ok(CheckpointSet::empty(n));
    }

    // layers[k][i]: cost of serving depths [ext(i), N] with the deepest
    // checkpoint at ext(i) and at most k more checkpoints drawn from
    // candidates above it; ext(0) = 0 is the no-checkpoint sentinel and
    // ext(i) = cand[i-1] otherwise.
    let ext = |i: usize| -> usize {
        if i == 0 {
            0
        } else {
            ctx.cand[i - 1]
        }
    };
    let base: Vec<f64> = (0..=g).map(|i| ctx.tail_cost(ext(i))).collect();
    let mut layers: Vec<Vec<f64>> = vec![base];
    for k in 1..=effective {
        let prev = &layers[k - 1];
        let mut cur = vec![0.0; g + 1];
        cur[g] = prev[g];
        let mut hull = MonotoneHull::new();
        for i in (0..g).rev() {
            let next = ext(i + 1);
            let (pm_next, tm_next) = ctx.before(next);
            hull.add(Line {
                slope: -pm_next,
                intercept: tm_next + prev[i + 1],
            });
            let c = ext(i);
            let (pm, tm) = ctx.before(c);
            let best = hull.query(c as f64) + (c as f64 * pm - tm);
            cur[i] = prev[i].min(best);
        }
        let stabilized = cur == *layers.last().unwrap();
        layers.push(cur);
        if stabilized {
            break;
        }
    }
    let layer = |k: usize| -> &Vec<f64> { &layers[k.min(layers.len() - 1)] };

    // Greedy reconstruction over exact suffix values: strictly-improving
    // steps only, ties prefer stopping, then the smallest position.
    let mut picked: Vec<usize> = Vec::new();
    let mut prev_idx = 0usize;
    let mut remaining = effective;
    while remaining > 0 && prev_idx < g {
        let c = ext(prev_idx);
        let stop_val = ctx.tail_cost(c);
        let suffix = layer(remaining - 1);
        let mut best_val = f64::INFINITY;
        let mut best_j = 0usize;
        for (j, &suffix_val) in suffix.iter().enumerate().skip(prev_idx + 1) {
            let v = ctx.head_cost(c, ext(j)) + suffix_val;
            if v < best_val {
                best_val = v;
                best_j = j;
            }
        }
        if stop_val <= best_val {
            break;
        }
        picked.push(ext(best_j));
        prev_idx = best_j;
        remaining -= 1;
    }

    // Drop checkpoints that serve zero mass; removal cannot change the
    // cost, and budgets are upper bounds rather than exact counts.
    let kept: Vec<usize> = picked
        .iter()
        .enumerate()
        .filter(|&(i, &c)| {
            let next = picked.get(i + 1).copied().unwrap_or(n + 1);
            ctx.served_mass(c, next) > 0.0
        })
        .map(|(_, &c)| c)
        .collect();
    CheckpointSet::new(n, kept)
}

/// Direct evaluation of the placement recurrence in O(N^2 M). Exists as
/// the independent oracle for [`dp_optimal`]; do not use it for real
/// workloads.
pub fn dp_optimal_naive(
    h: &OverlapHistogram,
    budget: usize,
) -> Result<CheckpointSet, PlacementError> {
    let n = h.n_positions();
    check_budget(n, budget)?;
    let ctx = DpContext::new(h, None);
    // dp[j]: cost of serving depths 1..=j with the current number of
    // checkpoints; w(s, j) = sum_{t=s..j} p_t (t - s).
    let w = |s: usize, j: usize| -> f64 {
        let (pm_s, tm_s) = ctx.before(s);
        (h.prefix_moment_at(j) - tm_s) - s as f64 * (h.prefix_mass_at(j) - pm_s)
    };
    let mut dp: Vec<f64> = (0..=n).map(|j| h.prefix_moment_at(j)).collect();
    let mut choice: Vec<Vec<usize>> = Vec::with_capacity(budget);
    for _ in 1..=budget {
        let mut next_dp = vec![0.0; n + 1];
        let mut next_choice = vec![0usize; n + 1];
        for j in 1..=n {
            let mut best = f64::INFINITY;
            let mut best_s = 0;
            for s in 1..=j {
                let v = dp[s - 1] + w(s, j);
                if v < best {
                    best = v;
                    best_s = s;
                }
            }
            next_dp[j] = best;
            next_choice[j] = best_s;
        }
        dp = next_dp;
        choice.push(next_choice);
    }
    // Backtrack, then prune zero-gain checkpoints like dp_optimal does.
    let mut positions = Vec::new();
    let mut j = n;
    for m in (0..budget).rev() {
        if j == 0 {
            break;
        }
        let s = choice[m][j];
        if s == 0 {
            break;
        }
        positions.push(s);
        j = s - 1;
    }
    positions.reverse();
    let kept: Vec<usize> = positions
        .iter()
        .enumerate()
        .filter(|&(i, &c)| {
            let next = positions.get(i + 1).copied().unwrap_or(n + 1);
            ctx.served_mass(c, next) > 0.0
        })
        .map(|(_, &c)| c)
        .collect();
    CheckpointSet::new(n, kept)
}
