//! Last-K prefix-cache replay.
//!
//! Each served request is matched against the cache by longest common
//! prefix, charged its exact recompute cost `r = t - l(t)`, observed into
//! the overlap estimator, and admitted as a new entry whose checkpoint
//! schedule comes from the configured planner (clipped to block
//! boundaries). The cache keeps exactly the last `K` inserted entries,
//! evicting strictly FIFO. One run is sequential; independent runs (sweep
//! cells) may execute in parallel, each owning its own state.
//!
//! Checkpoint schedules are frozen per entry at insertion time; planner
//! refreshes only affect future insertions, mirroring a system where
//! stored states are not re-shuffled.

use crate::distribution::OverlapHistogram;
use crate::estimator::{EstimatorError, EstimatorState};
use crate::placement::{
    balanced_placement, block_placement, clip_to_blocks, dp_optimal, logarithmic_placement,
    sqrt_placement, CheckpointSet, PlacementError,
};
use crate::trie::{EntryId, PrefixTrie, Token};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("trace is empty")]
    EmptyTrace,
    #[error("trace not sorted by arrival_time at index {0}")]
    TraceNotSorted(usize),
    #[error("trace line {line}: {message}")]
    BadLine { line: usize, message: String },
    #[error("trace mixes token-mode and depth-mode lines (line {0})")]
    MixedTraceModes(usize),
    #[error("request {0} has no tokens")]
    EmptyTokens(u64),
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("sweep needs at least one strategy and one budget")]
    EmptySweep,
    #[error(transparent)]
    Planner(#[from] PlacementError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// One request in a token-mode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub group: String,
    pub tokens: Vec<Token>,
    pub arrival_time: f64,
}

/// One record in a depth-mode trace: drives the estimator and planner
/// directly, bypassing token matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthRecord {
    pub id: u64,
    pub overlap_depth: usize,
    pub length: usize,
}

/// Parsed trace; JSON-lines with either token-mode or depth-mode records.
#[derive(Debug, Clone)]
pub enum Trace {
    Tokens(Vec<Request>),
    Depths(Vec<DepthRecord>),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TraceLine {
    Tokens(Request),
    Depth(DepthRecord),
}

impl Trace {
    /// Parses JSON-lines, reporting the first malformed line by number
    /// (1-based). Blank lines are skipped.
    pub fn from_jsonl(text: &str) -> Result<Self, SimError> {
        let mut requests = Vec::new();
        let mut depths = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TraceLine =
                serde_json::from_str(line).map_err(|e| SimError::BadLine {
                    line: line_no,
                    message: e.to_string(),
                })?;
            match parsed {
                TraceLine::Tokens(r) => {
                    if !depths.is_empty() {
                        return Err(SimError::MixedTraceModes(line_no));
                    }
                    if r.tokens.is_empty() {
                        return Err(SimError::BadLine {
                            line: line_no,
                            message: "tokens must be non-empty".into(),
                        });
                    }
                    if r.arrival_time.is_nan() || r.arrival_time < 0.0 {
                        return Err(SimError::BadLine {
                            line: line_no,
                            message: "arrival_time must be non-negative".into(),
                        });
                    }
                    requests.push(r);
                }
                TraceLine::Depth(d) => {
                    if !requests.is_empty() {
                        return Err(SimError::MixedTraceModes(line_no));
                    }
                    if d.length == 0 || d.overlap_depth > d.length {
                        return Err(SimError::BadLine {
                            line: line_no,
                            message: format!(
                                "need 0 <= overlap_depth <= length with length >= 1, got {}/{}",
                                d.overlap_depth, d.length
                            ),
                        });
                    }
                    depths.push(d);
                }
            }
        }
        if !requests.is_empty() {
            Ok(Trace::Tokens(requests))
        } else if !depths.is_empty() {
            Ok(Trace::Depths(depths))
        } else {
            Err(SimError::EmptyTrace)
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Trace::Tokens(r) => r.len(),
            Trace::Depths(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Longest request (token mode) or largest `length` (depth mode).
    pub fn max_length(&self) -> usize {
        match self {
            Trace::Tokens(r) => r.iter().map(|x| x.tokens.len()).max().unwrap_or(0),
            Trace::Depths(d) => d.iter().map(|x| x.length).max().unwrap_or(0),
        }
    }
}

/// Placement strategy applied at every insertion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Balanced,
    Block,
    Sqrt,
    Logarithmic,
    Dp,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Balanced,
        Strategy::Block,
        Strategy::Sqrt,
        Strategy::Logarithmic,
        Strategy::Dp,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Balanced => "balanced",
            Strategy::Block => "block",
            Strategy::Sqrt => "sqrt",
            Strategy::Logarithmic => "logarithmic",
            Strategy::Dp => "dp",
        }
    }

    /// Block and sqrt schedules depend only on the entry length, so sweep
    /// cells across budgets are identical runs.
    pub fn budget_independent(&self) -> bool {
        matches!(self, Strategy::Block | Strategy::Sqrt)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "balanced" => Ok(Strategy::Balanced),
            "block" => Ok(Strategy::Block),
            "sqrt" => Ok(Strategy::Sqrt),
            "logarithmic" | "log" => Ok(Strategy::Logarithmic),
            "dp" => Ok(Strategy::Dp),
            other => Err(format!(
                "unknown strategy '{other}' (expected balanced|block|sqrt|logarithmic|dp)"
            )),
        }
    }
}

/// Byte accounting for stored state.
///
/// `recurrent_bytes_per_checkpoint` covers one full recurrent snapshot
/// (layers x heads x d_head^2 x dtype bytes); `kv_bytes_per_token`
/// covers the attention KV kept per token of a retained entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateCostModel {
    pub recurrent_bytes_per_checkpoint: u64,
    pub kv_bytes_per_token: u64,
}

impl Default for StateCostModel {
    fn default() -> Self {
        // 12 recurrent layers x 16 heads x 128^2 state x 2 bytes, and
        // 4 attention layers x 16 heads x 128 dims x 2 (K+V) x 2 bytes.
        Self {
            recurrent_bytes_per_checkpoint: 12 * 16 * 128 * 128 * 2,
            kv_bytes_per_token: 4 * 16 * 128 * 2 * 2,
        }
    }
}

/// Simulation configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Cache capacity K (entries; last-K FIFO).
    pub capacity: usize,
    /// Checkpoint budget M per entry.
    pub budget: usize,
    /// Block size B; every stored position is clipped down to this grid.
    pub block: usize,
    pub strategy: Strategy,
    /// Estimator decay; 1.0 keeps the plain empirical histogram.
    pub gamma: f64,
    /// Planner re-solve cadence in observed hits.
    pub refresh_cadence: u64,
    /// Solve the placement DP on the block grid instead of clipping the
    /// unrestricted solution afterwards.
    pub grid_mode: bool,
    pub cost_model: StateCostModel,
    /// Reserved for future randomized policies; replay itself is
    /// deterministic.
    pub seed: u64,
    /// Depth range tracked by the estimator; defaults to the longest
    /// request in the trace.
    pub n_positions: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            capacity: 50,
            budget: 8,
            block: 64,
            strategy: Strategy::Dp,
            gamma: 0.99,
            refresh_cadence: 10,
            grid_mode: false,
            cost_model: StateCostModel::default(),
            seed: 0,
            n_positions: None,
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<(), SimError> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(SimError::BadConfig(format!(
                "gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        if self.refresh_cadence == 0 {
            return Err(SimError::BadConfig("refresh cadence must be >= 1".into()));
        }
        if self.block == 0 {
            return Err(SimError::BadConfig("block size must be >= 1".into()));
        }
        Ok(())
    }
}

/// A cached prefix: its token sequence plus the frozen checkpoint schedule.
#[derive(Debug, Clone)]
pub struct CacheEntry {
    pub id: EntryId,
    pub tokens: Vec<Token>,
    pub checkpoints: CheckpointSet,
}

/// Ordered collection of at most `capacity` entries with a trie index.
/// Insertion ids are monotone and eviction is FIFO, so id lookup is an
/// offset from the oldest entry.
#[derive(Debug)]
pub struct CacheState {
    capacity: usize,
    entries: VecDeque<CacheEntry>,
    index: PrefixTrie,
    next_id: EntryId,
}

impl CacheState {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: VecDeque::new(),
            index: PrefixTrie::new(),
            next_id: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: EntryId) -> Option<&CacheEntry> {
        let front = self.entries.front()?.id;
        self.entries.get(usize::try_from(id.checked_sub(front)?).ok()?)
    }

    /// Entry with the longest common prefix against `tokens` and the LCP
    /// depth; ties go to the most recently inserted entry.
    pub fn match_longest_prefix(&self, tokens: &[Token]) -> Option<(&CacheEntry, usize)> {
        let (id, depth) = self.index.match_longest_prefix(tokens)?;
        Some((self.entry(id).expect("index points at live entry"), depth))
    }

    /// Inserts a new entry, evicting the oldest beyond capacity first so
    /// the size bound never breaks. Returns `None` when capacity is zero.
    fn insert(&mut self, tokens: Vec<Token>, checkpoints: CheckpointSet) -> Option<EntryId> {
        if self.capacity == 0 {
            return None;
        }
        while self.entries.len() >= self.capacity {
            self.evict_oldest();
        }
        let id = self.next_id;
        self.next_id += 1;
        self.index.insert(id, &tokens);
        self.entries.push_back(CacheEntry {
            id,
            tokens,
            checkpoints,
        });
        Some(id)
    }

    fn evict_oldest(&mut self) -> Option<CacheEntry> {
        let entry = self.entries.pop_front()?;
        self.index.remove(entry.id, &entry.tokens);
        Some(entry)
    }

    pub fn iter(&self) -> impl Iterator<Item = &CacheEntry> {
        self.entries.iter()
    }
}

/// Per-request outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub id: u64,
    pub group: String,
    pub length: usize,
    /// Overlap depth `t` (0 on miss).
    pub overlap: usize,
    /// Deepest reusable checkpoint `l(t)`.
    pub reusable: usize,
    /// Replayed tokens `t - l(t)`.
    pub recompute: usize,
    /// Tokens beyond the overlap, paid as fresh computation.
    pub new_suffix: usize,
    pub hit: bool,
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

/// Aggregates over one run. Savings normalizes over overlap tokens only
/// (misses pay full length as new computation and are reported via the hit
/// rate instead, so capacity effects stay visible).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub requests: u64,
    pub hits: u64,
    pub hit_rate: f64,
    /// No-cache baseline: total matched-overlap tokens.
    pub total_overlap: u64,
    pub total_recompute: u64,
    pub savings: f64,
    #[serde(
        serialize_with = "serialize_reduction",
        deserialize_with = "deserialize_reduction"
    )]
    pub reduction: f64,
    /// Mean checkpoints per inserted entry.
    pub avg_slots_per_entry: f64,
    /// Largest concurrent checkpoint count across the cache.
    pub peak_slots: u64,
    /// Largest concurrent stored bytes under the cost model.
    pub peak_bytes: u64,
    pub inserted_entries: u64,
    pub evictions: u64,
    /// Observations clamped down to the estimator's depth range.
    pub clamped_observations: u64,
}

/// Full result: per-request records plus aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub records: Vec<RequestRecord>,
    pub aggregate: Aggregate,
}

/// Planner state: strategy dispatch plus the cached DP solution for the
/// current histogram snapshot. Non-DP strategies depend only on the entry
/// length, so the same memo serves them too.
struct Planner {
    strategy: Strategy,
    budget: usize,
    block: usize,
    grid_mode: bool,
    snapshot: Option<OverlapHistogram>,
    /// Largest depth with estimated mass; entries at least this long all
    /// share `base_schedule`.
    support_max: usize,
    base_schedule: Option<Vec<usize>>,
    memo: HashMap<usize, CheckpointSet>,
}

impl Planner {
    fn new(config: &SimConfig) -> Self {
        Self {
            strategy: config.strategy,
            budget: config.budget,
            block: config.block,
            grid_mode: config.grid_mode,
            snapshot: None,
            support_max: 0,
            base_schedule: None,
            memo: HashMap::new(),
        }
    }

    /// Re-snapshots the histogram and re-solves the base DP schedule;
    /// affects only future insertions.
    fn refresh(&mut self, estimator: &EstimatorState) -> Result<(), SimError> {
        if estimator.sample_count() == 0 {
            return Ok(());
        }
        let snapshot = estimator.snapshot()?;
        self.memo.clear();
        self.support_max = snapshot.support_max();
        if self.strategy == Strategy::Dp {
            let schedule = self.solve_dp(&snapshot, snapshot.n_positions())?;
            self.base_schedule = Some(schedule.positions().to_vec());
        }
        self.snapshot = Some(snapshot);
        Ok(())
    }

    fn solve_dp(&self, h: &OverlapHistogram, n: usize) -> Result<CheckpointSet, SimError> {
        let budget = self.budget.min(n);
        let set = if self.grid_mode {
            dp_optimal(h, budget, Some(self.block))?
        } else {
            clip_to_blocks(&dp_optimal(h, budget, None)?, self.block)
        };
        Ok(set)
    }

    /// Balanced schedule: the cold-start fallback (minimax-optimal when
    /// nothing is known) and the balanced strategy proper.
    fn balanced_for(&self, n: usize) -> Result<CheckpointSet, SimError> {
        let set = balanced_placement(n, self.budget.min(n))?;
        Ok(clip_to_blocks(&set, self.block))
    }

    /// Schedule for a new entry of length `n`, under the snapshot taken at
    /// the last refresh. Per-entry lengths vary, so the histogram is
    /// truncated and re-normalized to depths <= n when needed.
    fn schedule_for(&mut self, n: usize) -> Result<CheckpointSet, SimError> {
        if let Some(cached) = self.memo.get(&n) {
            return Ok(cached.clone());
        }
        let schedule = match self.strategy {
            Strategy::Balanced => self.balanced_for(n)?,
            Strategy::Block => block_placement(n, self.block),
            Strategy::Sqrt => clip_to_blocks(&sqrt_placement(n), self.block),
            Strategy::Logarithmic => {
                let set = logarithmic_placement(n, self.budget.min(n))?;
                clip_to_blocks(&set, self.block)
            }
            Strategy::Dp => match &self.snapshot {
                // Cold start: nothing observed yet.
                None => self.balanced_for(n)?,
                Some(snapshot) => {
                    if n >= self.support_max {
                        // All estimated mass lies at or below n, so the
                        // base solution applies as-is.
                        let positions = self
                            .base_schedule
                            .clone()
                            .expect("base schedule exists whenever snapshot does");
                        CheckpointSet::new(n, positions).map_err(SimError::Planner)?
                    } else {
                        match snapshot.truncated(n) {
                            Ok(truncated) => self.solve_dp(&truncated, n)?,
                            // No estimated mass at reachable depths: fall
                            // back to the minimax-safe schedule.
                            Err(_) => self.balanced_for(n)?,
                        }
                    }
                }
            },
        };
        self.memo.insert(n, schedule.clone());
        Ok(schedule)
    }
}

/// One simulation run: owns the cache, estimator, planner, and metrics.
/// Strictly sequential; construct one per sweep cell for parallel runs.
pub struct Simulation {
    config: SimConfig,
    cache: CacheState,
    estimator: EstimatorState,
    planner: Planner,
    records: Vec<RequestRecord>,
    hits: u64,
    total_overlap: u64,
    total_recompute: u64,
    inserted: u64,
    evictions: u64,
    slots_inserted: u64,
    cur_slots: u64,
    cur_bytes: u64,
    peak_slots: u64,
    peak_bytes: u64,
}

impl Simulation {
    pub fn new(config: SimConfig, n_positions: usize) -> Result<Self, SimError> {
        config.validate()?;
        let n = config.n_positions.unwrap_or(n_positions).max(1);
        let estimator = EstimatorState::new(n, config.gamma)?;
        let planner = Planner::new(&config);
        Ok(Self {
            cache: CacheState::new(config.capacity),
            estimator,
            planner,
            config,
            records: Vec::new(),
            hits: 0,
            total_overlap: 0,
            total_recompute: 0,
            inserted: 0,
            evictions: 0,
            slots_inserted: 0,
            cur_slots: 0,
            cur_bytes: 0,
            peak_slots: 0,
            peak_bytes: 0,
        })
    }

    pub fn cache(&self) -> &CacheState {
        &self.cache
    }

    pub fn estimator(&self) -> &EstimatorState {
        &self.estimator
    }

    fn observe_and_refresh(&mut self, depth: usize) -> Result<(), SimError> {
        self.estimator.observe_clamped(depth)?;
        if self.estimator.sample_count().is_multiple_of(self.config.refresh_cadence) {
            self.planner.refresh(&self.estimator)?;
        }
        Ok(())
    }

    fn entry_bytes(&self, slots: usize, tokens: usize) -> u64 {
        slots as u64 * self.config.cost_model.recurrent_bytes_per_checkpoint
            + tokens as u64 * self.config.cost_model.kv_bytes_per_token
    }

    /// Serves one token-mode request: match, charge, observe, admit,
    /// evict. The schedule is computed before the cache is touched, so a
    /// planner error leaves the cache unchanged.
    pub fn serve(&mut self, request: &Request) -> Result<RequestRecord, SimError> {
        if request.tokens.is_empty() {
            return Err(SimError::EmptyTokens(request.id));
        }
        let length = request.tokens.len();
        let matched = self
            .cache
            .match_longest_prefix(&request.tokens)
            .map(|(entry, depth)| (entry.id, depth));
        let record = match matched {
            Some((entry_id, t)) => {
                let entry = self.cache.entry(entry_id).expect("matched entry is live");
                let reusable = entry.checkpoints.reusable_depth(t)?;
                RequestRecord {
                    id: request.id,
                    group: request.group.clone(),
                    length,
                    overlap: t,
                    reusable,
                    recompute: t - reusable,
                    new_suffix: length - t,
                    hit: true,
                }
            }
            None => RequestRecord {
                id: request.id,
                group: request.group.clone(),
                length,
                overlap: 0,
                reusable: 0,
                recompute: 0,
                new_suffix: length,
                hit: false,
            },
        };
        if record.hit {
            self.hits += 1;
            self.total_overlap += record.overlap as u64;
            self.total_recompute += record.recompute as u64;
            self.observe_and_refresh(record.overlap)?;
        }
        if self.config.capacity > 0 {
            let schedule = self.planner.schedule_for(length)?;
            let slots = schedule.len();
            while self.cache.len() >= self.config.capacity {
                let evicted = self.cache.evict_oldest().expect("cache is non-empty");
                self.cur_slots -= evicted.checkpoints.len() as u64;
                self.cur_bytes -= self.entry_bytes(evicted.checkpoints.len(), evicted.tokens.len());
                self.evictions += 1;
            }
            self.cache
                .insert(request.tokens.clone(), schedule)
                .expect("capacity checked above");
            self.inserted += 1;
            self.slots_inserted += slots as u64;
            self.cur_slots += slots as u64;
            self.cur_bytes += self.entry_bytes(slots, length);
            self.peak_slots = self.peak_slots.max(self.cur_slots);
            self.peak_bytes = self.peak_bytes.max(self.cur_bytes);
        }
        self.records.push(record.clone());
        Ok(record)
    }

    /// Serves one depth-mode record: the overlap is given, the schedule is
    /// what the planner would store for an entry of that length, and no
    /// cache state is kept.
    pub fn serve_depth(&mut self, rec: &DepthRecord) -> Result<RequestRecord, SimError> {
        if rec.length == 0 || rec.overlap_depth > rec.length {
            return Err(SimError::BadLine {
                line: 0,
                message: format!(
                    "need 0 <= overlap_depth <= length, got {}/{}",
                    rec.overlap_depth, rec.length
                ),
            });
        }
        let schedule = self.planner.schedule_for(rec.length)?;
        let t = rec.overlap_depth;
        let (reusable, hit) = if t >= 1 {
            (schedule.reusable_depth(t)?, true)
        } else {
            (0, false)
        };
        let record = RequestRecord {
            id: rec.id,
            group: String::new(),
            length: rec.length,
            overlap: t,
            reusable,
            recompute: t - reusable,
            new_suffix: rec.length - t,
            hit,
        };
        if hit {
            self.hits += 1;
            self.total_overlap += t as u64;
            self.total_recompute += record.recompute as u64;
            self.observe_and_refresh(t)?;
        }
        self.inserted += 1;
        self.slots_inserted += schedule.len() as u64;
        let bytes = self.entry_bytes(schedule.len(), rec.length);
        self.peak_slots = self.peak_slots.max(schedule.len() as u64);
        self.peak_bytes = self.peak_bytes.max(bytes);
        self.records.push(record.clone());
        Ok(record)
    }

    pub fn finish(self) -> SimMetrics {
        let requests = self.records.len() as u64;
        let hit_rate = if requests > 0 {
            self.hits as f64 / requests as f64
        } else {
            0.0
        };
        let savings = if self.total_overlap > 0 {
            1.0 - self.total_recompute as f64 / self.total_overlap as f64
        } else {
            0.0
        };
        let reduction = if self.total_overlap == 0 {
            1.0
        } else if self.total_recompute > 0 {
            self.total_overlap as f64 / self.total_recompute as f64
        } else {
            f64::INFINITY
        };
        let avg_slots_per_entry = if self.inserted > 0 {
            self.slots_inserted as f64 / self.inserted as f64
        } else {
            0.0
        };
        SimMetrics {
            records: self.records,
            aggregate: Aggregate {
                requests,
                hits: self.hits,
                hit_rate,
                total_overlap: self.total_overlap,
                total_recompute: self.total_recompute,
                savings,
                reduction,
                avg_slots_per_entry,
                peak_slots: self.peak_slots,
                peak_bytes: self.peak_bytes,
                inserted_entries: self.inserted,
                evictions: self.evictions,
                clamped_observations: self.estimator.clamped_count(),
            },
        }
    }
}

/// Replays a full trace. Deterministic given the trace and config; the
/// trace must be sorted by arrival time.
pub fn run_simulation(trace: &Trace, config: SimConfig) -> Result<SimMetrics, SimError> {
    if trace.is_empty() {
        return Err(SimError::EmptyTrace);
    }
    let mut sim = Simulation::new(config, trace.max_length())?;
    match trace {
        Trace::Tokens(requests) => {
            for (i, pair) in requests.windows(2).enumerate() {
                if pair[1].arrival_time < pair[0].arrival_time {
                    return Err(SimError::TraceNotSorted(i + 1));
                }
            }
            for r in requests {
                sim.serve(r)?;
            }
        }
        Trace::Depths(records) => {
            for d in records {
                sim.serve_depth(d)?;
            }
        }
    }
    Ok(sim.finish())
}

/// One sweep cell result. Slots are mean checkpoints per inserted entry;
/// expected recompute is mean replayed tokens per hit; bytes are the peak
/// stored bytes under the cost model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub strategy: Strategy,
    pub budget: usize,
    pub slots: f64,
    pub expected_recompute: f64,
    pub savings: f64,
    #[serde(
        serialize_with = "serialize_reduction",
        deserialize_with = "deserialize_reduction"
    )]
    pub reduction: f64,
    pub bytes: u64,
    /// Non-dominated in (slots, savings) across the whole table.
    pub pareto: bool,
}

/// Runs one simulation per (strategy, budget) pair, in parallel, and flags
/// the Pareto front in (slots, savings). Rows come back sorted by
/// (strategy, budget) regardless of execution order.
pub fn sweep(
    trace: &Trace,
    base_config: &SimConfig,
    budgets: &[usize],
    strategies: &[Strategy],
) -> Result<Vec<SweepRow>, SimError> {
    if budgets.is_empty() || strategies.is_empty() {
        return Err(SimError::EmptySweep);
    }
    let mut cells: Vec<(Strategy, usize)> = strategies
        .iter()
        .flat_map(|&s| budgets.iter().map(move |&m| (s, m)))
        .collect();
    cells.sort();
    cells.dedup();
    // Budget-independent strategies are simulated once and replicated.
    let runs: Vec<(Strategy, usize)> = {
        let mut seen_flat: Vec<Strategy> = Vec::new();
        cells
            .iter()
            .filter(|&&(s, _)| {
                if !s.budget_independent() {
                    return true;
                }
                if seen_flat.contains(&s) {
                    false
                } else {
                    seen_flat.push(s);
                    true
                }
            })
            .copied()
            .collect()
    };
    type KeyedRow = ((Strategy, usize), SweepRow);
    let results: Result<Vec<KeyedRow>, SimError> = runs
        .par_iter()
        .map(|&(strategy, budget)| {
            let config = SimConfig {
                strategy,
                budget,
                ..base_config.clone()
            };
            let metrics = run_simulation(trace, config)?;
            let a = metrics.aggregate;
            let row = SweepRow {
                strategy,
                budget,
                slots: a.avg_slots_per_entry,
                expected_recompute: if a.hits > 0 {
                    a.total_recompute as f64 / a.hits as f64
                } else {
                    0.0
                },
                savings: a.savings,
                reduction: a.reduction,
                bytes: a.peak_bytes,
                pareto: false,
            };
            Ok(((strategy, budget), row))
        })
        .collect();
    let results = results?;
    let mut rows: Vec<SweepRow> = cells
        .iter()
        .map(|&(strategy, budget)| {
            let source = results
                .iter()
                .find(|((s, m), _)| {
                    *s == strategy && (strategy.budget_independent() || *m == budget)
                })
                .expect("every cell has a backing run");
            SweepRow {
                budget,
                ..source.1.clone()
            }
        })
        .collect();
    mark_pareto(&mut rows);
    Ok(rows)
}

/// Flags rows not dominated in (slots minimized, savings maximized).
pub fn mark_pareto(rows: &mut [SweepRow]) {
    for i in 0..rows.len() {
        let dominated = rows.iter().enumerate().any(|(j, other)| {
            j != i
                && other.slots <= rows[i].slots
                && other.savings >= rows[i].savings
                && (other.slots < rows[i].slots || other.savings > rows[i].savings)
        });
        rows[i].pareto = !dominated;
    }
}
