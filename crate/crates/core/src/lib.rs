//! Checkpoint planning for recurrent-state prefix caches.
//!
//! Recurrent and hybrid models can resume a cached prefix from a single
//! stored hidden state, so a cache entry only needs exact states at a sparse
//! set of checkpoint positions; a hit resumes from the deepest checkpoint at
//! or below the overlap depth and replays the rest. This crate provides the
//! pieces needed to plan and evaluate such placements:
//!
//! - [`distribution`]: overlap-depth histograms, prefix sums, L1 distance,
//!   plug-in sample bounds, and synthetic histogram shapes.
//! - [`placement`]: checkpoint sets, cost evaluation, fixed baselines
//!   (balanced, block, sqrt, logarithmic), block clipping, and the exact
//!   distribution-aware dynamic program with a convex-hull-trick inner loop.
//! - [`estimator`]: online overlap estimation, plain or exponentially
//!   weighted for drifting workloads.
//! - [`simulator`]: trace replay through a last-K prefix cache with
//!   per-entry checkpoint schedules and recompute accounting.
//! - [`workload`]: synthetic grouped traces with controlled overlap and
//!   Poisson arrival interleaving, plus drifting depth streams.
//! - [`report`]: CSV / JSON rendering of simulation and sweep results.

pub mod distribution;
pub mod estimator;
pub mod placement;
pub mod report;
pub mod simulator;
pub mod trie;
pub mod workload;

pub use distribution::{OverlapHistogram, Shape};
pub use estimator::EstimatorState;
pub use placement::{CheckpointSet, PlacementCost};
pub use simulator::{CacheState, Request, SimConfig, SimMetrics, StateCostModel, Strategy};
