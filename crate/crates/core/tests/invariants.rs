//! Cross-module invariants that need end-to-end machinery: capacity and
//! budget monotonicity of the simulator, the plug-in planner's excess-cost
//! bound, and the generated-trace overlap concentration check.

use ckplan::distribution::{synth_distribution, OverlapHistogram, Shape};
use ckplan::estimator::EstimatorState;
use ckplan::placement::{dp_optimal, expected_cost};
use ckplan::simulator::{run_simulation, SimConfig, Strategy, Trace};
use ckplan::workload::{gen_groups, poisson_interleave, TraceSpec};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_trace(seed: u64) -> Trace {
    let overlap = synth_distribution(Shape::Multimodal { n_modes: 3 }, 200, seed).unwrap();
    let spec = TraceSpec {
        n_groups: 8,
        requests_per_group: 60,
        overlap,
        suffix_len: (4, 20),
        seed,
    };
    let groups = gen_groups(&spec).unwrap();
    Trace::Tokens(poisson_interleave(
        groups.into_iter().map(|g| g.requests).collect(),
        1.0,
        seed,
    ))
}

fn mean_savings(config_of: impl Fn(u64) -> SimConfig, param: usize) -> f64 {
    let seeds = [11u64, 22, 33, 44, 55];
    let total: f64 = seeds
        .iter()
        .map(|&seed| {
            let trace = small_trace(seed);
            run_simulation(&trace, config_of(seed)).unwrap().aggregate.savings
        })
        .sum();
    let _ = param;
    total / seeds.len() as f64
}

#[test]
fn savings_monotone_in_capacity() {
    let base = SimConfig {
        budget: 4,
        block: 16,
        strategy: Strategy::Dp,
        ..SimConfig::default()
    };
    let mut prev = -1.0;
    for k in [1usize, 5, 20] {
        let mean = mean_savings(
            |_| SimConfig {
                capacity: k,
                ..base.clone()
            },
            k,
        );
        assert!(
            mean >= prev - 1e-9,
            "mean savings dropped from {prev} to {mean} at K={k}"
        );
        prev = mean;
    }
}

#[test]
fn savings_monotone_in_budget() {
    let base = SimConfig {
        capacity: 10,
        block: 16,
        strategy: Strategy::Dp,
        ..SimConfig::default()
    };
    let mut prev = -1.0;
    for m in [1usize, 2, 8] {
        let mean = mean_savings(
            |_| SimConfig {
                budget: m,
                ..base.clone()
            },
            m,
        );
        assert!(
            mean >= prev - 1e-9,
            "mean savings dropped from {prev} to {mean} at M={m}"
        );
        prev = mean;
    }
}

#[test]
fn plugin_schedule_never_worse_than_oracle_beyond_the_bound() {
    // Feeding the true distribution to the solver can beat the estimator
    // by at most the stability bound applied twice: once to evaluate the
    // plug-in schedule under the true law and once to transfer optimality.
    let n = 64usize;
    let budget = 4usize;
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    for trial in 0..50 {
        let truth = synth_distribution(Shape::Multimodal { n_modes: 4 }, n, trial).unwrap();
        let samples = 50 + (trial as usize % 5) * 200;
        let mut est = EstimatorState::new(n, 1.0).unwrap();
        for _ in 0..samples {
            est.observe(truth.sample_depth_from_uniform(rng.random())).unwrap();
        }
        let empirical = est.snapshot().unwrap();
        let l1 = truth.l1_distance(&empirical).unwrap();
        let plugin = dp_optimal(&empirical, budget, None).unwrap();
        let oracle = dp_optimal(&truth, budget, None).unwrap();
        let plugin_cost = expected_cost(&truth, &plugin).unwrap().expected_recompute;
        let oracle_cost = expected_cost(&truth, &oracle).unwrap().expected_recompute;
        assert!(plugin_cost >= oracle_cost - 1e-9);
        assert!(
            plugin_cost - oracle_cost <= 2.0 * n as f64 * l1 + 1e-9,
            "trial {trial}: excess {} above 2N*l1 {}",
            plugin_cost - oracle_cost,
            2.0 * n as f64 * l1
        );
    }
}

#[test]
fn per_request_records_respect_depth_ordering() {
    // 0 <= r <= t <= request length on every record, hits observe
    // positive depth, misses pay the whole request as new suffix.
    let trace = small_trace(77);
    let metrics = run_simulation(
        &trace,
        SimConfig {
            capacity: 6,
            budget: 3,
            block: 16,
            strategy: Strategy::Dp,
            ..SimConfig::default()
        },
    )
    .unwrap();
    for r in &metrics.records {
        assert!(r.recompute <= r.overlap);
        assert!(r.overlap <= r.length);
        assert!(r.reusable <= r.overlap);
        assert_eq!(r.recompute, r.overlap - r.reusable);
        if r.hit {
            assert!(r.overlap >= 1);
            assert_eq!(r.new_suffix, r.length - r.overlap);
        } else {
            assert_eq!(r.overlap, 0);
            assert_eq!(r.new_suffix, r.length);
        }
    }
    let a = &metrics.aggregate;
    assert!(a.savings >= 0.0 && a.savings <= 1.0);
    assert!(a.total_recompute <= a.total_overlap);
}

#[test]
fn generated_lcp_histogram_tracks_the_target_shape() {
    // Spike at the full document length: the per-request LCP against the
    // group base reproduces the target distribution up to sampling noise.
    let n = 100usize;
    let shape = Shape::EndSpike {
        spike_mass: 0.95,
        spike_width: 3,
    };
    let target = synth_distribution(shape, n, 7).unwrap();
    let spec = TraceSpec {
        n_groups: 20,
        requests_per_group: 500,
        overlap: target.clone(),
        suffix_len: (2, 10),
        seed: 7,
    };
    let groups = gen_groups(&spec).unwrap();
    let mut counts = vec![0.0f64; n];
    let mut total = 0usize;
    for g in &groups {
        for r in &g.requests {
            let lcp = r
                .tokens
                .iter()
                .zip(&g.base)
                .take_while(|(a, b)| a == b)
                .count();
            assert!(lcp >= 1 && lcp <= n);
            counts[lcp - 1] += 1.0;
            total += 1;
        }
    }
    assert_eq!(total, 10_000);
    let empirical = OverlapHistogram::from_counts(&counts).unwrap();
    let l1 = target.l1_distance(&empirical).unwrap();
    // TV <= 0.1 at 10^4 requests, i.e. L1 <= 0.2.
    assert!(l1 <= 0.2, "L1 distance {l1} too large for 10^4 samples");
}
