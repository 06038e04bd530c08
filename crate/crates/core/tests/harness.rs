use saga::harness::{
    aggregate_rows, compute_metrics, log_to_csv, run_benchmark, run_episode, BenchmarkSpec, EpisodeConfig,
    FailureCause, SelectionMode,
};
use saga::net::{NetConfig, PlannerNet};
use saga::world::PillarWorld;

#[test]
fn free_space_oracle_flies_nearly_straight() {
    let world = PillarWorld::empty();
    let r = run_episode(&world, None, &EpisodeConfig::default()).unwrap();
    assert!(r.success);
    assert_eq!(r.failure_cause, FailureCause::None);
    let straight = 36.0;
    // arrival is declared at the tolerance ball, so the flown path can be short of 36 m
    assert!((r.metrics.traj_length - straight).abs() <= 0.05 * straight, "{}", r.metrics.traj_length);
}

#[test]
fn episodes_are_deterministic() {
    let world = PillarWorld::generate_default(3, 0.1).unwrap();
    for mode in [SelectionMode::Oracle, SelectionMode::Random] {
        let config = EpisodeConfig {
            selection_mode: mode,
            seed: 3,
            ..EpisodeConfig::default()
        };
        let a = run_episode(&world, None, &config).unwrap();
        let b = run_episode(&world, None, &config).unwrap();
        assert_eq!(log_to_csv(&a.log), log_to_csv(&b.log));
        assert_eq!(a.metrics, b.metrics);
    }
}

#[test]
fn reported_metrics_are_consistent_with_the_log() {
    for seed in 0..4 {
        let world = PillarWorld::generate_default(seed, 0.1).unwrap();
        for mode in [SelectionMode::Oracle, SelectionMode::Random] {
            let config = EpisodeConfig {
                selection_mode: mode,
                seed,
                ..EpisodeConfig::default()
            };
            let r = run_episode(&world, None, &config).unwrap();
            assert_eq!(r.success, r.failure_cause == FailureCause::None);
            if r.success {
                assert!(r.log.samples.iter().all(|s| s.signed_distance >= config.vehicle_radius));
            }
            let m = r.metrics;
            assert!(m.min_safety <= m.avg_safety);
            assert_eq!(compute_metrics(&r.log, &world).unwrap(), m);
            // smoothness is the sum of the executed pieces' closed-form jerk integrals
            let pieces: f64 = r.log.pieces.iter().map(|p| p.traj.jerk_integral_between(0.0, p.duration)).sum();
            assert!((m.smoothness - pieces).abs() <= 1e-6 * pieces.max(1e-12));
        }
    }
}

#[test]
fn benchmark_counts_and_aggregates() {
    let base = EpisodeConfig::default();
    let spec = BenchmarkSpec {
        seeds: vec![0, 1],
        speeds: vec![2.0],
        densities: vec![0.05],
        modes: vec![SelectionMode::Oracle],
        jobs: 1,
    };
    let report = run_benchmark(&spec, &base, None).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert_eq!(report.aggregates.len(), 1);
    assert_eq!(aggregate_rows(&report.rows), report.aggregates);
    for row in &report.rows {
        assert!(row.metrics.min_safety <= row.metrics.avg_safety);
    }
}

#[test]
fn aborted_episode_becomes_a_failed_row() {
    let net = PlannerNet::init(NetConfig::tiny(), 1).unwrap();
    let spec = BenchmarkSpec {
        seeds: vec![0],
        // terminal velocities scale with the speed limit and overflow
        speeds: vec![1e307, 2.0],
        densities: vec![0.0],
        modes: vec![SelectionMode::Learned],
        jobs: 2,
    };
    let report = run_benchmark(&spec, &EpisodeConfig::default(), Some(&net)).unwrap();
    assert_eq!(report.rows.len(), 2);
    let fault = &report.rows[0];
    assert!(!fault.success);
    assert_eq!(fault.failure_cause, FailureCause::Fault);
    assert!(fault.error.is_some());
    assert!(report.rows[1].error.is_none());
    assert_eq!(report.aggregates[0].successes, 0);
}
