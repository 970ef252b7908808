mod common;

use deepstpp::intensity::SttpModel;
use deepstpp::kernel::{ExpHawkesSpec, ReferenceKernelParams};
use deepstpp::model::{validate_sequence, SpatialDomain, TimeWindow};
use deepstpp::simulate::{simulate, simulate_many, time_rescaling_check, ExpHawkes, SimOptions};

fn poisson(mu: f64, horizon: f64) -> SttpModel {
    SttpModel::poisson(mu, TimeWindow::new(horizon).unwrap(), SpatialDomain::new(0.0, 2.0, -1.0, 0.5).unwrap()).unwrap()
}

#[test]
fn poisson_counts_match_expectation() {
    let m = poisson(1.5, 8.0);
    let runs = 200;
    let seqs = simulate_many(&m, runs, 8.0, 1, &SimOptions::default()).unwrap();
    let mean = seqs.iter().map(|s| s.len() as f64).sum::<f64>() / runs as f64;
    let expected = 1.5 * 3.0 * 8.0;
    let se = (expected / runs as f64).sqrt();
    assert!((mean - expected).abs() < 3.0 * se, "mean {mean} vs {expected}");
}

#[test]
fn simulation_is_deterministic_in_seed() {
    let m = poisson(2.0, 5.0);
    let o = SimOptions::default();
    assert_eq!(simulate(&m, 5.0, 42, &o).unwrap(), simulate(&m, 5.0, 42, &o).unwrap());
    assert_ne!(simulate(&m, 5.0, 42, &o).unwrap(), simulate(&m, 5.0, 43, &o).unwrap());
    let many = simulate_many(&m, 3, 5.0, 42, &o).unwrap();
    assert_eq!(many, simulate_many(&m, 3, 5.0, 42, &o).unwrap());
}

#[test]
fn reference_trajectories_are_valid() {
    let k = ReferenceKernelParams::default().to_kernel(3.0, 2.0).unwrap();
    let dom = SpatialDomain::centered_square(1.0).unwrap();
    let m = SttpModel::new(1.0, k, TimeWindow::new(10.0).unwrap(), dom).unwrap();
    for seq in simulate_many(&m, 10, 10.0, 3, &SimOptions::default()).unwrap() {
        assert!(validate_sequence(&seq, Some(&dom)).is_ok());
        assert!(seq.events.iter().all(|e| e.t > 0.0 && e.t <= 10.0));
    }
}

#[test]
fn poisson_time_rescaling_is_calibrated() {
    let m = poisson(3.0, 10.0);
    let seqs = simulate_many(&m, 100, 10.0, 77, &SimOptions::default()).unwrap();
    let passed = seqs.iter().filter(|s| time_rescaling_check(&m, s).unwrap().1 > 0.01).count();
    assert!(passed >= 95, "{passed}/100");
}

#[test]
fn hawkes_mean_count_matches_branching_amplification() {
    let spec = ExpHawkesSpec::new(0.5, 0.6, 1.5).unwrap();
    let p = ExpHawkes(spec);
    let runs = 300;
    let seqs = simulate_many(&p, runs, 50.0, 9, &SimOptions::default()).unwrap();
    let mean = seqs.iter().map(|s| s.len() as f64).sum::<f64>() / runs as f64;
    let expected = spec.expected_count(50.0);
    assert!((mean - expected).abs() / expected < 0.05, "{mean} vs {expected}");
}

#[test]
fn rescaling_detects_misspecified_model() {
    let truth = ExpHawkes(ExpHawkesSpec::new(0.5, 0.8, 1.0).unwrap());
    let seqs = simulate_many(&truth, 50, 200.0, 5, &SimOptions::default()).unwrap();
    let mut rejected = 0;
    for s in &seqs {
        // Poisson with the same average rate ignores the clustering.
        let rate = s.len() as f64 / 200.0;
        let wrong = ExpHawkes(ExpHawkesSpec::new(rate, 0.0, 1.0).unwrap());
        if time_rescaling_check(&wrong, s).unwrap().1 < 0.05 {
            rejected += 1;
        }
    }
    assert!(rejected >= 40, "rejected {rejected}/50");
}
