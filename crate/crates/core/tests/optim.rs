mod common;

use common::{coarse_grid, random_model, random_sequence};
use deepstpp::intensity::SttpModel;
use deepstpp::model::{GridResolution, SpatialDomain, TimeWindow};
use deepstpp::optim::{evaluate, fit, fit_loss, FitOptions, ObjectiveKind, Termination};
use deepstpp::simulate::{simulate_many, SimOptions};

fn quick(objective: ObjectiveKind, epochs: usize) -> FitOptions {
    FitOptions {
        objective,
        max_epochs: epochs,
        learning_rate: 5e-2,
        resolution: GridResolution { spacetime: [8, 4, 4], lag: 16, disp: 8 },
        ..FitOptions::default()
    }
}

#[test]
fn poisson_baseline_is_recovered() {
    let w = TimeWindow::new(10.0).unwrap();
    let d = SpatialDomain::centered_square(1.0).unwrap();
    let truth = SttpModel::poisson(2.0, w, d).unwrap();
    let data = simulate_many(&truth, 30, 10.0, 1, &SimOptions::default()).unwrap();
    let init = SttpModel::poisson(0.5, w, d).unwrap();
    for obj in [ObjectiveKind::MleBarrier, ObjectiveKind::LeastSquares] {
        let (m, rep) = fit(&init, &data, &quick(obj, 400)).unwrap();
        assert_ne!(rep.termination, Termination::Diverged);
        assert!((m.mu - 2.0).abs() / 2.0 < 0.1, "{obj:?}: mu {}", m.mu);
    }
}

#[test]
fn fitting_is_deterministic() {
    let init = random_model(2, 1, 1, 4.0);
    let data = vec![random_sequence(1, 8, init.window, &init.domain), random_sequence(2, 5, init.window, &init.domain)];
    let o = quick(ObjectiveKind::MleBarrier, 20);
    let (a, ra) = fit(&init, &data, &o).unwrap();
    let (b, rb) = fit(&init, &data, &o).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra.trace, rb.trace);
}

#[test]
fn reported_objective_is_reproducible() {
    let init = random_model(4, 1, 1, 4.0);
    let data = vec![random_sequence(3, 6, init.window, &init.domain)];
    for obj in [ObjectiveKind::MleBarrier, ObjectiveKind::LeastSquares] {
        let o = quick(obj, 15);
        let (m, rep) = fit(&init, &data, &o).unwrap();
        let again = fit_loss(&m, &data, &o, rep.final_barrier_weight).unwrap();
        assert!((again - rep.final_objective).abs() <= 1e-10 * (1.0 + again.abs()));
    }
}

#[test]
fn zero_epochs_returns_initial_model() {
    let init = random_model(5, 2, 2, 4.0);
    let data = vec![random_sequence(3, 6, init.window, &init.domain)];
    let (m, rep) = fit(&init, &data, &quick(ObjectiveKind::LeastSquares, 0)).unwrap();
    assert_eq!(m, init);
    assert!(rep.trace.is_empty());
}

#[test]
fn true_model_beats_misspecified_on_held_out_data() {
    let w = TimeWindow::new(10.0).unwrap();
    let d = SpatialDomain::centered_square(1.0).unwrap();
    let truth = SttpModel::poisson(3.0, w, d).unwrap();
    let test = simulate_many(&truth, 20, 10.0, 99, &SimOptions::default()).unwrap();
    let g = coarse_grid(&truth);
    let good = evaluate(&truth, &test, &g).unwrap().loglik_per_event.unwrap();
    let bad = evaluate(&SttpModel::poisson(1.0, w, d).unwrap(), &test, &g).unwrap().loglik_per_event.unwrap();
    assert!(good > bad);
}
