mod common;

use common::small_widths;
use deepstpp::basis::Basis;
use deepstpp::graph::{
    eval_graph_kernel, graph_filter_poly, graph_intensity, graph_loss, influence_snapshots, CachedGraphModel, Graph, GraphFilter,
    GraphFilterKernel, GraphModel, ShiftKind,
};
use deepstpp::kernel::ExpHawkesSpec;
use deepstpp::model::{Event, EventSequence, TimeWindow};
use deepstpp::optim::ObjectiveKind;
use deepstpp::simulate::{simulate_many, ExpHawkes, PointProcess, SimOptions};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn ring(n: usize) -> Graph {
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        a[(i, (i + 1) % n)] = 1.0;
        a[((i + 1) % n, i)] = 1.0;
    }
    Graph::new(a, false).unwrap()
}

fn deep_graph(filters: Vec<GraphFilter>, shift: Option<DMatrix<f64>>, seed: u64) -> GraphModel {
    let k = GraphFilterKernel::deep(4, 2, filters, shift, 2.0, &small_widths(4), 0.3, seed).unwrap();
    GraphModel::new(vec![0.8, 1.0, 0.6, 1.2], k, TimeWindow::new(5.0).unwrap()).unwrap()
}

fn node_events(seed: u64) -> Vec<EventSequence> {
    let w = TimeWindow::new(5.0).unwrap();
    (0..2)
        .map(|j| {
            let evs = (0..7).map(|i| Event::on_node(0.3 + 0.65 * i as f64 + 0.05 * (seed + j) as f64, (i + j as usize + seed as usize) % 4));
            EventSequence::new(evs.collect(), w)
        })
        .collect()
}

fn check_gradient(model: &GraphModel, data: &[EventSequence], objective: ObjectiveKind) {
    let f = |m: &GraphModel| graph_loss(m, data, objective, (0.1, 1e-6), 40, 30).unwrap();
    let (_, grad) = f(model);
    let theta = model.params();
    let mut m = model.clone();
    let h = 1e-5;
    let fd: Vec<f64> = (0..theta.len())
        .map(|i| {
            let mut p = theta.clone();
            p[i] += h;
            m.set_params(&p).unwrap();
            let up = f(&m).0;
            p[i] -= 2.0 * h;
            m.set_params(&p).unwrap();
            (up - f(&m).0) / (2.0 * h)
        })
        .collect();
    let scale = fd.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    for (i, (a, n)) in grad.iter().zip(&fd).enumerate() {
        let err = (a - n).abs() / n.abs().max(1e-2 * scale).max(1e-8);
        assert!(err < 1e-4, "{objective:?} parameter {i}: {a} vs {n}");
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    let s = ring(4).shift(ShiftKind::Laplacian);
    for seed in 0..4 {
        let free = deep_graph(vec![GraphFilter::Free((0..16).map(|i| 0.02 * i as f64).collect())], None, seed);
        let poly = deep_graph(vec![GraphFilter::Poly(vec![0.2, -0.05]), GraphFilter::Poly(vec![0.1])], Some(s.clone()), seed);
        let data = node_events(seed);
        for m in [&free, &poly] {
            check_gradient(m, &data, ObjectiveKind::LeastSquares);
            check_gradient(m, &data, ObjectiveKind::MleBarrier);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn polynomial_filter_matches_horner(h in prop::collection::vec(-1.0f64..1.0, 1..5), n in 2usize..6) {
        let s = ring(n).shift(ShiftKind::Adjacency);
        let got = graph_filter_poly(&s, &h).unwrap();
        // h_1 S + ... + h_J S^J = S (h_1 + S (h_2 + ...))
        let eye = DMatrix::<f64>::identity(n, n);
        let mut acc = DMatrix::<f64>::zeros(n, n);
        for &c in h.iter().rev() {
            acc = &s * (&eye * c + acc);
        }
        prop_assert!((got - acc).norm() < 1e-10);
    }
}

#[test]
fn single_node_reduces_to_temporal_hawkes() {
    let k = GraphFilterKernel::new(
        1,
        vec![1.0],
        vec![Basis::Constant(1.0)],
        vec![Basis::ScaledExp { scale: 0.6, rate: 1.2 }],
        vec![GraphFilter::Free(vec![1.0])],
        None,
        100.0,
    )
    .unwrap();
    let g = GraphModel::new(vec![0.7], k, TimeWindow::new(10.0).unwrap()).unwrap();
    let h = ExpHawkes(ExpHawkesSpec::new(0.7, 0.6, 1.2).unwrap());
    let hist_g: Vec<Event> = [0.5, 1.1, 4.0].iter().map(|&t| Event::on_node(t, 0)).collect();
    let hist_t: Vec<Event> = [0.5, 1.1, 4.0].iter().map(|&t| Event::temporal(t)).collect();
    for t in [0.7, 2.0, 4.5, 9.0] {
        let a = graph_intensity(&g, &hist_g, t, 0).unwrap();
        let b = h.intensity(&hist_t, t, deepstpp::simulate::Location::None);
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn kernel_is_causal_and_node_checked() {
    let m = deep_graph(vec![GraphFilter::Free(vec![0.1; 16])], None, 1);
    assert!(eval_graph_kernel(&m.kernel, 1.0, 1.0, 0, 0).is_err());
    assert!(eval_graph_kernel(&m.kernel, 1.0, 2.0, 0, 4).is_err());
    assert!(graph_intensity(&m, &[Event::on_node(0.5, 7)], 1.0, 0).is_err());
}

#[test]
fn snapshots_decay_and_are_stationary_for_constant_source_modulation() {
    let b: Vec<f64> = (0..9).map(|i| 0.1 * (i % 4) as f64).collect();
    let k = GraphFilterKernel::new(
        3,
        vec![0.8],
        vec![Basis::Constant(1.0)],
        vec![Basis::ExpDecay { rate: 1.0 }],
        vec![GraphFilter::Free(b)],
        None,
        3.0,
    )
    .unwrap();
    let m = GraphModel::new(vec![0.2], k, TimeWindow::new(10.0).unwrap()).unwrap();
    let lags = [0.1, 0.5, 1.0, 2.5];
    let a = influence_snapshots(&m, 5.0, &lags).unwrap();
    let b = influence_snapshots(&m, 8.0, &lags).unwrap();
    let norms: Vec<f64> = a.iter().map(|s| s.norm()).collect();
    assert!(norms.windows(2).all(|w| w[1] <= w[0]));
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).norm() < 1e-14);
    }
    assert!(influence_snapshots(&m, 1.0, &[2.0]).is_err());
}

#[test]
fn graph_simulation_is_deterministic_and_on_nodes() {
    let m = deep_graph(vec![GraphFilter::Free(vec![0.05; 16])], None, 2);
    let c = CachedGraphModel::new(m);
    let a = simulate_many(&c, 3, 5.0, 10, &SimOptions::default()).unwrap();
    assert_eq!(a, simulate_many(&c, 3, 5.0, 10, &SimOptions::default()).unwrap());
    assert!(a.iter().flat_map(|s| &s.events).all(|e| e.node.is_some_and(|v| v < 4)));
}
