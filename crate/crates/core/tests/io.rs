mod common;

use common::{random_model, random_sequence};
use deepstpp::graph::{GraphFilter, GraphFilterKernel, GraphModel};
use deepstpp::io::{format_corpus, format_grid, parse_corpus, parse_grid, Checkpoint, Corpus, GridTable, ModelPayload};
use deepstpp::model::{Event, EventSequence, SpatialDomain, TimeWindow};
use proptest::prelude::*;

#[test]
fn checkpoints_round_trip_byte_identically() {
    let sttp = random_model(3, 2, 2, 5.0);
    let k = GraphFilterKernel::deep(3, 1, vec![GraphFilter::Poly(vec![0.3, 0.1])], Some(nalgebra::DMatrix::identity(3, 3)), 2.0, &common::small_widths(4), 0.2, 1).unwrap();
    let graph = GraphModel::new(vec![0.1, 0.2, 0.3], k, TimeWindow::new(4.0).unwrap()).unwrap();
    for payload in [ModelPayload::Sttp { model: sttp }, ModelPayload::Graph { model: graph }] {
        let c = Checkpoint::new(payload, None).unwrap();
        let text = c.to_json().unwrap();
        let back = Checkpoint::from_json(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_json().unwrap(), text);
    }
}

#[test]
fn tampered_checkpoint_is_rejected() {
    let c = Checkpoint::new(ModelPayload::Sttp { model: random_model(1, 1, 1, 3.0) }, None).unwrap();
    let text = c.to_json().unwrap().replacen("\"mu\": ", "\"mu\": 1", 1);
    assert!(Checkpoint::from_json(&text).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn corpus_round_trip_is_bit_exact(seed in 0u64..1000, n in 0usize..12, horizon in 0.5f64..100.0) {
        let w = TimeWindow::new(horizon).unwrap();
        let d = SpatialDomain::new(-3.0, 1e-3, 2.0, 7.5).unwrap();
        let seqs: Vec<EventSequence> = (0..3).map(|j| random_sequence(seed + j, n, w, &d)).collect();
        let c = Corpus { window: w, domain: Some(d), nodes: None, sequences: seqs };
        let back = parse_corpus(&format_corpus(&c)).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn grid_export_round_trips(vals in prop::collection::vec(-1e6f64..1e6, 6)) {
        let t = GridTable::new(vec![("a".into(), vec![0.0, 1.0]), ("b".into(), vec![-0.1, 0.2, 3.0])], vals).unwrap();
        let text = format_grid(&t).unwrap();
        let back = parse_grid(&text).unwrap();
        prop_assert_eq!(format_grid(&back).unwrap(), text);
        prop_assert_eq!(back, t);
    }
}

#[test]
fn node_corpus_keeps_nodes() {
    let w = TimeWindow::new(2.0).unwrap();
    let seq = EventSequence::new(vec![Event::on_node(0.5, 2), Event::on_node(1.25, 0)], w);
    let c = Corpus { window: w, domain: None, nodes: Some(3), sequences: vec![seq] };
    assert_eq!(parse_corpus(&format_corpus(&c)).unwrap(), c);
}

#[test]
fn non_finite_grid_values_are_refused() {
    let t = GridTable::new(vec![("x".into(), vec![0.0])], vec![f64::NAN]).unwrap();
    assert!(format_grid(&t).is_err());
}
