#![allow(dead_code)]

use deepstpp::intensity::SttpModel;
use deepstpp::model::{BasisWidths, Event, EventSequence, GridSpec, ModelConfig, SpatialDomain, TimeWindow};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn small_widths(h: usize) -> BasisWidths {
    BasisWidths { psi: vec![h], phi: vec![h], u: vec![h], v: vec![h], mark: vec![h] }
}

/// A small deep model on `[-1, 1]^2 x [0, horizon]` with random coefficients.
pub fn random_model(seed: u64, l: usize, r: usize, horizon: f64) -> SttpModel {
    let config = ModelConfig {
        temporal_rank: l,
        spatial_rank: r,
        mark_rank: 0,
        mu: 1.5,
        learn_mu: true,
        tau_max: 2.0,
        a_max: 1.5,
        widths: small_widths(5),
    };
    let window = TimeWindow::new(horizon).unwrap();
    let domain = SpatialDomain::centered_square(1.0).unwrap();
    let mut m = SttpModel::deep(&config, window, domain, 0.0, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for a in m.kernel.alpha.iter_mut() {
        *a = rng.gen_range(-0.2..0.4);
    }
    m
}

pub fn random_sequence(seed: u64, n: usize, window: TimeWindow, domain: &SpatialDomain) -> EventSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut times: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..window.horizon())).collect();
    times.sort_by(f64::total_cmp);
    let events = times
        .into_iter()
        .map(|t| Event::spatial(t, rng.gen_range(domain.x_lo..domain.x_hi), rng.gen_range(domain.y_lo..domain.y_hi)))
        .collect();
    EventSequence::new(events, window)
}

pub fn coarse_grid(m: &SttpModel) -> GridSpec {
    GridSpec::with_counts(m.window, &m.domain, m.kernel.tau_max, m.kernel.a_max, [5, 4, 4], 16, 8).unwrap()
}

pub fn standard_grid(m: &SttpModel) -> GridSpec {
    GridSpec::standard(m.window, &m.domain, m.kernel.tau_max, m.kernel.a_max).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
