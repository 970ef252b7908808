//! Next-event density `f(t, s) = lambda(t, s) exp(-int_{t_n}^t int lambda)`
//! and point forecasts derived from it.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use crate::model::{Event, EventSequence};
use crate::simulate::{Location, PointProcess, Space};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecastOptions {
    /// Forecast window length after `t_n`. When `None`, it starts at ten
    /// expected interarrivals at the current rate and doubles until the tail
    /// mass is below `tail_tolerance`.
    pub horizon: Option<f64>,
    pub time_nodes: usize,
    /// Cells per axis of the spatial midpoint grid.
    pub space_cells: usize,
    pub tail_tolerance: f64,
    pub max_doublings: usize,
}

impl Default for ForecastOptions {
    fn default() -> Self {
        Self { horizon: None, time_nodes: 400, space_cells: 16, tail_tolerance: 1e-3, max_doublings: 8 }
    }
}

/// Density values on `times x locations`; `values[k * locations.len() + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityTable {
    pub t_n: f64,
    pub times: Vec<f64>,
    pub locations: Vec<Location>,
    /// Quadrature weight of each location (cell area, or one).
    pub weights: Vec<f64>,
    pub values: Vec<f64>,
    /// Intensity at the same nodes.
    pub intensity: Vec<f64>,
    /// `int_{t_n}^{t_k} int lambda` at each time node.
    pub cumulative: Vec<f64>,
    /// `int lambda(t_k, s) ds` at each time node.
    pub rate: Vec<f64>,
}

impl DensityTable {
    /// Marginal density of the next event time at each node.
    pub fn time_marginal(&self) -> Vec<f64> {
        self.rate.iter().zip(&self.cumulative).map(|(r, c)| r * (-c).exp()).collect()
    }

    /// Probability of an event within the window.
    pub fn captured_mass(&self) -> f64 {
        1.0 - self.tail_mass()
    }

    pub fn tail_mass(&self) -> f64 {
        (-self.cumulative.last().copied().unwrap_or(0.0)).exp()
    }

    /// Probability of the next event in each time interval. The rate is
    /// linear within intervals, so the masses telescope exactly.
    pub fn interval_masses(&self) -> Vec<f64> {
        self.cumulative.windows(2).map(|w| (-w[0]).exp() - (-w[1]).exp()).collect()
    }
}

fn locations(space: Space, cells: usize) -> (Vec<Location>, Vec<f64>) {
    match space {
        Space::None => (vec![Location::None], vec![1.0]),
        Space::Nodes(n) => ((0..n).map(Location::Node).collect(), vec![1.0; n]),
        Space::Rect(d) => {
            let hx = (d.x_hi - d.x_lo) / cells as f64;
            let hy = (d.y_hi - d.y_lo) / cells as f64;
            let mut locs = Vec::with_capacity(cells * cells);
            for i in 0..cells {
                for j in 0..cells {
                    locs.push(Location::Point([d.x_lo + (i as f64 + 0.5) * hx, d.y_lo + (j as f64 + 0.5) * hy]));
                }
            }
            (locs, vec![hx * hy; cells * cells])
        }
    }
}

/// Density on an explicit window `[t_n, t_n + horizon]`.
pub fn density_on_window<P: PointProcess + ?Sized>(
    model: &P,
    history: &[Event],
    horizon: f64,
    opts: &ForecastOptions,
) -> Result<DensityTable> {
    if !(horizon > 0.0) || opts.time_nodes < 2 || opts.space_cells == 0 {
        return Err(Error::InvalidConfig("forecast grid needs a positive horizon and at least two time nodes".into()));
    }
    let t_n = history.last().map_or(0.0, |e| e.t);
    let (locs, weights) = locations(model.space(), opts.space_cells);
    let n = opts.time_nodes;
    let h = horizon / (n - 1) as f64;
    let times: Vec<f64> = (0..n).map(|k| t_n + k as f64 * h).collect();
    let mut lam = Vec::with_capacity(n * locs.len());
    let mut rate = Vec::with_capacity(n);
    for (k, &t) in times.iter().enumerate() {
        // The first node is the right limit at t_n.
        let te = if k == 0 { t + 1e-9 * h } else { t };
        let mut total = 0.0;
        for (at, w) in locs.iter().zip(&weights) {
            let v = model.intensity(history, te, *at);
            if v < -1e-12 {
                return Err(Error::NegativeIntensity { t: te, value: v });
            }
            let v = v.max(0.0);
            total += w * v;
            lam.push(v);
        }
        rate.push(total);
    }
    let mut cumulative = vec![0.0; n];
    for k in 1..n {
        cumulative[k] = cumulative[k - 1] + 0.5 * h * (rate[k - 1] + rate[k]);
    }
    let values = lam
        .chunks(locs.len())
        .zip(&cumulative)
        .flat_map(|(row, c)| row.iter().map(move |v| v * (-c).exp()))
        .collect();
    Ok(DensityTable { t_n, times, locations: locs, weights, values, intensity: lam, cumulative, rate })
}

/// Density beyond the last history event, with the window chosen per
/// [`ForecastOptions::horizon`]. The returned table may still carry tail
/// mass above tolerance when the doubling limit is reached.
pub fn next_event_density<P: PointProcess + ?Sized>(
    model: &P,
    history: &[Event],
    opts: &ForecastOptions,
) -> Result<DensityTable> {
    if let Some(hz) = opts.horizon {
        return density_on_window(model, history, hz, opts);
    }
    let t_n = history.last().map_or(0.0, |e| e.t);
    let (locs, weights) = locations(model.space(), opts.space_cells);
    let rate0: f64 = locs.iter().zip(&weights).map(|(at, w)| w * model.intensity(history, t_n + 1e-9, *at).max(0.0)).sum();
    let mut horizon = if rate0 > 0.0 { 10.0 / rate0 } else { 10.0 };
    let mut table = density_on_window(model, history, horizon, opts)?;
    for _ in 0..opts.max_doublings {
        if table.tail_mass() <= opts.tail_tolerance {
            break;
        }
        horizon *= 2.0;
        table = density_on_window(model, history, horizon, opts)?;
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Forecast {
    pub time: f64,
    /// `None` for purely temporal processes.
    pub location: Option<[f64; 2]>,
    pub captured_mass: f64,
}

/// Expectations from a density table. The time expectation is the plain
/// integral over the window; the location is normalized by captured mass.
pub fn forecast_from_table(table: &DensityTable, tail_tolerance: f64) -> Result<Forecast> {
    let tail = table.tail_mass();
    if tail > tail_tolerance {
        return Err(Error::TailMassTooLarge { mass: tail, tolerance: tail_tolerance });
    }
    let masses = table.interval_masses();
    let nl = table.locations.len();
    let moment = |k: usize| -> [f64; 2] {
        let mut m = [0.0; 2];
        for (j, at) in table.locations.iter().enumerate() {
            if let Location::Point(s) = at {
                let v = table.weights[j] * table.intensity[k * nl + j];
                m[0] += v * s[0];
                m[1] += v * s[1];
            }
        }
        m
    };
    let spatial = matches!(table.locations.first(), Some(Location::Point(_)));
    let mut time = 0.0;
    let mut loc = [0.0; 2];
    let mut mass = 0.0;
    let mut prev = if spatial { moment(0) } else { [0.0; 2] };
    for (k, &dm) in masses.iter().enumerate() {
        time += dm * 0.5 * (table.times[k] + table.times[k + 1]);
        if spatial {
            let next = moment(k + 1);
            let denom = table.rate[k] + table.rate[k + 1];
            if denom > 0.0 && dm > 0.0 {
                loc[0] += dm * (prev[0] + next[0]) / denom;
                loc[1] += dm * (prev[1] + next[1]) / denom;
                mass += dm;
            }
            prev = next;
        }
    }
    let location = if spatial && mass > 0.0 { Some([loc[0] / mass, loc[1] / mass]) } else { None };
    Ok(Forecast { time, location, captured_mass: table.captured_mass() })
}

pub fn predict_next<P: PointProcess + ?Sized>(model: &P, history: &[Event], opts: &ForecastOptions) -> Result<Forecast> {
    forecast_from_table(&next_event_density(model, history, opts)?, opts.tail_tolerance)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaeReport {
    pub time_mae: f64,
    /// `None` for purely temporal processes.
    pub location_mae: Option<f64>,
    pub evaluated: usize,
    /// Sequences skipped because the forecast window kept too much tail mass.
    pub excluded: usize,
}

/// Predicts the final event of each sequence from the events before it.
pub fn mae_eval<P: PointProcess + ?Sized>(model: &P, sequences: &[EventSequence], opts: &ForecastOptions) -> Result<MaeReport> {
    let mut time_err = 0.0;
    let mut loc_err = 0.0;
    let mut has_loc = false;
    let (mut evaluated, mut excluded) = (0, 0);
    for seq in sequences {
        let n = seq.len();
        if n < 2 {
            return Err(Error::InvalidConfig(format!("mae evaluation needs at least 2 events per sequence, got {n}")));
        }
        let target = &seq.events[n - 1];
        match predict_next(model, &seq.events[..n - 1], opts) {
            Ok(f) => {
                evaluated += 1;
                time_err += (f.time - target.t).abs();
                if let (Some(p), Some(s)) = (f.location, target.s) {
                    has_loc = true;
                    loc_err += ((p[0] - s[0]).powi(2) + (p[1] - s[1]).powi(2)).sqrt();
                }
            }
            Err(Error::TailMassTooLarge { .. }) => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    let denom = evaluated.max(1) as f64;
    Ok(MaeReport {
        time_mae: time_err / denom,
        location_mae: has_loc.then(|| loc_err / denom),
        evaluated,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intensity::SttpModel;
    use crate::model::{SpatialDomain, TimeWindow};

    fn constant(mu: f64) -> SttpModel {
        let w = TimeWindow::new(100.0).unwrap();
        SttpModel::poisson(mu, w, SpatialDomain::centered_square(1.0).unwrap()).unwrap()
    }

    #[test]
    fn homogeneous_expected_time_and_location() {
        let m = constant(0.5);
        let hist = [Event::spatial(3.0, 0.2, 0.1)];
        let f = predict_next(&m, &hist, &ForecastOptions::default()).unwrap();
        let exact = 3.0 + 1.0 / (0.5 * 4.0);
        assert!((f.time - exact).abs() / exact < 5e-3, "{}", f.time);
        let loc = f.location.unwrap();
        assert!(loc[0].abs() < 1e-12 && loc[1].abs() < 1e-12);
    }

    #[test]
    fn zero_rate_density_vanishes() {
        let m = constant(0.0);
        let opts = ForecastOptions { horizon: Some(5.0), ..ForecastOptions::default() };
        let t = next_event_density(&m, &[], &opts).unwrap();
        assert!(t.values.iter().all(|&v| v == 0.0));
        assert!(matches!(forecast_from_table(&t, 1e-3), Err(Error::TailMassTooLarge { .. })));
    }

    #[test]
    fn marginal_matches_exponential() {
        let m = constant(1.0);
        let opts = ForecastOptions { horizon: Some(2.0), time_nodes: 201, space_cells: 4, ..ForecastOptions::default() };
        let t = density_on_window(&m, &[], 2.0, &opts).unwrap();
        for (k, g) in t.time_marginal().iter().enumerate() {
            let exact = 4.0 * (-4.0 * t.times[k]).exp();
            assert!((g - exact).abs() < 1e-9);
        }
    }
}
