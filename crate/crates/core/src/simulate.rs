//! Thinning simulation for any point process exposing its conditional
//! intensity, and a time-rescaling goodness-of-fit check.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::intensity::SttpModel;
use crate::kernel::ExpHawkesSpec;
use crate::model::{Event, EventSequence, SpatialDomain, TimeWindow};

/// Where events of a process live.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Space {
    /// Purely temporal.
    None,
    Rect(SpatialDomain),
    /// Discrete nodes `0..n`.
    Nodes(usize),
}

impl Space {
    /// Total measure used for proposals: area, node count, or one.
    pub fn measure(&self) -> f64 {
        match self {
            Space::None => 1.0,
            Space::Rect(d) => d.area(),
            Space::Nodes(n) => *n as f64,
        }
    }
}

/// Position of a candidate event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Location {
    None,
    Point([f64; 2]),
    Node(usize),
}

impl Location {
    fn event(self, t: f64) -> Event {
        match self {
            Location::None => Event::temporal(t),
            Location::Point(s) => Event::spatial(t, s[0], s[1]),
            Location::Node(v) => Event::on_node(t, v),
        }
    }

    pub fn of(e: &Event) -> Self {
        match (e.s, e.node) {
            (Some(s), _) => Location::Point(s),
            (None, Some(v)) => Location::Node(v),
            _ => Location::None,
        }
    }
}

pub trait PointProcess {
    fn space(&self) -> Space;

    /// Conditional intensity given the events strictly before `t`.
    fn intensity(&self, history: &[Event], t: f64, at: Location) -> f64;

    /// Times after which the intensity may jump (besides event times).
    fn breakpoints(&self, _history: &[Event]) -> Vec<f64> {
        Vec::new()
    }

    /// `int_{t0}^{t1} int lambda` with no events inside `(t0, t1)`.
    fn compensator(&self, history: &[Event], t0: f64, t1: f64) -> f64 {
        numeric_compensator(self, history, t0, t1, 64, 24)
    }
}

/// Midpoint quadrature of the intensity, split at the process's breakpoints.
pub fn numeric_compensator<P: PointProcess + ?Sized>(
    p: &P,
    history: &[Event],
    t0: f64,
    t1: f64,
    time_steps: usize,
    space_steps: usize,
) -> f64 {
    if t1 <= t0 {
        return 0.0;
    }
    let mut cuts = vec![t0, t1];
    cuts.extend(p.breakpoints(history).into_iter().filter(|&b| b > t0 && b < t1));
    cuts.sort_by(f64::total_cmp);
    let space = p.space();
    let locations: Vec<(Location, f64)> = match space {
        Space::None => vec![(Location::None, 1.0)],
        Space::Nodes(n) => (0..n).map(|v| (Location::Node(v), 1.0)).collect(),
        Space::Rect(d) => {
            let hx = (d.x_hi - d.x_lo) / space_steps as f64;
            let hy = (d.y_hi - d.y_lo) / space_steps as f64;
            let mut out = Vec::with_capacity(space_steps * space_steps);
            for i in 0..space_steps {
                for j in 0..space_steps {
                    let s = [d.x_lo + (i as f64 + 0.5) * hx, d.y_lo + (j as f64 + 0.5) * hy];
                    out.push((Location::Point(s), hx * hy));
                }
            }
            out
        }
    };
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let h = (w[1] - w[0]) / time_steps as f64;
        for k in 0..time_steps {
            let t = w[0] + (k as f64 + 0.5) * h;
            total += h * locations.iter().map(|&(at, wt)| wt * p.intensity(history, t, at)).sum::<f64>();
        }
    }
    total
}

impl PointProcess for SttpModel {
    fn space(&self) -> Space {
        Space::Rect(self.domain)
    }

    fn intensity(&self, history: &[Event], t: f64, at: Location) -> f64 {
        match at {
            Location::Point(s) => self.mu + self.excitation(history, t, s),
            _ => f64::NAN,
        }
    }

    fn breakpoints(&self, history: &[Event]) -> Vec<f64> {
        history.iter().map(|e| e.t + self.kernel.tau_max).collect()
    }
}

/// Temporal Hawkes process with kernel `a exp(-b lag)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpHawkes(pub ExpHawkesSpec);

impl PointProcess for ExpHawkes {
    fn space(&self) -> Space {
        Space::None
    }

    fn intensity(&self, history: &[Event], t: f64, _: Location) -> f64 {
        let ExpHawkesSpec { mu, a, b } = self.0;
        mu + history.iter().take_while(|e| e.t < t).map(|e| a * (-b * (t - e.t)).exp()).sum::<f64>()
    }

    fn compensator(&self, history: &[Event], t0: f64, t1: f64) -> f64 {
        let ExpHawkesSpec { mu, a, b } = self.0;
        let exc: f64 = history
            .iter()
            .take_while(|e| e.t <= t0)
            .map(|e| (a / b) * ((-b * (t0 - e.t)).exp() - (-b * (t1 - e.t)).exp()))
            .sum();
        mu * (t1 - t0) + exc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimOptions {
    /// Multiplier on the probed maximum intensity, at least 1.
    pub bound_factor: f64,
    /// Raises allowed for a single event before giving up.
    pub max_raises: usize,
    /// Length of the window over which a bound is held.
    pub lookahead: f64,
    /// Time probes per window and spatial probes per axis.
    pub time_probes: usize,
    pub space_probes: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { bound_factor: 1.5, max_raises: 60, lookahead: 0.5, time_probes: 6, space_probes: 8 }
    }
}

impl SimOptions {
    fn validate(&self) -> Result<()> {
        if !(self.bound_factor >= 1.0 && self.lookahead > 0.0 && self.time_probes >= 2 && self.space_probes >= 1) {
            return Err(Error::InvalidConfig("invalid simulation options".into()));
        }
        Ok(())
    }
}

/// Largest intensity among probe points of `[t0, t1]`: a time lattice crossed
/// with a spatial lattice and the recent event locations.
fn probe_max<P: PointProcess + ?Sized>(p: &P, history: &[Event], t0: f64, t1: f64, opts: &SimOptions) -> f64 {
    let mut locs = Vec::new();
    match p.space() {
        Space::None => locs.push(Location::None),
        Space::Nodes(n) => locs.extend((0..n).map(Location::Node)),
        Space::Rect(d) => {
            let k = opts.space_probes;
            for i in 0..=k {
                for j in 0..=k {
                    let x = d.x_lo + (d.x_hi - d.x_lo) * i as f64 / k as f64;
                    let y = d.y_lo + (d.y_hi - d.y_lo) * j as f64 / k as f64;
                    locs.push(Location::Point([x, y]));
                }
            }
            locs.extend(history.iter().rev().take(64).filter_map(|e| e.s.map(Location::Point)));
        }
    }
    let mut best = 0.0f64;
    for i in 0..opts.time_probes {
        // Probe just after t0, where self-excitation peaks.
        let f = i as f64 / (opts.time_probes - 1) as f64;
        let t = t0 + (t1 - t0) * f + if i == 0 { 1e-12 * (1.0 + t0.abs()) } else { 0.0 };
        for &at in &locs {
            let v = p.intensity(history, t, at);
            if v.is_finite() {
                best = best.max(v);
            }
        }
    }
    best
}

fn propose<R: Rng>(space: Space, rng: &mut R) -> Location {
    match space {
        Space::None => Location::None,
        Space::Rect(d) => Location::Point([rng.gen_range(d.x_lo..d.x_hi), rng.gen_range(d.y_lo..d.y_hi)]),
        Space::Nodes(n) => Location::Node(rng.gen_range(0..n)),
    }
}

/// Ogata thinning on `[0, horizon]`. Negative intensities (inhibiting deep
/// kernels) count as zero for acceptance.
pub fn simulate<P: PointProcess + ?Sized>(p: &P, horizon: f64, seed: u64, opts: &SimOptions) -> Result<EventSequence> {
    opts.validate()?;
    let window = TimeWindow::new(horizon)?;
    let space = p.space();
    let measure = space.measure();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events: Vec<Event> = Vec::new();
    let mut t = 0.0;
    let mut raises = 0;
    'windows: while t < horizon {
        let end = (t + opts.lookahead).min(horizon);
        let mut bound = opts.bound_factor * probe_max(p, &events, t, end, opts);
        loop {
            if bound <= 0.0 {
                // Nothing can happen before the end of this window.
                t = end;
                continue 'windows;
            }
            let cand = t - (-rng.gen::<f64>()).ln_1p() / (bound * measure);
            if cand >= end {
                t = end;
                continue 'windows;
            }
            let at = propose(space, &mut rng);
            let lam = p.intensity(&events, cand, at).max(0.0);
            if lam > bound {
                raises += 1;
                if raises > opts.max_raises {
                    return Err(Error::BoundViolationLoop { t: cand, raises });
                }
                bound = opts.bound_factor * lam;
                // Redraw from the same start with the raised bound.
                continue;
            }
            let accept = lam / bound;
            assert!((0.0..=1.0).contains(&accept), "acceptance probability {accept} out of range");
            t = cand;
            if rng.gen::<f64>() < accept {
                events.push(at.event(cand));
                raises = 0;
                continue 'windows;
            }
        }
    }
    Ok(EventSequence::new(events, window))
}

/// `m` trajectories with seeds `seed + j`.
pub fn simulate_many<P: PointProcess + ?Sized>(
    p: &P,
    m: usize,
    horizon: f64,
    seed: u64,
    opts: &SimOptions,
) -> Result<Vec<EventSequence>> {
    if m == 0 {
        return Err(Error::InvalidConfig("at least one trajectory required".into()));
    }
    (0..m)
        .map(|j| {
            simulate(p, horizon, seed.wrapping_add(j as u64), opts)
                .map_err(|e| Error::Trajectory { index: j, source: Box::new(e) })
        })
        .collect()
}

/// Kolmogorov-Smirnov statistic of `xs` against the unit exponential and its
/// asymptotic p-value (Stephens' small-sample correction).
pub fn ks_exponential(xs: &[f64]) -> (f64, f64) {
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in v.iter().enumerate() {
        let f = 1.0 - (-x.max(0.0)).exp();
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sn = n.sqrt();
    (d, kolmogorov_q((sn + 0.12 + 0.11 / sn) * d))
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

pub const MIN_KS_EVENTS: usize = 20;

/// Transforms interarrivals by the compensator and tests them against the
/// unit-rate exponential. Returns `(statistic, p-value)`.
pub fn time_rescaling_check<P: PointProcess + ?Sized>(p: &P, seq: &EventSequence) -> Result<(f64, f64)> {
    let n = seq.len();
    if n < MIN_KS_EVENTS {
        return Err(Error::TooFewEvents { n, min: MIN_KS_EVENTS });
    }
    let mut prev = 0.0;
    let mut gaps = Vec::with_capacity(n);
    for (i, e) in seq.events.iter().enumerate() {
        gaps.push(p.compensator(&seq.events[..i], prev, e.t));
        prev = e.t;
    }
    Ok(ks_exponential(&gaps))
}
