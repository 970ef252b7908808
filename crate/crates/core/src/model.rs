//! Domain types shared by every module: events, trajectories, observation
//! windows, quadrature grids and model configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single observed event. The spatial part is either a planar location, a
/// graph node, or absent (purely temporal data); one schema per dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mark: Option<Vec<f64>>,
}

impl Event {
    pub fn temporal(t: f64) -> Self {
        Self { t, s: None, node: None, mark: None }
    }

    pub fn spatial(t: f64, x: f64, y: f64) -> Self {
        Self { t, s: Some([x, y]), node: None, mark: None }
    }

    pub fn on_node(t: f64, node: usize) -> Self {
        Self { t, s: None, node: Some(node), mark: None }
    }

    pub fn with_mark(mut self, mark: Vec<f64>) -> Self {
        self.mark = Some(mark);
        self
    }

    pub fn schema(&self) -> Schema {
        match (self.s.is_some(), self.node.is_some()) {
            (true, false) => Schema::Spatial,
            (false, true) => Schema::Graph,
            (false, false) => Schema::Temporal,
            (true, true) => Schema::Mixed,
        }
    }

    /// Location of the event, `[0, 0]` for events without one.
    pub fn loc(&self) -> [f64; 2] {
        self.s.unwrap_or([0.0, 0.0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Schema {
    Temporal,
    Spatial,
    Graph,
    /// Both a location and a node on one event; never valid.
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    horizon: f64,
}

impl TimeWindow {
    pub fn new(horizon: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidConfig(format!("time horizon must be positive, got {horizon}")));
        }
        Ok(Self { horizon })
    }

    #[inline]
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn contains(&self, t: f64) -> bool {
        (0.0..=self.horizon).contains(&t)
    }
}

/// Axis-aligned rectangle `[x_lo, x_hi] x [y_lo, y_hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialDomain {
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

impl SpatialDomain {
    pub fn new(x_lo: f64, x_hi: f64, y_lo: f64, y_hi: f64) -> Result<Self> {
        let finite = [x_lo, x_hi, y_lo, y_hi].iter().all(|v| v.is_finite());
        if !finite || x_hi <= x_lo || y_hi <= y_lo {
            return Err(Error::InvalidConfig(format!(
                "degenerate spatial domain [{x_lo}, {x_hi}] x [{y_lo}, {y_hi}]"
            )));
        }
        Ok(Self { x_lo, x_hi, y_lo, y_hi })
    }

    /// The square `[-half, half]^2`.
    pub fn centered_square(half: f64) -> Result<Self> {
        Self::new(-half, half, -half, half)
    }

    pub fn area(&self) -> f64 {
        (self.x_hi - self.x_lo) * (self.y_hi - self.y_lo)
    }

    pub fn diameter(&self) -> f64 {
        (self.x_hi - self.x_lo).hypot(self.y_hi - self.y_lo)
    }

    pub fn contains(&self, s: [f64; 2]) -> bool {
        s[0] >= self.x_lo && s[0] <= self.x_hi && s[1] >= self.y_lo && s[1] <= self.y_hi
    }

    pub fn centroid(&self) -> [f64; 2] {
        [0.5 * (self.x_lo + self.x_hi), 0.5 * (self.y_lo + self.y_hi)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSequence {
    pub events: Vec<Event>,
    pub window: TimeWindow,
}

impl EventSequence {
    pub fn new(events: Vec<Event>, window: TimeWindow) -> Self {
        Self { events, window }
    }

    pub fn empty(window: TimeWindow) -> Self {
        Self { events: Vec::new(), window }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.t).collect()
    }

    /// Events strictly before `t`.
    pub fn history_before(&self, t: f64) -> &[Event] {
        let end = self.events.partition_point(|e| e.t < t);
        &self.events[..end]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ViolationKind {
    NonMonotoneTimes,
    OutOfDomain,
    OutOfWindow,
    MixedSchema,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub index: usize,
    pub kind: ViolationKind,
}

/// Checks time ordering, window and domain membership and schema homogeneity.
///
/// Returns the sequence untouched when valid, otherwise every violation found.
pub fn validate_sequence<'a>(
    seq: &'a EventSequence,
    domain: Option<&SpatialDomain>,
) -> std::result::Result<&'a EventSequence, Vec<Violation>> {
    let mut violations = Vec::new();
    let mut push = |index, kind| violations.push(Violation { index, kind });
    let schema = seq.events.first().map(Event::schema);
    let mut prev_t = f64::NEG_INFINITY;
    for (i, e) in seq.events.iter().enumerate() {
        let finite_loc = e.s.map_or(true, |s| s[0].is_finite() && s[1].is_finite());
        let finite_mark = e.mark.as_ref().map_or(true, |m| m.iter().all(|v| v.is_finite()));
        if !e.t.is_finite() || !finite_loc || !finite_mark {
            push(i, ViolationKind::NonFinite);
            continue;
        }
        if e.t <= prev_t {
            push(i, ViolationKind::NonMonotoneTimes);
        }
        prev_t = prev_t.max(e.t);
        if !seq.window.contains(e.t) {
            push(i, ViolationKind::OutOfWindow);
        }
        let sch = e.schema();
        if sch == Schema::Mixed || Some(sch) != schema {
            push(i, ViolationKind::MixedSchema);
        }
        if let (Some(s), Some(dom)) = (e.s, domain) {
            if !dom.contains(s) {
                push(i, ViolationKind::OutOfDomain);
            }
        }
    }
    if violations.is_empty() {
        Ok(seq)
    } else {
        Err(violations)
    }
}

/// A uniform partition of `[lo, hi]` into `cells` cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub cells: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, cells: usize) -> Result<Self> {
        if cells < 2 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidConfig(format!("invalid axis [{lo}, {hi}] with {cells} cells")));
        }
        Ok(Self { lo, hi, cells })
    }

    #[inline]
    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / self.cells as f64
    }

    #[inline]
    pub fn midpoint(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.step()
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        if i == self.cells {
            self.hi
        } else {
            self.lo + i as f64 * self.step()
        }
    }

    pub fn midpoints(&self) -> Vec<f64> {
        (0..self.cells).map(|i| self.midpoint(i)).collect()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.cells).map(|i| self.node(i)).collect()
    }

    /// Same bounds, `factor` times as many cells.
    pub fn refined(&self, factor: usize) -> Self {
        Self { cells: self.cells * factor, ..*self }
    }
}

/// Quadrature and tabulation grids.
///
/// `time`, `x`, `y` carry the space-time midpoint grid used for the squared
/// intensity and the barrier collocation nodes; `lag` tabulates temporal decay
/// bases on `[0, tau_max]` and `disp` tabulates displacement bases on the
/// square `[-a_max, a_max]^2` (both axes share `disp`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub time: Axis,
    pub x: Axis,
    pub y: Axis,
    pub lag: Axis,
    pub disp: Axis,
}

impl GridSpec {
    /// Default resolution: 50 x 32 x 32 space-time cells, 200 lag cells and a
    /// 64 x 64 displacement grid.
    pub fn standard(window: TimeWindow, domain: &SpatialDomain, tau_max: f64, a_max: f64) -> Result<Self> {
        Self::with_counts(window, domain, tau_max, a_max, [50, 32, 32], 200, 64)
    }

    pub fn with_counts(
        window: TimeWindow,
        domain: &SpatialDomain,
        tau_max: f64,
        a_max: f64,
        spacetime: [usize; 3],
        lag_cells: usize,
        disp_cells: usize,
    ) -> Result<Self> {
        Ok(Self {
            time: Axis::new(0.0, window.horizon(), spacetime[0])?,
            x: Axis::new(domain.x_lo, domain.x_hi, spacetime[1])?,
            y: Axis::new(domain.y_lo, domain.y_hi, spacetime[2])?,
            lag: Axis::new(0.0, tau_max, lag_cells)?,
            disp: Axis::new(-a_max, a_max, disp_cells)?,
        })
    }

    pub fn cell_volume(&self) -> f64 {
        self.time.step() * self.x.step() * self.y.step()
    }

    pub fn spacetime_nodes(&self) -> usize {
        self.time.cells * self.x.cells * self.y.cells
    }

    /// Checks the grid against a model's window, domain and truncation.
    pub fn check(&self, window: TimeWindow, domain: &SpatialDomain, tau_max: f64, a_max: f64) -> Result<()> {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()));
        let ok = close(self.time.lo, 0.0)
            && close(self.time.hi, window.horizon())
            && close(self.x.lo, domain.x_lo)
            && close(self.x.hi, domain.x_hi)
            && close(self.y.lo, domain.y_lo)
            && close(self.y.hi, domain.y_hi)
            && close(self.lag.lo, 0.0)
            && close(self.lag.hi, tau_max)
            && close(self.disp.lo, -a_max)
            && close(self.disp.hi, a_max);
        if ok {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("grid {self:?} inconsistent with model bounds")))
        }
    }
}

/// Cell counts of a [`GridSpec`], independent of the model's bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridResolution {
    pub spacetime: [usize; 3],
    pub lag: usize,
    pub disp: usize,
}

impl Default for GridResolution {
    fn default() -> Self {
        Self { spacetime: [50, 32, 32], lag: 200, disp: 64 }
    }
}

impl GridResolution {
    pub fn spec(&self, window: TimeWindow, domain: &SpatialDomain, tau_max: f64, a_max: f64) -> Result<GridSpec> {
        if self.disp < 2 {
            return Err(Error::InvalidConfig("displacement grid needs at least 2 cells per axis".into()));
        }
        GridSpec::with_counts(window, domain, tau_max, a_max, self.spacetime, self.lag, self.disp)
    }
}

/// Widths of the hidden layers of each basis network family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BasisWidths {
    pub psi: Vec<usize>,
    pub phi: Vec<usize>,
    pub u: Vec<usize>,
    pub v: Vec<usize>,
    pub mark: Vec<usize>,
}

impl Default for BasisWidths {
    fn default() -> Self {
        let w = vec![32, 32];
        Self { psi: w.clone(), phi: w.clone(), u: w.clone(), v: w.clone(), mark: w }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub temporal_rank: usize,
    pub spatial_rank: usize,
    #[serde(default)]
    pub mark_rank: usize,
    pub mu: f64,
    #[serde(default = "default_true")]
    pub learn_mu: bool,
    pub tau_max: f64,
    pub a_max: f64,
    #[serde(default)]
    pub widths: BasisWidths,
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    pub fn validate(&self, window: TimeWindow, domain: &SpatialDomain) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.temporal_rank == 0 || self.spatial_rank == 0 {
            return bad("ranks must be positive".into());
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return bad(format!("baseline must be nonnegative, got {}", self.mu));
        }
        if !(self.tau_max > 0.0 && self.tau_max <= window.horizon()) {
            return bad(format!("tau_max {} must lie in (0, T]", self.tau_max));
        }
        if !(self.a_max > 0.0 && self.a_max <= domain.diameter() * (1.0 + 1e-12)) {
            return bad(format!("a_max {} must lie in (0, diameter]", self.a_max));
        }
        let widths = [&self.widths.psi, &self.widths.phi, &self.widths.u, &self.widths.v, &self.widths.mark];
        if widths.iter().any(|w| w.iter().any(|&n| n == 0)) {
            return bad("hidden widths must be at least 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> SpatialDomain {
        SpatialDomain::centered_square(1.0).unwrap()
    }

    #[test]
    fn empty_sequence_is_valid() {
        let seq = EventSequence::empty(TimeWindow::new(1.0).unwrap());
        assert!(validate_sequence(&seq, Some(&unit())).is_ok());
    }

    #[test]
    fn decreasing_times_flagged_at_second_index() {
        let w = TimeWindow::new(1.0).unwrap();
        let seq = EventSequence::new(vec![Event::spatial(0.5, 0.0, 0.0), Event::spatial(0.2, 0.0, 0.0)], w);
        let v = validate_sequence(&seq, Some(&unit())).unwrap_err();
        assert_eq!(v, vec![Violation { index: 1, kind: ViolationKind::NonMonotoneTimes }]);
    }

    #[test]
    fn location_outside_box_flagged() {
        let w = TimeWindow::new(1.0).unwrap();
        let seq = EventSequence::new(vec![Event::spatial(0.5, 2.0, 0.0)], w);
        let v = validate_sequence(&seq, Some(&unit())).unwrap_err();
        assert_eq!(v[0].kind, ViolationKind::OutOfDomain);
    }

    #[test]
    fn mixed_schema_flagged() {
        let w = TimeWindow::new(1.0).unwrap();
        let seq = EventSequence::new(vec![Event::spatial(0.1, 0.0, 0.0), Event::on_node(0.2, 1)], w);
        let v = validate_sequence(&seq, None).unwrap_err();
        assert_eq!(v[0], Violation { index: 1, kind: ViolationKind::MixedSchema });
    }

    #[test]
    fn domain_and_window_reject_degenerate_input() {
        assert!(TimeWindow::new(0.0).is_err());
        assert!(SpatialDomain::new(1.0, 1.0, 0.0, 1.0).is_err());
        assert!(Axis::new(0.0, 1.0, 1).is_err());
        assert_eq!(SpatialDomain::new(0.0, 2.0, 0.0, 3.0).unwrap().area(), 6.0);
    }

    #[test]
    fn config_rejects_long_truncation() {
        let cfg = ModelConfig {
            temporal_rank: 1,
            spatial_rank: 1,
            mark_rank: 0,
            mu: 1.0,
            learn_mu: true,
            tau_max: 5.0,
            a_max: 1.0,
            widths: BasisWidths::default(),
        };
        let w = TimeWindow::new(2.0).unwrap();
        assert!(cfg.validate(w, &unit()).is_err());
        assert!(ModelConfig { tau_max: 1.0, ..cfg }.validate(w, &unit()).is_ok());
    }
}
