//! Conditional intensity `lambda(t, s) = mu + sum_{t_j < t} k(t_j, t, s_j, s)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{LowRankKernel, MarkedKernel};
use crate::model::{Event, EventSequence, GridSpec, ModelConfig, SpatialDomain, TimeWindow};
use crate::nn::{sigmoid, softplus_inv};

/// A spatio-temporal self-exciting model with a scalar baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SttpModel {
    pub mu: f64,
    /// Whether the baseline is part of the trainable parameters. When it is,
    /// it is optimized through `mu = softplus(raw)`.
    pub learn_mu: bool,
    pub kernel: LowRankKernel,
    pub window: TimeWindow,
    pub domain: SpatialDomain,
}

impl SttpModel {
    pub fn new(mu: f64, kernel: LowRankKernel, window: TimeWindow, domain: SpatialDomain) -> Result<Self> {
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(Error::InvalidConfig(format!("baseline must be nonnegative, got {mu}")));
        }
        if kernel.tau_max > window.horizon() {
            return Err(Error::InvalidConfig("tau_max exceeds the time window".into()));
        }
        Ok(Self { mu, learn_mu: true, kernel, window, domain })
    }

    /// Pure-baseline model.
    pub fn poisson(mu: f64, window: TimeWindow, domain: SpatialDomain) -> Result<Self> {
        let tau = window.horizon().min(1.0);
        Self::new(mu, LowRankKernel::zero(tau, domain.diameter()), window, domain)
    }

    /// Deep-kernel model with freshly initialized networks.
    pub fn deep(config: &ModelConfig, window: TimeWindow, domain: SpatialDomain, alpha0: f64, seed: u64) -> Result<Self> {
        config.validate(window, &domain)?;
        let kernel = LowRankKernel::deep(config, alpha0, seed)?;
        let mut m = Self::new(config.mu, kernel, window, domain)?;
        m.learn_mu = config.learn_mu;
        Ok(m)
    }

    pub fn with_fixed_mu(mut self) -> Self {
        self.learn_mu = false;
        self
    }

    /// Flat parameter vector: `[raw_mu]` (if learnable), then the kernel's.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        if self.learn_mu {
            out.push(softplus_inv(self.mu));
        }
        out.extend(self.kernel.params());
        out
    }

    pub fn num_params(&self) -> usize {
        self.learn_mu as usize + self.kernel.num_params()
    }

    pub fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.num_params() {
            return Err(Error::DimensionMismatch { expected: self.num_params(), got: theta.len() });
        }
        let rest = if self.learn_mu {
            self.mu = crate::nn::softplus(theta[0]);
            &theta[1..]
        } else {
            theta
        };
        self.kernel.set_params(rest)
    }

    /// `d mu / d raw` for the current baseline.
    pub(crate) fn mu_chain(&self) -> f64 {
        sigmoid(softplus_inv(self.mu))
    }

    /// Kernel contribution of `history` events at `(t, s)`; no domain check.
    pub fn excitation(&self, history: &[Event], t: f64, s: [f64; 2]) -> f64 {
        let k = &self.kernel;
        if k.is_zero() {
            return 0.0;
        }
        let end = history.partition_point(|e| e.t < t);
        let start = history[..end].partition_point(|e| e.t < t - k.tau_max);
        history[start..end].iter().map(|e| k.eval_unchecked(e.t, t, e.loc(), s)).sum()
    }
}

/// `mu + sum` over history events strictly before `t`; may be negative when
/// the kernel inhibits.
pub fn conditional_intensity(model: &SttpModel, history: &[Event], t: f64, s: [f64; 2]) -> Result<f64> {
    if !model.domain.contains(s) {
        return Err(Error::OutOfDomain { x: s[0], y: s[1] });
    }
    Ok(model.mu + model.excitation(history, t, s))
}

/// Intensity over the space-time midpoint grid, time-major then x then y.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityTable {
    pub times: Vec<f64>,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub values: Vec<f64>,
}

impl IntensityTable {
    #[inline]
    pub fn index(&self, it: usize, ix: usize, iy: usize) -> usize {
        (it * self.xs.len() + ix) * self.ys.len() + iy
    }

    pub fn at(&self, it: usize, ix: usize, iy: usize) -> f64 {
        self.values[self.index(it, ix, iy)]
    }
}

pub fn intensity_on_grid(model: &SttpModel, history: &[Event], grid: &GridSpec) -> IntensityTable {
    let times = grid.time.midpoints();
    let xs = grid.x.midpoints();
    let ys = grid.y.midpoints();
    let mut values = Vec::with_capacity(times.len() * xs.len() * ys.len());
    for &t in &times {
        for &x in &xs {
            for &y in &ys {
                values.push(model.mu + model.excitation(history, t, [x, y]));
            }
        }
    }
    IntensityTable { times, xs, ys, values }
}

/// Location of an intensity minimum on the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridNode {
    pub sequence: usize,
    pub t: f64,
    pub s: [f64; 2],
}

/// Minimum of the intensity over the grid nodes of every sequence.
pub fn min_intensity(model: &SttpModel, sequences: &[EventSequence], grid: &GridSpec) -> (f64, GridNode) {
    let first = GridNode { sequence: 0, t: grid.time.midpoint(0), s: [grid.x.midpoint(0), grid.y.midpoint(0)] };
    let mut best = (model.mu, first);
    let mut seen = false;
    for (si, seq) in sequences.iter().enumerate() {
        let tab = intensity_on_grid(model, &seq.events, grid);
        for (it, &t) in tab.times.iter().enumerate() {
            for (ix, &x) in tab.xs.iter().enumerate() {
                for (iy, &y) in tab.ys.iter().enumerate() {
                    let v = tab.at(it, ix, iy);
                    if !seen || v < best.0 {
                        best = (v, GridNode { sequence: si, t, s: [x, y] });
                        seen = true;
                    }
                }
            }
        }
    }
    best
}

/// Intensity of a marked model at `(t, s, m)`.
pub fn marked_intensity(mu: f64, kernel: &MarkedKernel, history: &[Event], t: f64, s: [f64; 2], m: &[f64]) -> Result<f64> {
    let mut total = mu;
    for e in history.iter().take_while(|e| e.t < t) {
        let mark = e.mark.as_deref().unwrap_or(&[]);
        total += crate::kernel::eval_marked_kernel(kernel, e.t, t, e.loc(), s, mark, m)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::Basis;
    use crate::kernel::ReferenceKernelParams;

    fn setup() -> SttpModel {
        let w = TimeWindow::new(10.0).unwrap();
        let dom = SpatialDomain::centered_square(1.0).unwrap();
        let k = ReferenceKernelParams::default().to_kernel(3.0, 2.0).unwrap();
        SttpModel::new(1.0, k, w, dom).unwrap()
    }

    #[test]
    fn empty_history_gives_baseline() {
        let m = setup();
        assert_eq!(conditional_intensity(&m, &[], 2.0, [0.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn event_beyond_truncation_ignored() {
        let m = setup();
        let h = [Event::spatial(1.0, 0.0, 0.0)];
        assert_eq!(conditional_intensity(&m, &h, 4.5, [0.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn three_event_history_matches_double_loop() {
        let w = TimeWindow::new(10.0).unwrap();
        let dom = SpatialDomain::centered_square(1.0).unwrap();
        let k = LowRankKernel::new(
            vec![0.8],
            vec![Basis::Constant(1.0)],
            vec![Basis::ExpDecay { rate: 1.5 }],
            vec![Basis::Constant(1.0)],
            vec![Basis::Gaussian { sigma: 0.4, center: [0.0, 0.0] }],
            5.0,
            2.0,
        )
        .unwrap();
        let m = SttpModel::new(0.3, k, w, dom).unwrap();
        let h = vec![Event::spatial(0.5, 0.1, 0.2), Event::spatial(1.2, -0.3, 0.0), Event::spatial(2.0, 0.5, -0.5)];
        let (t, s) = (2.4, [0.0, 0.1]);
        let mut expected = 0.3;
        for e in &h {
            let d2 = (s[0] - e.loc()[0]).powi(2) + (s[1] - e.loc()[1]).powi(2);
            expected += 0.8 * (-1.5 * (t - e.t)).exp() * (-d2 / (2.0 * 0.16)).exp() / (2.0 * std::f64::consts::PI * 0.16);
        }
        let got = conditional_intensity(&m, &h, t, s).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn out_of_domain_rejected() {
        let m = setup();
        assert!(matches!(conditional_intensity(&m, &[], 1.0, [1.5, 0.0]), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn grid_constant_without_history() {
        let m = setup();
        let g = GridSpec::with_counts(m.window, &m.domain, 3.0, 2.0, [3, 2, 2], 10, 8).unwrap();
        assert!(intensity_on_grid(&m, &[], &g).values.iter().all(|&v| v == 1.0));
        let (v, node) = min_intensity(&m, &[], &g);
        assert_eq!(v, 1.0);
        assert_eq!(node.t, g.time.midpoint(0));
    }

    #[test]
    fn inhibition_pushes_minimum_below_baseline() {
        let mut m = setup();
        // Only the negative part of the second decay mode.
        m.kernel.alpha = vec![0.0, 0.4, 0.0, 0.0];
        let g = GridSpec::with_counts(m.window, &m.domain, 3.0, 2.0, [20, 8, 8], 10, 8).unwrap();
        let seq = EventSequence::new(vec![Event::spatial(1.0, 0.0, 0.0)], m.window);
        let (v, _) = min_intensity(&m, &[seq], &g);
        assert!(v < m.mu);
    }

    #[test]
    fn params_round_trip() {
        let mut m = setup();
        let p = m.params();
        assert_eq!(p.len(), 1 + 4);
        m.set_params(&p).unwrap();
        assert!((m.mu - 1.0).abs() < 1e-12);
    }
}
