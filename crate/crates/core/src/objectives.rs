//! Training objectives: log-likelihood, least-squares loss and log-barrier
//! penalty, with gradients that are exact for the discretized objective.
//!
//! Evaluation tabulates the decay bases `phi_l` on the lag grid (linear
//! interpolation between nodes) and the propagation bases `v_r` at the cell
//! centers of the displacement grid (bilinear interpolation, constant beyond
//! the outer centers). The source bases `psi_l`, `u_r` are evaluated exactly
//! at events. The intensity integral uses the basis decomposition
//!
//! ```text
//! int_0^T int_S lambda = mu |S| T
//!     + sum_i sum_r u_r(s_i) V_r(s_i) sum_l alpha[r][l] psi_l(t_i) Phi_l(min(T - t_i, tau_max))
//! ```
//!
//! where `Phi_l` integrates the interpolated `phi_l` exactly and `V_r(s_i)`
//! integrates `v_r` over `(S - s_i)` intersected with the disc of radius
//! `a_max`, row by row on the displacement grid with fractional coverage.
//!
//! Objectives are averaged over sequences, reduced in sequence order.

use crate::error::{Error, Result};
use crate::intensity::SttpModel;
use crate::model::{Axis, EventSequence, GridSpec};

/// Signed contributions to an objective value; they sum to the value.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Breakdown {
    pub event_term: f64,
    pub integral_term: f64,
    pub barrier_term: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub value: f64,
    /// Gradient in the layout of [`SttpModel::params`]; empty when not requested.
    pub gradient: Vec<f64>,
    pub breakdown: Breakdown,
}

impl ObjectiveValue {
    pub fn negated(mut self) -> Self {
        self.value = -self.value;
        self.gradient.iter_mut().for_each(|g| *g = -*g);
        let b = &mut self.breakdown;
        b.event_term = -b.event_term;
        b.integral_term = -b.integral_term;
        b.barrier_term = -b.barrier_term;
        self
    }
}

/// `ln x` for `x >= floor`, continued below `floor` by its second-order
/// Taylor expansion so the value stays finite and the slope keeps pushing up.
#[inline]
pub fn guarded_log(x: f64, floor: f64) -> (f64, f64) {
    if x >= floor {
        (x.ln(), 1.0 / x)
    } else {
        let d = x - floor;
        (floor.ln() + d / floor - d * d / (2.0 * floor * floor), 1.0 / floor - d / (floor * floor))
    }
}

const MAX_RANK: usize = 16;

/// Basis tables for one model on one grid.
#[derive(Debug, Clone)]
pub(crate) struct Tables {
    pub l: usize,
    pub r: usize,
    pub lag: Axis,
    /// `phi[l * (n + 1) + k]` at lag node `k`.
    pub phi: Vec<f64>,
    /// Exact integral of the interpolated `phi_l` from 0 to node `k`.
    pub phi_cum: Vec<f64>,
    pub disp: Axis,
    pub nd: usize,
    /// `v[(r * nd + ix) * nd + iy]` at displacement cell center `(ix, iy)`.
    pub v: Vec<f64>,
    /// Prefix sums along x for fixed `iy`: `v_pre[((r * nd) + iy) * (nd + 1) + ix]`.
    pub v_pre: Vec<f64>,
    pub alpha: Vec<f64>,
    pub tau_max: f64,
    pub a2: f64,
}

impl Tables {
    pub fn new(model: &SttpModel, grid: &GridSpec) -> Result<Self> {
        let k = &model.kernel;
        let (l, r) = (k.temporal_rank(), k.spatial_rank());
        if l > MAX_RANK || r > MAX_RANK {
            return Err(Error::InvalidConfig(format!("ranks above {MAX_RANK} are not supported")));
        }
        grid.check(model.window, &model.domain, k.tau_max, k.a_max)?;
        let lag = grid.lag;
        let n = lag.cells;
        let h = lag.step();
        let mut phi = vec![0.0; l * (n + 1)];
        let mut phi_cum = vec![0.0; l * (n + 1)];
        for li in 0..l {
            for node in 0..=n {
                phi[li * (n + 1) + node] = k.phi[li].eval(&[lag.node(node)]);
            }
            for node in 1..=n {
                let i = li * (n + 1) + node;
                phi_cum[i] = phi_cum[i - 1] + 0.5 * h * (phi[i - 1] + phi[i]);
            }
        }
        let disp = grid.disp;
        let nd = disp.cells;
        let centers = disp.midpoints();
        let mut v = vec![0.0; r * nd * nd];
        let mut v_pre = vec![0.0; r * nd * (nd + 1)];
        for ri in 0..r {
            for ix in 0..nd {
                for iy in 0..nd {
                    v[(ri * nd + ix) * nd + iy] = k.v[ri].eval(&[centers[ix], centers[iy]]);
                }
            }
            for iy in 0..nd {
                let base = (ri * nd + iy) * (nd + 1);
                for ix in 0..nd {
                    v_pre[base + ix + 1] = v_pre[base + ix] + v[(ri * nd + ix) * nd + iy];
                }
            }
        }
        Ok(Self {
            l,
            r,
            lag,
            phi,
            phi_cum,
            disp,
            nd,
            v,
            v_pre,
            alpha: k.alpha.clone(),
            tau_max: k.tau_max,
            a2: k.a_max * k.a_max,
        })
    }

    /// Node index and weight of the upper node for linear interpolation.
    #[inline]
    fn lag_pos(&self, tau: f64) -> (usize, f64) {
        let n = self.lag.cells;
        let pos = tau / self.lag.step();
        let k = (pos as usize).min(n - 1);
        (k, (pos - k as f64).clamp(0.0, 1.0))
    }

    #[inline]
    fn phi_at(&self, l: usize, k: usize, w: f64) -> f64 {
        let base = l * (self.lag.cells + 1);
        (1.0 - w) * self.phi[base + k] + w * self.phi[base + k + 1]
    }

    /// Lower-left cell-center index and weights for bilinear interpolation.
    #[inline]
    fn disp_pos(&self, d: f64) -> (usize, f64) {
        let h = self.disp.step();
        let pos = ((d - self.disp.lo) / h - 0.5).clamp(0.0, (self.nd - 1) as f64);
        let i = (pos as usize).min(self.nd - 2);
        (i, pos - i as f64)
    }

    #[inline]
    fn v_at(&self, r: usize, ix: usize, wx: f64, iy: usize, wy: f64) -> f64 {
        let nd = self.nd;
        let b = (r * nd + ix) * nd + iy;
        let v00 = self.v[b];
        let v01 = self.v[b + 1];
        let v10 = self.v[b + nd];
        let v11 = self.v[b + nd + 1];
        (1.0 - wx) * ((1.0 - wy) * v00 + wy * v01) + wx * ((1.0 - wy) * v10 + wy * v11)
    }

    /// Integral of the interpolated `phi_l` over `[0, x]`, with node weights.
    #[inline]
    fn phi_integral(&self, l: usize, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let h = self.lag.step();
        let (k, f) = self.lag_pos(x.min(self.tau_max));
        let base = l * (self.lag.cells + 1);
        let (p0, p1) = (self.phi[base + k], self.phi[base + k + 1]);
        self.phi_cum[base + k] + h * (f * p0 + 0.5 * f * f * (p1 - p0))
    }

    /// Rows of the displacement grid covering `(S - s) ∩ disc(a_max)`:
    /// `(iy, x_from, x_to, row_height)` in displacement coordinates.
    fn region_rows(&self, s: [f64; 2], dom: &crate::model::SpatialDomain, mut f: impl FnMut(usize, f64, f64, f64)) {
        let h = self.disp.step();
        let (x_lo, x_hi) = (dom.x_lo - s[0], dom.x_hi - s[0]);
        let (y_lo, y_hi) = (dom.y_lo - s[1], dom.y_hi - s[1]);
        for iy in 0..self.nd {
            let y0 = self.disp.lo + iy as f64 * h;
            let y1 = y0 + h;
            let yc = 0.5 * (y0 + y1);
            let hy = (y1.min(y_hi) - y0.max(y_lo)).max(0.0);
            if hy <= 0.0 || yc * yc >= self.a2 {
                continue;
            }
            let w = (self.a2 - yc * yc).sqrt();
            let xa = x_lo.max(-w).max(self.disp.lo);
            let xb = x_hi.min(w).min(self.disp.hi);
            if xb > xa {
                f(iy, xa, xb, hy);
            }
        }
    }

    /// `int v_r` over the clipped region around `s`.
    fn spatial_integral(&self, r: usize, s: [f64; 2], dom: &crate::model::SpatialDomain) -> f64 {
        let nd = self.nd;
        let h = self.disp.step();
        let lo = self.disp.lo;
        let mut total = 0.0;
        self.region_rows(s, dom, |iy, xa, xb, hy| {
            let ia = (((xa - lo) / h) as usize).min(nd - 1);
            let ib = (((xb - lo) / h) as usize).min(nd - 1);
            let col = |ix: usize| self.v[(r * nd + ix) * nd + iy];
            let row = if ia == ib {
                col(ia) * (xb - xa)
            } else {
                let pre = &self.v_pre[(r * nd + iy) * (nd + 1)..];
                let x1a = lo + (ia + 1) as f64 * h;
                let x0b = lo + ib as f64 * h;
                col(ia) * (x1a - xa) + (pre[ib] - pre[ia + 1]) * h + col(ib) * (xb - x0b)
            };
            total += row * hy;
        });
        total
    }
}

/// Gradient accumulators for table entries and per-event source bases.
struct TableGrads {
    mu: f64,
    alpha: Vec<f64>,
    phi: Vec<f64>,
    /// Suffix-count accumulator for cumulative phi integrals.
    phi_cells: Vec<f64>,
    v: Vec<f64>,
    /// Per-row difference arrays for the spatial integral gradient.
    v_rows: Vec<f64>,
}

impl TableGrads {
    fn new(tab: &Tables) -> Self {
        let n = tab.lag.cells;
        Self {
            mu: 0.0,
            alpha: vec![0.0; tab.alpha.len()],
            phi: vec![0.0; tab.l * (n + 1)],
            phi_cells: vec![0.0; tab.l * (n + 1)],
            v: vec![0.0; tab.v.len()],
            v_rows: vec![0.0; tab.r * tab.nd * (tab.nd + 1)],
        }
    }

    /// Folds the deferred accumulators into `phi` and `v`.
    fn finish(&mut self, tab: &Tables) {
        let n = tab.lag.cells;
        let h = tab.lag.step();
        for l in 0..tab.l {
            let base = l * (n + 1);
            // suffix[q] = sum_{k >= q} G_k
            let mut suffix = vec![0.0; n + 2];
            for q in (0..=n).rev() {
                suffix[q] = suffix[q + 1] + self.phi_cells[base + q];
            }
            for m in 0..=n {
                let mut g = 0.5 * h * suffix[m + 1];
                if m >= 1 {
                    g += 0.5 * h * suffix[m];
                }
                self.phi[base + m] += g;
            }
            self.phi_cells[base..base + n + 1].iter_mut().for_each(|v| *v = 0.0);
        }
        let nd = tab.nd;
        for r in 0..tab.r {
            for iy in 0..nd {
                let base = (r * nd + iy) * (nd + 1);
                let mut run = 0.0;
                for ix in 0..nd {
                    run += self.v_rows[base + ix];
                    self.v[(r * nd + ix) * nd + iy] += run;
                }
                self.v_rows[base..base + nd + 1].iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
}

/// Per-sequence event data with source bases evaluated at the events.
struct SeqCache {
    t: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
    psi: Vec<f64>,
    u: Vec<f64>,
    gpsi: Vec<f64>,
    gu: Vec<f64>,
}

impl SeqCache {
    fn new(model: &SttpModel, seq: &EventSequence) -> Self {
        let k = &model.kernel;
        let (l, r) = (k.temporal_rank(), k.spatial_rank());
        let n = seq.len();
        let mut c = SeqCache {
            t: Vec::with_capacity(n),
            x: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
            psi: Vec::with_capacity(n * l),
            u: Vec::with_capacity(n * r),
            gpsi: vec![0.0; n * l],
            gu: vec![0.0; n * r],
        };
        for e in &seq.events {
            let s = e.loc();
            c.t.push(e.t);
            c.x.push(s[0]);
            c.y.push(s[1]);
            c.psi.extend(k.psi.iter().map(|b| b.eval(&[e.t])));
            c.u.extend(k.u.iter().map(|b| b.eval(&s)));
        }
        c
    }

    /// Events with `t - tau_max <= t_j < t`.
    #[inline]
    fn window(&self, t: f64, tau_max: f64) -> std::ops::Range<usize> {
        let end = self.t.partition_point(|&tj| tj < t);
        let start = self.t[..end].partition_point(|&tj| tj < t - tau_max);
        start..end
    }
}

/// Evaluates the excitation at points sharing the time `t`, adding into `out`.
fn eval_slice(tab: &Tables, c: &SeqCache, t: f64, pts: &[[f64; 2]], out: &mut [f64]) {
    let (l_rank, r_rank) = (tab.l, tab.r);
    for j in c.window(t, tab.tau_max) {
        let tau = t - c.t[j];
        if tau <= 0.0 {
            continue;
        }
        let (k, w) = tab.lag_pos(tau);
        let mut coef = [0.0; MAX_RANK];
        let mut any = false;
        for r in 0..r_rank {
            let mut a = 0.0;
            for l in 0..l_rank {
                a += tab.alpha[r * l_rank + l] * c.psi[j * l_rank + l] * tab.phi_at(l, k, w);
            }
            coef[r] = a * c.u[j * r_rank + r];
            any |= coef[r] != 0.0;
        }
        if !any {
            continue;
        }
        for (p, o) in pts.iter().zip(out.iter_mut()) {
            let dx = p[0] - c.x[j];
            let dy = p[1] - c.y[j];
            if dx * dx + dy * dy > tab.a2 {
                continue;
            }
            let (ix, wx) = tab.disp_pos(dx);
            let (iy, wy) = tab.disp_pos(dy);
            let mut s = 0.0;
            for r in 0..r_rank {
                s += coef[r] * tab.v_at(r, ix, wx, iy, wy);
            }
            *o += s;
        }
    }
}

/// Reverse pass of [`eval_slice`] for upstream weights `gup`.
fn backward_slice(tab: &Tables, c: &mut SeqCache, t: f64, pts: &[[f64; 2]], gup: &[f64], g: &mut TableGrads) {
    let (l_rank, r_rank) = (tab.l, tab.r);
    let nd = tab.nd;
    for j in c.window(t, tab.tau_max) {
        let tau = t - c.t[j];
        if tau <= 0.0 {
            continue;
        }
        let (k, w) = tab.lag_pos(tau);
        let mut phis = [0.0; MAX_RANK];
        for l in 0..l_rank {
            phis[l] = tab.phi_at(l, k, w);
        }
        let mut inner = [0.0; MAX_RANK];
        let mut coef = [0.0; MAX_RANK];
        for r in 0..r_rank {
            let mut a = 0.0;
            for l in 0..l_rank {
                a += tab.alpha[r * l_rank + l] * c.psi[j * l_rank + l] * phis[l];
            }
            inner[r] = a;
            coef[r] = a * c.u[j * r_rank + r];
        }
        let mut gcoef = [0.0; MAX_RANK];
        let mut touched = false;
        for (p, &gp) in pts.iter().zip(gup) {
            if gp == 0.0 {
                continue;
            }
            let dx = p[0] - c.x[j];
            let dy = p[1] - c.y[j];
            if dx * dx + dy * dy > tab.a2 {
                continue;
            }
            touched = true;
            let (ix, wx) = tab.disp_pos(dx);
            let (iy, wy) = tab.disp_pos(dy);
            let w00 = (1.0 - wx) * (1.0 - wy);
            let w01 = (1.0 - wx) * wy;
            let w10 = wx * (1.0 - wy);
            let w11 = wx * wy;
            for r in 0..r_rank {
                gcoef[r] += gp * tab.v_at(r, ix, wx, iy, wy);
                let gc = gp * coef[r];
                if gc != 0.0 {
                    let b = (r * nd + ix) * nd + iy;
                    g.v[b] += gc * w00;
                    g.v[b + 1] += gc * w01;
                    g.v[b + nd] += gc * w10;
                    g.v[b + nd + 1] += gc * w11;
                }
            }
        }
        if !touched {
            continue;
        }
        let mut gphi = [0.0; MAX_RANK];
        for r in 0..r_rank {
            let ur = c.u[j * r_rank + r];
            c.gu[j * r_rank + r] += gcoef[r] * inner[r];
            let ginner = gcoef[r] * ur;
            if ginner == 0.0 {
                continue;
            }
            for l in 0..l_rank {
                let a = tab.alpha[r * l_rank + l];
                let p = c.psi[j * l_rank + l];
                g.alpha[r * l_rank + l] += ginner * p * phis[l];
                c.gpsi[j * l_rank + l] += ginner * a * phis[l];
                gphi[l] += ginner * a * p;
            }
        }
        let n1 = tab.lag.cells + 1;
        for l in 0..l_rank {
            g.phi[l * n1 + k] += (1.0 - w) * gphi[l];
            g.phi[l * n1 + k + 1] += w * gphi[l];
        }
    }
}

/// Spatial integrals `V_r(s_i)` for every event of a sequence, `[i * R + r]`.
fn spatial_integrals(tab: &Tables, c: &SeqCache, dom: &crate::model::SpatialDomain) -> Vec<f64> {
    let mut out = Vec::with_capacity(c.t.len() * tab.r);
    for i in 0..c.t.len() {
        for r in 0..tab.r {
            out.push(tab.spatial_integral(r, [c.x[i], c.y[i]], dom));
        }
    }
    out
}

/// Kernel part of the integral term for one sequence.
fn kernel_integral(tab: &Tables, c: &SeqCache, vint: &[f64], horizon: f64) -> f64 {
    let (l_rank, r_rank) = (tab.l, tab.r);
    let mut total = 0.0;
    for i in 0..c.t.len() {
        let upper = (horizon - c.t[i]).min(tab.tau_max);
        if upper <= 0.0 {
            continue;
        }
        for r in 0..r_rank {
            let mut a = 0.0;
            for l in 0..l_rank {
                a += tab.alpha[r * l_rank + l] * c.psi[i * l_rank + l] * tab.phi_integral(l, upper);
            }
            total += c.u[i * r_rank + r] * vint[i * r_rank + r] * a;
        }
    }
    total
}

fn kernel_integral_backward(
    tab: &Tables,
    c: &mut SeqCache,
    vint: &[f64],
    horizon: f64,
    dom: &crate::model::SpatialDomain,
    gup: f64,
    g: &mut TableGrads,
) {
    let (l_rank, r_rank) = (tab.l, tab.r);
    let n = tab.lag.cells;
    let h = tab.lag.step();
    let nd = tab.nd;
    let hd = tab.disp.step();
    let lo = tab.disp.lo;
    for i in 0..c.t.len() {
        let upper = (horizon - c.t[i]).min(tab.tau_max);
        if upper <= 0.0 {
            continue;
        }
        let (k, f) = tab.lag_pos(upper);
        let mut phii = [0.0; MAX_RANK];
        for (l, p) in phii.iter_mut().enumerate().take(l_rank) {
            *p = tab.phi_integral(l, upper);
        }
        let mut gphii = [0.0; MAX_RANK];
        for r in 0..r_rank {
            let mut a = 0.0;
            for l in 0..l_rank {
                a += tab.alpha[r * l_rank + l] * c.psi[i * l_rank + l] * phii[l];
            }
            let ur = c.u[i * r_rank + r];
            let vr = vint[i * r_rank + r];
            c.gu[i * r_rank + r] += gup * vr * a;
            let gv = gup * ur * a;
            let ga = gup * ur * vr;
            for l in 0..l_rank {
                let al = tab.alpha[r * l_rank + l];
                let p = c.psi[i * l_rank + l];
                g.alpha[r * l_rank + l] += ga * p * phii[l];
                c.gpsi[i * l_rank + l] += ga * al * phii[l];
                gphii[l] += ga * al * p;
            }
            if gv != 0.0 {
                tab.region_rows([c.x[i], c.y[i]], dom, |iy, xa, xb, hy| {
                    let ia = (((xa - lo) / hd) as usize).min(nd - 1);
                    let ib = (((xb - lo) / hd) as usize).min(nd - 1);
                    let cell = |ix: usize| (r * nd + ix) * nd + iy;
                    if ia == ib {
                        g.v[cell(ia)] += gv * hy * (xb - xa);
                    } else {
                        let x1a = lo + (ia + 1) as f64 * hd;
                        let x0b = lo + ib as f64 * hd;
                        g.v[cell(ia)] += gv * hy * (x1a - xa);
                        g.v[cell(ib)] += gv * hy * (xb - x0b);
                        if ib > ia + 1 {
                            let base = (r * nd + iy) * (nd + 1);
                            g.v_rows[base + ia + 1] += gv * hy * hd;
                            g.v_rows[base + ib] -= gv * hy * hd;
                        }
                    }
                });
            }
        }
        for l in 0..l_rank {
            let gl = gphii[l];
            if gl == 0.0 {
                continue;
            }
            let base = l * (n + 1);
            // Full cells 0..k contribute through the cumulative integral.
            g.phi_cells[base + k] += gl;
            g.phi[base + k] += gl * h * (f - 0.5 * f * f);
            g.phi[base + k + 1] += gl * h * 0.5 * f * f;
        }
    }
}

/// Midpoint nodes `(t, width)` of the cells of `axis`, each further split at
/// the cut points falling inside it.
pub(crate) fn split_cells(axis: &Axis, cuts: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted: Vec<f64> = cuts.iter().copied().filter(|c| *c > axis.lo && *c < axis.hi).collect();
    sorted.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(axis.cells + sorted.len());
    let mut next = 0;
    for i in 0..axis.cells {
        let (a, b) = (axis.node(i), axis.node(i + 1));
        let mut lo = a;
        while next < sorted.len() && sorted[next] <= a {
            next += 1;
        }
        while next < sorted.len() && sorted[next] < b {
            let c = sorted[next];
            if c > lo {
                out.push((0.5 * (lo + c), c - lo));
                lo = c;
            }
            next += 1;
        }
        out.push((0.5 * (lo + b), b - lo));
    }
    out
}

/// Which terms an evaluation includes.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Terms {
    /// Sum of logs at events; `Some(floor)` uses [`guarded_log`], `None` is strict.
    pub loglik: Option<Option<f64>>,
    /// Subtract the intensity integral.
    pub integral: bool,
    /// Least squares: `int lambda^2 - 2 sum lambda(events)`.
    pub least_squares: bool,
    /// Barrier `(weight, floor)`; the term is `-weight sum log lambda` (guarded).
    pub barrier: Option<(f64, f64)>,
    pub gradient: bool,
}

/// Per-sequence contributions `(event, integral, barrier)`, unaveraged.
pub(crate) type SeqTerms = (f64, f64, f64);

/// Core evaluator shared by every objective. Returns the averaged value and
/// gradient plus per-sequence contributions.
pub(crate) fn evaluate(
    model: &SttpModel,
    sequences: &[EventSequence],
    grid: &GridSpec,
    terms: Terms,
) -> Result<(ObjectiveValue, Vec<SeqTerms>)> {
    let tab = Tables::new(model, grid)?;
    let mut g = TableGrads::new(&tab);
    let k = &model.kernel;
    let (l_rank, r_rank) = (tab.l, tab.r);
    let offsets = k.param_offsets();
    let mu_off = model.learn_mu as usize;
    let mut grad = if terms.gradient { vec![0.0; model.num_params()] } else { Vec::new() };
    let m_inv = if sequences.is_empty() { 0.0 } else { 1.0 / sequences.len() as f64 };
    let horizon = model.window.horizon();
    let area = model.domain.area();
    let needs_grid = terms.least_squares || terms.barrier.is_some();
    let mids = grid.time.midpoints();
    let pts: Vec<[f64; 2]> = grid.x.midpoints().iter().flat_map(|&x| grid.y.midpoints().into_iter().map(move |y| [x, y])).collect();
    let area_cell = grid.x.step() * grid.y.step();

    let mut per_seq = Vec::with_capacity(sequences.len());
    let mut total = Breakdown::default();
    for (si, seq) in sequences.iter().enumerate() {
        let mut c = SeqCache::new(model, seq);
        let n = c.t.len();
        // Intensity at events.
        let mut lam_ev = vec![model.mu; n];
        for i in 0..n {
            eval_slice(&tab, &c, c.t[i], &[[c.x[i], c.y[i]]], &mut lam_ev[i..i + 1]);
        }
        let mut ev_term = 0.0;
        let mut int_term = 0.0;
        let mut bar_term = 0.0;
        let mut g_ev = vec![0.0; n];
        if let Some(guard) = terms.loglik {
            for (i, &lam) in lam_ev.iter().enumerate() {
                let (val, d) = match guard {
                    Some(floor) => guarded_log(lam, floor),
                    None if lam > 0.0 => (lam.ln(), 1.0 / lam),
                    None => return Err(Error::NonPositiveIntensityAtEvent { sequence: si, index: i, value: lam }),
                };
                ev_term += val;
                g_ev[i] += d;
            }
        }
        if terms.least_squares {
            for (i, &lam) in lam_ev.iter().enumerate() {
                ev_term -= 2.0 * lam;
                g_ev[i] -= 2.0;
            }
        }
        if let Some((w, floor)) = terms.barrier {
            for (i, &lam) in lam_ev.iter().enumerate() {
                let (val, d) = guarded_log(lam, floor);
                bar_term -= w * val;
                g_ev[i] -= w * d;
            }
        }
        let vint = if terms.integral { spatial_integrals(&tab, &c, &model.domain) } else { Vec::new() };
        if terms.integral {
            int_term -= model.mu * area * horizon + kernel_integral(&tab, &c, &vint, horizon);
        }
        // Space-time slices: `(t, least-squares weight, barrier node)`.
        let mut slices: Vec<(f64, f64, bool)> = Vec::new();
        if terms.least_squares {
            let cuts: Vec<f64> = c.t.iter().flat_map(|&t| [t, t + tab.tau_max]).collect();
            // two-point Gauss-Legendre per piece; pieces are smooth between cuts
            let off = 0.5 / 3f64.sqrt();
            for (t, dt) in split_cells(&grid.time, &cuts) {
                slices.push((t - off * dt, 0.5 * dt * area_cell, false));
                slices.push((t + off * dt, 0.5 * dt * area_cell, false));
            }
        }
        if terms.barrier.is_some() {
            slices.extend(mids.iter().map(|&t| (t, 0.0, true)));
        }
        let mut lam_grid = Vec::new();
        if needs_grid {
            lam_grid = vec![model.mu; slices.len() * pts.len()];
            for (it, &(t, _, _)) in slices.iter().enumerate() {
                eval_slice(&tab, &c, t, &pts, &mut lam_grid[it * pts.len()..(it + 1) * pts.len()]);
            }
        }
        let mut g_grid = vec![0.0; lam_grid.len()];
        for (it, &(_, wls, is_barrier)) in slices.iter().enumerate() {
            let span = it * pts.len()..(it + 1) * pts.len();
            for (gg, &lam) in g_grid[span.clone()].iter_mut().zip(&lam_grid[span]) {
                if wls > 0.0 {
                    int_term += lam * lam * wls;
                    *gg += 2.0 * lam * wls;
                }
                if let (true, Some((w, floor))) = (is_barrier, terms.barrier) {
                    let (val, d) = guarded_log(lam, floor);
                    bar_term -= w * val;
                    *gg -= w * d;
                }
            }
        }
        per_seq.push((ev_term, int_term, bar_term));
        total.event_term += ev_term * m_inv;
        total.integral_term += int_term * m_inv;
        total.barrier_term += bar_term * m_inv;

        if !terms.gradient {
            continue;
        }
        // Reverse pass, everything scaled by 1 / M.
        g_ev.iter_mut().for_each(|v| *v *= m_inv);
        g_grid.iter_mut().for_each(|v| *v *= m_inv);
        g.mu += g_ev.iter().sum::<f64>() + g_grid.iter().sum::<f64>();
        for i in 0..n {
            if g_ev[i] != 0.0 {
                let (t, p) = (c.t[i], [c.x[i], c.y[i]]);
                backward_slice(&tab, &mut c, t, &[p], &g_ev[i..i + 1], &mut g);
            }
        }
        if needs_grid {
            for (it, &(t, _, _)) in slices.iter().enumerate() {
                let gs = &g_grid[it * pts.len()..(it + 1) * pts.len()];
                backward_slice(&tab, &mut c, t, &pts, gs, &mut g);
            }
        }
        if terms.integral {
            g.mu -= m_inv * area * horizon;
            kernel_integral_backward(&tab, &mut c, &vint, horizon, &model.domain, -m_inv, &mut g);
        }
        // Source bases at events.
        for i in 0..n {
            for l in 0..l_rank {
                let up = c.gpsi[i * l_rank + l];
                if up != 0.0 && k.psi[l].is_learnable() {
                    let o = mu_off + offsets.psi[l];
                    k.psi[l].accumulate_grad(&[c.t[i]], up, &mut grad[o..o + k.psi[l].num_params()]);
                }
            }
            for r in 0..r_rank {
                let up = c.gu[i * r_rank + r];
                if up != 0.0 && k.u[r].is_learnable() {
                    let o = mu_off + offsets.u[r];
                    k.u[r].accumulate_grad(&[c.x[i], c.y[i]], up, &mut grad[o..o + k.u[r].num_params()]);
                }
            }
        }
    }

    if terms.gradient {
        g.finish(&tab);
        if model.learn_mu {
            grad[0] = g.mu * model.mu_chain();
        }
        grad[mu_off..mu_off + g.alpha.len()].copy_from_slice(&g.alpha);
        let n1 = tab.lag.cells + 1;
        for l in 0..l_rank {
            if !k.phi[l].is_learnable() {
                continue;
            }
            let o = mu_off + offsets.phi[l];
            let np = k.phi[l].num_params();
            for node in 0..n1 {
                let up = g.phi[l * n1 + node];
                if up != 0.0 {
                    k.phi[l].accumulate_grad(&[tab.lag.node(node)], up, &mut grad[o..o + np]);
                }
            }
        }
        let nd = tab.nd;
        let centers = tab.disp.midpoints();
        for r in 0..r_rank {
            if !k.v[r].is_learnable() {
                continue;
            }
            let o = mu_off + offsets.v[r];
            let np = k.v[r].num_params();
            for ix in 0..nd {
                for iy in 0..nd {
                    let up = g.v[(r * nd + ix) * nd + iy];
                    if up != 0.0 {
                        k.v[r].accumulate_grad(&[centers[ix], centers[iy]], up, &mut grad[o..o + np]);
                    }
                }
            }
        }
    }
    let value = total.event_term + total.integral_term + total.barrier_term;
    Ok((ObjectiveValue { value, gradient: grad, breakdown: total }, per_seq))
}

/// Average over sequences of `sum_i log lambda(t_i, s_i) - int int lambda`.
pub fn log_likelihood(model: &SttpModel, sequences: &[EventSequence], grid: &GridSpec) -> Result<ObjectiveValue> {
    let terms = Terms { loglik: Some(None), integral: true, gradient: true, ..Terms::default() };
    Ok(evaluate(model, sequences, grid, terms)?.0)
}

/// Log-likelihood of each sequence separately, without gradients.
pub fn log_likelihood_per_sequence(model: &SttpModel, sequences: &[EventSequence], grid: &GridSpec) -> Result<Vec<f64>> {
    let terms = Terms { loglik: Some(None), integral: true, ..Terms::default() };
    let (_, per) = evaluate(model, sequences, grid, terms)?;
    Ok(per.into_iter().map(|(e, i, _)| e + i).collect())
}

/// Average over sequences of `int int lambda^2 - 2 sum_i lambda(t_i, s_i)`.
/// The quadratic term uses the spatial midpoint grid and, in time, two-point
/// Gauss-Legendre rules on cells split at event times and at truncation
/// boundaries where the intensity jumps.
pub fn ls_loss(model: &SttpModel, sequences: &[EventSequence], grid: &GridSpec) -> Result<ObjectiveValue> {
    let terms = Terms { least_squares: true, gradient: true, ..Terms::default() };
    Ok(evaluate(model, sequences, grid, terms)?.0)
}

/// `-weight * sum log lambda` over the space-time grid nodes and every event,
/// averaged over sequences. Below `floor` the logarithm is continued
/// quadratically, so infeasible nodes give a large finite value whose
/// gradient raises the intensity.
pub fn barrier_penalty(
    model: &SttpModel,
    sequences: &[EventSequence],
    grid: &GridSpec,
    weight: f64,
    floor: f64,
) -> Result<ObjectiveValue> {
    if !(weight > 0.0 && floor > 0.0) {
        return Err(Error::InvalidConfig("barrier weight and floor must be positive".into()));
    }
    let terms = Terms { barrier: Some((weight, floor)), gradient: true, ..Terms::default() };
    Ok(evaluate(model, sequences, grid, terms)?.0)
}

/// Loss minimized by barrier-constrained maximum likelihood:
/// `-loglik + barrier`, with guarded logarithms at events.
pub fn mle_barrier_loss(
    model: &SttpModel,
    sequences: &[EventSequence],
    grid: &GridSpec,
    weight: f64,
    floor: f64,
    gradient: bool,
) -> Result<ObjectiveValue> {
    let terms = Terms {
        loglik: Some(Some(floor)),
        integral: true,
        barrier: if weight > 0.0 { Some((-weight, floor)) } else { None },
        gradient,
        ..Terms::default()
    };
    // The barrier enters with flipped sign so that negating the whole
    // objective yields `-loglik + barrier`.
    Ok(evaluate(model, sequences, grid, terms)?.0.negated())
}

/// Smallest intensity over the barrier nodes (space-time grid midpoints and
/// every event) of all sequences, on the tabulated kernel.
pub fn barrier_min_intensity(model: &SttpModel, sequences: &[EventSequence], grid: &GridSpec) -> Result<f64> {
    let tab = Tables::new(model, grid)?;
    let pts: Vec<[f64; 2]> = grid.x.midpoints().iter().flat_map(|&x| grid.y.midpoints().into_iter().map(move |y| [x, y])).collect();
    let mut best = f64::INFINITY;
    let mut buf = vec![0.0; pts.len()];
    for seq in sequences {
        let c = SeqCache::new(model, seq);
        for &t in &grid.time.midpoints() {
            buf.iter_mut().for_each(|v| *v = model.mu);
            eval_slice(&tab, &c, t, &pts, &mut buf);
            best = buf.iter().copied().fold(best, f64::min);
        }
        for i in 0..c.t.len() {
            let mut lam = [model.mu];
            eval_slice(&tab, &c, c.t[i], &[[c.x[i], c.y[i]]], &mut lam);
            best = best.min(lam[0]);
        }
    }
    Ok(if best.is_finite() { best } else { model.mu })
}

/// Basis integrals reused by [`integral_term`].
#[derive(Debug, Clone)]
pub struct PrecomputedIntegrals {
    /// `int_0^{min(T - t_i, tau_max)} phi_l`, `[i * L + l]`.
    pub temporal: Vec<f64>,
    /// `int v_r(s - s_i) ds` over the clipped region, `[i * R + r]`.
    pub spatial: Vec<f64>,
    pub temporal_rank: usize,
    pub spatial_rank: usize,
    pub events: usize,
    pub grid: GridSpec,
}

impl PrecomputedIntegrals {
    pub fn build(model: &SttpModel, seq: &EventSequence, grid: &GridSpec) -> Result<Self> {
        let tab = Tables::new(model, grid)?;
        let c = SeqCache::new(model, seq);
        let horizon = model.window.horizon();
        let mut temporal = Vec::with_capacity(c.t.len() * tab.l);
        for &ti in &c.t {
            let upper = (horizon - ti).min(tab.tau_max);
            temporal.extend((0..tab.l).map(|l| tab.phi_integral(l, upper)));
        }
        Ok(Self {
            temporal,
            spatial: spatial_integrals(&tab, &c, &model.domain),
            temporal_rank: tab.l,
            spatial_rank: tab.r,
            events: c.t.len(),
            grid: *grid,
        })
    }
}

/// `int_0^T int_S lambda` from precomputed basis integrals.
pub fn integral_term(model: &SttpModel, seq: &EventSequence, precomp: &PrecomputedIntegrals) -> Result<f64> {
    let k = &model.kernel;
    let (l_rank, r_rank) = (k.temporal_rank(), k.spatial_rank());
    if precomp.temporal_rank != l_rank || precomp.spatial_rank != r_rank || precomp.events != seq.len() {
        return Err(Error::GridMismatch(format!(
            "precomputed for ranks ({}, {}) and {} events, model has ({l_rank}, {r_rank}) and sequence {} events",
            precomp.temporal_rank,
            precomp.spatial_rank,
            precomp.events,
            seq.len()
        )));
    }
    precomp.grid.check(model.window, &model.domain, k.tau_max, k.a_max)?;
    let mut total = model.mu * model.domain.area() * model.window.horizon();
    for (i, e) in seq.events.iter().enumerate() {
        let s = e.loc();
        for r in 0..r_rank {
            let ur = k.u[r].eval(&s);
            let a: f64 = (0..l_rank)
                .map(|l| k.alpha_at(r, l) * k.psi[l].eval(&[e.t]) * precomp.temporal[i * l_rank + l])
                .sum();
            total += ur * precomp.spatial[i * r_rank + r] * a;
        }
    }
    Ok(total)
}

/// Resolution of the brute-force quadrature oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleGrid {
    /// Maximum time step; time cells are further split at every event time
    /// and every truncation boundary `t_j + tau_max`.
    pub max_dt: f64,
    pub nx: usize,
    pub ny: usize,
}

impl OracleGrid {
    /// A grid at least `factor` times finer than `grid` on every axis.
    pub fn finer_than(grid: &GridSpec, factor: usize) -> Self {
        Self {
            max_dt: grid.time.step() / factor as f64,
            nx: grid.x.cells * factor,
            ny: grid.y.cells * factor,
        }
    }
}

/// Midpoint time nodes and their widths with breakpoints at events and at
/// truncation boundaries.
fn oracle_time_nodes(seq: &EventSequence, horizon: f64, tau_max: f64, max_dt: f64) -> Vec<(f64, f64)> {
    let mut cuts: Vec<f64> = vec![0.0, horizon];
    for e in &seq.events {
        cuts.push(e.t);
        cuts.push(e.t + tau_max);
    }
    cuts.retain(|&c| (0.0..=horizon).contains(&c));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut nodes = Vec::new();
    for w in cuts.windows(2) {
        let len = w[1] - w[0];
        if len <= 0.0 {
            continue;
        }
        let cells = (len / max_dt).ceil().max(1.0) as usize;
        let h = len / cells as f64;
        nodes.extend((0..cells).map(|i| (w[0] + (i as f64 + 0.5) * h, h)));
    }
    nodes
}

/// Direct tensor-product midpoint quadrature of `f(lambda)` over `[0, T] x S`,
/// with every kernel factor evaluated exactly (memoized per event).
/// Sub-samples per axis in oracle cells cut by the support circle.
const BOUNDARY_SUB: usize = 16;

fn oracle_quadrature(model: &SttpModel, seq: &EventSequence, fine: OracleGrid, f: impl Fn(f64) -> f64) -> f64 {
    let k = &model.kernel;
    let (l_rank, r_rank) = (k.temporal_rank(), k.spatial_rank());
    let dom = &model.domain;
    let hx = (dom.x_hi - dom.x_lo) / fine.nx as f64;
    let hy = (dom.y_hi - dom.y_lo) / fine.ny as f64;
    let pts: Vec<[f64; 2]> = (0..fine.nx)
        .flat_map(|i| (0..fine.ny).map(move |j| [dom.x_lo + (i as f64 + 0.5) * hx, dom.y_lo + (j as f64 + 0.5) * hy]))
        .collect();
    let n = seq.len();
    let psi: Vec<f64> = seq.events.iter().flat_map(|e| k.psi.iter().map(move |b| b.eval(&[e.t]))).collect();
    // Spatial factor u_r(s_j) v_r(s - s_j), or zero beyond a_max.
    let mut spatial = vec![0.0; pts.len() * n * r_rank];
    for (j, e) in seq.events.iter().enumerate() {
        let s = e.loc();
        let u: Vec<f64> = k.u.iter().map(|b| b.eval(&s)).collect();
        let half_diag = 0.5 * hx.hypot(hy);
        for (m, p) in pts.iter().enumerate() {
            let d = [p[0] - s[0], p[1] - s[1]];
            let dist = d[0].hypot(d[1]);
            let out = &mut spatial[(m * n + j) * r_rank..(m * n + j + 1) * r_rank];
            if dist > k.a_max + half_diag {
                continue;
            }
            if dist < k.a_max - half_diag {
                for r in 0..r_rank {
                    out[r] = u[r] * k.v[r].eval(&d);
                }
                continue;
            }
            // cell cut by the support circle: average over sub-samples
            for a in 0..BOUNDARY_SUB {
                for b in 0..BOUNDARY_SUB {
                    let q = [
                        d[0] + hx * ((a as f64 + 0.5) / BOUNDARY_SUB as f64 - 0.5),
                        d[1] + hy * ((b as f64 + 0.5) / BOUNDARY_SUB as f64 - 0.5),
                    ];
                    if q[0] * q[0] + q[1] * q[1] <= k.a_max * k.a_max {
                        for r in 0..r_rank {
                            out[r] += u[r] * k.v[r].eval(&q) / (BOUNDARY_SUB * BOUNDARY_SUB) as f64;
                        }
                    }
                }
            }
        }
    }
    let mut total = 0.0;
    let mut lam = vec![0.0; pts.len()];
    for (t, dt) in oracle_time_nodes(seq, model.window.horizon(), k.tau_max, fine.max_dt) {
        lam.iter_mut().for_each(|v| *v = model.mu);
        for (j, e) in seq.events.iter().enumerate() {
            let lag = t - e.t;
            if !(lag > 0.0 && lag <= k.tau_max) {
                continue;
            }
            let phis: Vec<f64> = k.phi.iter().map(|b| b.eval(&[lag])).collect();
            let coef: Vec<f64> = (0..r_rank)
                .map(|r| (0..l_rank).map(|l| k.alpha_at(r, l) * psi[j * l_rank + l] * phis[l]).sum())
                .collect();
            for (m, lv) in lam.iter_mut().enumerate() {
                let sp = &spatial[(m * n + j) * r_rank..(m * n + j + 1) * r_rank];
                *lv += sp.iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        total += lam.iter().map(|&v| f(v)).sum::<f64>() * dt * hx * hy;
    }
    total
}

/// `int int lambda` by direct quadrature.
pub fn brute_force_integral(model: &SttpModel, seq: &EventSequence, fine: OracleGrid) -> f64 {
    oracle_quadrature(model, seq, fine, |v| v)
}

/// Log-likelihood with the exact kernel at events and the integral by direct
/// quadrature; an independent check of [`log_likelihood`].
pub fn brute_force_log_likelihood(model: &SttpModel, seq: &EventSequence, fine: OracleGrid) -> Result<f64> {
    let mut ev = 0.0;
    for (i, e) in seq.events.iter().enumerate() {
        let lam = model.mu + model.excitation(&seq.events[..i], e.t, e.loc());
        if lam <= 0.0 {
            return Err(Error::NonPositiveIntensityAtEvent { sequence: 0, index: i, value: lam });
        }
        ev += lam.ln();
    }
    Ok(ev - brute_force_integral(model, seq, fine))
}

/// Least-squares loss by direct quadrature.
pub fn brute_force_ls_loss(model: &SttpModel, seq: &EventSequence, fine: OracleGrid) -> f64 {
    let ev: f64 = seq.events.iter().enumerate().map(|(i, e)| model.mu + model.excitation(&seq.events[..i], e.t, e.loc())).sum();
    oracle_quadrature(model, seq, fine, |v| v * v) - 2.0 * ev
}

/// Monte-Carlo estimate of `E[l(k*) - l(k~)]` over trajectories with its
/// standard error.
pub fn perturbation_gap(
    true_model: &SttpModel,
    perturbed: &SttpModel,
    sequences: &[EventSequence],
    grid: &GridSpec,
) -> Result<(f64, f64)> {
    if true_model.window != perturbed.window || true_model.domain != perturbed.domain {
        return Err(Error::InvalidConfig("models must share the observation domain".into()));
    }
    let a = log_likelihood_per_sequence(true_model, sequences, grid)?;
    let b = log_likelihood_per_sequence(perturbed, sequences, grid)?;
    let gaps: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    Ok(mean_and_stderr(&gaps))
}

pub(crate) fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::LowRankKernel;
    use crate::model::{Event, SpatialDomain, TimeWindow};

    fn poisson(mu: f64, area_side: (f64, f64), horizon: f64) -> SttpModel {
        let w = TimeWindow::new(horizon).unwrap();
        let dom = SpatialDomain::new(0.0, area_side.0, 0.0, area_side.1).unwrap();
        SttpModel::poisson(mu, w, dom).unwrap()
    }

    fn grid_for(m: &SttpModel) -> GridSpec {
        GridSpec::with_counts(m.window, &m.domain, m.kernel.tau_max, m.kernel.a_max, [6, 4, 4], 20, 8).unwrap()
    }

    #[test]
    fn empty_poisson_loglik_is_minus_area_time() {
        let m = poisson(1.0, (1.0, 1.0), 1.0);
        let seq = EventSequence::empty(m.window);
        let v = log_likelihood(&m, &[seq], &grid_for(&m)).unwrap();
        assert!((v.value + 1.0).abs() < 1e-12);
    }

    #[test]
    fn poisson_loglik_closed_form() {
        let m = poisson(2.0, (1.0, 2.0), 3.0);
        let events = (0..4).map(|i| Event::spatial(0.5 + i as f64 * 0.6, 0.5, 1.0)).collect();
        let seq = EventSequence::new(events, m.window);
        let v = log_likelihood(&m, &[seq], &grid_for(&m)).unwrap();
        assert!((v.value - (4.0 * 2f64.ln() - 12.0)).abs() < 1e-9, "{}", v.value);
        assert!((v.value - (-9.2274)).abs() < 1e-4);
        let b = v.breakdown;
        assert!((b.event_term + b.integral_term + b.barrier_term - v.value).abs() < 1e-12);
    }

    #[test]
    fn poisson_ls_closed_form() {
        let m = poisson(1.0, (2.0, 2.0), 10.0);
        let events = (0..5).map(|i| Event::spatial(1.0 + i as f64, 1.0, 1.0)).collect();
        let seq = EventSequence::new(events, m.window);
        let v = ls_loss(&m, &[seq.clone()], &grid_for(&m)).unwrap();
        assert!((v.value - 30.0).abs() < 1e-9);
        let zero = poisson(0.0, (2.0, 2.0), 10.0);
        assert_eq!(ls_loss(&zero, &[seq], &grid_for(&zero)).unwrap().value, 0.0);
    }

    #[test]
    fn barrier_constant_intensity() {
        let m = poisson(1.0, (1.0, 1.0), 1.0);
        let seq = EventSequence::new(vec![Event::spatial(0.5, 0.5, 0.5)], m.window);
        let g = grid_for(&m);
        let nodes = g.spacetime_nodes() + 1;
        assert_eq!(barrier_penalty(&m, &[seq.clone()], &g, 1.0, 1e-6).unwrap().value, 0.0);
        let e = poisson(std::f64::consts::E, (1.0, 1.0), 1.0);
        let v = barrier_penalty(&e, &[seq.clone()], &g, 1.0, 1e-6).unwrap().value;
        assert!((v + nodes as f64).abs() < 1e-9);
        let z = poisson(0.0, (1.0, 1.0), 1.0);
        let v = barrier_penalty(&z, &[seq], &g, 1.0, 1e-6).unwrap();
        assert!(v.value.is_finite() && v.value > 1e3);
        assert!(v.gradient.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn integral_term_without_future_mass() {
        let w = TimeWindow::new(2.0).unwrap();
        let dom = SpatialDomain::new(0.0, 1.0, 0.0, 1.0).unwrap();
        let k = LowRankKernel::new(
            vec![0.5],
            vec![crate::basis::Basis::Constant(1.0)],
            vec![crate::basis::Basis::ExpDecay { rate: 1.0 }],
            vec![crate::basis::Basis::Constant(1.0)],
            vec![crate::basis::Basis::Gaussian { sigma: 0.3, center: [0.0, 0.0] }],
            1.0,
            0.8,
        )
        .unwrap();
        let m = SttpModel::new(0.7, k, w, dom).unwrap();
        let seq = EventSequence::new(vec![Event::spatial(2.0, 0.5, 0.5)], w);
        let g = grid_for(&m);
        let pre = PrecomputedIntegrals::build(&m, &seq, &g).unwrap();
        assert!((integral_term(&m, &seq, &pre).unwrap() - 0.7 * 2.0).abs() < 1e-12);
        let other = EventSequence::new(vec![], w);
        assert!(matches!(integral_term(&m, &other, &pre), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn guarded_log_continuity() {
        let (a, da) = guarded_log(1e-3, 1e-3);
        let (b, db) = guarded_log(1e-3 - 1e-12, 1e-3);
        assert!((a - b).abs() < 1e-8 && (da - db).abs() < 1e-2);
    }

    #[test]
    fn mean_and_stderr_basics() {
        assert_eq!(mean_and_stderr(&[2.0, 2.0, 2.0]), (2.0, 0.0));
        let (m, s) = mean_and_stderr(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
    }
}
