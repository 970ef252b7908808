//! Point processes on graphs with kernels
//! `k(t', t, v', v) = sum_{r,l} alpha[r][l] psi_l(t') phi_l(t - t') B_r[v', v]`,
//! where each filter `B_r` is a free matrix or a polynomial in a graph shift.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{network_basis, Basis, BasisRole};
use crate::error::{Error, Result};
use crate::model::{Axis, BasisWidths, Event, EventSequence, TimeWindow};
use crate::nn::{sigmoid, softplus, softplus_inv};
use crate::objectives::{guarded_log, split_cells};
use crate::optim::{fit_trainable, FitOptions, FitReport, ObjectiveKind, Trainable};
use crate::simulate::{Location, PointProcess, Space};

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub adjacency: DMatrix<f64>,
}

impl Graph {
    pub fn new(adjacency: DMatrix<f64>, allow_self_loops: bool) -> Result<Self> {
        let (r, c) = adjacency.shape();
        if r != c {
            return Err(Error::NonSquare { rows: r, cols: c });
        }
        if adjacency.iter().any(|&a| !(a.is_finite() && a >= 0.0)) {
            return Err(Error::InvalidConfig("adjacency entries must be finite and nonnegative".into()));
        }
        if !allow_self_loops && (0..r).any(|i| adjacency[(i, i)] != 0.0) {
            return Err(Error::InvalidConfig("self-loops present but not enabled".into()));
        }
        Ok(Self { adjacency })
    }

    pub fn nodes(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn degrees(&self) -> Vec<f64> {
        self.adjacency.row_iter().map(|r| r.sum()).collect()
    }

    /// `D - A`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = -self.adjacency.clone();
        for (i, d) in self.degrees().into_iter().enumerate() {
            l[(i, i)] += d;
        }
        l
    }

    pub fn shift(&self, kind: ShiftKind) -> DMatrix<f64> {
        match kind {
            ShiftKind::Adjacency => self.adjacency.clone(),
            ShiftKind::Laplacian => self.laplacian(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    Adjacency,
    Laplacian,
}

/// `sum_{j=1..J} h_j S^j` by iterated multiplication.
pub fn graph_filter_poly(s: &DMatrix<f64>, h: &[f64]) -> Result<DMatrix<f64>> {
    let (r, c) = s.shape();
    if r != c {
        return Err(Error::NonSquare { rows: r, cols: c });
    }
    if h.is_empty() {
        return Err(Error::InvalidConfig("polynomial filter needs at least one coefficient".into()));
    }
    let mut power = s.clone();
    let mut out = DMatrix::zeros(r, r);
    for (j, &hj) in h.iter().enumerate() {
        if j > 0 {
            power = &power * s;
        }
        out += hj * &power;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphFilter {
    /// Row-major `N x N` entries.
    Free(Vec<f64>),
    /// Coefficients of `S, S^2, ...`.
    Poly(Vec<f64>),
}

impl GraphFilter {
    fn params(&self) -> &[f64] {
        match self {
            GraphFilter::Free(v) | GraphFilter::Poly(v) => v,
        }
    }

    fn params_mut(&mut self) -> &mut Vec<f64> {
        match self {
            GraphFilter::Free(v) | GraphFilter::Poly(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFilterKernel {
    pub nodes: usize,
    /// `R x L` row-major.
    pub alpha: Vec<f64>,
    pub psi: Vec<Basis>,
    pub phi: Vec<Basis>,
    pub filters: Vec<GraphFilter>,
    /// Row-major shift matrix for polynomial filters.
    pub shift: Option<Vec<f64>>,
    pub tau_max: f64,
}

impl GraphFilterKernel {
    pub fn new(
        nodes: usize,
        alpha: Vec<f64>,
        psi: Vec<Basis>,
        phi: Vec<Basis>,
        filters: Vec<GraphFilter>,
        shift: Option<DMatrix<f64>>,
        tau_max: f64,
    ) -> Result<Self> {
        let (l, r) = (psi.len(), filters.len());
        if l == 0 || r == 0 || phi.len() != l {
            return Err(Error::InvalidConfig("graph kernel needs matching nonempty temporal bases and filters".into()));
        }
        if alpha.len() != l * r {
            return Err(Error::DimensionMismatch { expected: l * r, got: alpha.len() });
        }
        if !(tau_max > 0.0) {
            return Err(Error::InvalidConfig("tau_max must be positive".into()));
        }
        let shift = match shift {
            Some(s) => {
                if s.shape() != (nodes, nodes) {
                    return Err(Error::NonSquare { rows: s.nrows(), cols: s.ncols() });
                }
                Some(s.transpose().as_slice().to_vec())
            }
            None => None,
        };
        for f in &filters {
            match f {
                GraphFilter::Free(v) if v.len() != nodes * nodes => {
                    return Err(Error::DimensionMismatch { expected: nodes * nodes, got: v.len() })
                }
                GraphFilter::Poly(h) if h.is_empty() => {
                    return Err(Error::InvalidConfig("polynomial filter degree must be at least 1".into()))
                }
                GraphFilter::Poly(_) if shift.is_none() => {
                    return Err(Error::InvalidConfig("polynomial filters need a shift matrix".into()))
                }
                _ => {}
            }
        }
        Ok(Self { nodes, alpha, psi, phi, filters, shift, tau_max })
    }

    /// Network temporal bases around the given filters.
    #[allow(clippy::too_many_arguments)]
    pub fn deep(
        nodes: usize,
        temporal_rank: usize,
        filters: Vec<GraphFilter>,
        shift: Option<DMatrix<f64>>,
        tau_max: f64,
        widths: &BasisWidths,
        alpha0: f64,
        seed: u64,
    ) -> Result<Self> {
        let l = temporal_rank;
        let r = filters.len();
        let psi = (0..l).map(|i| network_basis(BasisRole::SourceTime, widths, 0, seed + 1 + i as u64)).collect::<Result<_>>()?;
        let phi = (0..l).map(|i| network_basis(BasisRole::Decay, widths, 0, seed + 101 + i as u64)).collect::<Result<_>>()?;
        Self::new(nodes, vec![alpha0 / (l * r).max(1) as f64; l * r], psi, phi, filters, shift, tau_max)
    }

    pub fn temporal_rank(&self) -> usize {
        self.psi.len()
    }

    pub fn graph_rank(&self) -> usize {
        self.filters.len()
    }

    fn shift_matrix(&self) -> Option<DMatrix<f64>> {
        self.shift.as_ref().map(|s| DMatrix::from_row_slice(self.nodes, self.nodes, s))
    }

    /// Materialized filters, row-major `N x N` each.
    pub fn filter_matrices(&self) -> Vec<Vec<f64>> {
        let shift = self.shift_matrix();
        self.filters
            .iter()
            .map(|f| match f {
                GraphFilter::Free(v) => v.clone(),
                GraphFilter::Poly(h) => {
                    let b = graph_filter_poly(shift.as_ref().expect("validated"), h).expect("validated");
                    b.transpose().as_slice().to_vec()
                }
            })
            .collect()
    }

    fn eval_with(&self, b: &[Vec<f64>], t_src: f64, t: f64, v_src: usize, v: usize) -> f64 {
        let lag = t - t_src;
        if !(lag > 0.0 && lag <= self.tau_max) {
            return 0.0;
        }
        let l_rank = self.temporal_rank();
        let temporal: Vec<f64> = (0..l_rank).map(|l| self.psi[l].eval(&[t_src]) * self.phi[l].eval(&[lag])).collect();
        let n = self.nodes;
        (0..self.graph_rank())
            .map(|r| b[r][v_src * n + v] * (0..l_rank).map(|l| self.alpha[r * l_rank + l] * temporal[l]).sum::<f64>())
            .sum()
    }

    pub fn num_params(&self) -> usize {
        self.alpha.len()
            + self.psi.iter().chain(&self.phi).map(Basis::num_params).sum::<usize>()
            + self.filters.iter().map(|f| f.params().len()).sum::<usize>()
    }

    /// `alpha, psi..., phi..., filters...`.
    pub fn params(&self) -> Vec<f64> {
        let mut out = self.alpha.clone();
        for b in self.psi.iter().chain(&self.phi) {
            out.extend_from_slice(b.params());
        }
        for f in &self.filters {
            out.extend_from_slice(f.params());
        }
        out
    }

    pub fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.num_params() {
            return Err(Error::DimensionMismatch { expected: self.num_params(), got: theta.len() });
        }
        let mut at = self.alpha.len();
        self.alpha.copy_from_slice(&theta[..at]);
        for b in self.psi.iter_mut().chain(self.phi.iter_mut()) {
            let n = b.num_params();
            b.params_mut().copy_from_slice(&theta[at..at + n]);
            at += n;
        }
        for f in &mut self.filters {
            let p = f.params_mut();
            let n = p.len();
            p.copy_from_slice(&theta[at..at + n]);
            at += n;
        }
        Ok(())
    }
}

pub fn eval_graph_kernel(k: &GraphFilterKernel, t_src: f64, t: f64, v_src: usize, v: usize) -> Result<f64> {
    if t_src >= t {
        return Err(Error::NonCausalPair { source_time: t_src, target_time: t });
    }
    for node in [v_src, v] {
        if node >= k.nodes {
            return Err(Error::NodeOutOfRange { node, nodes: k.nodes });
        }
    }
    Ok(k.eval_with(&k.filter_matrices(), t_src, t, v_src, v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphModel {
    /// Per-node baselines, or a single shared one.
    pub mu: Vec<f64>,
    pub learn_mu: bool,
    pub kernel: GraphFilterKernel,
    pub window: TimeWindow,
}

impl GraphModel {
    pub fn new(mu: Vec<f64>, kernel: GraphFilterKernel, window: TimeWindow) -> Result<Self> {
        if !(mu.len() == 1 || mu.len() == kernel.nodes) {
            return Err(Error::DimensionMismatch { expected: kernel.nodes, got: mu.len() });
        }
        if mu.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::InvalidConfig("baselines must be nonnegative".into()));
        }
        Ok(Self { mu, learn_mu: true, kernel, window })
    }

    pub fn nodes(&self) -> usize {
        self.kernel.nodes
    }

    #[inline]
    pub fn mu_at(&self, v: usize) -> f64 {
        if self.mu.len() == 1 {
            self.mu[0]
        } else {
            self.mu[v]
        }
    }

    pub fn num_params(&self) -> usize {
        (if self.learn_mu { self.mu.len() } else { 0 }) + self.kernel.num_params()
    }

    /// `[softplus^-1(mu)...]` (if learnable), then the kernel's.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        if self.learn_mu {
            out.extend(self.mu.iter().map(|&m| softplus_inv(m)));
        }
        out.extend(self.kernel.params());
        out
    }

    pub fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.num_params() {
            return Err(Error::DimensionMismatch { expected: self.num_params(), got: theta.len() });
        }
        let rest = if self.learn_mu {
            let k = self.mu.len();
            for (m, &raw) in self.mu.iter_mut().zip(&theta[..k]) {
                *m = softplus(raw);
            }
            &theta[k..]
        } else {
            theta
        };
        self.kernel.set_params(rest)
    }

    fn intensity_with(&self, b: &[Vec<f64>], history: &[Event], t: f64, v: usize) -> f64 {
        let k = &self.kernel;
        let end = history.partition_point(|e| e.t < t);
        let start = history[..end].partition_point(|e| e.t < t - k.tau_max);
        self.mu_at(v)
            + history[start..end]
                .iter()
                .map(|e| k.eval_with(b, e.t, t, e.node.unwrap_or(0), v))
                .sum::<f64>()
    }
}

pub fn graph_intensity(model: &GraphModel, history: &[Event], t: f64, v: usize) -> Result<f64> {
    let n = model.nodes();
    if v >= n {
        return Err(Error::NodeOutOfRange { node: v, nodes: n });
    }
    if let Some(bad) = history.iter().filter_map(|e| e.node).find(|&u| u >= n) {
        return Err(Error::NodeOutOfRange { node: bad, nodes: n });
    }
    Ok(model.intensity_with(&model.kernel.filter_matrices(), history, t, v))
}

/// `k(t - lag, t, v', v)` as `N x N` matrices indexed `(v', v)`.
pub fn influence_snapshots(model: &GraphModel, t: f64, lags: &[f64]) -> Result<Vec<DMatrix<f64>>> {
    let k = &model.kernel;
    let b = k.filter_matrices();
    let n = model.nodes();
    lags.iter()
        .map(|&lag| {
            if !(lag > 0.0 && t - lag >= 0.0) {
                return Err(Error::InvalidConfig(format!("snapshot lag {lag} invalid at t = {t}")));
            }
            Ok(DMatrix::from_fn(n, n, |i, j| k.eval_with(&b, t - lag, t, i, j)))
        })
        .collect()
}

impl PointProcess for GraphModel {
    fn space(&self) -> Space {
        Space::Nodes(self.nodes())
    }

    fn intensity(&self, history: &[Event], t: f64, at: Location) -> f64 {
        match at {
            Location::Node(v) if v < self.nodes() => self.intensity_with(&self.kernel.filter_matrices(), history, t, v),
            _ => f64::NAN,
        }
    }

    fn breakpoints(&self, history: &[Event]) -> Vec<f64> {
        history.iter().map(|e| e.t + self.kernel.tau_max).collect()
    }
}

/// Cached filters for repeated evaluation, e.g. during simulation.
#[derive(Debug, Clone)]
pub struct CachedGraphModel {
    pub model: GraphModel,
    filters: Vec<Vec<f64>>,
}

impl CachedGraphModel {
    pub fn new(model: GraphModel) -> Self {
        let filters = model.kernel.filter_matrices();
        Self { model, filters }
    }
}

impl PointProcess for CachedGraphModel {
    fn space(&self) -> Space {
        self.model.space()
    }

    fn intensity(&self, history: &[Event], t: f64, at: Location) -> f64 {
        match at {
            Location::Node(v) if v < self.model.nodes() => self.model.intensity_with(&self.filters, history, t, v),
            _ => f64::NAN,
        }
    }

    fn breakpoints(&self, history: &[Event]) -> Vec<f64> {
        self.model.breakpoints(history)
    }
}

/// Graph objective on a time grid with tabulated decay bases.
struct GraphEval<'a> {
    model: &'a GraphModel,
    b: Vec<Vec<f64>>,
    lag: Axis,
    phi: Vec<f64>,
    time: Axis,
}

struct GraphGrads {
    mu: Vec<f64>,
    alpha: Vec<f64>,
    phi: Vec<f64>,
    b: Vec<Vec<f64>>,
}

impl<'a> GraphEval<'a> {
    fn new(model: &'a GraphModel, time_cells: usize, lag_cells: usize) -> Result<Self> {
        let k = &model.kernel;
        let lag = Axis::new(0.0, k.tau_max, lag_cells)?;
        let mut phi = Vec::with_capacity(k.temporal_rank() * (lag_cells + 1));
        for b in &k.phi {
            phi.extend((0..=lag_cells).map(|i| b.eval(&[lag.node(i)])));
        }
        Ok(Self { model, b: k.filter_matrices(), lag, phi, time: Axis::new(0.0, model.window.horizon(), time_cells)? })
    }

    #[inline]
    fn lag_pos(&self, tau: f64) -> (usize, f64) {
        let n = self.lag.cells;
        let pos = tau / self.lag.step();
        let k = (pos as usize).min(n - 1);
        (k, (pos - k as f64).clamp(0.0, 1.0))
    }

    /// Per-source coefficients `c_r = sum_l alpha psi_l phi_l(t - t_j)`.
    fn coefs(&self, psi: &[f64], j: usize, tau: f64, out: &mut [f64], phis: &mut [f64]) {
        let k = &self.model.kernel;
        let (l_rank, r_rank) = (k.temporal_rank(), k.graph_rank());
        let (node, w) = self.lag_pos(tau);
        let n1 = self.lag.cells + 1;
        for l in 0..l_rank {
            phis[l] = (1.0 - w) * self.phi[l * n1 + node] + w * self.phi[l * n1 + node + 1];
        }
        for r in 0..r_rank {
            out[r] = (0..l_rank).map(|l| self.alpha(r, l) * psi[j * l_rank + l] * phis[l]).sum();
        }
    }

    #[inline]
    fn alpha(&self, r: usize, l: usize) -> f64 {
        self.model.kernel.alpha[r * self.model.kernel.temporal_rank() + l]
    }

    fn window(times: &[f64], t: f64, tau_max: f64) -> std::ops::Range<usize> {
        let end = times.partition_point(|&tj| tj < t);
        let start = times[..end].partition_point(|&tj| tj < t - tau_max);
        start..end
    }

    /// Intensity at every node at time `t`.
    fn slice(&self, times: &[f64], nodes: &[usize], psi: &[f64], t: f64, out: &mut [f64]) {
        let k = &self.model.kernel;
        let n = k.nodes;
        for (v, o) in out.iter_mut().enumerate() {
            *o = self.model.mu_at(v);
        }
        let mut c = vec![0.0; k.graph_rank()];
        let mut phis = vec![0.0; k.temporal_rank()];
        for j in Self::window(times, t, k.tau_max) {
            if t - times[j] <= 0.0 {
                continue;
            }
            self.coefs(psi, j, t - times[j], &mut c, &mut phis);
            for (r, &cr) in c.iter().enumerate() {
                let row = &self.b[r][nodes[j] * n..(nodes[j] + 1) * n];
                for (o, &bv) in out.iter_mut().zip(row) {
                    *o += cr * bv;
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn slice_backward(
        &self,
        times: &[f64],
        nodes: &[usize],
        psi: &[f64],
        gpsi: &mut [f64],
        t: f64,
        gup: &[f64],
        g: &mut GraphGrads,
    ) {
        let k = &self.model.kernel;
        let (n, l_rank, r_rank) = (k.nodes, k.temporal_rank(), k.graph_rank());
        for (v, &gv) in gup.iter().enumerate() {
            g.mu[if self.model.mu.len() == 1 { 0 } else { v }] += gv;
        }
        let mut c = vec![0.0; r_rank];
        let mut phis = vec![0.0; l_rank];
        let n1 = self.lag.cells + 1;
        for j in Self::window(times, t, k.tau_max) {
            let tau = t - times[j];
            if tau <= 0.0 {
                continue;
            }
            self.coefs(psi, j, tau, &mut c, &mut phis);
            let (node, w) = self.lag_pos(tau);
            let src = nodes[j];
            let mut gphi = vec![0.0; l_rank];
            for r in 0..r_rank {
                let row = &self.b[r][src * n..(src + 1) * n];
                let mut gc = 0.0;
                for v in 0..n {
                    gc += row[v] * gup[v];
                    g.b[r][src * n + v] += c[r] * gup[v];
                }
                for l in 0..l_rank {
                    let p = psi[j * l_rank + l];
                    g.alpha[r * l_rank + l] += gc * p * phis[l];
                    gpsi[j * l_rank + l] += gc * self.alpha(r, l) * phis[l];
                    gphi[l] += gc * self.alpha(r, l) * p;
                }
            }
            for l in 0..l_rank {
                g.phi[l * n1 + node] += (1.0 - w) * gphi[l];
                g.phi[l * n1 + node + 1] += w * gphi[l];
            }
        }
    }

    /// Loss `(value, gradient)` averaged over sequences.
    fn loss(&self, data: &[EventSequence], objective: ObjectiveKind, barrier: (f64, f64), with_grad: bool) -> Result<(f64, Vec<f64>)> {
        let model = self.model;
        let k = &model.kernel;
        let (n, l_rank) = (k.nodes, k.temporal_rank());
        let m_inv = 1.0 / data.len().max(1) as f64;
        let mut g = GraphGrads {
            mu: vec![0.0; model.mu.len()],
            alpha: vec![0.0; k.alpha.len()],
            phi: vec![0.0; self.phi.len()],
            b: vec![vec![0.0; n * n]; k.graph_rank()],
        };
        let mut grad = if with_grad { vec![0.0; model.num_params()] } else { Vec::new() };
        let psi_off = if model.learn_mu { model.mu.len() } else { 0 } + k.alpha.len();
        let (wb, floor) = barrier;
        let mut total = 0.0;
        let mut lam = vec![0.0; n];
        for seq in data {
            let times: Vec<f64> = seq.events.iter().map(|e| e.t).collect();
            let nodes: Vec<usize> = seq.events.iter().map(|e| e.node.unwrap_or(0)).collect();
            if let Some(&bad) = nodes.iter().find(|&&v| v >= n) {
                return Err(Error::NodeOutOfRange { node: bad, nodes: n });
            }
            let psi: Vec<f64> = times.iter().flat_map(|&t| k.psi.iter().map(move |b| b.eval(&[t]))).collect();
            let mut gpsi = vec![0.0; psi.len()];
            let cuts: Vec<f64> = times.iter().flat_map(|&t| [t, t + k.tau_max]).collect();
            // (time, quadrature weight, barrier node)
            let mut slices: Vec<(f64, f64, bool)> = split_cells(&self.time, &cuts).into_iter().map(|(t, dt)| (t, dt, false)).collect();
            if objective == ObjectiveKind::MleBarrier && wb != 0.0 {
                slices.extend(self.time.midpoints().into_iter().map(|t| (t, 0.0, true)));
            }
            let mut value = 0.0;
            let mut ups: Vec<(f64, Vec<f64>)> = Vec::new();
            for &(t, wq, is_barrier) in &slices {
                self.slice(&times, &nodes, &psi, t, &mut lam);
                let mut up = vec![0.0; n];
                for v in 0..n {
                    let x = lam[v];
                    match objective {
                        ObjectiveKind::LeastSquares => {
                            value += wq * x * x;
                            up[v] += 2.0 * wq * x;
                        }
                        ObjectiveKind::MleBarrier => {
                            if is_barrier {
                                let (lv, d) = guarded_log(x, floor);
                                value -= wb * lv;
                                up[v] -= wb * d;
                            } else {
                                value += wq * x;
                                up[v] += wq;
                            }
                        }
                    }
                }
                if with_grad {
                    ups.push((t, up));
                }
            }
            for (i, &t) in times.iter().enumerate() {
                self.slice(&times, &nodes, &psi, t, &mut lam);
                let x = lam[nodes[i]];
                let mut up = vec![0.0; n];
                match objective {
                    ObjectiveKind::LeastSquares => {
                        value -= 2.0 * x;
                        up[nodes[i]] = -2.0;
                    }
                    ObjectiveKind::MleBarrier => {
                        let (lv, d) = guarded_log(x, floor);
                        value -= (1.0 + wb) * lv;
                        up[nodes[i]] = -(1.0 + wb) * d;
                    }
                }
                if with_grad {
                    ups.push((t, up));
                }
            }
            total += value * m_inv;
            if !with_grad {
                continue;
            }
            for (t, mut up) in ups {
                up.iter_mut().for_each(|u| *u *= m_inv);
                self.slice_backward(&times, &nodes, &psi, &mut gpsi, t, &up, &mut g);
            }
            let mut at = psi_off;
            for l in 0..l_rank {
                let np = k.psi[l].num_params();
                if np > 0 {
                    for (i, &t) in times.iter().enumerate() {
                        k.psi[l].accumulate_grad(&[t], gpsi[i * l_rank + l], &mut grad[at..at + np]);
                    }
                }
                at += np;
            }
        }
        if !with_grad {
            return Ok((total, grad));
        }
        let mut at = 0;
        if model.learn_mu {
            for (i, &m) in model.mu.iter().enumerate() {
                grad[i] = g.mu[i] * sigmoid(softplus_inv(m));
            }
            at = model.mu.len();
        }
        grad[at..at + g.alpha.len()].copy_from_slice(&g.alpha);
        at += g.alpha.len() + k.psi.iter().map(Basis::num_params).sum::<usize>();
        let n1 = self.lag.cells + 1;
        for l in 0..l_rank {
            let np = k.phi[l].num_params();
            for node in 0..n1 {
                let up = g.phi[l * n1 + node];
                if up != 0.0 && np > 0 {
                    k.phi[l].accumulate_grad(&[self.lag.node(node)], up, &mut grad[at..at + np]);
                }
            }
            at += np;
        }
        let shift = k.shift_matrix();
        for (r, f) in k.filters.iter().enumerate() {
            match f {
                GraphFilter::Free(v) => {
                    grad[at..at + v.len()].copy_from_slice(&g.b[r]);
                    at += v.len();
                }
                GraphFilter::Poly(h) => {
                    let s = shift.as_ref().expect("validated");
                    let gb = DMatrix::from_row_slice(n, n, &g.b[r]);
                    let mut power = s.clone();
                    for j in 0..h.len() {
                        if j > 0 {
                            power = &power * s;
                        }
                        grad[at + j] = gb.dot(&power);
                    }
                    at += h.len();
                }
            }
        }
        Ok((total, grad))
    }
}

/// Loss used by [`fit_graph`]: least squares, or negative log-likelihood plus
/// barrier (weight `barrier.0`, guard floor `barrier.1`). Integrals use
/// midpoint quadrature on `time_cells` cells split at events and truncation
/// boundaries; decay bases are tabulated on `lag_cells` cells.
pub fn graph_loss(
    model: &GraphModel,
    data: &[EventSequence],
    objective: ObjectiveKind,
    barrier: (f64, f64),
    time_cells: usize,
    lag_cells: usize,
) -> Result<(f64, Vec<f64>)> {
    GraphEval::new(model, time_cells, lag_cells)?.loss(data, objective, barrier, true)
}

#[derive(Debug, Clone)]
struct GraphProblem<'a> {
    model: GraphModel,
    data: &'a [EventSequence],
    objective: ObjectiveKind,
    floor: f64,
    time_cells: usize,
    lag_cells: usize,
}

impl Trainable for GraphProblem<'_> {
    fn params(&self) -> Vec<f64> {
        self.model.params()
    }

    fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        self.model.set_params(theta)
    }

    fn loss_and_grad(&self, barrier_weight: f64) -> Result<(f64, Vec<f64>)> {
        graph_loss(&self.model, self.data, self.objective, (barrier_weight, self.floor), self.time_cells, self.lag_cells)
    }

    fn min_intensity(&self) -> Result<f64> {
        let ev = GraphEval::new(&self.model, self.time_cells, self.lag_cells)?;
        let k = &self.model.kernel;
        let mut lam = vec![0.0; k.nodes];
        let mut best = f64::INFINITY;
        for seq in self.data {
            let times: Vec<f64> = seq.events.iter().map(|e| e.t).collect();
            let nodes: Vec<usize> = seq.events.iter().map(|e| e.node.unwrap_or(0)).collect();
            let psi: Vec<f64> = times.iter().flat_map(|&t| k.psi.iter().map(move |b| b.eval(&[t]))).collect();
            for t in ev.time.midpoints().into_iter().chain(times.iter().copied()) {
                ev.slice(&times, &nodes, &psi, t, &mut lam);
                best = lam.iter().copied().fold(best, f64::min);
            }
        }
        Ok(if best.is_finite() { best } else { self.model.mu.iter().copied().fold(f64::INFINITY, f64::min) })
    }
}

/// Fits a graph model. The time grid has `opts.resolution.spacetime[0]`
/// cells and the lag grid `opts.resolution.lag` cells.
pub fn fit_graph(model_init: &GraphModel, data: &[EventSequence], opts: &FitOptions) -> Result<(GraphModel, FitReport)> {
    let n = model_init.nodes();
    for seq in data {
        crate::model::validate_sequence(seq, None).map_err(Error::InvalidSequence)?;
        if let Some(bad) = seq.events.iter().map(|e| e.node.unwrap_or(usize::MAX)).find(|&v| v >= n) {
            return Err(Error::NodeOutOfRange { node: bad, nodes: n });
        }
    }
    let problem = GraphProblem {
        model: model_init.clone(),
        data,
        objective: opts.objective,
        floor: opts.barrier.floor,
        time_cells: opts.resolution.spacetime[0],
        lag_cells: opts.resolution.lag,
    };
    let (p, report) = fit_trainable(&problem, opts)?;
    Ok((p.model, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Graph {
        Graph::new(DMatrix::from_row_slice(3, 3, &[0., 1., 0., 1., 0., 2., 0., 2., 0.]), false).unwrap()
    }

    #[test]
    fn laplacian_rows_sum_to_zero() {
        let g = path3();
        assert_eq!(g.degrees(), vec![1.0, 3.0, 2.0]);
        let l = g.laplacian();
        for r in l.row_iter() {
            assert!(r.sum().abs() < 1e-15);
        }
    }

    #[test]
    fn poly_filter_basics() {
        let a = path3().adjacency;
        assert_eq!(graph_filter_poly(&a, &[1.0]).unwrap(), a);
        assert_eq!(graph_filter_poly(&a, &[0.0, 1.0]).unwrap(), &a * &a);
        assert!(matches!(graph_filter_poly(&DMatrix::zeros(2, 3), &[1.0]), Err(Error::NonSquare { rows: 2, cols: 3 })));
    }

    #[test]
    fn closed_form_kernel() {
        let a = path3().adjacency;
        let k = GraphFilterKernel::new(
            3,
            vec![1.0],
            vec![Basis::Constant(1.0)],
            vec![Basis::ExpDecay { rate: 1.0 }],
            vec![GraphFilter::Poly(vec![1.0])],
            Some(a.clone()),
            10.0,
        )
        .unwrap();
        let got = eval_graph_kernel(&k, 0.0, 1.0, 1, 2).unwrap();
        assert!((got - (-1f64).exp() * a[(1, 2)]).abs() < 1e-15);
        assert!(matches!(eval_graph_kernel(&k, 0.0, 1.0, 3, 0), Err(Error::NodeOutOfRange { node: 3, nodes: 3 })));
        assert!(matches!(eval_graph_kernel(&k, 1.0, 1.0, 0, 0), Err(Error::NonCausalPair { .. })));
    }
}
