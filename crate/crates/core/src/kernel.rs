//! Influence kernels.
//!
//! The deep kernel is a finite sum of products of one-argument bases,
//!
//! ```text
//! k(t', t, s', s) = sum_{r, l} alpha[r][l] psi_l(t') phi_l(t - t') u_r(s') v_r(s - s')
//! ```
//!
//! truncated to zero for lags beyond `tau_max` or displacements longer than
//! `a_max`. The same type hosts closed-form ground-truth kernels, so every
//! downstream routine treats learned and reference kernels alike.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{network_basis, Basis, BasisRole};
use crate::error::{Error, Result};
use crate::model::{GridSpec, ModelConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowRankKernel {
    /// `R x L`, row-major: `alpha[r * L + l]`.
    pub alpha: Vec<f64>,
    pub psi: Vec<Basis>,
    pub phi: Vec<Basis>,
    pub u: Vec<Basis>,
    pub v: Vec<Basis>,
    pub tau_max: f64,
    pub a_max: f64,
}

impl LowRankKernel {
    pub fn new(
        alpha: Vec<f64>,
        psi: Vec<Basis>,
        phi: Vec<Basis>,
        u: Vec<Basis>,
        v: Vec<Basis>,
        tau_max: f64,
        a_max: f64,
    ) -> Result<Self> {
        let k = Self { alpha, psi, phi, u, v, tau_max, a_max };
        k.check()?;
        Ok(k)
    }

    fn check(&self) -> Result<()> {
        let (l, r) = (self.psi.len(), self.u.len());
        if l == 0 || r == 0 || self.phi.len() != l || self.v.len() != r {
            return Err(Error::InvalidConfig("basis counts do not match ranks".into()));
        }
        if self.alpha.len() != r * l {
            return Err(Error::DimensionMismatch { expected: r * l, got: self.alpha.len() });
        }
        if self.alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidConfig("non-finite kernel coefficient".into()));
        }
        if !(self.tau_max > 0.0 && self.a_max > 0.0) {
            return Err(Error::InvalidConfig("truncation thresholds must be positive".into()));
        }
        Ok(())
    }

    /// Neural bases for every factor; coefficients start at `alpha0 / (R L)`.
    pub fn deep(config: &ModelConfig, alpha0: f64, seed: u64) -> Result<Self> {
        let (l, r) = (config.temporal_rank, config.spatial_rank);
        let w = &config.widths;
        let mut next = seed;
        let mut make = |role| {
            next = next.wrapping_add(1);
            network_basis(role, w, 0, next)
        };
        let psi = (0..l).map(|_| make(BasisRole::SourceTime)).collect::<Result<Vec<_>>>()?;
        let phi = (0..l).map(|_| make(BasisRole::Decay)).collect::<Result<Vec<_>>>()?;
        let u = (0..r).map(|_| make(BasisRole::SourceSpace)).collect::<Result<Vec<_>>>()?;
        let v = (0..r).map(|_| make(BasisRole::Propagation)).collect::<Result<Vec<_>>>()?;
        let alpha = vec![alpha0 / (l * r) as f64; l * r];
        Self::new(alpha, psi, phi, u, v, config.tau_max, config.a_max)
    }

    /// The kernel with every coefficient zero and constant unit bases.
    pub fn zero(tau_max: f64, a_max: f64) -> Self {
        Self {
            alpha: vec![0.0],
            psi: vec![Basis::Constant(1.0)],
            phi: vec![Basis::Constant(1.0)],
            u: vec![Basis::Constant(1.0)],
            v: vec![Basis::Constant(1.0)],
            tau_max,
            a_max,
        }
    }

    #[inline]
    pub fn temporal_rank(&self) -> usize {
        self.psi.len()
    }

    #[inline]
    pub fn spatial_rank(&self) -> usize {
        self.u.len()
    }

    #[inline]
    pub fn alpha_at(&self, r: usize, l: usize) -> f64 {
        self.alpha[r * self.temporal_rank() + l]
    }

    pub fn is_zero(&self) -> bool {
        self.alpha.iter().all(|&a| a == 0.0)
    }

    /// Whether `(lag, displacement)` falls inside the support.
    #[inline]
    pub fn in_support(&self, lag: f64, dx: f64, dy: f64) -> bool {
        lag > 0.0 && lag <= self.tau_max && dx * dx + dy * dy <= self.a_max * self.a_max
    }

    /// Kernel value without the causality check.
    pub fn eval_unchecked(&self, t_src: f64, t: f64, s_src: [f64; 2], s: [f64; 2]) -> f64 {
        let lag = t - t_src;
        let d = [s[0] - s_src[0], s[1] - s_src[1]];
        if !self.in_support(lag, d[0], d[1]) || self.is_zero() {
            return 0.0;
        }
        let l_rank = self.temporal_rank();
        let temporal: Vec<f64> =
            (0..l_rank).map(|l| self.psi[l].eval(&[t_src]) * self.phi[l].eval(&[lag])).collect();
        let mut total = 0.0;
        for r in 0..self.spatial_rank() {
            let row = &self.alpha[r * l_rank..(r + 1) * l_rank];
            let inner: f64 = row.iter().zip(&temporal).map(|(a, b)| a * b).sum();
            if inner != 0.0 {
                total += inner * self.u[r].eval(&s_src) * self.v[r].eval(&d);
            }
        }
        total
    }

    pub fn num_params(&self) -> usize {
        self.alpha.len() + self.bases().map(Basis::num_params).sum::<usize>()
    }

    /// Bases in parameter order: psi, phi, u, v.
    pub fn bases(&self) -> impl Iterator<Item = &Basis> {
        self.psi.iter().chain(&self.phi).chain(&self.u).chain(&self.v)
    }

    pub fn bases_mut(&mut self) -> impl Iterator<Item = &mut Basis> {
        self.psi.iter_mut().chain(self.phi.iter_mut()).chain(self.u.iter_mut()).chain(self.v.iter_mut())
    }

    /// Offsets of each basis block within the flat parameter vector
    /// (`alpha` occupies the first `R L` entries).
    pub fn param_offsets(&self) -> KernelOffsets {
        let mut off = self.alpha.len();
        let mut take = |bases: &[Basis]| {
            bases
                .iter()
                .map(|b| {
                    let o = off;
                    off += b.num_params();
                    o
                })
                .collect::<Vec<_>>()
        };
        let psi = take(&self.psi);
        let phi = take(&self.phi);
        let u = take(&self.u);
        let v = take(&self.v);
        KernelOffsets { psi, phi, u, v, total: off }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = self.alpha.clone();
        for b in self.bases() {
            out.extend_from_slice(b.params());
        }
        out
    }

    pub fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.num_params() {
            return Err(Error::DimensionMismatch { expected: self.num_params(), got: theta.len() });
        }
        let n_alpha = self.alpha.len();
        self.alpha.copy_from_slice(&theta[..n_alpha]);
        let mut off = n_alpha;
        for b in self.bases_mut() {
            let p = b.params_mut();
            p.copy_from_slice(&theta[off..off + p.len()]);
            off += p.len();
        }
        Ok(())
    }

    /// `|alpha|` sorted by magnitude, largest first, with `(r, l)` indices.
    pub fn coefficient_magnitudes(&self) -> Vec<(usize, usize, f64)> {
        let l_rank = self.temporal_rank();
        let mut out: Vec<_> =
            self.alpha.iter().enumerate().map(|(i, a)| (i / l_rank, i % l_rank, a.abs())).collect();
        out.sort_by(|a, b| b.2.total_cmp(&a.2));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelOffsets {
    pub psi: Vec<usize>,
    pub phi: Vec<usize>,
    pub u: Vec<usize>,
    pub v: Vec<usize>,
    pub total: usize,
}

/// Evaluates `k(t', t, s', s)`; fails unless `t > t'`.
pub fn eval_kernel(k: &LowRankKernel, t_src: f64, t: f64, s_src: [f64; 2], s: [f64; 2]) -> Result<f64> {
    if t <= t_src {
        return Err(Error::NonCausalPair { source_time: t_src, target_time: t });
    }
    Ok(k.eval_unchecked(t_src, t, s_src, s))
}

/// A low-rank kernel extended with mark feature maps:
/// `sum_{q, r, l} alpha[l][r][q] psi_l phi_l u_r v_r g_q(m') h_q(m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkedKernel {
    /// Supplies the temporal and spatial bases and the truncation; its own
    /// `alpha` is ignored.
    pub base: LowRankKernel,
    /// `L x R x Q`, row-major: `alpha[(l * R + r) * Q + q]`.
    pub alpha: Vec<f64>,
    pub g: Vec<Basis>,
    pub h: Vec<Basis>,
    pub mark_dim: usize,
}

impl MarkedKernel {
    pub fn new(base: LowRankKernel, alpha: Vec<f64>, g: Vec<Basis>, h: Vec<Basis>, mark_dim: usize) -> Result<Self> {
        let (l, r, q) = (base.temporal_rank(), base.spatial_rank(), g.len());
        if q == 0 || h.len() != q {
            return Err(Error::InvalidConfig("mark basis counts do not match the mark rank".into()));
        }
        if alpha.len() != l * r * q {
            return Err(Error::DimensionMismatch { expected: l * r * q, got: alpha.len() });
        }
        Ok(Self { base, alpha, g, h, mark_dim })
    }

    /// The Q = 1 marked kernel with unit mark bases equal to `base`.
    pub fn unmarked(base: LowRankKernel, mark_dim: usize) -> Self {
        let (l, r) = (base.temporal_rank(), base.spatial_rank());
        let mut alpha = vec![0.0; l * r];
        for li in 0..l {
            for ri in 0..r {
                alpha[li * r + ri] = base.alpha_at(ri, li);
            }
        }
        Self { base, alpha, g: vec![Basis::Constant(1.0)], h: vec![Basis::Constant(1.0)], mark_dim }
    }

    pub fn mark_rank(&self) -> usize {
        self.g.len()
    }

    #[inline]
    pub fn alpha_at(&self, l: usize, r: usize, q: usize) -> f64 {
        let (rr, qq) = (self.base.spatial_rank(), self.mark_rank());
        self.alpha[(l * rr + r) * qq + q]
    }
}

#[allow(clippy::too_many_arguments)]
pub fn eval_marked_kernel(
    k: &MarkedKernel,
    t_src: f64,
    t: f64,
    s_src: [f64; 2],
    s: [f64; 2],
    m_src: &[f64],
    m: &[f64],
) -> Result<f64> {
    if t <= t_src {
        return Err(Error::NonCausalPair { source_time: t_src, target_time: t });
    }
    for len in [m_src.len(), m.len()] {
        if len != k.mark_dim {
            return Err(Error::DimensionMismatch { expected: k.mark_dim, got: len });
        }
    }
    let b = &k.base;
    let lag = t - t_src;
    let d = [s[0] - s_src[0], s[1] - s_src[1]];
    if !b.in_support(lag, d[0], d[1]) {
        return Ok(0.0);
    }
    let temporal: Vec<f64> = (0..b.temporal_rank()).map(|l| b.psi[l].eval(&[t_src]) * b.phi[l].eval(&[lag])).collect();
    let spatial: Vec<f64> = (0..b.spatial_rank()).map(|r| b.u[r].eval(&s_src) * b.v[r].eval(&d)).collect();
    let marks: Vec<f64> = k.g.iter().zip(&k.h).map(|(g, h)| g.eval(m_src) * h.eval(m)).collect();
    let (rr, qq) = (spatial.len(), marks.len());
    let mut total = 0.0;
    for (l, tl) in temporal.iter().enumerate() {
        for (r, sr) in spatial.iter().enumerate() {
            let row = &k.alpha[(l * rr + r) * qq..(l * rr + r + 1) * qq];
            total += tl * sr * row.iter().zip(&marks).map(|(a, m)| a * m).sum::<f64>();
        }
    }
    Ok(total)
}

/// Parameters of the closed-form rank-(2, 2) non-stationary reference kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceKernelParams {
    pub a_s: f64,
    pub b_s: f64,
    pub a_t: f64,
    pub b_t: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub beta: f64,
    /// `(alpha_11, alpha_12, alpha_21, alpha_22)`, first index spatial.
    pub alpha: [f64; 4],
    /// Componentwise offset of the second propagation mode.
    pub offset: f64,
    /// Lag at which the second decay mode switches off.
    pub cutoff: f64,
}

impl Default for ReferenceKernelParams {
    fn default() -> Self {
        Self {
            a_s: 0.3,
            b_s: 0.4,
            a_t: 0.02,
            b_t: 0.02,
            sigma1: 0.2,
            sigma2: 0.3,
            beta: 2.0,
            alpha: [0.6, 0.15, 0.225, 0.525],
            offset: 0.8,
            cutoff: 3.0,
        }
    }
}

impl ReferenceKernelParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.a_s, self.b_s, self.a_t, self.b_t, self.sigma1, self.sigma2, self.beta, self.offset];
        if all.iter().chain(&self.alpha).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite reference kernel parameter".into()));
        }
        if !(self.sigma1 > 0.0 && self.sigma2 > 0.0 && self.beta > 0.0) {
            return Err(Error::InvalidConfig("sigma1, sigma2 and beta must be positive".into()));
        }
        Ok(())
    }

    /// Realizes the closed forms as a [`LowRankKernel`].
    ///
    /// `u_r(s') = 1 - c_r (s'_2 + 1)`, `psi_l(t') = 1 - c_l t'`,
    /// `phi_1 = exp(-beta lag)`, `phi_2 = (lag - 1) 1{lag < cutoff}`,
    /// `v_1` a centered normal density and `v_2` one centered at
    /// `(offset, offset)`.
    pub fn to_kernel(&self, tau_max: f64, a_max: f64) -> Result<LowRankKernel> {
        self.validate()?;
        let psi = vec![
            Basis::Ramp { slope: self.a_t, shift: 0.0, coord: 0 },
            Basis::Ramp { slope: self.b_t, shift: 0.0, coord: 0 },
        ];
        let phi = vec![
            Basis::ExpDecay { rate: self.beta },
            Basis::ClippedLinear { offset: 1.0, cutoff: self.cutoff },
        ];
        let u = vec![
            Basis::Ramp { slope: self.a_s, shift: 1.0, coord: 1 },
            Basis::Ramp { slope: self.b_s, shift: 1.0, coord: 1 },
        ];
        let v = vec![
            Basis::Gaussian { sigma: self.sigma1, center: [0.0, 0.0] },
            Basis::Gaussian { sigma: self.sigma2, center: [self.offset, self.offset] },
        ];
        LowRankKernel::new(self.alpha.to_vec(), psi, phi, u, v, tau_max, a_max)
    }
}

/// Temporal exponential Hawkes kernel `a exp(-b lag)` with baseline `mu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpHawkesSpec {
    pub mu: f64,
    pub a: f64,
    pub b: f64,
}

impl ExpHawkesSpec {
    pub fn new(mu: f64, a: f64, b: f64) -> Result<Self> {
        if !(mu >= 0.0 && a >= 0.0 && b > 0.0) || ![mu, a, b].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig(format!("invalid exponential Hawkes parameters ({mu}, {a}, {b})")));
        }
        Ok(Self { mu, a, b })
    }

    pub fn branching_ratio(&self) -> f64 {
        self.a / self.b
    }

    /// Stationary expected count on `[0, T]` ignoring the warm-up transient.
    pub fn expected_count(&self, horizon: f64) -> f64 {
        self.mu * horizon / (1.0 - self.branching_ratio())
    }
}

/// Row-major dense table with row/column coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LagTable {
    pub lags: Vec<f64>,
    /// Displacements in x-major order: column `ix * n + iy`.
    pub displacements: Vec<[f64; 2]>,
    pub values: DMatrix<f64>,
}

/// Tabulates `k(t', t' + lag, s', s' + d)` over lag midpoints (rows) and
/// displacement midpoints (columns, x-major).
pub fn kernel_lag_grid(k: &LowRankKernel, grid: &GridSpec, t_src: f64, s_src: [f64; 2]) -> LagTable {
    let lags = grid.lag.midpoints();
    let dmid = grid.disp.midpoints();
    let displacements: Vec<[f64; 2]> =
        dmid.iter().flat_map(|&dx| dmid.iter().map(move |&dy| [dx, dy])).collect();
    let values = DMatrix::from_fn(lags.len(), displacements.len(), |i, j| {
        let d = displacements[j];
        k.eval_unchecked(t_src, t_src + lags[i], s_src, [s_src[0] + d[0], s_src[1] + d[1]])
    });
    LagTable { lags, displacements, values }
}

/// The temporal kernel used to contrast the two parameterizations:
/// `0.3 sin(1.2 t') sin(2 lag) exp(-0.5 lag) / (1 + exp(5 (lag - 3)))`.
pub fn rank_demo_kernel(t_src: f64, lag: f64) -> f64 {
    0.3 * (1.2 * t_src).sin() * (2.0 * lag).sin() * (-0.5 * lag).exp() / (1.0 + (5.0 * (lag - 3.0)).exp())
}

/// Discretizes a temporal kernel given in `(t', lag)` form on `t, t' = 1..n`.
///
/// Returns `(K_orig, K_repar)` with `K_orig[i, j] = k(t'_j, t_i - t'_j)` for
/// `t'_j < t_i` (zero elsewhere) and `K_repar[j, d] = k(t'_j, lag_d)` for
/// `lag_d = 1..n`.
pub fn discretize_pair_forms(k: impl Fn(f64, f64) -> f64, n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let orig = DMatrix::from_fn(n, n, |i, j| if j < i { k((j + 1) as f64, (i - j) as f64) } else { 0.0 });
    let repar = DMatrix::from_fn(n, n, |j, d| k((j + 1) as f64, (d + 1) as f64));
    (orig, repar)
}

pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Number of singular values above `rel_tol` times the largest.
pub fn effective_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() || m.iter().all(|&v| v == 0.0) {
        return 0;
    }
    let sv = m.clone().singular_values();
    let top = sv.iter().cloned().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > rel_tol * top).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth() -> LowRankKernel {
        ReferenceKernelParams::default().to_kernel(3.0, 2.0).unwrap()
    }

    #[test]
    fn reference_kernel_value_at_origin() {
        // Term-by-term: u = (0.7, 0.6), psi = 1, phi = (e^-1, -0.5),
        // v1(0) = 1 / (2 pi 0.04), v2(0) = exp(-1.28 / 0.18) / (2 pi 0.09).
        let v1 = 1.0 / (2.0 * std::f64::consts::PI * 0.04);
        let v2 = (-1.28f64 / 0.18).exp() / (2.0 * std::f64::consts::PI * 0.09);
        let e1 = (-1.0f64).exp();
        let expected = 0.6 * 0.7 * v1 * e1 + 0.15 * 0.7 * v1 * (-0.5) + 0.225 * 0.6 * v2 * e1 + 0.525 * 0.6 * v2 * (-0.5);
        let got = eval_kernel(&truth(), 0.0, 0.5, [0.0, 0.0], [0.0, 0.0]).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.406).abs() < 1e-3, "{got}");
    }

    #[test]
    fn zero_coefficients_vanish() {
        let mut k = truth();
        k.alpha = vec![0.0; 4];
        assert_eq!(eval_kernel(&k, 0.1, 0.4, [0.2, 0.1], [0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn truncation_and_causality() {
        let k = truth();
        assert_eq!(eval_kernel(&k, 0.0, 3.0 + 1e-9, [0.0, 0.0], [0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(eval_kernel(&k, 0.0, 0.5, [0.0, 0.0], [2.1, 0.0]).unwrap(), 0.0);
        assert!(matches!(eval_kernel(&k, 1.0, 1.0, [0.0, 0.0], [0.0, 0.0]), Err(Error::NonCausalPair { .. })));
    }

    #[test]
    fn marked_kernel_reduces_to_base() {
        let k = truth();
        let mk = MarkedKernel::unmarked(k.clone(), 2);
        for (tp, t) in [(0.0, 0.3), (1.0, 2.5), (4.0, 4.1)] {
            let a = eval_kernel(&k, tp, t, [0.1, -0.2], [0.3, 0.4]).unwrap();
            let b = eval_marked_kernel(&mk, tp, t, [0.1, -0.2], [0.3, 0.4], &[1.0, 2.0], &[0.0, 0.0]).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(
            eval_marked_kernel(&mk, 0.0, 1.0, [0.0; 2], [0.0; 2], &[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn separable_kernel_has_unit_reparameterized_rank() {
        let (_, repar) = discretize_pair_forms(|tp, lag| (tp * 0.3).cos() * (-lag).exp(), 40);
        assert_eq!(effective_rank(&repar, DEFAULT_RANK_TOL), 1);
        let (o, r) = discretize_pair_forms(|_, _| 0.0, 5);
        assert_eq!(effective_rank(&o, DEFAULT_RANK_TOL) + effective_rank(&r, DEFAULT_RANK_TOL), 0);
    }

    #[test]
    fn effective_rank_basics() {
        assert_eq!(effective_rank(&DMatrix::zeros(4, 4), DEFAULT_RANK_TOL), 0);
        assert_eq!(effective_rank(&DMatrix::identity(5, 5), DEFAULT_RANK_TOL), 5);
        let a = DMatrix::from_fn(7, 1, |i, _| (i as f64 * 1.7).sin() + 0.1);
        let b = DMatrix::from_fn(1, 9, |_, j| (j as f64 * 0.9).cos() - 0.3);
        assert_eq!(effective_rank(&(&a * &b), DEFAULT_RANK_TOL), 1);
    }

    #[test]
    fn lag_table_matches_pointwise_and_decays() {
        let w = crate::model::TimeWindow::new(5.0).unwrap();
        let dom = crate::model::SpatialDomain::centered_square(1.0).unwrap();
        let grid = GridSpec::with_counts(w, &dom, 2.0, 1.0, [4, 4, 4], 10, 6).unwrap();
        let k = LowRankKernel::new(
            vec![1.0],
            vec![Basis::Constant(1.0)],
            vec![Basis::ExpDecay { rate: 1.0 }],
            vec![Basis::Constant(1.0)],
            vec![Basis::Gaussian { sigma: 0.5, center: [0.0, 0.0] }],
            2.0,
            1.0,
        )
        .unwrap();
        let tab = kernel_lag_grid(&k, &grid, 0.5, [0.1, 0.0]);
        for i in 0..tab.lags.len() {
            for (j, d) in tab.displacements.iter().enumerate() {
                let direct = eval_kernel(&k, 0.5, 0.5 + tab.lags[i], [0.1, 0.0], [0.1 + d[0], d[1]]).unwrap();
                assert_eq!(tab.values[(i, j)], direct);
                if i > 0 {
                    assert!(tab.values[(i, j)] <= tab.values[(i - 1, j)]);
                }
            }
        }
        let zero = kernel_lag_grid(&LowRankKernel::zero(2.0, 1.0), &grid, 0.0, [0.0, 0.0]);
        assert!(zero.values.iter().all(|&v| v == 0.0));
    }
}
