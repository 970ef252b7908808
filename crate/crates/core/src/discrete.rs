//! Discrete-time, discrete-location Bernoulli events with a lagged linear
//! probability `P(w[j,k] = 1 | history) = beta0 + sum_{l,i} beta[k,l,i] w[j-i,l]`.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `J x K` binary panel, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryPanel {
    pub ids: Vec<String>,
    pub rows: usize,
    pub omega: Vec<u8>,
    pub time_step: f64,
}

impl BinaryPanel {
    pub fn new(ids: Vec<String>, omega: Vec<u8>, time_step: f64) -> Result<Self> {
        let k = ids.len();
        if k == 0 {
            return Err(Error::InvalidConfig("panel needs at least one location".into()));
        }
        if omega.len() % k != 0 {
            return Err(Error::DimensionMismatch { expected: (omega.len() / k + 1) * k, got: omega.len() });
        }
        if omega.iter().any(|&w| w > 1) {
            return Err(Error::InvalidConfig("panel entries must be 0 or 1".into()));
        }
        Ok(Self { rows: omega.len() / k, ids, omega, time_step })
    }

    pub fn locations(&self) -> usize {
        self.ids.len()
    }

    #[inline]
    pub fn at(&self, j: usize, k: usize) -> u8 {
        self.omega[j * self.ids.len() + k]
    }
}

/// `beta[(k * K + l) * d + (i - 1)]` is the effect of an event at `l`, lag `i`, on `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteParams {
    pub locations: usize,
    pub depth: usize,
    pub beta0: f64,
    pub beta: Vec<f64>,
}

impl DiscreteParams {
    pub fn zeros(locations: usize, depth: usize) -> Self {
        Self { locations, depth, beta0: 0.0, beta: vec![0.0; locations * locations * depth] }
    }

    #[inline]
    pub fn index(&self, k: usize, l: usize, lag: usize) -> usize {
        (k * self.locations + l) * self.depth + (lag - 1)
    }

    pub fn get(&self, k: usize, l: usize, lag: usize) -> f64 {
        self.beta[self.index(k, l, lag)]
    }

    pub fn set(&mut self, k: usize, l: usize, lag: usize, v: f64) {
        let i = self.index(k, l, lag);
        self.beta[i] = v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prob {
    /// The raw linear value, never clipped.
    pub value: f64,
    pub feasible: bool,
}

pub fn discrete_prob(params: &DiscreteParams, panel: &BinaryPanel, j: usize, k: usize) -> Result<Prob> {
    let kk = params.locations;
    if panel.locations() != kk {
        return Err(Error::DimensionMismatch { expected: kk, got: panel.locations() });
    }
    if j < params.depth {
        return Err(Error::InsufficientHistory { index: j, depth: params.depth });
    }
    if j >= panel.rows || k >= kk {
        return Err(Error::InvalidConfig(format!("index ({j}, {k}) outside the panel")));
    }
    let mut p = params.beta0;
    for l in 0..kk {
        for i in 1..=params.depth {
            if panel.at(j - i, l) == 1 {
                p += params.get(k, l, i);
            }
        }
    }
    Ok(Prob { value: p, feasible: (0.0..=1.0).contains(&p) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscreteFitOptions {
    pub max_iter: usize,
    /// Stop when the largest parameter change in an iteration falls below this.
    pub tolerance: f64,
}

impl Default for DiscreteFitOptions {
    fn default() -> Self {
        Self { max_iter: 100_000, tolerance: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteFit {
    pub params: DiscreteParams,
    /// Mean squared residual on the training rows.
    pub residual: f64,
    pub iterations: usize,
    /// Set when the panel has no events; parameters are then all zero.
    pub degenerate: bool,
}

/// Lagged history features of row `j`: `x[(l * d) + i - 1] = w[j - i, l]`.
fn features(panel: &BinaryPanel, j: usize, d: usize, out: &mut [f64]) {
    let kk = panel.locations();
    for l in 0..kk {
        for i in 1..=d {
            out[l * d + i - 1] = panel.at(j - i, l) as f64;
        }
    }
}

/// Sufficient statistics of the squared loss.
struct Stats {
    rows: f64,
    gram: Vec<f64>,
    sum_x: Vec<f64>,
    /// `c[k][f] = sum_j w[j,k] x_j[f]`.
    cross: Vec<Vec<f64>>,
    sum_w: Vec<f64>,
    sum_w2: f64,
    patterns: Vec<Vec<f64>>,
}

fn stats(panel: &BinaryPanel, d: usize) -> Stats {
    let kk = panel.locations();
    let f = kk * d;
    let mut s = Stats {
        rows: 0.0,
        gram: vec![0.0; f * f],
        sum_x: vec![0.0; f],
        cross: vec![vec![0.0; f]; kk],
        sum_w: vec![0.0; kk],
        sum_w2: 0.0,
        patterns: Vec::new(),
    };
    let mut seen: BTreeSet<Vec<u8>> = BTreeSet::new();
    let mut x = vec![0.0; f];
    for j in d..panel.rows {
        features(panel, j, d, &mut x);
        seen.insert(x.iter().map(|&v| v as u8).collect());
        s.rows += 1.0;
        for a in 0..f {
            if x[a] == 0.0 {
                continue;
            }
            s.sum_x[a] += 1.0;
            for b in 0..f {
                s.gram[a * f + b] += x[b];
            }
        }
        for k in 0..kk {
            let w = panel.at(j, k) as f64;
            s.sum_w[k] += w;
            s.sum_w2 += w;
            if w != 0.0 {
                for a in 0..f {
                    s.cross[k][a] += x[a];
                }
            }
        }
    }
    s.patterns = seen.into_iter().map(|p| p.into_iter().map(f64::from).collect()).collect();
    s
}

/// `theta = [beta0, beta_0.., beta_1.., ...]`, each `beta_k` of length `K d`.
fn loss_grad(s: &Stats, kk: usize, theta: &[f64], grad: &mut [f64]) -> f64 {
    let f = s.sum_x.len();
    let n = s.rows * kk as f64;
    let b0 = theta[0];
    let mut loss = s.sum_w2;
    grad[0] = 0.0;
    for k in 0..kk {
        let beta = &theta[1 + k * f..1 + (k + 1) * f];
        let mut gx = vec![0.0; f];
        for a in 0..f {
            gx[a] = (0..f).map(|b| s.gram[a * f + b] * beta[b]).sum::<f64>();
        }
        let quad: f64 = beta.iter().zip(&gx).map(|(b, g)| b * g).sum();
        let sx: f64 = beta.iter().zip(&s.sum_x).map(|(b, x)| b * x).sum();
        let cx: f64 = beta.iter().zip(&s.cross[k]).map(|(b, c)| b * c).sum();
        // sum_j (w - b0 - beta.x)^2
        loss += quad + s.rows * b0 * b0 + 2.0 * b0 * sx - 2.0 * cx - 2.0 * b0 * s.sum_w[k];
        for a in 0..f {
            grad[1 + k * f + a] = 2.0 * (gx[a] + b0 * s.sum_x[a] - s.cross[k][a]) / n;
        }
        grad[0] += 2.0 * (s.rows * b0 + sx - s.sum_w[k]) / n;
    }
    loss / n
}

/// Clips `beta0` to `[0, 1]` and scales each violating row so every observed
/// history pattern maps into `[0, 1]`.
fn project(s: &Stats, kk: usize, theta: &mut [f64]) -> Result<()> {
    let f = s.sum_x.len();
    theta[0] = theta[0].clamp(0.0, 1.0);
    let b0 = theta[0];
    for k in 0..kk {
        let beta = &mut theta[1 + k * f..1 + (k + 1) * f];
        let (mut lo, mut hi) = (0.0f64, 0.0f64);
        for p in &s.patterns {
            let v: f64 = beta.iter().zip(p).map(|(b, x)| b * x).sum();
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let mut scale = 1.0f64;
        if b0 + hi > 1.0 {
            scale = scale.min((1.0 - b0) / hi);
        }
        if b0 + lo < 0.0 {
            scale = scale.min(b0 / -lo);
        }
        if !scale.is_finite() {
            return Err(Error::Infeasible(format!("row {k} cannot be scaled into range")));
        }
        if scale < 1.0 {
            beta.iter_mut().for_each(|b| *b *= scale);
        }
    }
    Ok(())
}

/// Largest eigenvalue of the loss Hessian by power iteration.
fn lipschitz(s: &Stats, kk: usize) -> f64 {
    let f = s.sum_x.len();
    let dim = 1 + kk * f;
    let zero = vec![0.0; dim];
    let mut g0 = vec![0.0; dim];
    loss_grad(s, kk, &zero, &mut g0);
    let mut v = vec![1.0 / (dim as f64).sqrt(); dim];
    let mut g = vec![0.0; dim];
    let mut lambda = 1.0;
    for _ in 0..200 {
        loss_grad(s, kk, &v, &mut g);
        // The gradient is affine, so H v = grad(v) - grad(0).
        let hv: Vec<f64> = g.iter().zip(&g0).map(|(a, b)| a - b).collect();
        let norm = hv.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 1.0;
        }
        lambda = norm;
        v = hv.into_iter().map(|x| x / norm).collect();
    }
    lambda
}

/// Least squares with a feasibility projection after every gradient step.
pub fn fit_discrete(panel: &BinaryPanel, depth: usize, opts: &DiscreteFitOptions) -> Result<DiscreteFit> {
    let kk = panel.locations();
    if depth == 0 {
        return Err(Error::InvalidConfig("memory depth must be at least 1".into()));
    }
    if panel.rows <= depth {
        return Err(Error::InsufficientHistory { index: panel.rows, depth });
    }
    if panel.omega.iter().all(|&w| w == 0) {
        return Ok(DiscreteFit { params: DiscreteParams::zeros(kk, depth), residual: 0.0, iterations: 0, degenerate: true });
    }
    let s = stats(panel, depth);
    let f = kk * depth;
    let dim = 1 + kk * f;
    let step = 1.0 / lipschitz(&s, kk);
    let mut theta = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut iterations = 0;
    for it in 0..opts.max_iter {
        iterations = it + 1;
        loss_grad(&s, kk, &theta, &mut grad);
        let prev = theta.clone();
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= step * g;
        }
        project(&s, kk, &mut theta)?;
        let change = theta.iter().zip(&prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if change < opts.tolerance {
            break;
        }
    }
    let residual = loss_grad(&s, kk, &theta, &mut grad);
    let mut params = DiscreteParams::zeros(kk, depth);
    params.beta0 = theta[0];
    for k in 0..kk {
        for l in 0..kk {
            for i in 1..=depth {
                params.set(k, l, i, theta[1 + k * f + l * depth + i - 1]);
            }
        }
    }
    Ok(DiscreteFit { params, residual, iterations, degenerate: false })
}

/// Mean squared residual of `params` on rows `d..J`.
pub fn mean_squared_residual(params: &DiscreteParams, panel: &BinaryPanel) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0.0;
    for j in params.depth..panel.rows {
        for k in 0..panel.locations() {
            let p = discrete_prob(params, panel, j, k)?.value;
            total += (panel.at(j, k) as f64 - p).powi(2);
            count += 1.0;
        }
    }
    Ok(if count > 0.0 { total / count } else { 0.0 })
}

/// `adj[l][k] = true` iff `max_i |beta[k,l,i]| > threshold` (l Granger-causes k).
pub fn granger_adjacency(params: &DiscreteParams, threshold: f64) -> Vec<Vec<bool>> {
    let kk = params.locations;
    (0..kk)
        .map(|l| {
            (0..kk)
                .map(|k| (1..=params.depth).map(|i| params.get(k, l, i).abs()).fold(0.0, f64::max) > threshold)
                .collect()
        })
        .collect()
}

/// Draws a panel from the model; the first `d` rows are Bernoulli(`beta0`).
pub fn simulate_panel(params: &DiscreteParams, rows: usize, seed: u64) -> Result<BinaryPanel> {
    let kk = params.locations;
    let ids = (0..kk).map(|k| k.to_string()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut panel = BinaryPanel::new(ids, vec![0; rows * kk], 1.0)?;
    for j in 0..rows {
        for k in 0..kk {
            let p = if j < params.depth { params.beta0 } else { discrete_prob(params, &panel, j, k)?.value };
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Infeasible(format!("probability {p} at row {j}, location {k}")));
            }
            panel.omega[j * kk + k] = u8::from(rng.gen::<f64>() < p);
        }
    }
    Ok(panel)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(rows: &[[u8; 2]]) -> BinaryPanel {
        BinaryPanel::new(vec!["a".into(), "b".into()], rows.iter().flatten().copied().collect(), 1.0).unwrap()
    }

    #[test]
    fn constant_probability() {
        let mut p = DiscreteParams::zeros(2, 1);
        p.beta0 = 0.3;
        let w = panel(&[[1, 0], [0, 1], [1, 1]]);
        for j in 1..3 {
            assert_eq!(discrete_prob(&p, &w, j, 1).unwrap().value, 0.3);
        }
        assert!(matches!(discrete_prob(&p, &w, 0, 0), Err(Error::InsufficientHistory { index: 0, depth: 1 })));
    }

    #[test]
    fn single_lag_effect() {
        let mut p = DiscreteParams::zeros(2, 1);
        p.set(0, 1, 1, 0.5);
        let w = panel(&[[0, 1], [0, 0]]);
        assert_eq!(discrete_prob(&p, &w, 1, 0).unwrap(), Prob { value: 0.5, feasible: true });
    }

    #[test]
    fn infeasible_value_is_flagged_not_clipped() {
        let mut p = DiscreteParams::zeros(2, 1);
        p.beta0 = 0.8;
        p.set(0, 0, 1, 0.5);
        let w = panel(&[[1, 0], [0, 0]]);
        let v = discrete_prob(&p, &w, 1, 0).unwrap();
        assert!(!v.feasible && (v.value - 1.3).abs() < 1e-15);
    }

    #[test]
    fn all_zero_panel_is_degenerate() {
        let w = panel(&[[0, 0], [0, 0], [0, 0]]);
        let fit = fit_discrete(&w, 1, &DiscreteFitOptions::default()).unwrap();
        assert!(fit.degenerate && fit.params.beta.iter().all(|&b| b == 0.0));
        assert!(matches!(fit_discrete(&w, 3, &DiscreteFitOptions::default()), Err(Error::InsufficientHistory { .. })));
    }

    #[test]
    fn adjacency_from_threshold() {
        let mut p = DiscreteParams::zeros(2, 2);
        assert!(granger_adjacency(&p, 0.0).iter().flatten().all(|&e| !e));
        p.set(1, 0, 2, -1e-9);
        let a = granger_adjacency(&p, 0.0);
        assert!(a[0][1] && !a[1][0]);
    }
}
