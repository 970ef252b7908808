//! Scalar basis functions: learnable networks or fixed closed forms.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::BasisWidths;
use crate::nn::{Activation, Mlp, MlpSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    Mlp(Mlp),
    Constant(f64),
    /// `1 - slope * (x[coord] + shift)`.
    Ramp { slope: f64, shift: f64, coord: usize },
    /// `exp(-rate * x)`.
    ExpDecay { rate: f64 },
    /// `scale * exp(-rate * x)`.
    ScaledExp { scale: f64, rate: f64 },
    /// `x - offset` for `x < cutoff`, zero beyond.
    ClippedLinear { offset: f64, cutoff: f64 },
    /// Isotropic normal density with mean `center`.
    Gaussian { sigma: f64, center: [f64; 2] },
}

impl Basis {
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Basis::Mlp(m) => m.eval_scalar(x),
            Basis::Constant(c) => *c,
            Basis::Ramp { slope, shift, coord } => 1.0 - slope * (x[*coord] + shift),
            Basis::ExpDecay { rate } => (-rate * x[0]).exp(),
            Basis::ScaledExp { scale, rate } => scale * (-rate * x[0]).exp(),
            Basis::ClippedLinear { offset, cutoff } => {
                if x[0] < *cutoff {
                    x[0] - offset
                } else {
                    0.0
                }
            }
            Basis::Gaussian { sigma, center } => {
                let dx = x[0] - center[0];
                let dy = x[1] - center[1];
                let s2 = sigma * sigma;
                (-(dx * dx + dy * dy) / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2)
            }
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Basis::Mlp(m) => m.num_params(),
            _ => 0,
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Basis::Mlp(m) => &m.params.values,
            _ => &[],
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Basis::Mlp(m) => &mut m.params.values,
            _ => &mut [],
        }
    }

    /// Adds `upstream * d basis(x) / d params` into `grad`.
    #[inline]
    pub fn accumulate_grad(&self, x: &[f64], upstream: f64, grad: &mut [f64]) {
        if let Basis::Mlp(m) = self {
            m.accumulate_scalar_grad(x, upstream, grad);
        }
    }

    pub fn is_learnable(&self) -> bool {
        matches!(self, Basis::Mlp(_))
    }
}

/// The four basis families of a low-rank spatio-temporal kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisRole {
    /// Source-time modulation `psi_l(t')`.
    SourceTime,
    /// Temporal decay `phi_l(t - t')`; linear output so inhibition is allowed.
    Decay,
    /// Source-location modulation `u_r(s')`.
    SourceSpace,
    /// Spatial propagation `v_r(s - s')`.
    Propagation,
    /// Mark feature maps.
    Mark,
}

/// A fresh network basis for `role`, seeded deterministically.
pub fn network_basis(role: BasisRole, widths: &BasisWidths, mark_dim: usize, seed: u64) -> Result<Basis> {
    let (input, hidden, out) = match role {
        BasisRole::SourceTime => (1, &widths.psi, Activation::Softplus),
        BasisRole::Decay => (1, &widths.phi, Activation::Linear),
        BasisRole::SourceSpace => (2, &widths.u, Activation::Softplus),
        BasisRole::Propagation => (2, &widths.v, Activation::Softplus),
        BasisRole::Mark => (mark_dim, &widths.mark, Activation::Softplus),
    };
    let spec = MlpSpec::new(input, hidden.clone(), 1, out)?;
    Ok(Basis::Mlp(Mlp::new(spec, seed)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        assert_eq!(Basis::Ramp { slope: 0.3, shift: 1.0, coord: 1 }.eval(&[5.0, 0.0]), 0.7);
        assert_eq!(Basis::ClippedLinear { offset: 1.0, cutoff: 3.0 }.eval(&[0.5]), -0.5);
        assert_eq!(Basis::ClippedLinear { offset: 1.0, cutoff: 3.0 }.eval(&[3.0]), 0.0);
        let g = Basis::Gaussian { sigma: 0.2, center: [0.0, 0.0] };
        assert!((g.eval(&[0.0, 0.0]) - 1.0 / (2.0 * std::f64::consts::PI * 0.04)).abs() < 1e-12);
        assert_eq!(Basis::ExpDecay { rate: 2.0 }.num_params(), 0);
    }

    #[test]
    fn decay_networks_have_linear_output() {
        let w = BasisWidths::default();
        match network_basis(BasisRole::Decay, &w, 0, 1).unwrap() {
            Basis::Mlp(m) => {
                assert_eq!(m.spec.output_activation, Activation::Linear);
                assert_eq!(m.spec.widths(), vec![1, 32, 32, 1]);
            }
            _ => unreachable!(),
        }
        match network_basis(BasisRole::Propagation, &w, 0, 1).unwrap() {
            Basis::Mlp(m) => assert_eq!(m.spec.output_activation, Activation::Softplus),
            _ => unreachable!(),
        }
    }
}
