//! The auxiliary CVaR objective `f(w, tau; z) = [l(w; z) - tau]_+ / alpha + tau`,
//! its smoothed counterpart, their (sub)gradients and the associated constants.
//!
//! Minimizing the expectation of `f` over `tau` yields the CVaR of the loss at
//! `w`, so every optimizer in [`crate::optim`] works on the augmented point
//! `(w, tau)`.

use crate::error::{Error, Result};
use crate::smoothing::PlusFunction;

/// A point `(w, tau)` of the augmented space. Also used for gradients, which
/// live in the same space.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPoint {
    pub w: Vec<f64>,
    pub tau: f64,
}

impl AugmentedPoint {
    pub fn new(w: Vec<f64>, tau: f64) -> Self {
        AugmentedPoint { w, tau }
    }

    pub fn zeros(dim: usize) -> Self {
        AugmentedPoint {
            w: vec![0.0; dim],
            tau: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_sq(&self) -> f64 {
        self.w.iter().map(|v| v * v).sum::<f64>() + self.tau * self.tau
    }

    pub fn distance(&self, other: &AugmentedPoint) -> f64 {
        let dw: f64 = self
            .w
            .iter()
            .zip(&other.w)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let dt = self.tau - other.tau;
        (dw + dt * dt).sqrt()
    }

    /// Concatenation `(w_1, ..., w_d, tau)`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.w.clone();
        v.push(self.tau);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.tau.is_finite() && self.w.iter().all(|v| v.is_finite())
    }
}

/// Risk level and the constants of the loss family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskParams {
    /// Tail fraction in `(0, 1]`.
    pub alpha: f64,
    /// Lipschitz constant of the loss in `w`.
    pub lipschitz: f64,
    /// Smoothness constant of the loss; zero when the loss is nonsmooth or unknown.
    pub smoothness: f64,
    /// Upper end of the loss range `[0, B]`.
    pub bound: f64,
}

impl RiskParams {
    pub fn new(alpha: f64, lipschitz: f64, smoothness: f64, bound: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::param("alpha", format!("must lie in (0, 1], got {alpha}")));
        }
        if !(lipschitz.is_finite() && lipschitz > 0.0) {
            return Err(Error::param("G", format!("must be positive, got {lipschitz}")));
        }
        if !(smoothness.is_finite() && smoothness >= 0.0) {
            return Err(Error::param(
                "beta",
                format!("must be nonnegative, got {smoothness}"),
            ));
        }
        if !(bound.is_finite() && bound > 0.0) {
            return Err(Error::param("B", format!("must be positive, got {bound}")));
        }
        Ok(RiskParams {
            alpha,
            lipschitz,
            smoothness,
            bound,
        })
    }

    fn check_loss(&self, loss: f64) -> Result<()> {
        if loss.is_nan() || !(0.0..=self.bound).contains(&loss) {
            return Err(Error::LossOutOfRange {
                loss,
                bound: self.bound,
            });
        }
        Ok(())
    }
}

/// `f(w, tau; z)` given the loss value `l(w; z)`.
pub fn aux_value(tau: f64, loss: f64, rp: &RiskParams) -> Result<f64> {
    rp.check_loss(loss)?;
    Ok((loss - tau).max(0.0) / rp.alpha + tau)
}

/// An element of the subdifferential of `f` at `(w, tau)`.
///
/// `tie` in `[0, 1]` picks the element of the segment `[t * grad / alpha, 1 - t / alpha]`
/// when the loss equals `tau` exactly.
pub fn aux_subgradient(
    tau: f64,
    loss: f64,
    loss_grad: &[f64],
    rp: &RiskParams,
    tie: f64,
) -> Result<AugmentedPoint> {
    rp.check_loss(loss)?;
    if !(0.0..=1.0).contains(&tie) {
        return Err(Error::param("tie", format!("must lie in [0, 1], got {tie}")));
    }
    let weight = if loss > tau {
        1.0
    } else if loss < tau {
        0.0
    } else {
        tie
    };
    Ok(scaled_gradient(weight, loss_grad, rp.alpha))
}

/// `f~(w, tau; z) = rho(l - tau) / alpha + tau`.
pub fn smoothed_aux_value(tau: f64, loss: f64, rp: &RiskParams, plus: &PlusFunction) -> Result<f64> {
    rp.check_loss(loss)?;
    Ok(plus.value(loss - tau) / rp.alpha + tau)
}

/// Gradient of [`smoothed_aux_value`]: `(rho'(l - tau) grad / alpha, 1 - rho'(l - tau) / alpha)`.
pub fn smoothed_aux_gradient(
    tau: f64,
    loss: f64,
    loss_grad: &[f64],
    rp: &RiskParams,
    plus: &PlusFunction,
) -> Result<AugmentedPoint> {
    rp.check_loss(loss)?;
    let weight = plus.derivative(loss - tau)?;
    Ok(scaled_gradient(weight, loss_grad, rp.alpha))
}

fn scaled_gradient(weight: f64, loss_grad: &[f64], alpha: f64) -> AugmentedPoint {
    let c = weight / alpha;
    AugmentedPoint {
        w: loss_grad.iter().map(|g| c * g).collect(),
        tau: 1.0 - c,
    }
}

/// Lipschitz constant of `f`: `max(sqrt(G^2 + (1 - alpha)^2) / alpha, 1)`.
pub fn g_alpha(rp: &RiskParams) -> f64 {
    let g = rp.lipschitz;
    let a = rp.alpha;
    ((g * g + (1.0 - a) * (1.0 - a)).sqrt() / a).max(1.0)
}

/// Smoothness constant of the smoothed auxiliary function, `(beta + 2 G^2 / eps) / alpha`.
pub fn smoothed_smoothness(rp: &RiskParams, eps: f64) -> f64 {
    (rp.smoothness + 2.0 * rp.lipschitz * rp.lipschitz / eps) / rp.alpha
}
