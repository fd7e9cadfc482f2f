//! Plus functions `[s]_+ = max(s, 0)` and two smooth upper approximations.
//!
//! Both smoothed kinds satisfy `[s]_+ <= rho(s) <= [s]_+ + eps`, are convex,
//! and have a `2/eps`-Lipschitz derivative taking values in `[0, 1]`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PlusKind {
    /// `max(s, 0)`, nonsmooth at the origin.
    Exact,
    /// `eps * log(1 + exp(s / eps))`.
    SoftRelu,
    /// Quadratic blend on `[-eps, eps]`, linear above, zero below.
    PiecewiseQuadratic,
}

impl PlusKind {
    pub fn name(self) -> &'static str {
        match self {
            PlusKind::Exact => "exact",
            PlusKind::SoftRelu => "soft-relu",
            PlusKind::PiecewiseQuadratic => "piecewise-quadratic",
        }
    }
}

impl std::str::FromStr for PlusKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(PlusKind::Exact),
            "soft-relu" | "softrelu" => Ok(PlusKind::SoftRelu),
            "piecewise-quadratic" | "pq" => Ok(PlusKind::PiecewiseQuadratic),
            other => Err(Error::param("smoothing", format!("unknown kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlusFunction {
    kind: PlusKind,
    epsilon: f64,
}

impl PlusFunction {
    pub fn exact() -> Self {
        PlusFunction {
            kind: PlusKind::Exact,
            epsilon: 0.0,
        }
    }

    pub fn soft_relu(epsilon: f64) -> Result<Self> {
        Self::new(PlusKind::SoftRelu, epsilon)
    }

    pub fn piecewise_quadratic(epsilon: f64) -> Result<Self> {
        Self::new(PlusKind::PiecewiseQuadratic, epsilon)
    }

    /// Builds a plus function of the given kind; `epsilon` is ignored for [`PlusKind::Exact`].
    pub fn new(kind: PlusKind, epsilon: f64) -> Result<Self> {
        if kind == PlusKind::Exact {
            return Ok(Self::exact());
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::param(
                "epsilon",
                format!("smoothing width must be positive and finite, got {epsilon}"),
            ));
        }
        Ok(PlusFunction { kind, epsilon })
    }

    pub fn kind(&self) -> PlusKind {
        self.kind
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn is_smooth(&self) -> bool {
        self.kind != PlusKind::Exact
    }

    pub fn value(&self, s: f64) -> f64 {
        let eps = self.epsilon;
        match self.kind {
            PlusKind::Exact => s.max(0.0),
            PlusKind::SoftRelu => {
                let u = s / eps;
                if u > 0.0 {
                    s + eps * (-u).exp().ln_1p()
                } else {
                    eps * u.exp().ln_1p()
                }
            }
            PlusKind::PiecewiseQuadratic => {
                if s > eps {
                    s
                } else if s < -eps {
                    0.0
                } else {
                    // clamped so rounding never breaks the sandwich bounds
                    (s * s / (4.0 * eps) + s / 2.0 + eps / 4.0).clamp(s.max(0.0), s.max(0.0) + eps)
                }
            }
        }
    }

    pub fn derivative(&self, s: f64) -> Result<f64> {
        let eps = self.epsilon;
        match self.kind {
            PlusKind::Exact => Err(Error::ExactHasNoDerivative),
            PlusKind::SoftRelu => Ok(sigmoid(s / eps)),
            PlusKind::PiecewiseQuadratic => Ok(if s > eps {
                1.0
            } else if s < -eps {
                0.0
            } else {
                s / (2.0 * eps) + 0.5
            }),
        }
    }

    /// Lipschitz constant of [`derivative`](Self::derivative).
    pub fn smoothness(&self) -> f64 {
        match self.kind {
            PlusKind::Exact => f64::INFINITY,
            _ => 2.0 / self.epsilon,
        }
    }
}

pub(crate) fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}
