//! Parameterized losses `l(w; z)` with values in `[0, B]`.
//!
//! Every model computes a raw loss (squared or absolute error for regression,
//! cross-entropy for classification) and passes it through a
//! [`BoundTransform`] so that the CVaR machinery sees a bounded loss.
//!
//! Parameter layouts are row-major with the bias last in each row:
//! linear models use `[w_1..w_d, b]`, multinomial models stack one such row
//! per class, and [`ModelKind::Mlp3`] stores the hidden layer
//! (`hidden x (d + 1)`) followed by the output layer (`classes x (hidden + 1)`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Example, Target, Task};
use crate::error::{Error, Result};
use crate::smoothing::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    /// Affine predictor, squared error.
    LinearRegression,
    /// Affine predictor, absolute error. With zero features this is the
    /// location loss `|w - y|`.
    AbsoluteRegression,
    /// Binary logistic regression, cross-entropy.
    Logistic,
    /// Softmax regression, cross-entropy.
    Multinomial,
    /// Input -> ReLU hidden layer -> softmax output, cross-entropy.
    Mlp3,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::LinearRegression => "linear",
            ModelKind::AbsoluteRegression => "absolute",
            ModelKind::Logistic => "logistic",
            ModelKind::Multinomial => "multinomial",
            ModelKind::Mlp3 => "mlp3",
        }
    }

    pub fn is_classifier(self) -> bool {
        matches!(
            self,
            ModelKind::Logistic | ModelKind::Multinomial | ModelKind::Mlp3
        )
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "linear" => ModelKind::LinearRegression,
            "absolute" => ModelKind::AbsoluteRegression,
            "logistic" => ModelKind::Logistic,
            "multinomial" => ModelKind::Multinomial,
            "mlp3" => ModelKind::Mlp3,
            other => return Err(Error::param("model", format!("unknown model `{other}`"))),
        })
    }
}

/// Map from a raw nonnegative loss `r` into `[0, B]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundTransform {
    /// `B r / (c + r)`: smooth, increasing, argmin-preserving.
    Rational { scale: f64 },
    /// `min(r, B)`: the identity wherever the raw loss stays at or below `B`.
    Clip,
}

impl BoundTransform {
    fn apply(&self, r: f64, bound: f64) -> (f64, f64) {
        match *self {
            BoundTransform::Rational { scale } => {
                let denom = scale + r;
                (bound * r / denom, bound * scale / (denom * denom))
            }
            BoundTransform::Clip => {
                // at r = B take the left derivative so a loss that just touches
                // the bound keeps its gradient
                if r <= bound {
                    (r, 1.0)
                } else {
                    (bound, 0.0)
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BoundTransform::Rational { .. } => "rational",
            BoundTransform::Clip => "clip",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossModel {
    kind: ModelKind,
    input_dim: usize,
    classes: usize,
    hidden: usize,
    bound: f64,
    transform: BoundTransform,
    /// Declared Lipschitz constant `G`.
    pub lipschitz: f64,
    /// Declared smoothness constant `beta` (0 when unknown or nonsmooth).
    pub smoothness: f64,
}

impl LossModel {
    /// `classes` is ignored for regression and forced to 2 for logistic
    /// models; `hidden` is only read by [`ModelKind::Mlp3`].
    pub fn new(
        kind: ModelKind,
        input_dim: usize,
        classes: usize,
        hidden: usize,
        bound: f64,
        transform: BoundTransform,
    ) -> Result<Self> {
        if !(bound.is_finite() && bound > 0.0) {
            return Err(Error::param("bound", format!("must be positive, got {bound}")));
        }
        if let BoundTransform::Rational { scale } = transform {
            if !(scale.is_finite() && scale > 0.0) {
                return Err(Error::param(
                    "transform",
                    format!("rational scale must be positive, got {scale}"),
                ));
            }
        }
        let classes = match kind {
            ModelKind::LinearRegression | ModelKind::AbsoluteRegression => 1,
            ModelKind::Logistic => 2,
            ModelKind::Multinomial | ModelKind::Mlp3 => {
                if classes < 2 {
                    return Err(Error::param("classes", "need at least two classes"));
                }
                classes
            }
        };
        if kind == ModelKind::Mlp3 && hidden == 0 {
            return Err(Error::param("hidden", "mlp3 needs a positive hidden width"));
        }
        Ok(LossModel {
            kind,
            input_dim,
            classes,
            hidden: if kind == ModelKind::Mlp3 { hidden } else { 0 },
            bound,
            transform,
            lipschitz: 1.0,
            smoothness: 0.0,
        })
    }

    /// Sizes the model from `data`, rejecting kind/task mismatches.
    pub fn for_dataset(
        kind: ModelKind,
        data: &Dataset,
        hidden: usize,
        bound: f64,
        transform: BoundTransform,
    ) -> Result<Self> {
        let classes = match (kind.is_classifier(), data.task()) {
            (false, Task::Regression) => 1,
            (true, Task::Classification(k)) if kind != ModelKind::Logistic || k == 2 => k,
            (_, task) => {
                return Err(Error::IncompatibleTask {
                    model: kind.name().to_string(),
                    task: task.to_string(),
                })
            }
        };
        Self::new(kind, data.feature_dim(), classes, hidden, bound, transform)
    }

    pub fn with_constants(mut self, lipschitz: f64, smoothness: f64) -> Self {
        self.lipschitz = lipschitz;
        self.smoothness = smoothness;
        self
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn transform(&self) -> BoundTransform {
        self.transform
    }

    pub fn param_dim(&self) -> usize {
        let d1 = self.input_dim + 1;
        match self.kind {
            ModelKind::LinearRegression | ModelKind::AbsoluteRegression | ModelKind::Logistic => d1,
            ModelKind::Multinomial => self.classes * d1,
            ModelKind::Mlp3 => self.hidden * d1 + self.classes * (self.hidden + 1),
        }
    }

    /// Starting parameters: zeros for linear models, uniform fan-in scaling for the network.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        if self.kind != ModelKind::Mlp3 {
            return vec![0.0; self.param_dim()];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d1 = self.input_dim + 1;
        let h1 = self.hidden + 1;
        let a1 = 1.0 / (d1 as f64).sqrt();
        let a2 = 1.0 / (h1 as f64).sqrt();
        let mut w = Vec::with_capacity(self.param_dim());
        w.extend((0..self.hidden * d1).map(|_| rng.random_range(-a1..a1)));
        w.extend((0..self.classes * h1).map(|_| rng.random_range(-a2..a2)));
        w
    }

    fn check(&self, w: &[f64], z: &Example) -> Result<()> {
        if w.len() != self.param_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.param_dim(),
                found: w.len(),
            });
        }
        if z.features.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                found: z.features.len(),
            });
        }
        match (self.kind.is_classifier(), z.target) {
            (true, Target::Class(c)) if c < self.classes => Ok(()),
            (false, Target::Value(_)) => Ok(()),
            (_, target) => Err(Error::param(
                "target",
                format!("{target:?} does not fit a {} model", self.kind.name()),
            )),
        }
    }

    pub fn loss_value(&self, w: &[f64], z: &Example) -> Result<f64> {
        self.check(w, z)?;
        let raw = self.raw(w, z, None);
        self.bounded(raw).map(|(v, _)| v)
    }

    pub fn loss_gradient(&self, w: &[f64], z: &Example) -> Result<Vec<f64>> {
        self.loss_and_gradient(w, z).map(|(_, g)| g)
    }

    /// Bounded loss and its gradient with respect to `w`.
    pub fn loss_and_gradient(&self, w: &[f64], z: &Example) -> Result<(f64, Vec<f64>)> {
        self.check(w, z)?;
        let mut grad = vec![0.0; w.len()];
        let raw = self.raw(w, z, Some(&mut grad));
        let (value, slope) = self.bounded(raw)?;
        if slope != 1.0 {
            grad.iter_mut().for_each(|g| *g *= slope);
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("{} loss gradient", self.kind.name())));
        }
        Ok((value, grad))
    }

    fn bounded(&self, raw: f64) -> Result<(f64, f64)> {
        if !raw.is_finite() {
            return Err(Error::NonFinite(format!("{} raw loss {raw}", self.kind.name())));
        }
        Ok(self.transform.apply(raw, self.bound))
    }

    /// Raw (unbounded) loss; accumulates its gradient into `grad` when given.
    fn raw(&self, w: &[f64], z: &Example, grad: Option<&mut [f64]>) -> f64 {
        let x = &z.features;
        match self.kind {
            ModelKind::LinearRegression | ModelKind::AbsoluteRegression => {
                let Target::Value(y) = z.target else {
                    unreachable!("checked")
                };
                let residual = affine(w, x) - y;
                let (loss, dloss) = if self.kind == ModelKind::LinearRegression {
                    (residual * residual, 2.0 * residual)
                } else {
                    let sign = if residual > 0.0 {
                        1.0
                    } else if residual < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    (residual.abs(), sign)
                };
                if let Some(g) = grad {
                    add_affine_grad(g, x, dloss);
                }
                loss
            }
            ModelKind::Logistic => {
                let Target::Class(c) = z.target else {
                    unreachable!("checked")
                };
                let y = c as f64;
                let t = affine(w, x);
                let loss = t.max(0.0) + (-t.abs()).exp().ln_1p() - y * t;
                if let Some(g) = grad {
                    add_affine_grad(g, x, sigmoid(t) - y);
                }
                loss
            }
            ModelKind::Multinomial => {
                let Target::Class(c) = z.target else {
                    unreachable!("checked")
                };
                let d1 = self.input_dim + 1;
                let logits: Vec<f64> = w.chunks_exact(d1).map(|row| affine(row, x)).collect();
                let (loss, probs) = cross_entropy(&logits, c);
                if let Some(g) = grad {
                    for (k, (row, p)) in g.chunks_exact_mut(d1).zip(&probs).enumerate() {
                        let delta = p - if k == c { 1.0 } else { 0.0 };
                        add_affine_grad(row, x, delta);
                    }
                }
                loss
            }
            ModelKind::Mlp3 => self.mlp_raw(w, z, grad),
        }
    }

    fn mlp_raw(&self, w: &[f64], z: &Example, grad: Option<&mut [f64]>) -> f64 {
        let Target::Class(c) = z.target else {
            unreachable!("checked")
        };
        let x = &z.features;
        let d1 = self.input_dim + 1;
        let h1 = self.hidden + 1;
        let (w1, w2) = w.split_at(self.hidden * d1);
        let pre: Vec<f64> = w1.chunks_exact(d1).map(|row| affine(row, x)).collect();
        let act: Vec<f64> = pre.iter().map(|&a| a.max(0.0)).collect();
        let logits: Vec<f64> = w2.chunks_exact(h1).map(|row| affine(row, &act)).collect();
        let (loss, probs) = cross_entropy(&logits, c);
        if let Some(g) = grad {
            let (g1, g2) = g.split_at_mut(self.hidden * d1);
            let mut back = vec![0.0; self.hidden];
            for (k, ((grow, wrow), p)) in g2
                .chunks_exact_mut(h1)
                .zip(w2.chunks_exact(h1))
                .zip(&probs)
                .enumerate()
            {
                let delta = p - if k == c { 1.0 } else { 0.0 };
                add_affine_grad(grow, &act, delta);
                for (b, wv) in back.iter_mut().zip(wrow) {
                    *b += delta * wv;
                }
            }
            for ((grow, b), a) in g1.chunks_exact_mut(d1).zip(&back).zip(&pre) {
                if *a > 0.0 {
                    add_affine_grad(grow, x, *b);
                }
            }
        }
        loss
    }

    /// Predicted class index; `None` for regression models.
    pub fn predict_class(&self, w: &[f64], x: &[f64]) -> Option<usize> {
        let argmax = |logits: &[f64]| {
            logits
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                    if v > best.1 {
                        (i, v)
                    } else {
                        best
                    }
                })
                .0
        };
        match self.kind {
            ModelKind::LinearRegression | ModelKind::AbsoluteRegression => None,
            ModelKind::Logistic => Some(usize::from(affine(w, x) > 0.0)),
            ModelKind::Multinomial => {
                let logits: Vec<f64> = w
                    .chunks_exact(self.input_dim + 1)
                    .map(|row| affine(row, x))
                    .collect();
                Some(argmax(&logits))
            }
            ModelKind::Mlp3 => {
                let d1 = self.input_dim + 1;
                let (w1, w2) = w.split_at(self.hidden * d1);
                let act: Vec<f64> = w1
                    .chunks_exact(d1)
                    .map(|row| affine(row, x).max(0.0))
                    .collect();
                let logits: Vec<f64> = w2
                    .chunks_exact(self.hidden + 1)
                    .map(|row| affine(row, &act))
                    .collect();
                Some(argmax(&logits))
            }
        }
    }
}

/// `row[..d] . x + row[d]`.
fn affine(row: &[f64], x: &[f64]) -> f64 {
    let (weights, bias) = row.split_at(x.len());
    weights.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + bias[0]
}

fn add_affine_grad(row: &mut [f64], x: &[f64], scale: f64) {
    let (weights, bias) = row.split_at_mut(x.len());
    for (g, v) in weights.iter_mut().zip(x) {
        *g += scale * v;
    }
    bias[0] += scale;
}

/// `(logsumexp(logits) - logits[target], softmax(logits))`.
fn cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = max + sum.ln() - logits[target];
    (loss.max(0.0), exps.into_iter().map(|e| e / sum).collect())
}
