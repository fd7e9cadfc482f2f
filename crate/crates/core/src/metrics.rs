//! Empirical tail-risk measures and model evaluation.
//!
//! The empirical CVaR at level `alpha` is the minimum over `tau` of
//! `sum_i [l_i - tau]_+ / (alpha n) + tau`. Sorting gives it in closed form:
//! with losses in decreasing order and `m = floor(alpha n)`,
//! `(l_(1) + ... + l_(m) + (alpha n - m) l_(m+1)) / (alpha n)`.

use crate::data::{Dataset, Target};
use crate::error::{Error, Result};
use crate::models::LossModel;

fn validate(losses: &[f64], alpha: f64) -> Result<()> {
    if losses.is_empty() {
        return Err(Error::EmptyDataset(": no losses to evaluate".into()));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::param("alpha", format!("must lie in (0, 1], got {alpha}")));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("loss value".into()));
    }
    Ok(())
}

/// `alpha * n`, snapped to the nearest integer when within rounding noise,
/// together with its integer part.
fn tail_mass(alpha: f64, n: usize) -> (f64, usize) {
    let an = alpha * n as f64;
    let rounded = an.round();
    let an = if (an - rounded).abs() <= 1e-9 * rounded.max(1.0) {
        rounded
    } else {
        an
    };
    (an, (an.floor() as usize).min(n))
}

fn sorted_descending(losses: &[f64]) -> Vec<f64> {
    let mut v = losses.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

pub fn empirical_cvar(losses: &[f64], alpha: f64) -> Result<f64> {
    validate(losses, alpha)?;
    Ok(cvar_of_sorted(&sorted_descending(losses), alpha))
}

fn cvar_of_sorted(desc: &[f64], alpha: f64) -> f64 {
    let (an, m) = tail_mass(alpha, desc.len());
    let mut total: f64 = desc[..m].iter().sum();
    if m < desc.len() {
        total += (an - m as f64) * desc[m];
    }
    total / an
}

/// Minimizes the defining objective over a `tau` grid spanning
/// `[min loss, max loss]` (both endpoints included) together with every
/// observed loss. Intended as an independent check of [`empirical_cvar`].
///
/// The objective is piecewise linear with slopes down to `1 - 1/alpha`, so a
/// grid alone can miss the minimum by `(1/alpha - 1) grid_step / 2`; the
/// observed losses are its breakpoints, which makes the minimum exact up to
/// rounding.
pub fn empirical_cvar_bruteforce(losses: &[f64], alpha: f64, grid_step: f64) -> Result<f64> {
    validate(losses, alpha)?;
    if !(grid_step.is_finite() && grid_step > 0.0) {
        return Err(Error::param("grid_step", format!("must be positive, got {grid_step}")));
    }
    let lo = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = 1.0 / (alpha * losses.len() as f64);
    let objective = |tau: f64| {
        losses.iter().map(|&l| (l - tau).max(0.0)).sum::<f64>() * scale + tau
    };
    let steps = ((hi - lo) / grid_step).ceil() as usize;
    let best = (0..=steps)
        .map(|k| (lo + k as f64 * grid_step).min(hi))
        .chain(losses.iter().copied())
        .map(objective)
        .fold(f64::INFINITY, f64::min);
    Ok(best)
}

/// Smallest `tau` with `#{l_i <= tau} / n >= 1 - alpha`, i.e. `l_(m+1)` in
/// decreasing order with `m = floor(alpha n)` (the minimum loss when `alpha = 1`).
pub fn empirical_var(losses: &[f64], alpha: f64) -> Result<f64> {
    validate(losses, alpha)?;
    let desc = sorted_descending(losses);
    Ok(var_of_sorted(&desc, alpha))
}

fn var_of_sorted(desc: &[f64], alpha: f64) -> f64 {
    let (_, m) = tail_mass(alpha, desc.len());
    desc[m.min(desc.len() - 1)]
}

/// CVaR of a finite distribution given as `(value, probability)` atoms whose
/// probabilities sum to one.
pub fn discrete_cvar(atoms: &[(f64, f64)], alpha: f64) -> f64 {
    let mut atoms = atoms.to_vec();
    atoms.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut remaining = alpha;
    let mut total = 0.0;
    for (value, prob) in atoms {
        let take = prob.min(remaining);
        total += take * value;
        remaining -= take;
        if remaining <= 0.0 {
            break;
        }
    }
    total / alpha
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailReport {
    pub alpha: f64,
    pub var: f64,
    pub cvar: f64,
    /// The `ceil(alpha n)` largest losses in increasing order.
    pub top_losses: Vec<f64>,
}

pub fn tail_report(losses: &[f64], alpha: f64) -> Result<TailReport> {
    validate(losses, alpha)?;
    let desc = sorted_descending(losses);
    let (an, _) = tail_mass(alpha, desc.len());
    let count = (an.ceil() as usize).clamp(1, desc.len());
    let mut top_losses = desc[..count].to_vec();
    top_losses.reverse();
    Ok(TailReport {
        alpha,
        var: var_of_sorted(&desc, alpha),
        cvar: cvar_of_sorted(&desc, alpha),
        top_losses,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub mean_loss: f64,
    /// Fraction of argmax-correct predictions; `None` for regression.
    pub accuracy: Option<f64>,
    pub tails: Vec<TailReport>,
}

/// Evaluates `w` on every example once and summarizes the losses.
pub fn evaluate(model: &LossModel, w: &[f64], data: &Dataset, alphas: &[f64]) -> Result<Evaluation> {
    let losses = data
        .examples()
        .iter()
        .map(|z| model.loss_value(w, z))
        .collect::<Result<Vec<f64>>>()?;
    let mean_loss = losses.iter().sum::<f64>() / losses.len() as f64;
    let accuracy = if model.kind().is_classifier() {
        let correct = data
            .examples()
            .iter()
            .filter(|z| match z.target {
                Target::Class(c) => model.predict_class(w, &z.features) == Some(c),
                Target::Value(_) => false,
            })
            .count();
        Some(correct as f64 / data.len() as f64)
    } else {
        None
    };
    let tails = alphas
        .iter()
        .map(|&a| tail_report(&losses, a))
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation {
        mean_loss,
        accuracy,
        tails,
    })
}
