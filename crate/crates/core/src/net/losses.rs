//! Segmentation losses over a tile of per-pixel probability vectors.
//!
//! `pred` is row-major and class-fastest (`pixel * classes + class`),
//! `truth` holds one class index per pixel. Every function returns the loss
//! and, when `grad` is given, adds `d loss / d pred` into it.

use std::str::FromStr;

use super::real::Real;
use crate::error::{Error, Result};

/// Clamp applied to the true-class probability inside the logarithm.
pub const CE_EPS: f64 = 1e-7;
/// Smoothing term of the soft Dice ratio.
pub const DICE_EPS: f64 = 1e-6;
/// Default sensitivity weight of the SS loss.
pub const SS_WEIGHT: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Ce,
    Dice,
    Ss,
    CeDice,
    Uncertainty,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Ce,
        LossKind::Dice,
        LossKind::Ss,
        LossKind::CeDice,
        LossKind::Uncertainty,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::Dice => "dice",
            LossKind::Ss => "ss",
            LossKind::CeDice => "ce+dice",
            LossKind::Uncertainty => "uncertainty",
        }
    }

    /// Column label used in result tables.
    pub fn label(&self) -> &'static str {
        match self {
            LossKind::Ce => "CE",
            LossKind::Dice => "Dice",
            LossKind::Ss => "SS",
            LossKind::CeDice => "CE+Dice",
            LossKind::Uncertainty => "Uncertainty Loss",
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown loss {s:?} (ce, dice, ss, ce+dice, uncertainty)")))
    }
}

/// Loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    pub ss_weight: f64,
    /// Weight of the entropy term of the uncertainty loss.
    pub lambda: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            ss_weight: SS_WEIGHT,
            lambda: 1.0,
        }
    }
}

fn check(pred_len: usize, truth: &[u8], classes: usize) -> Result<()> {
    if classes == 0 || truth.is_empty() || pred_len != truth.len() * classes {
        return Err(Error::Shape(format!(
            "prediction has {pred_len} values for {} pixels x {classes} classes",
            truth.len()
        )));
    }
    if truth.iter().any(|&t| usize::from(t) >= classes) {
        return Err(Error::Shape(format!("label beyond {classes} classes")));
    }
    Ok(())
}

/// Mean of `-ln max(p_true, 1e-7)` over pixels.
pub fn loss_ce<T: Real>(pred: &[T], truth: &[u8], classes: usize, grad: Option<&mut [T]>) -> Result<T> {
    check(pred.len(), truth, classes)?;
    let n = T::from_f64(truth.len() as f64);
    let eps = T::from_f64(CE_EPS);
    let mut sum = T::zero();
    let mut grad = grad;
    for (i, &t) in truth.iter().enumerate() {
        let j = i * classes + usize::from(t);
        let p = pred[j];
        if p > eps {
            sum -= p.ln();
            if let Some(g) = grad.as_deref_mut() {
                g[j] -= T::one() / (p * n);
            }
        } else {
            sum -= eps.ln();
        }
    }
    Ok(sum / n)
}

/// Soft Dice averaged over classes:
/// `1 - (2 sum(p g) + eps) / (sum(p) + sum(g) + eps)` per class.
pub fn loss_dice<T: Real>(pred: &[T], truth: &[u8], classes: usize, grad: Option<&mut [T]>) -> Result<T> {
    check(pred.len(), truth, classes)?;
    let eps = T::from_f64(DICE_EPS);
    let two = T::from_f64(2.0);
    let cn = T::from_f64(classes as f64);
    let mut inter = vec![T::zero(); classes];
    let mut psum = vec![T::zero(); classes];
    let mut gsum = vec![T::zero(); classes];
    for (i, &t) in truth.iter().enumerate() {
        let t = usize::from(t);
        for k in 0..classes {
            psum[k] += pred[i * classes + k];
        }
        inter[t] += pred[i * classes + t];
        gsum[t] += T::one();
    }
    let mut loss = T::zero();
    for k in 0..classes {
        loss += T::one() - (two * inter[k] + eps) / (psum[k] + gsum[k] + eps);
    }
    if let Some(g) = grad {
        for (i, &t) in truth.iter().enumerate() {
            let t = usize::from(t);
            for k in 0..classes {
                let den = psum[k] + gsum[k] + eps;
                let gik = if k == t { T::one() } else { T::zero() };
                let num = two * gik * den - (two * inter[k] + eps);
                g[i * classes + k] -= num / (den * den * cn);
            }
        }
    }
    Ok(loss / cn)
}

/// Sensitivity-specificity loss averaged over classes:
/// `w * sum((g - p)^2 g) / sum(g) + (1 - w) * sum((g - p)^2 (1 - g)) / sum(1 - g)`.
/// A term whose denominator is zero (class absent, or present everywhere)
/// contributes zero.
pub fn loss_ss<T: Real>(pred: &[T], truth: &[u8], classes: usize, w: f64, grad: Option<&mut [T]>) -> Result<T> {
    check(pred.len(), truth, classes)?;
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::Config(format!("SS weight {w} outside [0, 1]")));
    }
    let n = truth.len();
    let mut pos = vec![0usize; classes];
    for &t in truth {
        pos[usize::from(t)] += 1;
    }
    let wt = T::from_f64(w);
    let cn = T::from_f64(classes as f64);
    let mut sens = vec![T::zero(); classes];
    let mut spec = vec![T::zero(); classes];
    for (i, &t) in truth.iter().enumerate() {
        for k in 0..classes {
            let p = pred[i * classes + k];
            if usize::from(t) == k {
                let e = T::one() - p;
                sens[k] += e * e;
            } else {
                spec[k] += p * p;
            }
        }
    }
    let mut loss = T::zero();
    let mut sens_scale = vec![T::zero(); classes];
    let mut spec_scale = vec![T::zero(); classes];
    for k in 0..classes {
        if pos[k] > 0 {
            sens_scale[k] = wt / T::from_f64(pos[k] as f64);
            loss += sens_scale[k] * sens[k];
        }
        if pos[k] < n {
            spec_scale[k] = (T::one() - wt) / T::from_f64((n - pos[k]) as f64);
            loss += spec_scale[k] * spec[k];
        }
    }
    if let Some(g) = grad {
        let two = T::from_f64(2.0);
        for (i, &t) in truth.iter().enumerate() {
            for k in 0..classes {
                let p = pred[i * classes + k];
                let d = if usize::from(t) == k {
                    -two * (T::one() - p) * sens_scale[k]
                } else {
                    two * p * spec_scale[k]
                };
                g[i * classes + k] += d / cn;
            }
        }
    }
    Ok(loss / cn)
}

/// Cross-entropy plus `lambda * mean_i(u_i * H(p_i) / ln C)`, where `u` is
/// a frozen per-pixel normalized uncertainty.
pub fn loss_uncertainty<T: Real>(
    pred: &[T],
    truth: &[u8],
    classes: usize,
    umap: &[f32],
    lambda: f64,
    grad: Option<&mut [T]>,
) -> Result<T> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("uncertainty weight {lambda} must be >= 0")));
    }
    if umap.len() != truth.len() {
        return Err(Error::Shape(format!(
            "uncertainty tile has {} values for {} pixels",
            umap.len(),
            truth.len()
        )));
    }
    let mut grad = grad;
    let ce = loss_ce(pred, truth, classes, grad.as_deref_mut())?;
    if lambda == 0.0 {
        return Ok(ce);
    }
    let hmax = (classes as f64).ln();
    let scale = T::from_f64(lambda / (hmax * truth.len() as f64));
    let mut term = T::zero();
    for (i, &u) in umap.iter().enumerate() {
        let u = T::from_f64(f64::from(u));
        let px = &pred[i * classes..(i + 1) * classes];
        let mut h = T::zero();
        for &p in px {
            if p > T::zero() {
                h -= p * p.ln();
            }
        }
        term += u * h;
        if let Some(g) = grad.as_deref_mut() {
            for (k, &p) in px.iter().enumerate() {
                if p > T::zero() {
                    g[i * classes + k] -= scale * u * (p.ln() + T::one());
                }
            }
        }
    }
    Ok(ce + scale * term)
}

/// Dispatches on `kind`. `umap` is required for [`LossKind::Uncertainty`].
pub fn evaluate<T: Real>(
    kind: LossKind,
    params: &LossParams,
    pred: &[T],
    truth: &[u8],
    classes: usize,
    umap: Option<&[f32]>,
    grad: Option<&mut [T]>,
) -> Result<T> {
    let mut grad = grad;
    match kind {
        LossKind::Ce => loss_ce(pred, truth, classes, grad),
        LossKind::Dice => loss_dice(pred, truth, classes, grad),
        LossKind::Ss => loss_ss(pred, truth, classes, params.ss_weight, grad),
        LossKind::CeDice => {
            let a = loss_ce(pred, truth, classes, grad.as_deref_mut())?;
            let b = loss_dice(pred, truth, classes, grad)?;
            Ok(a + b)
        }
        LossKind::Uncertainty => {
            let u = umap.ok_or_else(|| Error::Config("uncertainty loss needs a frozen uncertainty map".into()))?;
            loss_uncertainty(pred, truth, classes, u, params.lambda, grad)
        }
    }
}
