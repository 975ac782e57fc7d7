//! Matching objectives and their gradients with respect to head logits.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::net::{logistic, ExplorNet, NetGrads};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Mean matching + per-head matching on the batch, λ·per-head matching
    /// on its expansion.
    #[default]
    Full,
    /// Per-head matching only (no mean term).
    MatchOnly,
    /// Cross-entropy between the mean head probability and the mean
    /// pseudo-label, on the batch and (weighted by λ) its expansion.
    MeanOnly,
    /// One output trained with cross-entropy against the mean pseudo-label.
    SingleHead,
}

impl LossMode {
    pub fn all() -> [LossMode; 4] {
        [LossMode::Full, LossMode::MatchOnly, LossMode::MeanOnly, LossMode::SingleHead]
    }

    pub fn name(self) -> &'static str {
        match self {
            LossMode::Full => "full",
            LossMode::MatchOnly => "match_only",
            LossMode::MeanOnly => "mean_only",
            LossMode::SingleHead => "single_head",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of the expanded-data term.
    pub lambda: f64,
    /// Weight of the mean-matching term in [`LossMode::Full`].
    pub mean_weight: f64,
}

/// One objective evaluation. `total` combines the parts according to the
/// loss mode and weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LossParts {
    pub matching: f64,
    pub mean: f64,
    pub expand: f64,
    pub total: f64,
}

/// `max(ζ,0) − ζ·g + ln(1 + e^{−|ζ|})`.
pub fn bce_with_logits(logit: f64, target: f64) -> f64 {
    logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p()
}

fn check_shapes(logits: ArrayView2<'_, f64>, pseudo: ArrayView2<'_, f64>) -> Result<()> {
    if logits.dim() != pseudo.dim() {
        return Err(Error::Dimension { expected: logits.len(), got: pseudo.len() });
    }
    Ok(())
}

/// Mean binary cross-entropy over all B·K (row, head) pairs.
pub fn loss_match(logits: ArrayView2<'_, f64>, pseudo: ArrayView2<'_, f64>) -> Result<f64> {
    check_shapes(logits, pseudo)?;
    if logits.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = logits.iter().zip(pseudo.iter()).map(|(&z, &g)| bce_with_logits(z, g)).sum();
    Ok(sum / logits.len() as f64)
}

/// `(1/B) Σ_i | mean_j σ(ζ_ij) − mean_j g_ij |`.
pub fn loss_mean(logits: ArrayView2<'_, f64>, pseudo: ArrayView2<'_, f64>) -> Result<f64> {
    check_shapes(logits, pseudo)?;
    if logits.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = mean_gaps(logits, pseudo).iter().map(|d| d.abs()).sum();
    Ok(total / logits.nrows() as f64)
}

fn mean_gaps(logits: ArrayView2<'_, f64>, pseudo: ArrayView2<'_, f64>) -> Vec<f64> {
    let k = logits.ncols() as f64;
    logits
        .rows()
        .into_iter()
        .zip(pseudo.rows())
        .map(|(z, g)| z.iter().map(|&v| logistic(v)).sum::<f64>() / k - g.sum() / k)
        .collect()
}

const PROB_CLAMP: f64 = 1e-12;

/// `(1/B) Σ_i BCE(mean_j σ(ζ_ij), mean_j g_ij)` with the mean probability
/// clamped away from 0 and 1.
pub fn loss_mean_bce(logits: ArrayView2<'_, f64>, pseudo: ArrayView2<'_, f64>) -> Result<f64> {
    check_shapes(logits, pseudo)?;
    if logits.is_empty() {
        return Ok(0.0);
    }
    let k = logits.ncols() as f64;
    let total: f64 = logits
        .rows()
        .into_iter()
        .zip(pseudo.rows())
        .map(|(z, g)| {
            let p = (z.iter().map(|&v| logistic(v)).sum::<f64>() / k).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            let t = g.sum() / k;
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / logits.nrows() as f64)
}

/// Logistic of every logit and the mean cross-entropy against `pseudo`,
/// sharing one exponential per entry.
pub(crate) fn probe(logits: ArrayView2<'_, f64>, pseudo: ArrayView2<'_, f64>) -> (Array2<f64>, f64) {
    let mut bce = 0.0;
    let mut probs = Array2::zeros(logits.dim());
    ndarray::Zip::from(&mut probs)
        .and(logits)
        .and(pseudo)
        .for_each(|p, &z, &g| {
            let e = (-z.abs()).exp();
            *p = if z >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
            bce += z.max(0.0) - z * g + e.ln_1p();
        });
    (probs, bce / logits.len().max(1) as f64)
}

fn match_grad(probs: &Array2<f64>, pseudo: ArrayView2<'_, f64>, scale: f64) -> Array2<f64> {
    let n = probs.len().max(1) as f64;
    let mut d = probs - &pseudo;
    d *= scale / n;
    d
}

fn prob_gaps(probs: &Array2<f64>, pseudo: ArrayView2<'_, f64>) -> Vec<f64> {
    let k = probs.ncols() as f64;
    probs
        .rows()
        .into_iter()
        .zip(pseudo.rows())
        .map(|(p, g)| p.sum() / k - g.sum() / k)
        .collect()
}

/// Subgradient with `sign(0) = 0`.
fn mean_grad(probs: &Array2<f64>, pseudo: ArrayView2<'_, f64>, scale: f64) -> (f64, Array2<f64>) {
    let (b, k) = probs.dim();
    let gaps = prob_gaps(probs, pseudo);
    let value = gaps.iter().map(|g| g.abs()).sum::<f64>() / b.max(1) as f64;
    let mut d = probs.mapv(|s| s * (1.0 - s));
    let c = scale / (b.max(1) * k) as f64;
    for (mut row, gap) in d.rows_mut().into_iter().zip(gaps) {
        let sign = if gap > 0.0 {
            1.0
        } else if gap < 0.0 {
            -1.0
        } else {
            0.0
        };
        row *= sign * c;
    }
    (value, d)
}

fn mean_bce_grad(probs: &Array2<f64>, pseudo: ArrayView2<'_, f64>, scale: f64) -> (f64, Array2<f64>) {
    let (b, k) = probs.dim();
    let kf = k as f64;
    let mut value = 0.0;
    let mut d = probs.mapv(|s| s * (1.0 - s));
    for ((mut row, p), g) in d.rows_mut().into_iter().zip(probs.rows()).zip(pseudo.rows()) {
        let p = (p.sum() / kf).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let t = g.sum() / kf;
        value -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        let dp = (p - t) / (p * (1.0 - p));
        row *= scale * dp / (kf * b.max(1) as f64);
    }
    (value / b.max(1) as f64, d)
}

fn row_means(pseudo: ArrayView2<'_, f64>) -> Array2<f64> {
    pseudo
        .mean_axis(Axis(1))
        .unwrap_or_else(|| ndarray::Array1::zeros(pseudo.nrows()))
        .insert_axis(Axis(1))
}

/// Network inputs and pseudo-label targets for one step. Rows of
/// `z_expanded` are expansions of the rows of `z`, labelled by the same
/// ensemble.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub z: ArrayView2<'a, f64>,
    pub pseudo: ArrayView2<'a, f64>,
    pub z_expanded: ArrayView2<'a, f64>,
    pub pseudo_expanded: ArrayView2<'a, f64>,
}

/// Loss parts plus ∂total/∂logits for the batch and expanded rows.
pub fn objective(
    mode: LossMode,
    logits: ArrayView2<'_, f64>,
    pseudo: ArrayView2<'_, f64>,
    logits_expanded: ArrayView2<'_, f64>,
    pseudo_expanded: ArrayView2<'_, f64>,
    w: LossWeights,
) -> Result<(LossParts, Array2<f64>, Array2<f64>)> {
    if mode != LossMode::SingleHead {
        check_shapes(logits, pseudo)?;
        check_shapes(logits_expanded, pseudo_expanded)?;
    }
    match mode {
        LossMode::Full | LossMode::MatchOnly => {
            let mean_weight = if mode == LossMode::Full { w.mean_weight } else { 0.0 };
            let (probs, matching) = probe(logits, pseudo);
            let (probs_e, expand) = probe(logits_expanded, pseudo_expanded);
            let mut d = match_grad(&probs, pseudo, 1.0);
            let (mean, dm) = mean_grad(&probs, pseudo, mean_weight);
            if mean_weight != 0.0 {
                d += &dm;
            }
            let de = match_grad(&probs_e, pseudo_expanded, w.lambda);
            let total = mean_weight * mean + matching + w.lambda * expand;
            Ok((LossParts { matching, mean, expand, total }, d, de))
        }
        LossMode::MeanOnly => {
            let (mean, d) = mean_bce_grad(&logits.mapv(logistic), pseudo, 1.0);
            let (expand, de) = mean_bce_grad(&logits_expanded.mapv(logistic), pseudo_expanded, w.lambda);
            let total = mean + w.lambda * expand;
            Ok((LossParts { matching: 0.0, mean, expand, total }, d, de))
        }
        LossMode::SingleHead => {
            if logits.ncols() != 1 {
                return Err(Error::Dimension { expected: 1, got: logits.ncols() });
            }
            let (t, te) = (row_means(pseudo), row_means(pseudo_expanded));
            let (probs, matching) = probe(logits, t.view());
            let (probs_e, expand) = probe(logits_expanded, te.view());
            let d = match_grad(&probs, t.view(), 1.0);
            let de = match_grad(&probs_e, te.view(), w.lambda);
            let total = matching + w.lambda * expand;
            Ok((LossParts { matching, mean: 0.0, expand, total }, d, de))
        }
    }
}

fn check_batch(net: &ExplorNet, batch: &Batch<'_>, mode: LossMode) -> Result<()> {
    if batch.z.nrows() != batch.pseudo.nrows() || batch.z_expanded.nrows() != batch.pseudo_expanded.nrows() {
        return Err(Error::Dimension { expected: batch.z.nrows(), got: batch.pseudo.nrows() });
    }
    let want = if mode == LossMode::SingleHead { None } else { Some(net.heads()) };
    for cols in [batch.pseudo.ncols(), batch.pseudo_expanded.ncols()] {
        if let Some(k) = want.filter(|&k| k != cols) {
            return Err(Error::Dimension { expected: k, got: cols });
        }
    }
    Ok(())
}

/// Objective value for the network on one batch.
pub fn loss_explor(net: &ExplorNet, batch: &Batch<'_>, w: LossWeights, mode: LossMode) -> Result<LossParts> {
    check_batch(net, batch, mode)?;
    let l = net.logits(batch.z)?;
    let le = net.logits(batch.z_expanded)?;
    Ok(objective(mode, l.view(), batch.pseudo, le.view(), batch.pseudo_expanded, w)?.0)
}

/// Objective value and exact gradients with respect to every parameter.
/// The batch and its expansion go through the network as one stacked
/// forward pass.
pub fn backward(net: &ExplorNet, batch: &Batch<'_>, w: LossWeights, mode: LossMode) -> Result<(LossParts, NetGrads)> {
    check_batch(net, batch, mode)?;
    let b = batch.z.nrows();
    for cols in [batch.z.ncols(), batch.z_expanded.ncols()] {
        if cols != net.input_dim() {
            return Err(Error::Dimension { expected: net.input_dim(), got: cols });
        }
    }
    let stacked = ndarray::concatenate(Axis(0), &[batch.z, batch.z_expanded]).expect("matching widths");
    if stacked.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite network input".into()));
    }
    let cache = net.forward_cached(stacked.view());
    let (l, le) = cache.logits.view().split_at(Axis(0), b);
    let (parts, d, de) = objective(mode, l, batch.pseudo, le, batch.pseudo_expanded, w)?;
    if !parts.total.is_finite() {
        return Err(Error::Numerical(format!("loss is {}", parts.total)));
    }
    let d_logits = ndarray::concatenate(Axis(0), &[d.view(), de.view()]).expect("matching widths");
    let grads = net.backward(&cache, &d_logits);
    grads.check_finite(net)?;
    Ok((parts, grads))
}
