//! Ranking and reliability metrics.
//!
//! Two tie conventions coexist. Curve-based metrics (PR curve, truncated
//! AUPRC, enrichment factor) rank by descending score and break ties by
//! ascending original index, so every item is its own curve point. AUROC
//! uses average ranks over tied scores.
//!
//! Between attained recall levels the precision is right-continuous: the
//! precision at recall `r` is that of the first ranked point whose recall
//! is at least `r`.

use std::collections::BTreeMap;

use ndarray::{ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seed::fraction_count;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Dimension { expected: labels.len(), got: scores.len() });
        }
        if scores.is_empty() {
            return Err(Error::InvalidData("empty scored set".into()));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidData("non-finite score".into()));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::InvalidData("labels must be 0 or 1".into()));
        }
        Ok(Self { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn prevalence(&self) -> f64 {
        self.n_positive() as f64 / self.len() as f64
    }

    /// Indices by descending score, ties by ascending index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]).then(a.cmp(&b)));
        idx
    }

    fn require_positive(&self) -> Result<usize> {
        match self.n_positive() {
            0 => Err(Error::InvalidData("precision-recall metrics need at least one positive".into())),
            p => Ok(p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// One point per ranked item.
pub fn pr_curve(s: &ScoredSet) -> Result<Vec<PrPoint>> {
    let p = s.require_positive()? as f64;
    let mut tp = 0usize;
    Ok(s.ranking()
        .into_iter()
        .enumerate()
        .map(|(rank, i)| {
            tp += s.labels[i] as usize;
            PrPoint {
                recall: tp as f64 / p,
                precision: tp as f64 / (rank + 1) as f64,
            }
        })
        .collect())
}

/// `(1/τ) ∫₀^τ Precision(r) dr`, integrated exactly over the step function.
///
/// The `m`-th positive in rank order lifts recall from `(m-1)/P` to `m/P`,
/// so the integrand on that interval is the precision at that item.
pub fn auprc_truncated(s: &ScoredSet, tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Config(format!("recall cutoff must lie in (0, 1], got {tau}")));
    }
    let p = s.require_positive()?;
    let pf = p as f64;
    let mut area = 0.0;
    let mut m = 0usize;
    for (rank, i) in s.ranking().into_iter().enumerate() {
        if s.labels[i] == 0 {
            continue;
        }
        m += 1;
        let lo = (m - 1) as f64 / pf;
        if lo >= tau {
            break;
        }
        let hi = if m == p { 1.0 } else { m as f64 / pf };
        area += (m as f64 / (rank + 1) as f64) * (hi.min(tau) - lo);
    }
    Ok(area / tau)
}

pub fn auprc(s: &ScoredSet) -> Result<f64> {
    auprc_truncated(s, 1.0)
}

/// Mann-Whitney form with average ranks for tied scores.
pub fn auroc(s: &ScoredSet) -> Result<f64> {
    let p = s.n_positive();
    let n = s.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::InvalidData("AUROC needs both classes".into()));
    }
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&a, &b| s.scores[a].total_cmp(&s.scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && s.scores[idx[end]] == s.scores[idx[start]] {
            end += 1;
        }
        // Ranks start+1..=end share their average.
        let avg = (start + 1 + end) as f64 / 2.0;
        let pos = idx[start..end].iter().filter(|&&i| s.labels[i] == 1).count();
        rank_sum += avg * pos as f64;
        start = end;
    }
    let (pf, nf) = (p as f64, n as f64);
    Ok((rank_sum - pf * (pf + 1.0) / 2.0) / (pf * nf))
}

/// Precision of the top `ceil(top_fraction · N)` items over prevalence.
pub fn enrichment_factor(s: &ScoredSet, top_fraction: f64) -> Result<f64> {
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(Error::Config(format!("top fraction must lie in (0, 1], got {top_fraction}")));
    }
    let p = s.require_positive()?;
    let top = fraction_count(top_fraction, s.len());
    let hits = s.ranking()[..top].iter().filter(|&&i| s.labels[i] == 1).count();
    // hits/top ÷ p/N, rearranged so the whole-set case is exactly 1.
    Ok((hits * s.len()) as f64 / (top * p) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceSummary {
    pub per_instance: Vec<f64>,
    pub mean_variance: f64,
    /// Up to three instance indices with the largest variance, largest
    /// first (ties by index).
    pub top_instances: Vec<usize>,
}

/// Column-wise unbiased variance of a T×N score matrix (one row per model).
pub fn bootstrap_variance(scores: ArrayView2<'_, f64>) -> Result<VarianceSummary> {
    let (t, n) = scores.dim();
    if t < 2 {
        return Err(Error::InvalidData(format!("need at least two trials, got {t}")));
    }
    if n == 0 {
        return Err(Error::InvalidData("no instances".into()));
    }
    let per_instance: Vec<f64> = scores.axis_iter(Axis(1)).map(|c| sample_variance(c)).collect();
    let mean_variance = per_instance.iter().sum::<f64>() / n as f64;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| per_instance[b].total_cmp(&per_instance[a]).then(a.cmp(&b)));
    order.truncate(3);
    Ok(VarianceSummary {
        per_instance,
        mean_variance,
        top_instances: order,
    })
}

fn sample_variance(v: ArrayView1<'_, f64>) -> f64 {
    let n = v.len() as f64;
    let mean = v.sum() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityStats {
    /// Mean per-feature sample variance among instances scored above the
    /// confidence threshold; 0 when fewer than two qualify.
    pub feature_variance_mean: f64,
    pub n_confident: usize,
    /// Distinct group ids among the top-scored slice.
    pub unique_group_count: Option<usize>,
}

pub fn diversity_stats(
    ds: &Dataset,
    scores: &[f64],
    confidence_threshold: f64,
    top_fraction: f64,
    count_groups: bool,
) -> Result<DiversityStats> {
    if scores.len() != ds.n_rows() {
        return Err(Error::Dimension { expected: ds.n_rows(), got: scores.len() });
    }
    if !(confidence_threshold > 0.0 && confidence_threshold < 1.0) {
        return Err(Error::Config(format!(
            "confidence threshold must lie in (0, 1), got {confidence_threshold}"
        )));
    }
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(Error::Config(format!("top fraction must lie in (0, 1], got {top_fraction}")));
    }
    let confident: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] > confidence_threshold).collect();
    let feature_variance_mean = if confident.len() < 2 {
        0.0
    } else {
        let x = ds.features().select(Axis(0), &confident);
        let total: f64 = x.axis_iter(Axis(1)).map(sample_variance).sum();
        total / ds.n_features() as f64
    };
    let unique_group_count = if count_groups {
        let groups = ds
            .group()
            .ok_or_else(|| Error::InvalidData("unique group count needs a group column".into()))?;
        let ranked = ScoredSet::new(scores.to_vec(), ds.labels().to_vec())?.ranking();
        let top = fraction_count(top_fraction, scores.len());
        let mut seen: Vec<i64> = ranked[..top].iter().map(|&i| groups[i]).collect();
        seen.sort_unstable();
        seen.dedup();
        Some(seen.len())
    } else {
        None
    };
    Ok(DiversityStats {
        feature_variance_mean,
        n_confident: confident.len(),
        unique_group_count,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub taus: Vec<f64>,
    pub ef_fractions: Vec<f64>,
    pub confidence_threshold: f64,
    pub top_fraction: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            taus: vec![0.1, 0.2, 0.3],
            ef_fractions: vec![0.01, 0.05, 0.1],
            confidence_threshold: 0.9,
            top_fraction: 0.025,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.taus.iter().find(|&&t| !(t > 0.0 && t <= 1.0)) {
            return Err(Error::Config(format!("recall cutoff {t} outside (0, 1]")));
        }
        if let Some(f) = self.ef_fractions.iter().find(|&&f| !(f > 0.0 && f <= 1.0)) {
            return Err(Error::Config(format!("enrichment fraction {f} outside (0, 1]")));
        }
        Ok(())
    }
}

/// Map key for a cutoff value, e.g. `0.2` → `"0.2"`.
pub fn cutoff_key(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auprc_at: BTreeMap<String, f64>,
    pub auprc: f64,
    pub auroc: f64,
    pub ef_at: BTreeMap<String, f64>,
    pub prevalence: f64,
    pub n: usize,
    pub n_positive: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diversity: Option<DiversityStats>,
}

pub fn evaluate(s: &ScoredSet, cfg: &MetricConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let mut auprc_at = BTreeMap::new();
    for &t in &cfg.taus {
        auprc_at.insert(cutoff_key(t), auprc_truncated(s, t)?);
    }
    let mut ef_at = BTreeMap::new();
    for &f in &cfg.ef_fractions {
        ef_at.insert(cutoff_key(f), enrichment_factor(s, f)?);
    }
    Ok(EvalReport {
        auprc_at,
        auprc: auprc(s)?,
        auroc: auroc(s)?,
        ef_at,
        prevalence: s.prevalence(),
        n: s.len(),
        n_positive: s.n_positive(),
        diversity: None,
    })
}

/// `Σ wᵢ vᵢ / Σ wᵢ`.
pub fn weighted_mean(values: &[f64], weights: &[f64]) -> Result<f64> {
    if values.len() != weights.len() || values.is_empty() {
        return Err(Error::Dimension { expected: weights.len(), got: values.len() });
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidData("weights sum to zero".into()));
    }
    Ok(values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total)
}

/// Cluster-size-weighted average of per-fold reports, key by key.
pub fn weighted_report(reports: &[EvalReport], weights: &[f64]) -> Result<EvalReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::InvalidData("no reports to average".into()))?;
    let avg = |f: &dyn Fn(&EvalReport) -> f64| {
        let v: Vec<f64> = reports.iter().map(f).collect();
        weighted_mean(&v, weights)
    };
    let mut auprc_at = BTreeMap::new();
    for key in first.auprc_at.keys() {
        auprc_at.insert(key.clone(), avg(&|r| r.auprc_at[key])?);
    }
    let mut ef_at = BTreeMap::new();
    for key in first.ef_at.keys() {
        ef_at.insert(key.clone(), avg(&|r| r.ef_at[key])?);
    }
    Ok(EvalReport {
        auprc_at,
        auprc: avg(&|r| r.auprc)?,
        auroc: avg(&|r| r.auroc)?,
        ef_at,
        prevalence: avg(&|r| r.prevalence)?,
        n: reports.iter().map(|r| r.n).sum(),
        n_positive: reports.iter().map(|r| r.n_positive).sum(),
        diversity: None,
    })
}
