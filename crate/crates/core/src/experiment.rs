//! Run configuration and the multi-fit experiments: bootstrap stability,
//! leave-one-cluster-out and ablations.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{load_csv, sample_sorted, Dataset};
use crate::error::{Error, Result};
use crate::latent::{default_components, fit_pca};
use crate::metrics::{bootstrap_variance, diversity_stats, evaluate, weighted_report, EvalReport, MetricConfig, ScoredSet};
use crate::model::{fit, fit_with_latent, Bundle, ErmConfig, LossMode, Method, NetConfig, TrainConfig};
use crate::pseudolabel::{EnsembleConfig, LabelerFamily};
use crate::seed::{self, fraction_count, mix64};
use crate::splits::{cluster_split, leave_one_out_folds, Fold, FoldResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatentConfig {
    /// `None` means `min(128, N − 1, d)`.
    pub dim: Option<usize>,
    pub sigma: f64,
}

impl Default for LatentConfig {
    fn default() -> Self {
        Self { dim: None, sigma: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilityConfig {
    pub trials: usize,
    /// Fraction of the training rows drawn, without replacement, per trial.
    pub rho: f64,
    pub methods: Vec<Method>,
    /// Give every trial the seed of trial 0 (same rows, same model).
    pub share_seed: bool,
    /// Fit the latent map once on the full training set and reuse it in
    /// every trial, treating it as a fixed preprocessing of the data. When
    /// false each trial refits PCA on its own subsample.
    pub shared_latent: bool,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            trials: 30,
            rho: 0.8,
            methods: vec![Method::Explor, Method::Erm],
            share_seed: false,
            shared_latent: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub forest_trees: usize,
    pub tiny_hidden: Vec<usize>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            forest_trees: 10,
            tiny_hidden: vec![32, 32],
        }
    }
}

/// One JSON document describing a run; CLI flags override its keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub label_column: String,
    pub group_column: Option<String>,
    pub method: Method,
    pub seed: u64,
    pub latent: LatentConfig,
    pub net: NetConfig,
    pub ensemble: EnsembleConfig,
    pub erm: ErmConfig,
    pub metrics: MetricConfig,
    pub stability: StabilityConfig,
    pub loo_k: usize,
    pub ablation: AblationConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: None,
            test: None,
            label_column: "label".into(),
            group_column: None,
            method: Method::Explor,
            seed: 0,
            latent: LatentConfig::default(),
            net: NetConfig::default(),
            ensemble: EnsembleConfig::default(),
            erm: ErmConfig::default(),
            metrics: MetricConfig::default(),
            stability: StabilityConfig::default(),
            loo_k: 5,
            ablation: AblationConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("invalid run config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&serde_json::to_value(self)?)?)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            latent_dim: self.latent.dim,
            sigma: self.latent.sigma,
            net: self.net.clone(),
            ensemble: self.ensemble.clone(),
            erm: self.erm.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.metrics.validate()?;
        if self.stability.trials < 2 {
            return Err(Error::Config(format!("stability needs at least 2 trials, got {}", self.stability.trials)));
        }
        if !(self.stability.rho > 0.0 && self.stability.rho <= 1.0) {
            return Err(Error::Config(format!("rho must lie in (0, 1], got {}", self.stability.rho)));
        }
        if self.loo_k == 0 {
            return Err(Error::Config("loo_k must be positive".into()));
        }
        if self.ablation.forest_trees == 0 || self.ablation.tiny_hidden.is_empty() {
            return Err(Error::Config("ablation needs forest_trees > 0 and a tiny hidden shape".into()));
        }
        Ok(())
    }

    fn dataset(&self, path: Option<&Path>, what: &str) -> Result<Dataset> {
        let path = path.ok_or_else(|| Error::Config(format!("no {what} dataset given")))?;
        if !path.exists() {
            return Err(Error::Config(format!("{what} dataset '{}' does not exist", path.display())));
        }
        load_csv(path, &self.label_column, self.group_column.as_deref())
    }

    pub fn load_train(&self) -> Result<Dataset> {
        self.dataset(self.train.as_deref(), "train")
    }

    pub fn load_test(&self) -> Result<Dataset> {
        self.dataset(self.test.as_deref(), "test")
    }
}

/// Metric suite on `scores` against `ds`, with diversity statistics over
/// the dataset's features (and groups, when present).
pub fn evaluate_scores(scores: &[f64], ds: &Dataset, cfg: &MetricConfig) -> Result<EvalReport> {
    let set = ScoredSet::new(scores.to_vec(), ds.labels().to_vec())?;
    let mut report = evaluate(&set, cfg)?;
    report.diversity = Some(diversity_stats(
        ds,
        scores,
        cfg.confidence_threshold,
        cfg.top_fraction,
        ds.group().is_some(),
    )?);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopInstance {
    pub index: usize,
    pub variance: f64,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodStability {
    pub method: Method,
    pub mean_variance: f64,
    pub per_instance_variance: Vec<f64>,
    pub top_instances: Vec<TopInstance>,
    /// One row of test scores per trial.
    pub scores: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub trials: usize,
    pub rho: f64,
    pub seed: u64,
    pub methods: Vec<MethodStability>,
}

impl StabilityReport {
    pub fn method(&self, m: Method) -> Option<&MethodStability> {
        self.methods.iter().find(|r| r.method == m)
    }
}

/// Rows of trial `t`'s subsample, drawn with their own derived stream.
pub fn trial_rows(n: usize, rho: f64, seed: u64, trial: u64) -> Vec<usize> {
    let mut rng = seed::child_rng(seed, "trial_rows", trial);
    sample_sorted(&mut rng, n, fraction_count(rho, n))
}

/// Fits every method on `trials` independent ρ-subsamples of `train` and
/// measures the spread of their scores on `test`. Within a trial all
/// methods share the same rows and seed.
pub fn stability(train: &Dataset, test: &Dataset, base: &TrainConfig, cfg: &StabilityConfig) -> Result<StabilityReport> {
    if cfg.trials < 2 {
        return Err(Error::Config(format!("stability needs at least 2 trials, got {}", cfg.trials)));
    }
    let mut matrices: Vec<Array2<f64>> = vec![Array2::zeros((cfg.trials, test.n_rows())); cfg.methods.len()];
    let shared = if cfg.shared_latent {
        let s = base
            .latent_dim
            .unwrap_or_else(|| default_components(train.n_rows(), train.n_features()));
        Some(fit_pca(train, s)?)
    } else {
        None
    };
    for t in 0..cfg.trials {
        let tag = if cfg.share_seed { 0 } else { t as u64 };
        let rows = trial_rows(train.n_rows(), cfg.rho, base.seed, tag);
        let sub = train.select_rows(&rows)?;
        let tc = TrainConfig { seed: mix64(base.seed, "trial", tag), ..base.clone() };
        for (m, &method) in cfg.methods.iter().enumerate() {
            let scores = fit_with_latent(method, &sub, &tc, shared.as_ref())?.predict(test.features().view())?;
            matrices[m].row_mut(t).assign(&scores);
        }
    }
    let methods = cfg
        .methods
        .iter()
        .zip(matrices)
        .map(|(&method, mat)| {
            let v = bootstrap_variance(mat.view())?;
            let top_instances = v
                .top_instances
                .iter()
                .map(|&i| TopInstance {
                    index: i,
                    variance: v.per_instance[i],
                    scores: mat.column(i).to_vec(),
                })
                .collect();
            Ok(MethodStability {
                method,
                mean_variance: v.mean_variance,
                per_instance_variance: v.per_instance,
                top_instances,
                scores: mat.rows().into_iter().map(|r| r.to_vec()).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StabilityReport {
        trials: cfg.trials,
        rho: cfg.rho,
        seed: base.seed,
        methods,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooReport {
    pub method: Method,
    pub k: usize,
    pub cluster_sizes: Vec<usize>,
    pub folds: Vec<FoldResult>,
    /// Fold reports averaged with weights equal to held-out cluster sizes.
    pub summary: EvalReport,
}

/// Clusters positives in the dataset's own PCA space, then fits and
/// evaluates once per held-out cluster.
pub fn loo(ds: &Dataset, method: Method, base: &TrainConfig, metrics: &MetricConfig, k: usize) -> Result<(LooReport, Vec<Fold>)> {
    let s = base
        .latent_dim
        .unwrap_or_else(|| default_components(ds.n_rows(), ds.n_features()));
    let latent = fit_pca(ds, s)?;
    let clusters = cluster_split(ds, &latent, k, mix64(base.seed, "clusters", 0))?;
    let folds = leave_one_out_folds(&clusters)?;
    let mut results = Vec::with_capacity(folds.len());
    for f in &folds {
        let train = ds.select_rows(&f.train)?;
        let test = ds.select_rows(&f.test)?;
        let tc = TrainConfig { seed: mix64(base.seed, "fold", f.id as u64), ..base.clone() };
        let scores = fit(method, &train, &tc)?.predict(test.features().view())?;
        let report = evaluate_scores(scores.as_slice().expect("contiguous"), &test, metrics)?;
        results.push(FoldResult { fold: f.id, size: f.test.len(), report });
    }
    let weights: Vec<f64> = results.iter().map(|r| r.size as f64).collect();
    let reports: Vec<EvalReport> = results.iter().map(|r| r.report.clone()).collect();
    let summary = weighted_report(&reports, &weights)?;
    let report = LooReport {
        method,
        k,
        cluster_sizes: clusters.cluster_sizes(),
        folds: results,
        summary,
    };
    Ok((report, folds))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    LossMode,
    PlFamily,
    Bottleneck,
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loss_mode" => Ok(Self::LossMode),
            "pl_family" => Ok(Self::PlFamily),
            "bottleneck" => Ok(Self::Bottleneck),
            other => Err(Error::Config(format!(
                "unknown ablation axis '{other}' (expected loss_mode, pl_family or bottleneck)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub report: EvalReport,
}

fn fit_eval(train: &Dataset, test: &Dataset, tc: &TrainConfig, metrics: &MetricConfig) -> Result<(Bundle, EvalReport)> {
    let bundle = fit(Method::Explor, train, tc)?;
    let scores = bundle.predict(test.features().view())?;
    let report = evaluate_scores(scores.as_slice().expect("contiguous"), test, metrics)?;
    Ok((bundle, report))
}

/// EXPLOR variants along one axis, all fit with the same seed.
///
/// * `loss_mode`: one row per objective variant.
/// * `pl_family`: tree and forest labelers, each followed by the mean of
///   its own pseudo-labelers (`*_pl_ens`).
/// * `bottleneck`: the configured hidden shape (`full`) and the tiny one.
pub fn ablate(
    train: &Dataset,
    test: &Dataset,
    base: &TrainConfig,
    ablation: &AblationConfig,
    metrics: &MetricConfig,
    axis: AblationAxis,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    match axis {
        AblationAxis::LossMode => {
            for mode in LossMode::all() {
                let mut tc = base.clone();
                tc.net.loss_mode = mode;
                let (_, report) = fit_eval(train, test, &tc, metrics)?;
                rows.push(AblationRow { variant: mode.name().into(), report });
            }
        }
        AblationAxis::PlFamily => {
            for (name, family) in [
                ("tree", LabelerFamily::Tree),
                ("forest", LabelerFamily::Forest { trees: ablation.forest_trees }),
            ] {
                let mut tc = base.clone();
                tc.ensemble.family = family;
                let (bundle, report) = fit_eval(train, test, &tc, metrics)?;
                rows.push(AblationRow { variant: name.into(), report });
                let pl = bundle.predict_pseudo(test.features().view())?.mean_axis(ndarray::Axis(1)).expect("k > 0");
                let report = evaluate_scores(pl.as_slice().expect("contiguous"), test, metrics)?;
                rows.push(AblationRow { variant: format!("{name}_pl_ens"), report });
            }
        }
        AblationAxis::Bottleneck => {
            for (name, hidden) in [("full", base.net.hidden.clone()), ("tiny", ablation.tiny_hidden.clone())] {
                let mut tc = base.clone();
                tc.net.hidden = hidden;
                let (_, report) = fit_eval(train, test, &tc, metrics)?;
                rows.push(AblationRow { variant: name.into(), report });
            }
        }
    }
    Ok(rows)
}

/// `variant,auprc@0.1,auprc@0.2,auprc@0.3,auprc,auroc`, with one
/// `auprc@τ` column per configured cutoff.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let keys: Vec<String> = rows.first().map(|r| r.report.auprc_at.keys().cloned().collect()).unwrap_or_default();
    let mut out = String::from("variant");
    for k in &keys {
        out.push_str(&format!(",auprc@{k}"));
    }
    out.push_str(",auprc,auroc\n");
    for r in rows {
        out.push_str(&r.variant);
        for k in &keys {
            out.push_str(&format!(",{:?}", r.report.auprc_at[k]));
        }
        out.push_str(&format!(",{:?},{:?}\n", r.report.auprc, r.report.auroc));
    }
    out
}
