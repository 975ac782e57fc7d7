//! Training and deployment of the multi-head matching network, the
//! multi-head ERM baseline and the pseudo-labeler-only baseline.
//!
//! All three share one pipeline front end: a PCA latent map is fit on the
//! training features and every downstream component works on latent codes.
//! The deployed EXPLOR score bags the two halves,
//!
//! ```text
//! score(x) = ½ · ( mean_j g_j(z) + mean_j σ(h_j(φ(z))) ),   z = encode(x)
//! ```
//!
//! where `g_j` are the pseudo-labelers and `h_j ∘ φ` the network heads.

pub mod loss;
pub mod net;

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::latent::{self, default_components, fit_pca, LatentMap};
use crate::pseudolabel::{fit_ensemble, EnsembleConfig, PseudoLabelEnsemble};
use crate::seed::{self, mix64};

pub use loss::{backward, loss_explor, loss_match, loss_mean, Batch, LossMode, LossParts, LossWeights};
pub use net::{logistic, Adam, AdamConfig, ExplorNet, NetGrads};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

/// Training aborts once the objective exceeds this value.
const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Explor,
    Erm,
    PlEns,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Explor => "explor",
            Method::Erm => "erm",
            Method::PlEns => "pl_ens",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "explor" => Ok(Method::Explor),
            "erm" => Ok(Method::Erm),
            "pl_ens" => Ok(Method::PlEns),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub lambda_expand: f64,
    pub mean_weight: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub redraw_expansion_each_batch: bool,
    pub loss_mode: LossMode,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden: vec![512, 512],
            lambda_expand: 0.5,
            mean_weight: 1.0,
            batch_size: 256,
            iterations: 10_000,
            learning_rate: 1e-3,
            adam: AdamConfig::default(),
            redraw_expansion_each_batch: true,
            loss_mode: LossMode::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErmConfig {
    pub learning_rate: f64,
    /// Average parameter snapshots taken every this many iterations;
    /// 0 disables averaging.
    pub snapshot_every: usize,
}

impl Default for ErmConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            snapshot_every: 2500,
        }
    }
}

/// Everything needed to fit any of the three methods. The network has
/// one head per pseudo-labeler (`ensemble.k`), or a single head in
/// [`LossMode::SingleHead`]; the ERM baseline uses the same head count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    /// PCA components; `None` means `min(128, N − 1, d)`.
    pub latent_dim: Option<usize>,
    /// Scale of the expansion noise.
    pub sigma: f64,
    pub net: NetConfig,
    pub ensemble: EnsembleConfig,
    pub erm: ErmConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            latent_dim: None,
            sigma: 0.5,
            net: NetConfig::default(),
            ensemble: EnsembleConfig::default(),
            erm: ErmConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let n = &self.net;
        if n.hidden.is_empty() || n.hidden.contains(&0) {
            return Err(Error::Config(format!("hidden widths must be positive, got {:?}", n.hidden)));
        }
        if !(n.lambda_expand >= 0.0) || !(n.mean_weight >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if n.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(n.learning_rate > 0.0) || !(self.erm.learning_rate > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.latent_dim == Some(0) {
            return Err(Error::Config("latent_dim must be positive".into()));
        }
        self.ensemble.validate()
    }

    fn ensemble_config(&self) -> EnsembleConfig {
        EnsembleConfig {
            seed: mix64(self.seed, "ensemble", 0),
            ..self.ensemble.clone()
        }
    }
}

/// Per-iteration loss parts.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTrace {
    pub matching: Vec<f64>,
    pub mean: Vec<f64>,
    pub expand: Vec<f64>,
    pub total: Vec<f64>,
}

impl LossTrace {
    fn push(&mut self, p: &LossParts) {
        self.matching.push(p.matching);
        self.mean.push(p.mean);
        self.expand.push(p.expand);
        self.total.push(p.total);
    }

    pub fn len(&self) -> usize {
        self.total.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total.is_empty()
    }

    /// `iteration,match,mean,expand` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,match,mean,expand\n");
        for i in 0..self.len() {
            out.push_str(&format!(
                "{i},{:?},{:?},{:?}\n",
                self.matching[i], self.mean[i], self.expand[i]
            ));
        }
        out
    }
}

/// A fitted model of any method, self-contained for prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub format_version: u32,
    pub method: Method,
    pub config: TrainConfig,
    pub latent: LatentMap,
    pub ensemble: Option<PseudoLabelEnsemble>,
    pub net: Option<ExplorNet>,
    pub trace: LossTrace,
}

impl Bundle {
    pub fn input_dim(&self) -> usize {
        self.latent.input_dim()
    }

    fn validate(&self) -> Result<()> {
        if self.format_version != BUNDLE_FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported bundle format version {}",
                self.format_version
            )));
        }
        let s = self.latent.latent_dim();
        if let Some(net) = &self.net {
            if net.input_dim() != s {
                return Err(Error::Dimension { expected: s, got: net.input_dim() });
            }
        }
        if let Some(ens) = &self.ensemble {
            if ens.n_features != s {
                return Err(Error::Dimension { expected: s, got: ens.n_features });
            }
        }
        let (needs_ens, needs_net) = match self.method {
            Method::Explor => (true, true),
            Method::Erm => (false, true),
            Method::PlEns => (true, false),
        };
        if (needs_ens && self.ensemble.is_none()) || (needs_net && self.net.is_none()) {
            return Err(Error::Parse(format!("bundle for {} is missing a component", self.method.name())));
        }
        Ok(())
    }

    /// Compact JSON with lexicographically sorted keys.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&serde_json::to_value(self)?)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let b: Self = serde_json::from_str(s)?;
        b.validate()?;
        Ok(b)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Pseudo-labeler mean and mean head probability on latent codes,
    /// whichever this bundle has.
    fn halves(&self, z: ArrayView2<'_, f64>) -> Result<(Option<Array1<f64>>, Option<Array1<f64>>)> {
        let ens = self.ensemble.as_ref().map(|e| e.ensemble_mean(z)).transpose()?;
        let heads = self
            .net
            .as_ref()
            .map(|n| n.head_probabilities(z).map(|p| p.mean_axis(Axis(1)).expect("heads > 0")))
            .transpose()?;
        Ok((ens, heads))
    }

    /// Deployed score in [0, 1] for every row of `x`.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let z = self.latent.encode(x)?;
        let (ens, heads) = self.halves(z.view())?;
        Ok(match (self.method, ens, heads) {
            (Method::Explor, Some(e), Some(h)) => (e + h) * 0.5,
            (Method::Erm, _, Some(h)) => h,
            (Method::PlEns, Some(e), _) => e,
            _ => return Err(Error::Parse("bundle is missing a component".into())),
        })
    }

    /// Logistic of every head on every row (N×K).
    pub fn predict_heads(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let net = self
            .net
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} bundle has no network heads", self.method.name())))?;
        net.head_probabilities(self.latent.encode(x)?.view())
    }

    /// Pseudo-labeler votes (N×K) on the rows of `x`.
    pub fn predict_pseudo(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let ens = self
            .ensemble
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} bundle has no pseudo-labelers", self.method.name())))?;
        ens.predict_matrix(self.latent.encode(x)?.view())
    }
}

/// Fixed-size batches without replacement within an epoch; the order is
/// reshuffled whenever the remainder is too short for a full batch.
struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
    rng: seed::Rng,
}

impl EpochSampler {
    fn new(n: usize, seed: u64) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
            rng: seed::rng(seed),
        }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        let n = self.order.len();
        let size = size.min(n);
        if self.pos + size > n {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let out = self.order[self.pos..self.pos + size].to_vec();
        self.pos += size;
        out
    }
}

struct Prepared {
    latent: LatentMap,
    z: Array2<f64>,
}

fn prepare(ds: &Dataset, cfg: &TrainConfig, latent: Option<&LatentMap>) -> Result<Prepared> {
    cfg.validate()?;
    if !ds.has_both_classes() {
        return Err(Error::InvalidData("training set needs both classes".into()));
    }
    let latent = match latent {
        Some(l) => l.clone(),
        None => {
            let s = cfg
                .latent_dim
                .unwrap_or_else(|| default_components(ds.n_rows(), ds.n_features()));
            fit_pca(ds, s)?
        }
    };
    let z = latent.encode(ds.features().view())?;
    Ok(Prepared { latent, z })
}

fn diverged(it: usize, parts: &LossParts, trace: &LossTrace) -> Error {
    let tail: Vec<String> = trace.total.iter().rev().take(5).rev().map(|v| format!("{v:.4e}")).collect();
    Error::Numerical(format!(
        "loss {:.4e} exceeded {DIVERGENCE_LIMIT:e} at iteration {it}; recent totals [{}]",
        parts.total,
        tail.join(", ")
    ))
}

/// Fits the latent map and pseudo-labelers only.
pub fn fit_pl_ens(ds: &Dataset, cfg: &TrainConfig) -> Result<Bundle> {
    fit_pl_ens_in(ds, cfg, None)
}

fn fit_pl_ens_in(ds: &Dataset, cfg: &TrainConfig, latent: Option<&LatentMap>) -> Result<Bundle> {
    let Prepared { latent, z } = prepare(ds, cfg, latent)?;
    let ens_cfg = cfg.ensemble_config();
    let ensemble = fit_ensemble(&ds.with_features(z)?, &ens_cfg)?;
    Ok(Bundle {
        format_version: BUNDLE_FORMAT_VERSION,
        method: Method::PlEns,
        config: TrainConfig { ensemble: ens_cfg, ..cfg.clone() },
        latent,
        ensemble: Some(ensemble),
        net: None,
        trace: LossTrace::default(),
    })
}

/// Full pipeline: PCA, pseudo-labelers on latent codes, then Adam on the
/// matching objective over batches and their fresh expansions.
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<Bundle> {
    train_in(ds, cfg, None)
}

fn train_in(ds: &Dataset, cfg: &TrainConfig, latent: Option<&LatentMap>) -> Result<Bundle> {
    let mut bundle = fit_pl_ens_in(ds, cfg, latent)?;
    bundle.method = Method::Explor;
    let ens = bundle.ensemble.as_ref().expect("just fit");
    let z = latent_codes(&bundle, ds)?;
    let pseudo = ens.predict_matrix(z.view())?;
    let ncfg = &cfg.net;
    let heads = if ncfg.loss_mode == LossMode::SingleHead { 1 } else { ens.k() };
    let mut net = ExplorNet::init(z.ncols(), &ncfg.hidden, heads, mix64(cfg.seed, "init", 0))?;
    let mut adam = Adam::new(&net, ncfg.adam, ncfg.learning_rate);
    let mut sampler = EpochSampler::new(ds.n_rows(), mix64(cfg.seed, "batches", 0));
    let mut expand_rng = seed::child_rng(cfg.seed, "expand", 0);
    let weights = LossWeights {
        lambda: ncfg.lambda_expand,
        mean_weight: ncfg.mean_weight,
    };
    let frozen = if ncfg.redraw_expansion_each_batch {
        None
    } else {
        let ze = latent::expand_with(z.view(), cfg.sigma, &mut expand_rng);
        let ge = ens.predict_matrix(ze.view())?;
        Some((ze, ge))
    };

    let mut trace = LossTrace::default();
    for it in 0..ncfg.iterations {
        let rows = sampler.next(ncfg.batch_size);
        let zb = z.select(Axis(0), &rows);
        let gb = pseudo.select(Axis(0), &rows);
        let (ze, ge) = match &frozen {
            Some((ze, ge)) => (ze.select(Axis(0), &rows), ge.select(Axis(0), &rows)),
            None => {
                let ze = latent::expand_with(zb.view(), cfg.sigma, &mut expand_rng);
                let ge = ens.predict_matrix(ze.view())?;
                (ze, ge)
            }
        };
        let batch = Batch {
            z: zb.view(),
            pseudo: gb.view(),
            z_expanded: ze.view(),
            pseudo_expanded: ge.view(),
        };
        let (parts, grads) = backward(&net, &batch, weights, ncfg.loss_mode)?;
        if parts.total > DIVERGENCE_LIMIT {
            return Err(diverged(it, &parts, &trace));
        }
        adam.step(&mut net, &grads)?;
        trace.push(&parts);
    }
    bundle.net = Some(net);
    bundle.trace = trace;
    Ok(bundle)
}

fn latent_codes(bundle: &Bundle, ds: &Dataset) -> Result<Array2<f64>> {
    bundle.latent.encode(ds.features().view())
}

/// Multi-head baseline: every head fit to the true labels with
/// cross-entropy on latent codes, no expansion. With snapshot averaging
/// enabled the returned network is the uniform average of the parameters
/// at every `snapshot_every`-th iteration.
pub fn train_erm(ds: &Dataset, cfg: &TrainConfig) -> Result<Bundle> {
    train_erm_in(ds, cfg, None)
}

fn train_erm_in(ds: &Dataset, cfg: &TrainConfig, latent: Option<&LatentMap>) -> Result<Bundle> {
    let Prepared { latent, z } = prepare(ds, cfg, latent)?;
    let ncfg = &cfg.net;
    let heads = cfg.ensemble.k;
    let mut net = ExplorNet::init(z.ncols(), &ncfg.hidden, heads, mix64(cfg.seed, "init", 0))?;
    let mut adam = Adam::new(&net, ncfg.adam, cfg.erm.learning_rate);
    let mut sampler = EpochSampler::new(ds.n_rows(), mix64(cfg.seed, "batches", 0));
    let y: Array1<f64> = ds.labels().iter().map(|&v| v as f64).collect();

    let mut trace = LossTrace::default();
    let mut snapshots = Vec::new();
    for it in 0..ncfg.iterations {
        let rows = sampler.next(ncfg.batch_size);
        let zb = z.select(Axis(0), &rows);
        let targets = y.select(Axis(0), &rows).insert_axis(Axis(1)).broadcast((rows.len(), heads)).expect("column broadcast").to_owned();
        let cache = net.forward_cached(zb.view());
        let (probs, matching) = loss::probe(cache.logits.view(), targets.view());
        let parts = LossParts { matching, mean: 0.0, expand: 0.0, total: matching };
        if !matching.is_finite() || matching > DIVERGENCE_LIMIT {
            return Err(diverged(it, &parts, &trace));
        }
        let mut d = probs - &targets;
        d /= (rows.len() * heads) as f64;
        let grads = net.backward(&cache, &d);
        grads.check_finite(&net)?;
        adam.step(&mut net, &grads)?;
        trace.push(&parts);
        if cfg.erm.snapshot_every > 0 && (it + 1) % cfg.erm.snapshot_every == 0 {
            snapshots.push(net.clone());
        }
    }
    if !snapshots.is_empty() {
        net = net::average_params(&snapshots);
    }
    Ok(Bundle {
        format_version: BUNDLE_FORMAT_VERSION,
        method: Method::Erm,
        config: cfg.clone(),
        latent,
        ensemble: None,
        net: Some(net),
        trace,
    })
}

pub fn fit(method: Method, ds: &Dataset, cfg: &TrainConfig) -> Result<Bundle> {
    fit_with_latent(method, ds, cfg, None)
}

/// Like [`fit`], but reuses `latent` instead of fitting PCA on `ds` when
/// given, so several fits can share one representation.
pub fn fit_with_latent(method: Method, ds: &Dataset, cfg: &TrainConfig, latent: Option<&LatentMap>) -> Result<Bundle> {
    if let Some(l) = latent {
        if l.input_dim() != ds.n_features() {
            return Err(Error::Dimension { expected: l.input_dim(), got: ds.n_features() });
        }
    }
    match method {
        Method::Explor => train_in(ds, cfg, latent),
        Method::Erm => train_erm_in(ds, cfg, latent),
        Method::PlEns => fit_pl_ens_in(ds, cfg, latent),
    }
}
