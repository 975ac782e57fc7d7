//! Subcommands of the `explor` binary.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use serde::Serialize;

use explor::data::{load_csv, load_features_csv, make_synthetic_radial};
use explor::experiment::{ablate, ablation_csv, evaluate_scores, loo, stability, AblationAxis, RunConfig};
use explor::metrics::{pr_curve, ScoredSet};
use explor::model::{fit, Bundle, LossMode, Method};
use explor::pseudolabel::LabelerFamily;
use explor::splits::folds_csv;

#[derive(Debug, Parser)]
#[command(name = "explor", version, about = "Extrapolatory pseudo-label matching experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic radial-shift benchmark as train.csv / test.csv.
    Synth(SynthArgs),
    /// Fit a model and write bundle.json, trace.csv and config.json.
    Fit(RunArgs),
    /// Score a dataset with a fitted bundle.
    Predict(PredictArgs),
    /// Evaluate a predictions file against a labelled dataset.
    Eval(EvalArgs),
    /// Bootstrap-stability experiment on the OOD test set.
    Stability(StabilityArgs),
    /// Leave-one-cluster-out experiment on the train dataset.
    Loo(LooArgs),
    /// Compare EXPLOR variants along one ablation axis.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    pub n_id: usize,
    #[arg(long, default_value_t = 2000)]
    pub n_ood: usize,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "label")]
    pub label_column: String,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Every key of the run config as an optional flag; flags win over the
/// `--config` file.
#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// Run config JSON; missing keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub label_column: Option<String>,
    #[arg(long)]
    pub group_column: Option<String>,
    /// explor, erm or pl_ens.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// PCA components (default min(128, N-1, d)).
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Comma-separated hidden widths, e.g. 64,64.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub mean_weight: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// full, match_only, mean_only or single_head.
    #[arg(long)]
    pub loss_mode: Option<String>,
    /// Draw one expansion per run instead of one per batch.
    #[arg(long)]
    pub freeze_expansion: bool,
    #[arg(long)]
    pub erm_learning_rate: Option<f64>,
    #[arg(long)]
    pub snapshot_every: Option<usize>,
    /// Number of pseudo-labelers (and heads).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub min_leaf: Option<usize>,
    #[arg(long)]
    pub instance_fraction: Option<f64>,
    #[arg(long)]
    pub feature_fraction: Option<f64>,
    /// Use forest labelers with this many trees each.
    #[arg(long)]
    pub forest_trees: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub taus: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub ef_fractions: Option<Vec<f64>>,
    #[arg(long)]
    pub confidence_threshold: Option<f64>,
    #[arg(long)]
    pub top_fraction: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// CSV to score; label and group columns, if present, are skipped.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "label")]
    pub label_column: String,
    #[arg(long)]
    pub group_column: Option<String>,
    /// Also write one probability column per network head.
    #[arg(long)]
    pub heads: bool,
    /// Predictions CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// Comma-separated methods to compare.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Refit PCA inside every trial instead of sharing one fit.
    #[arg(long)]
    pub refit_latent: bool,
}

#[derive(Debug, Args)]
pub struct LooArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Number of clusters.
    #[arg(long = "clusters")]
    pub clusters: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// loss_mode, pl_family or bottleneck.
    #[arg(long)]
    pub axis: String,
}

/// A failed command: exit status 1 for usage and configuration problems,
/// 2 for failures while computing.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<explor::Error> for CliError {
    fn from(e: explor::Error) -> Self {
        Self {
            code: if e.is_usage() { 1 } else { 2 },
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> CliError {
    CliError { code: 1, message: message.into() }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn parse<T: std::str::FromStr<Err = explor::Error>>(s: &str) -> CliResult<T> {
    Ok(s.parse::<T>()?)
}

fn parse_loss_mode(s: &str) -> CliResult<LossMode> {
    LossMode::all()
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| usage(format!("unknown loss mode '{s}' (expected full, match_only, mean_only or single_head)")))
}

impl RunArgs {
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($flag:ident => $($path:tt)+) => {
                if let Some(v) = &self.$flag {
                    c.$($path)+ = v.clone();
                }
            };
        }
        if self.train.is_some() {
            c.train = self.train.clone();
        }
        if self.test.is_some() {
            c.test = self.test.clone();
        }
        set!(label_column => label_column);
        if self.group_column.is_some() {
            c.group_column = self.group_column.clone();
        }
        if let Some(m) = &self.method {
            c.method = parse::<Method>(m)?;
        }
        set!(seed => seed);
        if self.latent_dim.is_some() {
            c.latent.dim = self.latent_dim;
        }
        set!(sigma => latent.sigma);
        set!(hidden => net.hidden);
        set!(lambda => net.lambda_expand);
        set!(mean_weight => net.mean_weight);
        set!(batch_size => net.batch_size);
        set!(iterations => net.iterations);
        set!(learning_rate => net.learning_rate);
        if let Some(m) = &self.loss_mode {
            c.net.loss_mode = parse_loss_mode(m)?;
        }
        if self.freeze_expansion {
            c.net.redraw_expansion_each_batch = false;
        }
        set!(erm_learning_rate => erm.learning_rate);
        set!(snapshot_every => erm.snapshot_every);
        set!(k => ensemble.k);
        set!(max_depth => ensemble.max_depth);
        set!(min_leaf => ensemble.min_leaf);
        set!(instance_fraction => ensemble.instance_fraction);
        set!(feature_fraction => ensemble.feature_fraction);
        if let Some(t) = self.forest_trees {
            c.ensemble.family = LabelerFamily::Forest { trees: t };
            c.ablation.forest_trees = t;
        }
        set!(taus => metrics.taus);
        set!(ef_fractions => metrics.ef_fractions);
        set!(confidence_threshold => metrics.confidence_threshold);
        set!(top_fraction => metrics.top_fraction);
        set!(out => output_dir);
        c.validate()?;
        Ok(c)
    }
}

/// Pretty JSON with lexicographically sorted keys.
pub fn sorted_json<T: Serialize>(value: &T) -> CliResult<String> {
    let v = serde_json::to_value(value).map_err(|e| CliError { code: 2, message: e.to_string() })?;
    let mut s = serde_json::to_string_pretty(&v).map_err(|e| CliError { code: 2, message: e.to_string() })?;
    s.push('\n');
    Ok(s)
}

fn write(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} '{}' does not exist", path.display())))
    }
}

/// `index,score[,head_0..head_{K-1}]` with round-trip float formatting.
pub fn predictions_csv(scores: &[f64], heads: Option<&Array2<f64>>) -> String {
    let mut out = String::from("index,score");
    if let Some(h) = heads {
        for j in 0..h.ncols() {
            out.push_str(&format!(",head_{j}"));
        }
    }
    out.push('\n');
    for (i, s) in scores.iter().enumerate() {
        out.push_str(&format!("{i},{s:?}"));
        if let Some(h) = heads {
            for v in h.row(i) {
                out.push_str(&format!(",{v:?}"));
            }
        }
        out.push('\n');
    }
    out
}

/// Scores from a predictions CSV, ordered by its index column.
pub fn read_predictions(path: &Path) -> CliResult<Vec<f64>> {
    require_file(path, "predictions file")?;
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| usage(format!("{}: no '{name}' column", path.display())))
    };
    let (ic, sc) = (col("index")?, col("score")?);
    let mut rows = Vec::new();
    for (r, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cells: Vec<&str> = line.split(',').collect();
        let bad = |what: &str| usage(format!("{}: row {}: bad {what}", path.display(), r + 1));
        let i: usize = cells.get(ic).and_then(|c| c.trim().parse().ok()).ok_or_else(|| bad("index"))?;
        let s: f64 = cells
            .get(sc)
            .and_then(|c| c.trim().parse().ok())
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| bad("score"))?;
        rows.push((i, s));
    }
    rows.sort_by_key(|r| r.0);
    if rows.iter().enumerate().any(|(k, r)| r.0 != k) {
        return Err(usage(format!("{}: index column must be 0..N-1", path.display())));
    }
    Ok(rows.into_iter().map(|r| r.1).collect())
}

pub fn cmd_synth(a: &SynthArgs) -> CliResult<Vec<PathBuf>> {
    let (train, test) = make_synthetic_radial(a.n_id, a.n_ood, a.dim, a.seed)?;
    fs::create_dir_all(&a.out).map_err(|e| usage(format!("cannot create {}: {e}", a.out.display())))?;
    let paths = vec![a.out.join("train.csv"), a.out.join("test.csv")];
    train.save_csv(&paths[0], &a.label_column, "group")?;
    test.save_csv(&paths[1], &a.label_column, "group")?;
    Ok(paths)
}

pub fn cmd_fit(a: &RunArgs) -> CliResult<Vec<PathBuf>> {
    let c = a.resolve()?;
    let train = c.load_train()?;
    let bundle = fit(c.method, &train, &c.train_config())?;
    let out = &c.output_dir;
    let paths = vec![out.join("bundle.json"), out.join("trace.csv"), out.join("config.json")];
    write(&paths[0], &bundle.to_json()?)?;
    write(&paths[1], &bundle.trace.to_csv())?;
    write(&paths[2], &sorted_json(&c)?)?;
    Ok(paths)
}

pub fn cmd_predict(a: &PredictArgs) -> CliResult<Vec<PathBuf>> {
    require_file(&a.bundle, "bundle")?;
    require_file(&a.data, "dataset")?;
    let bundle = Bundle::load(&a.bundle)?;
    let mut exclude = vec![a.label_column.as_str()];
    exclude.extend(a.group_column.as_deref());
    let x = load_features_csv(&a.data, &exclude)?;
    let scores = bundle.predict(x.view())?;
    let heads = if a.heads { Some(bundle.predict_heads(x.view())?) } else { None };
    write(&a.out, &predictions_csv(scores.as_slice().expect("contiguous"), heads.as_ref()))?;
    Ok(vec![a.out.clone()])
}

pub fn cmd_eval(a: &EvalArgs) -> CliResult<Vec<PathBuf>> {
    let c = a.run.resolve()?;
    require_file(&a.data, "dataset")?;
    let ds = load_csv(&a.data, &c.label_column, c.group_column.as_deref())?;
    let scores = read_predictions(&a.predictions)?;
    if scores.len() != ds.n_rows() {
        return Err(usage(format!(
            "{} has {} predictions but {} has {} rows",
            a.predictions.display(),
            scores.len(),
            a.data.display(),
            ds.n_rows()
        )));
    }
    let report = evaluate_scores(&scores, &ds, &c.metrics)?;
    let curve = pr_curve(&ScoredSet::new(scores, ds.labels().to_vec())?)?;
    let mut pr = String::from("rank,recall,precision\n");
    for (r, p) in curve.iter().enumerate() {
        pr.push_str(&format!("{},{:?},{:?}\n", r + 1, p.recall, p.precision));
    }
    let paths = vec![c.output_dir.join("eval.json"), c.output_dir.join("pr.csv")];
    write(&paths[0], &sorted_json(&report)?)?;
    write(&paths[1], &pr)?;
    Ok(paths)
}

pub fn cmd_stability(a: &StabilityArgs) -> CliResult<Vec<PathBuf>> {
    let mut c = a.run.resolve()?;
    if let Some(t) = a.trials {
        c.stability.trials = t;
    }
    if let Some(r) = a.rho {
        c.stability.rho = r;
    }
    if let Some(ms) = &a.methods {
        c.stability.methods = ms.iter().map(|m| parse::<Method>(m)).collect::<CliResult<_>>()?;
    }
    if a.refit_latent {
        c.stability.shared_latent = false;
    }
    c.validate()?;
    let (train, test) = (c.load_train()?, c.load_test()?);
    let report = stability(&train, &test, &c.train_config(), &c.stability)?;
    let path = c.output_dir.join("stability.json");
    write(&path, &sorted_json(&report)?)?;
    Ok(vec![path])
}

pub fn cmd_loo(a: &LooArgs) -> CliResult<Vec<PathBuf>> {
    let mut c = a.run.resolve()?;
    if let Some(k) = a.clusters {
        c.loo_k = k;
    }
    c.validate()?;
    let ds = c.load_train()?;
    let (report, folds) = loo(&ds, c.method, &c.train_config(), &c.metrics, c.loo_k)?;
    let paths = vec![c.output_dir.join("loo.json"), c.output_dir.join("folds.csv")];
    write(&paths[0], &sorted_json(&report)?)?;
    write(&paths[1], &folds_csv(&folds))?;
    Ok(paths)
}

pub fn cmd_ablate(a: &AblateArgs) -> CliResult<Vec<PathBuf>> {
    let c = a.run.resolve()?;
    let axis: AblationAxis = parse(&a.axis)?;
    let (train, test) = (c.load_train()?, c.load_test()?);
    let rows = ablate(&train, &test, &c.train_config(), &c.ablation, &c.metrics, axis)?;
    let paths = vec![
        c.output_dir.join(format!("ablate_{}.csv", a.axis)),
        c.output_dir.join(format!("ablate_{}.json", a.axis)),
    ];
    write(&paths[0], &ablation_csv(&rows))?;
    write(&paths[1], &sorted_json(&rows)?)?;
    Ok(paths)
}

/// Runs one command, returning the files it wrote.
pub fn run(cli: &Cli) -> CliResult<Vec<PathBuf>> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Stability(a) => cmd_stability(a),
        Command::Loo(a) => cmd_loo(a),
        Command::Ablate(a) => cmd_ablate(a),
    }
}
