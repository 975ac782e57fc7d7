//! Diverse pseudo-labeler ensembles built from CART trees.
//!
//! Each labeler sees its own subsample of rows and its own subset of
//! feature columns, drawn from a random stream derived from
//! `(seed, labeler index)`. Labelers are fit independently, so fitting
//! order has no effect on the result.
//!
//! Trees split greedily on weighted Gini impurity. Candidate thresholds are
//! midpoints between consecutive distinct values of a feature; among equal
//! impurities the lowest feature index wins, then the lowest threshold.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{sample_sorted, Dataset};
use crate::error::{Error, Result};
use crate::seed::{self, fraction_count};

pub const ENSEMBLE_FORMAT_VERSION: u32 = 1;

/// Impurity differences below this are treated as ties.
const GINI_TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        positive_fraction: f64,
        count: usize,
    },
}

/// A fitted tree stored as a flat node list; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn constant(positive_fraction: f64) -> Self {
        Self {
            nodes: vec![TreeNode::Leaf { positive_fraction, count: 1 }],
        }
    }

    /// Positive fraction of the leaf reached by `x` (left iff `x[f] <= t`).
    pub fn leaf_value(&self, x: ArrayView1<'_, f64>) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { positive_fraction, .. } => return positive_fraction,
                TreeNode::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LabelerFamily {
    /// One CART tree per labeler.
    Tree,
    /// `trees` bootstrapped CART trees per labeler with per-split feature
    /// sampling; the labeler votes by majority.
    Forest { trees: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub k: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub instance_fraction: f64,
    pub feature_fraction: f64,
    pub family: LabelerFamily,
    pub decision_threshold: f64,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            k: 64,
            max_depth: 6,
            min_leaf: 2,
            instance_fraction: 0.632,
            feature_fraction: 0.5,
            family: LabelerFamily::Tree,
            decision_threshold: 0.5,
            seed: 0,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("ensemble needs at least one labeler".into()));
        }
        if self.min_leaf == 0 {
            return Err(Error::Config("min_leaf must be at least 1".into()));
        }
        if let LabelerFamily::Forest { trees: 0 } = self.family {
            return Err(Error::Config("forest labelers need at least one tree".into()));
        }
        for (name, f) in [
            ("instance_fraction", self.instance_fraction),
            ("feature_fraction", self.feature_fraction),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {f}")));
            }
        }
        if !(0.0..=1.0).contains(&self.decision_threshold) {
            return Err(Error::Config("decision_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabeler {
    pub trees: Vec<Tree>,
    pub feature_indices: Vec<usize>,
    pub instance_indices: Vec<usize>,
    pub decision_threshold: f64,
}

impl PseudoLabeler {
    /// Positive fraction for a single tree, vote fraction for a forest.
    pub fn score(&self, x: ArrayView1<'_, f64>) -> f64 {
        if let [tree] = self.trees.as_slice() {
            return tree.leaf_value(x);
        }
        let votes = self.trees.iter().filter(|t| t.leaf_value(x) >= 0.5).count();
        votes as f64 / self.trees.len() as f64
    }

    fn label(&self, x: ArrayView1<'_, f64>) -> u8 {
        u8::from(self.score(x) >= self.decision_threshold)
    }
}

/// Hard label of one labeler for a full-dimension input.
pub fn predict_one(labeler: &PseudoLabeler, x: ArrayView1<'_, f64>) -> Result<u8> {
    if let Some(&j) = labeler.feature_indices.last() {
        if j >= x.len() {
            return Err(Error::Dimension { expected: j + 1, got: x.len() });
        }
    }
    if let Some(v) = x.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidData(format!("non-finite input component {v}")));
    }
    Ok(labeler.label(x))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelEnsemble {
    pub format_version: u32,
    pub n_features: usize,
    pub config: EnsembleConfig,
    pub labelers: Vec<PseudoLabeler>,
}

impl PseudoLabelEnsemble {
    pub fn k(&self) -> usize {
        self.labelers.len()
    }

    fn check_dim(&self, cols: usize) -> Result<()> {
        if cols != self.n_features {
            return Err(Error::Dimension { expected: self.n_features, got: cols });
        }
        Ok(())
    }

    /// N×K matrix of hard labels (as 0.0/1.0).
    pub fn predict_matrix(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_dim(x.ncols())?;
        if let Some(v) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite input component {v}")));
        }
        let mut out = Array2::zeros((x.nrows(), self.k()));
        for (row, mut dst) in x.rows().into_iter().zip(out.rows_mut()) {
            for (k, labeler) in self.labelers.iter().enumerate() {
                dst[k] = labeler.label(row) as f64;
            }
        }
        Ok(out)
    }

    /// Row mean of [`predict_matrix`](Self::predict_matrix): the fraction of
    /// labelers voting positive.
    pub fn ensemble_mean(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let m = self.predict_matrix(x)?;
        let k = self.k() as f64;
        Ok(m.rows().into_iter().map(|r| r.sum() / k).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&serde_json::to_value(self)?)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ens: Self = serde_json::from_str(s)?;
        if ens.format_version != ENSEMBLE_FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported ensemble format version {}",
                ens.format_version
            )));
        }
        Ok(ens)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

pub fn fit_ensemble(ds: &Dataset, config: &EnsembleConfig) -> Result<PseudoLabelEnsemble> {
    config.validate()?;
    if !ds.has_both_classes() {
        return Err(Error::InvalidData(
            "pseudo-labelers need both classes in the training set".into(),
        ));
    }
    let labelers = (0..config.k)
        .map(|k| fit_labeler(ds, config, k as u64))
        .collect();
    Ok(PseudoLabelEnsemble {
        format_version: ENSEMBLE_FORMAT_VERSION,
        n_features: ds.n_features(),
        config: config.clone(),
        labelers,
    })
}

fn fit_labeler(ds: &Dataset, config: &EnsembleConfig, k: u64) -> PseudoLabeler {
    let mut rng = seed::child_rng(config.seed, "labeler", k);
    let n = ds.n_rows();
    let d = ds.n_features();
    let rows = sample_sorted(&mut rng, n, fraction_count(config.instance_fraction, n));
    let features = sample_sorted(&mut rng, d, fraction_count(config.feature_fraction, d));
    let params = CartParams {
        max_depth: config.max_depth,
        min_leaf: config.min_leaf,
    };
    let trees = match config.family {
        LabelerFamily::Tree => {
            vec![fit_tree(ds.features().view(), ds.labels(), rows.clone(), &features, params, None)]
        }
        LabelerFamily::Forest { trees } => {
            let per_split = (features.len() as f64).sqrt().ceil() as usize;
            (0..trees)
                .map(|_| {
                    let boot: Vec<usize> = (0..rows.len())
                        .map(|_| rows[rng.random_range(0..rows.len())])
                        .collect();
                    fit_tree(
                        ds.features().view(),
                        ds.labels(),
                        boot,
                        &features,
                        params,
                        Some((per_split, &mut rng)),
                    )
                })
                .collect()
        }
    };
    PseudoLabeler {
        trees,
        feature_indices: features,
        instance_indices: rows,
        decision_threshold: config.decision_threshold,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CartParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

/// Best axis-aligned split of `rows` over `features`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    /// Weighted Gini impurity of the two children.
    pub impurity: f64,
    pub n_left: usize,
}

fn gini(pos: usize, n: usize) -> f64 {
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

fn midpoint(a: f64, b: f64) -> f64 {
    let mid = a + 0.5 * (b - a);
    if mid < b {
        mid
    } else {
        a
    }
}

/// Exhaustive best split: every midpoint between consecutive distinct
/// values of every listed feature, subject to `min_leaf` on both sides.
pub fn best_split(
    x: ArrayView2<'_, f64>,
    y: &[u8],
    rows: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Option<SplitChoice> {
    let n = rows.len();
    let total_pos = rows.iter().filter(|&&r| y[r] == 1).count();
    let mut best: Option<SplitChoice> = None;
    let mut sorted = rows.to_vec();
    let mut sorted_features = features.to_vec();
    sorted_features.sort_unstable();
    for &f in &sorted_features {
        sorted.sort_by(|&a, &b| x[[a, f]].total_cmp(&x[[b, f]]).then(a.cmp(&b)));
        let mut left_pos = 0;
        for i in 1..n {
            left_pos += y[sorted[i - 1]] as usize;
            let (lo, hi) = (x[[sorted[i - 1], f]], x[[sorted[i], f]]);
            if lo == hi || i < min_leaf || n - i < min_leaf {
                continue;
            }
            let impurity = (i as f64 * gini(left_pos, i)
                + (n - i) as f64 * gini(total_pos - left_pos, n - i))
                / n as f64;
            if best.is_none_or(|b| impurity < b.impurity - GINI_TIE_EPS) {
                best = Some(SplitChoice {
                    feature: f,
                    threshold: midpoint(lo, hi),
                    impurity,
                    n_left: i,
                });
            }
        }
    }
    best
}

/// Fits one CART tree on `rows` (duplicates allowed). With a feature
/// sampler, each split considers a fresh random subset of `features` of
/// the given size.
pub fn fit_tree(
    x: ArrayView2<'_, f64>,
    y: &[u8],
    rows: Vec<usize>,
    features: &[usize],
    params: CartParams,
    mut sampler: Option<(usize, &mut seed::Rng)>,
) -> Tree {
    let mut nodes = Vec::new();
    grow(x, y, rows, features, params, 0, &mut sampler, &mut nodes);
    Tree { nodes }
}

#[allow(clippy::too_many_arguments)]
fn grow(
    x: ArrayView2<'_, f64>,
    y: &[u8],
    rows: Vec<usize>,
    features: &[usize],
    params: CartParams,
    depth: usize,
    sampler: &mut Option<(usize, &mut seed::Rng)>,
    nodes: &mut Vec<TreeNode>,
) -> usize {
    let id = nodes.len();
    let n = rows.len();
    let pos = rows.iter().filter(|&&r| y[r] == 1).count();
    let leaf = TreeNode::Leaf {
        positive_fraction: pos as f64 / n as f64,
        count: n,
    };
    nodes.push(leaf);
    if depth >= params.max_depth || pos == 0 || pos == n || n < 2 * params.min_leaf {
        return id;
    }
    let candidates = match sampler {
        Some((m, rng)) if *m < features.len() => {
            sample_sorted(rng, features.len(), *m).into_iter().map(|i| features[i]).collect()
        }
        _ => features.to_vec(),
    };
    let Some(split) = best_split(x, y, &rows, &candidates, params.min_leaf) else {
        return id;
    };
    let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
        rows.iter().partition(|&&r| x[[r, split.feature]] <= split.threshold);
    let left = grow(x, y, left_rows, features, params, depth + 1, sampler, nodes);
    let right = grow(x, y, right_rows, features, params, depth + 1, sampler, nodes);
    nodes[id] = TreeNode::Split {
        feature: split.feature,
        threshold: split.threshold,
        left,
        right,
    };
    id
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_synthetic_radial;
    use ndarray::{array, Array2};
    use rand::Rng;

    fn labeler(tree: Tree, d: usize) -> PseudoLabeler {
        PseudoLabeler {
            trees: vec![tree],
            feature_indices: (0..d).collect(),
            instance_indices: vec![0],
            decision_threshold: 0.5,
        }
    }

    fn leaf(p: f64) -> TreeNode {
        TreeNode::Leaf { positive_fraction: p, count: 1 }
    }

    #[test]
    fn constant_tree_always_positive() {
        let l = labeler(Tree::constant(1.0), 2);
        for x in [array![0.0, 0.0], array![-9.0, 4.0]] {
            assert_eq!(predict_one(&l, x.view()).unwrap(), 1);
        }
    }

    #[test]
    fn single_split_goes_left_on_equality() {
        let tree = Tree {
            nodes: vec![
                TreeNode::Split { feature: 0, threshold: 0.0, left: 1, right: 2 },
                leaf(0.0),
                leaf(1.0),
            ],
        };
        let l = labeler(tree, 1);
        assert_eq!(predict_one(&l, array![-1.0].view()).unwrap(), 0);
        assert_eq!(predict_one(&l, array![0.0].view()).unwrap(), 0);
        assert_eq!(predict_one(&l, array![0.5].view()).unwrap(), 1);
    }

    #[test]
    fn depth_two_tree_matches_hand_traversal() {
        // root: x0 <= 0 ? (x1 <= 0 ? A : B) : (x1 <= 1 ? C : D)
        let tree = Tree {
            nodes: vec![
                TreeNode::Split { feature: 0, threshold: 0.0, left: 1, right: 4 },
                TreeNode::Split { feature: 1, threshold: 0.0, left: 2, right: 3 },
                leaf(0.0),
                leaf(1.0),
                TreeNode::Split { feature: 1, threshold: 1.0, left: 5, right: 6 },
                leaf(0.75),
                leaf(0.25),
            ],
        };
        let l = labeler(tree, 2);
        let cases = [
            (array![-1.0, -1.0], 0),
            (array![-1.0, 1.0], 1),
            (array![1.0, -1.0], 1),
            (array![1.0, 2.0], 0),
        ];
        for (x, want) in cases {
            assert_eq!(predict_one(&l, x.view()).unwrap(), want, "{x}");
        }
    }

    #[test]
    fn predict_one_rejects_nan() {
        let l = labeler(Tree::constant(1.0), 2);
        assert!(predict_one(&l, array![f64::NAN, 0.0].view()).is_err());
    }

    #[test]
    fn separable_one_feature_gives_depth_one_perfect_tree() {
        let x = array![[-3.0], [-2.0], [-1.0], [1.0], [2.0], [3.0]];
        let ds = Dataset::new(x.clone(), vec![0, 0, 0, 1, 1, 1], None).unwrap();
        let cfg = EnsembleConfig {
            k: 1,
            instance_fraction: 1.0,
            feature_fraction: 1.0,
            min_leaf: 1,
            ..Default::default()
        };
        let ens = fit_ensemble(&ds, &cfg).unwrap();
        assert_eq!(ens.labelers[0].trees[0].depth(), 1);
        let pred = ens.predict_matrix(x.view()).unwrap();
        assert_eq!(pred.column(0).to_vec(), vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        match ens.labelers[0].trees[0].nodes[0] {
            TreeNode::Split { threshold, .. } => assert_eq!(threshold, 0.0),
            _ => panic!("root should split"),
        }
    }

    #[test]
    fn default_ensemble_beats_majority_prior() {
        let (train, _) = make_synthetic_radial(600, 100, 8, 3).unwrap();
        let ens = fit_ensemble(&train, &EnsembleConfig { seed: 5, ..Default::default() }).unwrap();
        assert_eq!(ens.k(), 64);
        let pred = ens.predict_matrix(train.features().view()).unwrap();
        let n = train.n_rows() as f64;
        let prior = train.n_positive() as f64 / n;
        let majority = prior.max(1.0 - prior);
        for k in 0..ens.k() {
            let acc = pred
                .column(k)
                .iter()
                .zip(train.labels())
                .filter(|(p, &y)| **p == y as f64)
                .count() as f64
                / n;
            assert!(acc > majority, "labeler {k}: {acc} <= {majority}");
        }
        // Distinct subsamples across labelers.
        for a in 0..ens.k() {
            for b in a + 1..ens.k() {
                let (la, lb) = (&ens.labelers[a], &ens.labelers[b]);
                assert!(
                    la.instance_indices != lb.instance_indices
                        || la.feature_indices != lb.feature_indices
                );
            }
        }
    }

    #[test]
    fn ensemble_is_deterministic_and_reloads_exactly() {
        let (train, test) = make_synthetic_radial(200, 100, 5, 1).unwrap();
        for family in [LabelerFamily::Tree, LabelerFamily::Forest { trees: 5 }] {
            let cfg = EnsembleConfig { k: 8, family, seed: 42, ..Default::default() };
            let a = fit_ensemble(&train, &cfg).unwrap();
            let b = fit_ensemble(&train, &cfg).unwrap();
            let pa = a.predict_matrix(test.features().view()).unwrap();
            assert_eq!(pa, b.predict_matrix(test.features().view()).unwrap());
            let back = PseudoLabelEnsemble::from_json(&a.to_json().unwrap()).unwrap();
            assert_eq!(back, a);
        }
    }

    #[test]
    fn matrix_mean_and_empty_input() {
        let (train, test) = make_synthetic_radial(100, 50, 3, 2).unwrap();
        let ens = fit_ensemble(&train, &EnsembleConfig { k: 5, seed: 1, ..Default::default() }).unwrap();
        let m = ens.predict_matrix(test.features().view()).unwrap();
        let mean = ens.ensemble_mean(test.features().view()).unwrap();
        for i in 0..m.nrows() {
            assert_eq!(mean[i], m.row(i).sum() / 5.0);
            for k in 0..5 {
                let one = predict_one(&ens.labelers[k], test.row(i)).unwrap();
                assert_eq!(m[[i, k]], one as f64);
            }
        }
        let empty = Array2::<f64>::zeros((0, 3));
        assert_eq!(ens.predict_matrix(empty.view()).unwrap().dim(), (0, 5));
        assert!(ens.predict_matrix(Array2::zeros((2, 4)).view()).is_err());
    }

    #[test]
    fn unanimity_and_disagreement_means() {
        let ens = |trees: Vec<Tree>| PseudoLabelEnsemble {
            format_version: ENSEMBLE_FORMAT_VERSION,
            n_features: 1,
            config: EnsembleConfig::default(),
            labelers: trees.into_iter().map(|t| labeler(t, 1)).collect(),
        };
        let x = array![[0.3], [-2.0]];
        let all_one = ens(vec![Tree::constant(1.0); 3]);
        assert_eq!(all_one.ensemble_mean(x.view()).unwrap().to_vec(), vec![1.0, 1.0]);
        let split = ens(vec![Tree::constant(1.0), Tree::constant(0.0)]);
        assert_eq!(split.ensemble_mean(x.view()).unwrap().to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn rejects_single_class_and_zero_k() {
        let ds = Dataset::new(array![[1.0], [2.0]], vec![1, 1], None).unwrap();
        assert!(fit_ensemble(&ds, &EnsembleConfig::default()).is_err());
        let ds = Dataset::new(array![[1.0], [2.0]], vec![0, 1], None).unwrap();
        let cfg = EnsembleConfig { k: 0, ..Default::default() };
        assert!(fit_ensemble(&ds, &cfg).is_err());
    }

    /// Weighted Gini of every candidate split, computed from scratch.
    fn brute_min_impurity(x: ArrayView2<f64>, y: &[u8], rows: &[usize], feats: &[usize], min_leaf: usize) -> Option<f64> {
        let mut best: Option<f64> = None;
        for &f in feats {
            let mut vals: Vec<f64> = rows.iter().map(|&r| x[[r, f]]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let t = (w[0] + w[1]) / 2.0;
                let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[[i, f]] <= t);
                if l.len() < min_leaf || r.len() < min_leaf {
                    continue;
                }
                let g = |s: &[usize]| {
                    let p = s.iter().filter(|&&i| y[i] == 1).count() as f64 / s.len() as f64;
                    1.0 - p * p - (1.0 - p) * (1.0 - p)
                };
                let imp = (l.len() as f64 * g(&l) + r.len() as f64 * g(&r)) / rows.len() as f64;
                best = Some(best.map_or(imp, |b: f64| b.min(imp)));
            }
        }
        best
    }

    #[test]
    fn every_split_attains_exhaustive_minimum() {
        let mut rng = seed::rng(77);
        for trial in 0..40 {
            let n = rng.random_range(5..=50);
            let d = rng.random_range(1..=4);
            // Coarse grid values force plenty of ties.
            let x = Array2::from_shape_fn((n, d), |_| rng.random_range(0..6) as f64 * 0.5);
            let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let feats: Vec<usize> = (0..d).collect();
            let params = CartParams { max_depth: 4, min_leaf: 1 + trial % 3 };
            let tree = fit_tree(x.view(), &y, (0..n).collect(), &feats, params, None);
            // Re-derive each node's rows by routing the training set.
            let mut node_rows = vec![Vec::new(); tree.nodes.len()];
            for r in 0..n {
                let mut i = 0;
                loop {
                    node_rows[i].push(r);
                    match tree.nodes[i] {
                        TreeNode::Leaf { .. } => break,
                        TreeNode::Split { feature, threshold, left, right } => {
                            i = if x[[r, feature]] <= threshold { left } else { right };
                        }
                    }
                }
            }
            for (i, node) in tree.nodes.iter().enumerate() {
                if let TreeNode::Split { feature, threshold, left, .. } = *node {
                    let rows = &node_rows[i];
                    let want = brute_min_impurity(x.view(), &y, rows, &feats, params.min_leaf).unwrap();
                    let chosen = best_split(x.view(), &y, rows, &feats, params.min_leaf).unwrap();
                    assert_eq!((chosen.feature, chosen.threshold), (feature, threshold));
                    assert!((chosen.impurity - want).abs() < 1e-12);
                    assert!(node_rows[left].len() >= params.min_leaf);
                }
            }
        }
    }

    #[test]
    fn monotone_feature_transform_preserves_training_predictions() {
        let mut rng = seed::rng(5);
        for _ in 0..20 {
            let n = 30;
            let x = Array2::from_shape_fn((n, 3), |_| rng.random_range(-2.0..2.0));
            let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let tx = x.mapv(|v: f64| v.powi(3) + 2.0 * v);
            let params = CartParams { max_depth: 3, min_leaf: 1 };
            let a = fit_tree(x.view(), &y, (0..n).collect(), &[0, 1, 2], params, None);
            let b = fit_tree(tx.view(), &y, (0..n).collect(), &[0, 1, 2], params, None);
            for i in 0..n {
                assert_eq!(a.leaf_value(x.row(i)), b.leaf_value(tx.row(i)));
            }
        }
    }
}
