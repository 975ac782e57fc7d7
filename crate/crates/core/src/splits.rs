//! Out-of-distribution splits: group-column holdouts and the
//! leave-one-cluster-out protocol built on k-means over latent positives.

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::latent::LatentMap;
use crate::metrics::EvalReport;
use crate::seed;

pub const KMEANS_TOL: f64 = 1e-6;
pub const KMEANS_MAX_ITER: usize = 100;

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the closest centroid, lowest id on ties, with its squared
/// distance.
pub fn nearest_centroid(centroids: ArrayView2<'_, f64>, x: ArrayView1<'_, f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

pub fn assign(centroids: ArrayView2<'_, f64>, z: ArrayView2<'_, f64>) -> Vec<usize> {
    z.rows().into_iter().map(|r| nearest_centroid(centroids, r).0).collect()
}

/// Sum of squared distances of every row to its assigned centroid.
pub fn objective(centroids: ArrayView2<'_, f64>, z: ArrayView2<'_, f64>, assignment: &[usize]) -> f64 {
    z.rows()
        .into_iter()
        .zip(assignment)
        .map(|(r, &a)| sq_dist(r, centroids.row(a)))
        .sum()
}

/// Per-cluster means; `None` for clusters with no members.
pub fn cluster_means(z: ArrayView2<'_, f64>, assignment: &[usize], k: usize) -> Vec<Option<Vec<f64>>> {
    let mut sums = vec![vec![0.0; z.ncols()]; k];
    let mut counts = vec![0usize; k];
    for (r, &a) in z.rows().into_iter().zip(assignment) {
        counts[a] += 1;
        sums[a].iter_mut().zip(r.iter()).for_each(|(s, v)| *s += v);
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| (c > 0).then(|| s.into_iter().map(|v| v / c as f64).collect()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Array2<f64>,
    pub assignment: Vec<usize>,
    /// Objective after each assignment step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

fn kmeans_pp(z: ArrayView2<'_, f64>, k: usize, rng: &mut seed::Rng) -> Array2<f64> {
    let n = z.nrows();
    let mut centroids = Array2::zeros((k, z.ncols()));
    centroids.row_mut(0).assign(&z.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = z.rows().into_iter().map(|r| sq_dist(r, centroids.row(0))).collect();
    for j in 1..k {
        let pick = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // Every point already coincides with a centroid.
            Err(_) => rng.random_range(0..n),
        };
        centroids.row_mut(j).assign(&z.row(pick));
        for (i, r) in z.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, centroids.row(j)));
        }
    }
    centroids
}

/// Lloyd's algorithm from k-means++ seeds. Stops once no centroid moves
/// more than [`KMEANS_TOL`] or after [`KMEANS_MAX_ITER`] updates. A cluster
/// left empty is reseeded at the point farthest from its own centroid.
pub fn kmeans(z: ArrayView2<'_, f64>, k: usize, seed: u64) -> Result<KMeans> {
    let n = z.nrows();
    if k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    if n < k {
        return Err(Error::InvalidData(format!("k-means needs at least {k} points, got {n}")));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite k-means input".into()));
    }
    let mut rng = seed::rng(seed);
    let mut centroids = kmeans_pp(z, k, &mut rng);
    let mut trace = Vec::new();
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITER {
        let assignment = assign(centroids.view(), z);
        trace.push(objective(centroids.view(), z, &assignment));
        let means = cluster_means(z, &assignment, k);
        let mut next = centroids.clone();
        let mut taken = BTreeSet::new();
        for (j, m) in means.iter().enumerate() {
            match m {
                Some(m) => next.row_mut(j).assign(&ArrayView1::from(m.as_slice())),
                None => {
                    let far = (0..n)
                        .filter(|i| !taken.contains(i))
                        .map(|i| (i, sq_dist(z.row(i), centroids.row(assignment[i]))))
                        .fold((usize::MAX, -1.0), |b, c| if c.1 > b.1 { c } else { b })
                        .0;
                    taken.insert(far);
                    next.row_mut(j).assign(&z.row(far));
                }
            }
        }
        let shift = (&next - &centroids)
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt())
            .fold(0.0f64, f64::max);
        centroids = next;
        iterations += 1;
        if shift < KMEANS_TOL {
            break;
        }
    }
    let assignment = assign(centroids.view(), z);
    trace.push(objective(centroids.view(), z, &assignment));
    Ok(KMeans { centroids, assignment, objective_trace: trace, iterations })
}

/// Clusters over latent positives, with every instance attached to its
/// nearest centroid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub centroids: Array2<f64>,
    pub k: usize,
    pub assignment: Vec<usize>,
}

impl ClusterModel {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        self.assignment.iter().for_each(|&a| sizes[a] += 1);
        sizes
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == cluster).collect()
    }
}

pub fn cluster_split(ds: &Dataset, latent: &LatentMap, k: usize, seed: u64) -> Result<ClusterModel> {
    let z = latent.encode(ds.features().view())?;
    let pos: Vec<usize> = (0..ds.n_rows()).filter(|&i| ds.labels()[i] == 1).collect();
    if pos.len() < k {
        return Err(Error::InvalidData(format!(
            "need at least {k} positives to form {k} clusters, got {}",
            pos.len()
        )));
    }
    let zp = z.select(Axis(0), &pos);
    let km = kmeans(zp.view(), k, seed)?;
    let assignment = assign(km.centroids.view(), z.view());
    let model = ClusterModel { centroids: km.centroids, k, assignment };
    let mut pos_counts = vec![0usize; k];
    pos.iter().for_each(|&i| pos_counts[model.assignment[i]] += 1);
    if let Some(j) = pos_counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidData(format!(
            "cluster {j} has no positives; the positives have fewer than {k} distinct latent points"
        )));
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub id: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Fold `j` tests cluster `j` and trains on every other instance.
pub fn leave_one_out_folds(model: &ClusterModel) -> Result<Vec<Fold>> {
    let sizes = model.cluster_sizes();
    if let Some(j) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::InvalidData(format!("cluster {j} is empty")));
    }
    Ok((0..model.k)
        .map(|j| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..model.assignment.len()).partition(|&i| model.assignment[i] == j);
            Fold { id: j, train, test }
        })
        .collect())
}

/// Instances whose group id is in `holdout` go to test, the rest to train.
pub fn column_split(ds: &Dataset, holdout: &[i64]) -> Result<(Vec<usize>, Vec<usize>)> {
    let group = ds
        .group()
        .ok_or_else(|| Error::Config("column split needs a group column".into()))?;
    let holdout: BTreeSet<i64> = holdout.iter().copied().collect();
    let (test, train): (Vec<usize>, Vec<usize>) = (0..ds.n_rows()).partition(|&i| holdout.contains(&group[i]));
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidData(format!(
            "column split leaves an empty side ({} train, {} test)",
            train.len(),
            test.len()
        )));
    }
    Ok((train, test))
}

/// `index,fold,role` rows, one per instance per fold.
pub fn folds_csv(folds: &[Fold]) -> String {
    let mut rows: Vec<(usize, usize, &str)> = Vec::new();
    for f in folds {
        rows.extend(f.train.iter().map(|&i| (i, f.id, "train")));
        rows.extend(f.test.iter().map(|&i| (i, f.id, "test")));
    }
    rows.sort();
    let mut out = String::from("index,fold,role\n");
    for (i, f, role) in rows {
        out.push_str(&format!("{i},{f},{role}\n"));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub size: usize,
    pub report: EvalReport,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::fit_pca_matrix;
    use ndarray::array;
    use proptest::prelude::*;
    use rand_distr::StandardNormal;

    fn blobs(n: usize, centers: &[[f64; 2]], sigma: f64, seed: u64) -> Array2<f64> {
        let mut rng = seed::rng(seed);
        Array2::from_shape_fn((n * centers.len(), 2), |(i, j)| {
            let e: f64 = rng.sample(StandardNormal);
            centers[i / n][j] + sigma * e
        })
    }

    #[test]
    fn one_cluster_is_the_mean() {
        let z = blobs(30, &[[1.0, -2.0]], 1.0, 1);
        let km = kmeans(z.view(), 1, 0).unwrap();
        let mean = z.mean_axis(Axis(0)).unwrap();
        assert!((&km.centroids.row(0) - &mean).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn separated_blobs_recover_their_means() {
        let (n, sigma) = (100, 0.5);
        let z = blobs(n, &[[-10.0, 0.0], [10.0, 5.0]], sigma, 2);
        let km = kmeans(z.view(), 2, 7).unwrap();
        let bound = 3.0 * sigma / (n as f64).sqrt();
        for b in 0..2 {
            let mean = z.slice(ndarray::s![b * n..(b + 1) * n, ..]).mean_axis(Axis(0)).unwrap();
            let (j, d) = nearest_centroid(km.centroids.view(), mean.view());
            assert!(d.sqrt() < 1e-9, "centroid {j} off by {}", d.sqrt());
            let blob_mean_err = (&km.centroids.row(j) - &mean).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(blob_mean_err < bound);
        }
    }

    #[test]
    fn needs_enough_points() {
        let z = array![[0.0], [1.0]];
        assert!(kmeans(z.view(), 3, 0).is_err());
        assert!(kmeans(z.view(), 0, 0).is_err());
    }

    #[test]
    fn identical_positives_single_cluster() {
        let x = array![[1.0, 2.0], [1.0, 2.0], [1.0, 2.0], [0.0, 0.0], [5.0, 1.0]];
        let ds = Dataset::new(x.clone(), vec![1, 1, 1, 0, 0], None).unwrap();
        let map = fit_pca_matrix(x.view(), 2).unwrap();
        let m = cluster_split(&ds, &map, 1, 0).unwrap();
        assert_eq!(m.assignment, vec![0; 5]);
        assert!(cluster_split(&ds, &map, 2, 0).is_err());
    }

    #[test]
    fn negative_on_centroid_joins_it() {
        let x = array![[0.0, 0.0], [0.0, 0.2], [9.0, 9.0], [9.0, 9.2], [9.0, 9.1], [0.0, 0.1]];
        let ds = Dataset::new(x.clone(), vec![1, 1, 1, 1, 0, 0], None).unwrap();
        let map = fit_pca_matrix(x.view(), 2).unwrap();
        let m = cluster_split(&ds, &map, 2, 3).unwrap();
        assert_eq!(m.assignment[4], m.assignment[2]);
        assert_eq!(m.assignment[5], m.assignment[0]);
        assert_ne!(m.assignment[0], m.assignment[2]);
    }

    #[test]
    fn ties_go_to_lowest_id() {
        let c = array![[1.0, 0.0], [-1.0, 0.0]];
        assert_eq!(nearest_centroid(c.view(), array![0.0, 3.0].view()).0, 0);
    }

    #[test]
    fn column_split_contracts() {
        let x = Array2::zeros((5, 1));
        let ds = Dataset::new(x, vec![0, 1, 0, 1, 0], Some(vec![3, 1, 3, 2, 1])).unwrap();
        let (train, test) = column_split(&ds, &[3]).unwrap();
        assert_eq!((train, test), (vec![1, 3, 4], vec![0, 2]));
        assert!(column_split(&ds, &[1, 2, 3]).is_err());
        assert!(column_split(&ds, &[9]).is_err());
        let nogroup = Dataset::new(Array2::zeros((2, 1)), vec![0, 1], None).unwrap();
        assert!(column_split(&nogroup, &[0]).is_err());
    }

    #[test]
    fn folds_csv_lists_every_role() {
        let m = ClusterModel { centroids: Array2::zeros((2, 1)), k: 2, assignment: vec![1, 0, 1] };
        let folds = leave_one_out_folds(&m).unwrap();
        assert_eq!(folds[0].test, vec![1]);
        assert_eq!(folds[1].train, vec![1]);
        let csv = folds_csv(&folds);
        assert_eq!(csv.lines().count(), 1 + 6);
        assert!(csv.contains("1,0,test\n") && csv.contains("1,1,train\n"));
        let bad = ClusterModel { centroids: Array2::zeros((3, 1)), k: 3, assignment: vec![1, 0, 1] };
        assert!(leave_one_out_folds(&bad).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn kmeans_invariants(seed in 0u64..1000, n in 3usize..40, k in 1usize..4) {
            prop_assume!(n >= k);
            let mut rng = seed::rng(seed);
            let z = Array2::from_shape_fn((n, 3), |_| rng.sample::<f64, _>(StandardNormal));
            let km = kmeans(z.view(), k, seed).unwrap();
            prop_assert!(km.objective_trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-12));
            prop_assert!(km.assignment.iter().all(|&a| a < k));
            prop_assert_eq!(&km, &kmeans(z.view(), k, seed).unwrap());
            prop_assert_eq!(&km.assignment, &assign(km.centroids.view(), z.view()));
        }

        #[test]
        fn folds_partition(assignment in proptest::collection::vec(0usize..4, 4..50)) {
            let k = 4;
            prop_assume!((0..k).all(|j| assignment.contains(&j)));
            let n = assignment.len();
            let m = ClusterModel { centroids: Array2::zeros((k, 1)), k, assignment };
            let folds = leave_one_out_folds(&m).unwrap();
            prop_assert_eq!(folds.len(), k);
            let mut seen = vec![0; n];
            for f in &folds {
                prop_assert_eq!(f.train.len() + f.test.len(), n);
                let mut all: Vec<usize> = f.train.iter().chain(&f.test).copied().collect();
                all.sort();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                f.test.iter().for_each(|&i| seen[i] += 1);
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }
    }
}
