//! Centered PCA latent space and the radial expansion operator.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seed;

/// Linear encoder/decoder pair `z = (x - mean) Cᵀ`, `x = z C + mean`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentMap {
    pub mean: Array1<f64>,
    /// s×d, orthonormal rows.
    pub components: Array2<f64>,
    /// Non-increasing sample variances along each component.
    pub explained_variance: Array1<f64>,
}

/// `min(128, n - 1, d)`.
pub fn default_components(n: usize, d: usize) -> usize {
    128.min(n.saturating_sub(1)).min(d)
}

pub fn fit_pca(ds: &Dataset, s: usize) -> Result<LatentMap> {
    fit_pca_matrix(ds.features().view(), s)
}

/// PCA through the SVD of the centered data matrix. Each component is
/// oriented so that its largest-magnitude entry is positive.
pub fn fit_pca_matrix(x: ArrayView2<'_, f64>, s: usize) -> Result<LatentMap> {
    let (n, d) = x.dim();
    if n < 2 {
        return Err(Error::InvalidData("PCA needs at least two rows".into()));
    }
    if s == 0 || s > (n - 1).min(d) {
        return Err(Error::Config(format!(
            "component count {s} outside [1, {}]",
            (n - 1).min(d)
        )));
    }
    let mean = x.mean_axis(Axis(0)).expect("n >= 2");
    let centered = &x - &mean;
    let m = DMatrix::from_fn(n, d, |i, j| centered[[i, j]]);
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");

    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));

    let mut components = Array2::zeros((s, d));
    let mut explained_variance = Array1::zeros(s);
    for (row, &idx) in order.iter().take(s).enumerate() {
        let mut v: Vec<f64> = (0..d).map(|j| v_t[(idx, j)]).collect();
        let pivot = v
            .iter()
            .enumerate()
            .fold(0, |best, (j, x)| if x.abs() > v[best].abs() { j } else { best });
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.row_mut(row).assign(&Array1::from(v));
        let sv = svd.singular_values[idx];
        explained_variance[row] = sv * sv / (n - 1) as f64;
    }
    Ok(LatentMap { mean, components, explained_variance })
}

impl LatentMap {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.components.nrows()
    }

    pub fn encode(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension { expected: self.input_dim(), got: x.ncols() });
        }
        Ok((&x - &self.mean).dot(&self.components.t()))
    }

    pub fn decode(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.latent_dim() {
            return Err(Error::Dimension { expected: self.latent_dim(), got: z.ncols() });
        }
        Ok(z.dot(&self.components) + &self.mean)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionConfig {
    pub sigma: f64,
    pub seed: u64,
}

impl ExpansionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("expansion sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Scales row `i` by `1 + |ε_i|`, `ε_i ~ N(0, σ²)`.
pub fn expand(z: ArrayView2<'_, f64>, cfg: &ExpansionConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    let mut rng = seed::rng(cfg.seed);
    Ok(expand_with(z, cfg.sigma, &mut rng))
}

pub(crate) fn expand_with(z: ArrayView2<'_, f64>, sigma: f64, rng: &mut seed::Rng) -> Array2<f64> {
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    let mut out = z.to_owned();
    for mut row in out.rows_mut() {
        let scale = 1.0 + normal.sample(rng).abs();
        row.mapv_inplace(|v| v * scale);
    }
    out
}
