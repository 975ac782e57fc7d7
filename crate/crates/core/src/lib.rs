//! Extrapolatory pseudo-label matching for binary classification under
//! single-source distribution shift.
//!
//! The pipeline fits a centered PCA latent space, a diverse ensemble of
//! tree pseudo-labelers on instance/feature subsamples, and a multi-head
//! network trained to match every labeler on both the training points and
//! radially expanded copies of them. Deployment bags the ensemble mean with
//! the mean head probability.
//!
//! Alongside the method live the evaluation tools used to judge it:
//! truncated precision-recall areas, AUROC, enrichment factors, bootstrap
//! predictive variance and leave-one-cluster-out splits.

pub mod data;
pub mod error;
pub mod experiment;
pub mod latent;
pub mod metrics;
pub mod model;
pub mod pseudolabel;
pub mod seed;
pub mod splits;

pub use data::{Dataset, SubsampleSpec};
pub use error::{Error, Result};
pub use latent::{ExpansionConfig, LatentMap};
pub use metrics::{EvalReport, MetricConfig, ScoredSet};
pub use model::{Bundle, ExplorNet, LossMode, Method, NetConfig, TrainConfig};
pub use pseudolabel::{EnsembleConfig, PseudoLabelEnsemble, PseudoLabeler};
