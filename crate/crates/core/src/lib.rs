//! Synthetic categorical survey microdata by minus-one data prediction.
//!
//! Every question's response is predicted from the same respondent's answers
//! to all *other* questions, and the resulting per-question probabilities are
//! sampled to produce a synthetic record. The pipeline is:
//!
//! 1. [`schema`]: infer a [`CategoricalSchema`] from a raw table and encode
//!    rows as block one-hot vectors.
//! 2. [`dataset`]: hold the [`ResponseMatrix`], crosstabulate it, bootstrap it.
//! 3. [`model`]: a [`MultiBladeModel`] of masked (non-self-predicting)
//!    logistic blades mixed per row by a small gating network.
//! 4. [`training`]: exact gradients and the MSE-then-z-value schedule.
//! 5. [`synthesis`]: sampling with entropy accounting and the post-processes
//!    (randomized responses, structural-zero removal, two-instance selection).
//! 6. [`metrics`] and [`privacy`]: crosstab accuracy and empirical privacy.
//!
//! [`testbed`] generates mixture populations with known conditional structure.

pub mod dataset;
pub mod error;
pub mod layout;
pub mod metrics;
pub mod model;
pub mod privacy;
pub mod rng;
pub mod schema;
pub mod synthesis;
pub mod testbed;
pub mod training;
mod binio;

pub use dataset::{Crosstab, ResponseMatrix};
pub use error::{Error, Result};
pub use layout::BlockLayout;
pub use metrics::{AggregateAccuracy, CellMetric, MetricConfig};
pub use model::{GatingNet, MaskedAffine, MultiBladeModel, ProbabilityMatrix};
pub use privacy::PrivacyReport;
pub use schema::{CategoricalSchema, QuestionKind, QuestionSpec};
pub use synthesis::{CellWeight, SynthesisConfig, SynthesisResult, Threshold};
pub use training::{GradientSet, LossKind, TrainConfig};
