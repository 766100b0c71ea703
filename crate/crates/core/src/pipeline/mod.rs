//! Data handling, model assembly, training, dose-response estimation and
//! the per-ROI rotation driver.

pub mod config;
pub mod data;
pub mod model;
pub mod rotation;
pub mod train;

pub use config::{Config, Demographics};
pub use data::{split_dataset, Dataset, FeatureStats, NormStats, SubjectRecord};
pub use model::{assemble, bce_with_logit, loss, Batch, GvcnetModel, Network, Objective};
pub use rotation::{
    model_seed, read_curves_csv, rotate_one, run_rotation, summarize, write_curves_csv, RoiResult,
    RoiSummary,
};
pub use train::{
    adrf_at, check_positivity, classify, estimate_adrf, estimate_ite, positivity_by_roi, train,
    AdrfCurve, History, PositivityReport,
};
