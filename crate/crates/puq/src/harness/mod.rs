//! Metrics, experiment configuration, orchestration, file formats and map
//! exports.

pub mod config;
pub mod export;
pub mod metrics;
pub mod pipeline;
pub mod tensor_file;

pub use config::{ExperimentConfig, PresetKind, Variant};
pub use metrics::{nrmse, ssim, MetricsRecord};
pub use pipeline::{directional_study, run_ablation, run_pipeline, run_sweep, SweepAxis};
pub use tensor_file::{load_tensor, save_tensor, TensorFile, TensorPayload};
