//! Reproducible experiment runner: data sources, pipelines, and
//! CSV / JSON-lines / PGM / checkpoint outputs.

pub mod config;
pub mod data;
pub mod pgm;
pub mod run;

pub use config::{Command, DataSpec, EngineKind, ExperimentConfig, InferenceSpec, ModelSpec};
pub use data::{gen_ar1, gen_deep_dataset, gen_linear_dataset, gen_moving_square_video, load_patches, Dataset};
pub use pgm::{center_surround_fraction, render_filter_grid, GrayImage};
pub use run::{compare_inference, exit_code, run_config, run_experiment, Comparison, RunReport};
