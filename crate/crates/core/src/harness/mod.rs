//! Train/test protocols, the training loop, repeated runs and reports.

pub mod data;
pub mod experiment;
pub mod report;
pub mod setting;
pub mod train;

pub use data::Dataset;
pub use experiment::{collect_runs, run_experiment, run_once, write_run, ExperimentOutcome, ExperimentPlan, MetricsRecord};
pub use report::{mean_std, read_csv, write_csv, write_curves, ReportRow};
pub use setting::{make_setting, ClipKey, Manifests, Origin, SampleRef, Sampling, Setting, SplitPlan, TestSet};
pub use train::{clips_per_batch, evaluate, train, EpochRecord, EvalResult, TrainOptions, TrainOutcome};
