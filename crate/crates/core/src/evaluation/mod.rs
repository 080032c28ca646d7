//! Benchmark harness: annotated datasets, the baseline and status-fusion
//! conditions, accuracy and report tables.

mod dataset;
mod metrics;
mod runner;
mod synth;
mod youcook2;

pub use dataset::{load_dataset, Dataset, DatasetAnnotation, Segment, FRAMES_DIR, SYNTHETIC_FILE, VIDEOS_DIR};
pub use metrics::{
    accuracy, aggregate_table, condition_report, mean, render_table, sample_sd, ConditionReport, EvalReport,
    StepAccuracy, TableRow, VideoAccuracy,
};
pub use runner::{
    run_condition, Condition, ConditionRun, DirFrameSource, FrameSource, MemoryFrameSource, Prediction, RunConfig,
    ScoreLogRecord, VideoRun,
};
pub use synth::{generate_benchmark, BenchmarkConfig};
pub use youcook2::import_youcook2;
