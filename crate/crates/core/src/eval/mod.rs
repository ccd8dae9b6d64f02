//! Running the tracker over sequences and scoring it.

pub mod ablate;
pub mod bench;
pub mod metrics;
pub mod tracker;

pub use ablate::{run_ablation, trend, AblationGrid, SettingResult, TrendVerdict};
pub use bench::{bench_read, BenchRow, FeatureShape};
pub use metrics::{compute_metrics, EvalReport, Metrics, RunMeta, SequenceRow};
pub use tracker::{
    parse_results, track_sequence, write_results, MemorySize, ModelOverrides, TrackResult, TrackerConfig,
    TrackerSession,
};
