//! Closed-loop flight: episodes, metrics and benchmark reports.

mod bench;
mod episode;
mod metrics;

pub use bench::{
    aggregate_rows, run_benchmark, Aggregate, BenchmarkReport, BenchmarkSpec, ReportRow, AGGREGATE_HEADER,
    REPORT_HEADER,
};
pub use episode::{
    body_state, camera_yaw, oracle_select, run_episode, run_episode_observed, select_anchor, EpisodeConfig,
    EpisodeResult, FailureCause, PlanFrame, SelectionMode, YAW_SPEED_THRESHOLD,
};
pub use metrics::{
    compute_metrics, log_from_csv, log_header, log_to_csv, metrics_line, sample_metrics, FlightLog, LogSample,
    Metrics, Piece,
};
