//! Workload generation, experiment schedules, metrics and report output.

pub mod analytics;
pub mod driver;
pub mod metrics;
pub mod report;
pub mod workload;

pub use driver::{parse_range, run, run_many, run_seeds, security_run, sweep, SecurityReport, SweepDimension, Verdict};
pub use metrics::MetricsReport;
pub use workload::{WorkloadKind, WorkloadSpec};
