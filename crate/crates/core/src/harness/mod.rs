//! Experiment harness: TOML configuration, kernel density estimates,
//! energy and radius reports, timing, the property suite and the CLI.

pub mod bench;
pub mod cli;
pub mod config;
pub mod kde;
pub mod reports;
pub mod verify;

pub use bench::{bench_timing, TimingRow};
pub use config::{DiagnosticsConfig, E2ASection, RunConfig, OUT_DIR_ENV};
pub use kde::{kde, kde_auto, linspace, silverman_bandwidth, trapezoid, KdeCurve, ZERO_VARIANCE_BANDWIDTH};
pub use reports::{
    energy_shift_report, kde_family, radius_trace, radius_trace_report, EnergyShiftReport, RadiusTracePoint,
    RadiusTraceReport, SplitEnergy,
};
pub use verify::{verify_all, PropertyResult};
