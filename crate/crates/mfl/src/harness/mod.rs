//! Experiment runner: phase-diagram sweeps, Binder aggregation, coverage
//! experiments and threshold tables, with deterministic CSV/JSON output.

pub mod config;
pub mod experiments;
pub mod records;

pub use config::{parse_quad, Algorithm, AmpOverrides, ExperimentConfig, NmfOverrides};
pub use experiments::{
    binder_from_runs, coverage_sweep, jobs, run_coverage, run_phase_diagram, run_replicate, run_sweep,
    run_threshold_table, threshold_table, Job,
};
pub use records::{RunRecord, SCHEMA_LINE};
