//! Scenario configuration, truth generation, the assimilation driver and its
//! on-disk outputs.

pub mod config;
pub mod output;
pub mod run;
pub mod truth;

pub use config::{
    advection_scenario, burgers_dense_scenario, burgers_sparse_scenario, ScenarioConfig, TruthSection,
    WeightingSection,
};
pub use output::{emit_plot_data, load_run_dir, write_run_dir, write_truth_dir, PlotRequest};
pub use run::{run_scenario, RunRecord, Snapshot};
pub use truth::{analytic_advection, generate_truth, ReferenceRun, TruthStream};
