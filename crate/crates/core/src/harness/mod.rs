//! Configuration, checkpoints, pipeline stages, closed-loop evaluation,
//! reports and the command-line interface.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod pipeline;
pub mod report;
pub mod simulate;

pub use checkpoint::{load_policy, load_ssm, save_policy, save_ssm};
pub use config::{OptimizerConfig, PlantConfig, RunConfig, RunSection, Seeds};
pub use pipeline::{
    build_plant, evaluate, generate_datasets, identify, initial_policy, learn_policy,
    PolicySummary, SsmSummary,
};
pub use report::{render_summary, spread, summarize, EvalReport, Spread, SummaryRow};
pub use simulate::{
    build_eval_scenario, compute_metrics, simulate, BangBang, Controller, EvalConfig, EvalScenario,
    Metrics, PlantKind, Simulation, StepRecord,
};
