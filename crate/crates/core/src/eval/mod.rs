//! Synthetic scenarios, replay and evaluation metrics.

mod harness;
mod metrics;
mod scenario;
mod throughput;

pub use harness::{
    alert_rate, benign_suite, build_report, day_collision_suite, evaluate_dir, evaluate_specs, night_collision_suite,
    run_scenario, run_streams, scenario_dirs, EvalReport, HarnessError, ScenarioOutcome, StratumReport,
};
pub use metrics::{
    confusion, format_truth, lead_time, metrics, parse_truth, ConfusionMatrix, EvalError, LeadTimeSummary, Metrics,
};
pub use scenario::{
    generate_scenario, GeneratedScenario, GroundTruth, LeadProfile, Lighting, ScenarioError, ScenarioKind,
    ScenarioSpec,
};
pub use throughput::{synthetic_load, throughput_bench, LoadSpec, ThroughputReport};
