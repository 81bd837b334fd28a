//! Config-driven experiments: running agents over seeds, metrics, density
//! estimates, ground truth for the N-Chain, DP verification and plot data.

pub mod config;
pub mod density;
pub mod dpverify;
pub mod ground_truth;
pub mod metrics;
pub mod plotdata;
pub mod runner;

pub use config::{parse_config, parse_config_str, EnvSpec, EnvVariant, ExperimentConfig, KdeBandwidth, NamedAgent};
pub use density::{emit_density, scott_bandwidth};
pub use dpverify::{bound_violations, dp_verify, write_dp_trace, DpVerifyOptions};
pub use ground_truth::{ground_truth_nchain, monte_carlo_returns, ChainPath, Policy, Rollouts};
pub use metrics::{count_curve, optimal_count, oracle_line, w2_curve};
pub use plotdata::{plotdata, PlotReport};
pub use runner::{run_experiment, AgentSummary, ExperimentReport, RunOutcome, VariantReport};
