//! Declarative scenarios: JSON configs describing a robot, a controller and
//! a run, executed into trajectory logs and metric summaries.

mod config;
mod export;
mod locate;
mod run;

pub use config::{
    parse_config, parse_config_str, BuiltController, BuiltScenario, CertificationConfig, ChainConfig, ContactConfig,
    ControllerConfig, CouplingConfig, ForcePidSection, Gain, IdentificationConfig, InitialState, LinkConfig, Pulse,
    RegulatorSection, RobotConfig, ScenarioConfig, ScenarioKind, Sinusoid,
};
pub use export::{csv_header, export_csv, read_csv_log, summary_path, write_fits, write_report};
pub use locate::{line_of, FieldPath, PathSeg};
pub use run::{run_scenario, MetricsSummary, ScenarioReport, LYAPUNOV_TOLERANCE};
