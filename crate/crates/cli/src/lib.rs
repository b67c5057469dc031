//! Configuration-driven front end for `limitop`: strict JSON configs,
//! deterministic JSON reports with CSV side files.

pub mod config;
pub mod report;
pub mod run;

pub use config::{parse_config, AnalysisConfig, ConfigErrors};
pub use run::{run, RunOutput, SetupError};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const INVARIANT: i32 = 3;
}
