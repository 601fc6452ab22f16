//! Command-line pipeline around the `quadretarget` library: load inputs,
//! run the stages, write motions, metrics and a manifest.

pub mod config;
pub mod error;
mod pipeline;

pub use config::{Overrides, RunConfig};
pub use error::CliError;
pub use pipeline::{
    cmd_fixture, cmd_metrics, cmd_reconstruct, cmd_retarget, cmd_smr, cmd_tmr, load_robot, FixtureSpec, RunSummary,
};
