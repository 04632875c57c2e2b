//! One data-parallel training iteration per worker: host input path, compute,
//! and gradient collectives overlapped with the backward pass.

pub mod arch;
mod profile;
mod report;
mod sim;

pub use profile::{
    bucketize, derive_profile, preset, preset_names, Bucket, BucketPlan, ModelProfile, PresetSpec, MIB, PRESETS,
    PRESET_DIR_ENV,
};
pub use report::CostReport;
pub use sim::{
    fsdp_units, simulate_fsdp_iteration, simulate_iteration, CollectiveSpan, IterationTimeline, SimConfig, Simulation,
    Span,
};

use crate::channel::ChannelError;
use crate::collective::CollectiveError;
use crate::timing::TimingError;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("invalid profile `{name}`: {reason}")]
    InvalidProfile { name: String, reason: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Timing(#[from] TimingError),
    #[error("profile parse error: {0}")]
    Parse(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Aborted(#[from] CollectiveError),
    #[error("input transfer aborted: {0}")]
    Input(#[from] ChannelError),
    #[error("internal: {0}")]
    Internal(String),
}
