//! Offline evaluations: displacement metrics, baselines and the scripted
//! shared-control and intent-change experiments.

pub mod agent;
pub mod autonomy;
pub mod baseline;
pub mod intent;
pub mod maxent;
pub mod metrics;
pub mod suite;

pub use metrics::{ade_fde, Metrics};
