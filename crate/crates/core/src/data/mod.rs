//! Synthetic reach trajectories, featurization and dataset files.

pub mod dataset;
pub mod features;
pub mod sim;

use serde::{Deserialize, Serialize};

pub use dataset::{load_dataset, read_dataset, save_dataset, split, split_with_validation, write_dataset};
pub use features::{featurize, history_features, integrate, FeaturizedSample};
pub use sim::{generate_dataset, generate_trajectory, GenConfig, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: u64,
    pub dt: f64,
    pub table_height: f64,
    pub target: Vec3,
    pub positions: Vec<Vec3>,
}
