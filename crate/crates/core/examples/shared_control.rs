//! Scripted operators pick up every cube of the default scene with and
//! without assistance. Pass a checkpoint to include the learned assistant.
//! Usage: `cargo run --release --example shared_control -- [model.ckpt]`.

use std::path::Path;
use std::sync::Arc;

use robot_trajectron::eval::autonomy::{scripted_autonomy_experiment, AutonomyConfig};
use robot_trajectron::eval::suite::autonomy_table;
use robot_trajectron::model::RtModel;
use robot_trajectron::scene::Scene;

fn main() -> robot_trajectron::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(p) => Some(Arc::new(RtModel::load(Path::new(&p))?)),
        None => None,
    };
    let cfg = AutonomyConfig {
        rounds: 5,
        ..AutonomyConfig::default()
    };
    let rows = scripted_autonomy_experiment(&Scene::default(), model, &cfg)?;
    print!("{}", autonomy_table(&rows));
    Ok(())
}
