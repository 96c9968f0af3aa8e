//! Trains a small trajectory model and compares it with the vanilla LSTM
//! baseline on held-out windows. Takes a minute or two in release mode.
//! Usage: `cargo run --release --example train_model -- [out.ckpt]`.

use std::path::PathBuf;

use robot_trajectron::data::{generate_dataset, split_with_validation, GenConfig};
use robot_trajectron::eval::baseline::{train_baseline, VanillaLstm};
use robot_trajectron::eval::suite::{adefde_suite, adefde_table};
use robot_trajectron::model::{ModelConfig, RtModel};
use robot_trajectron::train::{train, TrainConfig, TrainOutputs};

fn main() -> robot_trajectron::Result<()> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("rt-small.ckpt"));

    let (data, _) = generate_dataset(&GenConfig { seed: 4, ..GenConfig::default() }, 600)?;
    let (train_set, val, test) = split_with_validation(&data);
    let cfg = TrainConfig {
        epochs: 5,
        batch: 64,
        windows_per_traj: 4,
        ..TrainConfig::default()
    };
    let model = RtModel::new(
        ModelConfig {
            hidden_size: 32,
            ..ModelConfig::default()
        },
        0,
    )?;
    let outputs = TrainOutputs {
        checkpoint: Some(out.clone()),
        report: None,
    };
    let result = train(model, &train_set, &val, &cfg, &outputs)?;
    for r in &result.report {
        println!("epoch {:>2}  loss {:>8.3}  val ADE {:.1} mm", r.epoch, r.train_loss, r.val_ade);
    }

    let (baseline, _) = train_baseline(VanillaLstm::new(32, 20, 0.05, 0)?, &train_set, &val, &cfg)?;
    let report = adefde_suite(&result.model, Some(&baseline), &test, 20, 0)?;
    print!("{}", adefde_table(&report));
    println!("best epoch {}, checkpoint at {}", result.best_epoch, out.display());
    Ok(())
}
