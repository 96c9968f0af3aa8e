//! Generates simulated reach trajectories and writes them as line-delimited
//! JSON. Usage: `cargo run --example generate_dataset -- [count] [out.jsonl]`.

use std::path::PathBuf;

use robot_trajectron::data::{generate_dataset, save_dataset, split_with_validation, GenConfig};

fn main() -> robot_trajectron::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("reach.jsonl"));

    let (trajs, regenerated) = generate_dataset(&GenConfig::default(), n)?;
    let steps: Vec<usize> = trajs.iter().map(|t| t.positions.len()).collect();
    let mean = steps.iter().sum::<usize>() as f64 / steps.len() as f64;
    println!(
        "{n} trajectories, {:.1} steps on average (min {}, max {}), {regenerated} regenerated",
        mean,
        steps.iter().min().unwrap(),
        steps.iter().max().unwrap()
    );
    let (train, val, test) = split_with_validation(&trajs);
    println!("split: {} train / {} validation / {} test", train.len(), val.len(), test.len());
    save_dataset(&trajs, &out)?;
    println!("wrote {}", out.display());
    Ok(())
}
