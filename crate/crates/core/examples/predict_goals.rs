//! Follows a straight approach toward one cube and prints, at a few points
//! along the way, the predicted end point and the goal belief.
//! Usage: `cargo run --release --example predict_goals -- model.ckpt`
//! (see the `train_model` example for producing a checkpoint).

use std::path::Path;

use robot_trajectron::data::history_features;
use robot_trajectron::model::RtModel;
use robot_trajectron::predict::{goal_belief, predict_most_likely, propagate_position_mixture};
use robot_trajectron::scene::Scene;

fn main() -> robot_trajectron::Result<()> {
    let Some(ckpt) = std::env::args().nth(1) else {
        eprintln!("usage: predict_goals <checkpoint>");
        std::process::exit(2);
    };
    let model = RtModel::load(Path::new(&ckpt))?;
    let scene = Scene::default();
    let goals = scene.goal_positions();
    let target = goals[2];
    let dt = model.config.dt;

    // Constant-speed straight line from home to the blue cube.
    let d: Vec<f64> = (0..3).map(|i| target[i] - scene.home[i]).collect();
    let len = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    let steps = (len / (0.1 * dt)).ceil() as usize;
    let path: Vec<[f64; 3]> = (0..=steps)
        .map(|k| {
            let s = k as f64 / steps as f64;
            [scene.home[0] + s * d[0], scene.home[1] + s * d[1], scene.home[2] + s * d[2]]
        })
        .collect();

    println!("{:>6}  {:>26}  goal probabilities ({})", "done", "predicted end", scene.goals.iter().map(|g| g.id.as_str()).collect::<Vec<_>>().join(" "));
    for k in (2..path.len()).step_by(steps / 8) {
        let x = history_features(&path[..=k], dt);
        let r = predict_most_likely(&model, &x, path[k])?;
        let pm = propagate_position_mixture(&r.mixtures, path[k], dt, Some(scene.table_height));
        let b = goal_belief(&pm, &goals, scene.table_height)?;
        let end = r.positions.last().unwrap();
        let probs: Vec<String> = b.probs.iter().map(|p| format!("{p:.2}")).collect();
        println!(
            "{:>5.0}%  ({:>6.3}, {:>6.3}, {:>6.3})  {}{}",
            100.0 * k as f64 / steps as f64,
            end[0],
            end[1],
            end[2],
            probs.join(" "),
            if b.low_confidence { "  (low confidence)" } else { "" }
        );
    }
    Ok(())
}
