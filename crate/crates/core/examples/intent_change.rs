//! Synthesises approaches that switch target half-way and scores how often
//! the MaxEnt estimator names the intended cube before and after the switch.

use robot_trajectron::eval::intent::{estimate_goals, synthesize_intent_trajectories, Estimator, IntentConfig};
use robot_trajectron::scene::Scene;

fn main() -> robot_trajectron::Result<()> {
    let scene = Scene::default();
    let cfg = IntentConfig {
        trajectories: 10,
        ..IntentConfig::default()
    };
    let trajs = synthesize_intent_trajectories(&scene, &cfg)?;
    for (i, t) in trajs.iter().enumerate() {
        let guesses = estimate_goals(Estimator::Maxent, &t.positions, &scene, None, cfg.maxent_lambda)?;
        let (mut pre, mut post) = (0usize, 0usize);
        for (step, &g) in guesses.iter().enumerate() {
            if g == t.label(step) {
                if step < t.switch_step {
                    pre += 1;
                } else {
                    post += 1;
                }
            }
        }
        let n_post = t.positions.len() - t.switch_step;
        println!(
            "#{i:<2} {} -> {} at step {:>3}/{:<3}  before {:>5.1}%  after {:>5.1}%",
            scene.goals[t.first_goal].id,
            scene.goals[t.second_goal].id,
            t.switch_step,
            t.positions.len(),
            100.0 * pre as f64 / t.switch_step as f64,
            100.0 * post as f64 / n_post as f64
        );
    }
    Ok(())
}
