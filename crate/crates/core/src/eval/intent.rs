//! Change-of-intent study: the agent heads for one goal, switches to another
//! part-way, and each estimator's per-step goal guess is scored.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::agent::{command_vector, ScriptedAgent};
use super::maxent::maxent_ioc;
use crate::control::{AssistMode, ControllerConfig, SharedController};
use crate::data::sim::{norm, stream_rng, sub};
use crate::data::{history_features, Vec3};
use crate::error::{contract, Result};
use crate::model::RtModel;
use crate::predict::{goal_belief, predict_most_likely_batch, propagate_position_mixture};
use crate::scene::Scene;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntentTrajectory {
    pub positions: Vec<Vec3>,
    /// First step whose intended goal is `second_goal`.
    pub switch_step: usize,
    pub first_goal: usize,
    pub second_goal: usize,
}

impl IntentTrajectory {
    pub fn label(&self, step: usize) -> usize {
        if step < self.switch_step {
            self.first_goal
        } else {
            self.second_goal
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntentConfig {
    pub trajectories: usize,
    pub seed: u64,
    pub flip_prob: f64,
    /// Switch once this fraction of the distance to the first goal is covered.
    pub switch_range: (f64, f64),
    pub grasp_radius: f64,
    pub noise_levels: Vec<f64>,
    pub maxent_lambda: f64,
}

impl Default for IntentConfig {
    fn default() -> Self {
        Self {
            trajectories: 50,
            seed: 0,
            flip_prob: 0.1,
            switch_range: (0.4, 0.6),
            grasp_radius: 0.02,
            noise_levels: vec![0.0, 0.01, 0.02],
            maxent_lambda: super::maxent::DEFAULT_LAMBDA,
        }
    }
}

/// Teleoperated approaches that change goal part-way.
pub fn synthesize_intent_trajectories(scene: &Scene, cfg: &IntentConfig) -> Result<Vec<IntentTrajectory>> {
    let n_goals = scene.goals.len();
    if n_goals < 2 {
        return Err(contract("intent study needs at least two goals"));
    }
    let ctrl_cfg = ControllerConfig::default();
    let max_ticks = (60.0 / ctrl_cfg.dt) as usize;
    let mut out = Vec::with_capacity(cfg.trajectories);
    for i in 0..cfg.trajectories as u64 {
        let mut rng = stream_rng(cfg.seed, 3 * i);
        let first = rng.gen_range(0..n_goals);
        let second = (first + rng.gen_range(1..n_goals)) % n_goals;
        let frac = rng.gen_range(cfg.switch_range.0..=cfg.switch_range.1);
        let mut agent = ScriptedAgent::new(cfg.flip_prob, stream_rng(cfg.seed, 3 * i + 1));
        let mut ctrl = SharedController::new(ctrl_cfg.clone(), AssistMode::Teleop, scene.clone(), None)?;
        let (a, b) = (scene.goals[first].pos, scene.goals[second].pos);
        let d0 = norm(sub(a, scene.home));
        let mut positions = vec![scene.home];
        let mut switch_step = None;
        for _ in 0..max_ticks {
            let p = ctrl.position();
            if switch_step.is_none() && norm(sub(a, p)) <= (1.0 - frac) * d0 {
                switch_step = Some(positions.len() - 1);
            }
            let goal = if switch_step.is_some() { b } else { a };
            let out = ctrl.tick(command_vector(agent.command(p, goal)));
            positions.push(out.position);
            if switch_step.is_some() && norm(sub(out.position, b)) < cfg.grasp_radius {
                break;
            }
        }
        let switch_step = switch_step.ok_or_else(|| contract("agent never reached the switch point"))?;
        out.push(IntentTrajectory {
            positions,
            switch_step,
            first_goal: first,
            second_goal: second,
        });
    }
    Ok(out)
}

/// Index of the largest probability; ties go to the goal nearest `p`.
pub fn argmax_nearest(probs: &[f64], goals: &[Vec3], p: Vec3) -> usize {
    let best = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (0..probs.len())
        .filter(|&i| probs[i] == best)
        .min_by(|&a, &b| norm(sub(goals[a], p)).total_cmp(&norm(sub(goals[b], p))))
        .unwrap_or(0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Rt,
    Maxent,
}

/// Goal guesses at every step of `positions`, using the prefix up to that step.
pub fn estimate_goals(
    est: Estimator,
    positions: &[Vec3],
    scene: &Scene,
    model: Option<&RtModel>,
    lambda: f64,
) -> Result<Vec<usize>> {
    let goals = scene.goal_positions();
    match est {
        Estimator::Maxent => Ok((0..positions.len())
            .map(|t| {
                let probs = maxent_ioc(&positions[..=t], &goals, lambda);
                argmax_nearest(&probs, &goals, positions[t])
            })
            .collect()),
        Estimator::Rt => {
            let model = model.ok_or_else(|| contract("rt estimator needs a model"))?;
            let uniform = vec![1.0 / goals.len() as f64; goals.len()];
            let mut out: Vec<usize> = (0..positions.len().min(2))
                .map(|t| argmax_nearest(&uniform, &goals, positions[t]))
                .collect();
            let steps: Vec<usize> = (2..positions.len()).collect();
            for chunk in steps.chunks(128) {
                let feats: Vec<Vec<[f64; 9]>> = chunk
                    .iter()
                    .map(|&t| history_features(&positions[..=t], model.config.dt))
                    .collect();
                let refs: Vec<&[[f64; 9]]> = feats.iter().map(|f| f.as_slice()).collect();
                let origins: Vec<Vec3> = chunk.iter().map(|&t| positions[t]).collect();
                let rollouts = predict_most_likely_batch(model, &refs, &origins)?;
                for (r, &t) in rollouts.iter().zip(chunk) {
                    let pm = propagate_position_mixture(&r.mixtures, positions[t], model.config.dt, Some(scene.table_height));
                    let b = goal_belief(&pm, &goals, scene.table_height)?;
                    out.push(argmax_nearest(&b.probs, &goals, positions[t]));
                }
            }
            Ok(out)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntentReport {
    pub method: Estimator,
    /// All steps, noise-free.
    pub accuracy: f64,
    /// Pre-switch accuracy per noise level `(epsilon, accuracy)`.
    pub robustness: Vec<(f64, f64)>,
    /// Post-switch accuracy, noise-free.
    pub adaptability: f64,
}

/// Scores both estimators. Robustness-zone (pre-switch) positions receive
/// `U(-eps, eps)` noise per axis before estimation.
pub fn intent_change_experiment(
    model: &RtModel,
    scene: &Scene,
    trajs: &[IntentTrajectory],
    cfg: &IntentConfig,
) -> Result<Vec<IntentReport>> {
    let mut reports = Vec::new();
    for est in [Estimator::Rt, Estimator::Maxent] {
        let mut robustness = Vec::new();
        let mut accuracy = f64::NAN;
        let mut adaptability = f64::NAN;
        for (li, &eps) in cfg.noise_levels.iter().enumerate() {
            let (mut all, mut all_n, mut pre, mut pre_n, mut post, mut post_n) = (0, 0, 0, 0, 0, 0);
            for (ti, tr) in trajs.iter().enumerate() {
                let mut rng = stream_rng(cfg.seed ^ 0x5eed, (ti * 16 + li) as u64);
                let noisy: Vec<Vec3> = tr
                    .positions
                    .iter()
                    .enumerate()
                    .map(|(t, p)| {
                        if t < tr.switch_step && eps > 0.0 {
                            [
                                p[0] + rng.gen_range(-eps..=eps),
                                p[1] + rng.gen_range(-eps..=eps),
                                p[2] + rng.gen_range(-eps..=eps),
                            ]
                        } else {
                            *p
                        }
                    })
                    .collect();
                let guesses = estimate_goals(est, &noisy, scene, Some(model), cfg.maxent_lambda)?;
                for (t, &g) in guesses.iter().enumerate() {
                    let ok = usize::from(g == tr.label(t));
                    all += ok;
                    all_n += 1;
                    if t < tr.switch_step {
                        pre += ok;
                        pre_n += 1;
                    } else {
                        post += ok;
                        post_n += 1;
                    }
                }
            }
            let frac = |a: usize, n: usize| if n == 0 { f64::NAN } else { a as f64 / n as f64 };
            robustness.push((eps, frac(pre, pre_n)));
            if eps == 0.0 {
                accuracy = frac(all, all_n);
                adaptability = frac(post, post_n);
            }
        }
        reports.push(IntentReport {
            method: est,
            accuracy,
            robustness,
            adaptability,
        });
    }
    Ok(reports)
}
