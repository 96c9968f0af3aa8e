//! Scripted shared-autonomy rounds: a noisy joystick agent visits every goal
//! of the scene once per round under each assistance mode.

use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::agent::{command_vector, ScriptedAgent};
use crate::control::{AssistMode, ControllerConfig, SharedController};
use crate::data::sim::{norm, stream_rng, sub};
use crate::error::Result;
use crate::model::RtModel;
use crate::scene::Scene;

#[derive(Clone, Debug, PartialEq)]
pub struct AutonomyConfig {
    pub rounds: usize,
    pub seed: u64,
    pub flip_prob: f64,
    /// Distance at which the grasp triggers, metres.
    pub grasp_radius: f64,
    /// Per-goal time limit, seconds.
    pub timeout: f64,
    pub controller: ControllerConfig,
}

impl Default for AutonomyConfig {
    fn default() -> Self {
        Self {
            rounds: 20,
            seed: 0,
            flip_prob: 0.1,
            grasp_radius: 0.02,
            timeout: 60.0,
            controller: ControllerConfig::default(),
        }
    }
}

/// One completed round (all goals reached).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundResult {
    pub time: f64,
    pub inputs: usize,
    pub path_length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub mode: AssistMode,
    pub completed: usize,
    pub discarded: usize,
    pub time_mean: f64,
    pub time_std: f64,
    pub inputs_mean: f64,
    pub inputs_std: f64,
    pub path_mean: f64,
    pub path_std: f64,
    pub rounds: Vec<RoundResult>,
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    if n == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.clone().sum::<f64>() / n;
    let v = xs.map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Runs one round. Every goal starts from the home pose with a cleared
/// history. Returns `None` when some goal is not reached in time.
pub fn run_round(
    mode: AssistMode,
    scene: &Scene,
    model: Option<Arc<RtModel>>,
    cfg: &AutonomyConfig,
    round: u64,
) -> Result<Option<RoundResult>> {
    let mut order: Vec<usize> = (0..scene.goals.len()).collect();
    order.shuffle(&mut stream_rng(cfg.seed, 2 * round));
    let mut agent = ScriptedAgent::new(cfg.flip_prob, stream_rng(cfg.seed, 2 * round + 1));
    let mut ctrl = SharedController::new(cfg.controller.clone(), mode, scene.clone(), model)?;
    let dt = cfg.controller.dt;
    let max_ticks = (cfg.timeout / dt).round() as usize;
    let mut ticks = 0usize;
    let mut path = 0.0;
    for gi in order {
        let goal = scene.goals[gi].pos;
        ctrl.reset_to(scene.home);
        agent.release();
        let mut reached = false;
        for _ in 0..max_ticks {
            let p = ctrl.position();
            let cmd = agent.command(p, goal);
            let out = ctrl.tick(command_vector(cmd));
            ticks += 1;
            path += norm(sub(out.position, p));
            if norm(sub(out.position, goal)) < cfg.grasp_radius {
                reached = true;
                break;
            }
        }
        if !reached {
            return Ok(None);
        }
    }
    Ok(Some(RoundResult {
        time: ticks as f64 * dt,
        inputs: agent.inputs(),
        path_length: path,
    }))
}

/// Seeded rounds for one mode; round `i` uses the same goal order and agent
/// noise stream under every mode.
pub fn run_method(
    mode: AssistMode,
    scene: &Scene,
    model: Option<Arc<RtModel>>,
    cfg: &AutonomyConfig,
) -> Result<MethodSummary> {
    let mut rounds = Vec::new();
    let mut discarded = 0;
    for r in 0..cfg.rounds {
        match run_round(mode, scene, model.clone(), cfg, r as u64)? {
            Some(res) => rounds.push(res),
            None => discarded += 1,
        }
    }
    let (time_mean, time_std) = mean_std(rounds.iter().map(|r| r.time));
    let (inputs_mean, inputs_std) = mean_std(rounds.iter().map(|r| r.inputs as f64));
    let (path_mean, path_std) = mean_std(rounds.iter().map(|r| r.path_length));
    Ok(MethodSummary {
        mode,
        completed: rounds.len(),
        discarded,
        time_mean,
        time_std,
        inputs_mean,
        inputs_std,
        path_mean,
        path_std,
        rounds,
    })
}

/// Teleop-only, MaxEnt-assisted and (with a model) RT-assisted summaries.
pub fn scripted_autonomy_experiment(
    scene: &Scene,
    model: Option<Arc<RtModel>>,
    cfg: &AutonomyConfig,
) -> Result<Vec<MethodSummary>> {
    let mut out = vec![
        run_method(AssistMode::Teleop, scene, None, cfg)?,
        run_method(AssistMode::MaxentAssist, scene, None, cfg)?,
    ];
    if model.is_some() {
        out.push(run_method(AssistMode::RtAssist, scene, model, cfg)?);
    }
    Ok(out)
}
