//! Shared control: a goal attraction field and a trajectory following field,
//! each gated by its agreement with the user command, soft-switched with the
//! user velocity.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::sim::{dot, norm, sub};
use crate::data::{history_features, Vec3};
use crate::error::{contract, Result};
use crate::eval::maxent::{maxent_ioc, path_length, DEFAULT_LAMBDA};
use crate::model::RtModel;
use crate::predict::{goal_belief, predict_most_likely, propagate_position_mixture, GoalBelief, PositionMixture};
use crate::scene::Scene;

const MIN_DISTANCE: f64 = 1e-3;
const MIN_NORM: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// Amplification of the goal probability.
    pub gamma: f64,
    /// Cap on the goal weight.
    pub nu: f64,
    /// Floor on the trajectory weight.
    pub zeta: f64,
    /// Commanded speed, m/s.
    pub speed: f64,
    pub dt: f64,
    /// Feed the raw plane density at the goal into the goal weight instead
    /// of the normalised probability.
    pub raw_density: bool,
    pub maxent_lambda: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            nu: 0.1,
            zeta: 0.7,
            speed: 0.1,
            dt: 0.05,
            raw_density: false,
            maxent_lambda: DEFAULT_LAMBDA,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu <= 1.0) || !(0.0..=1.0).contains(&self.zeta) || !(self.gamma > 0.0) {
            return Err(contract("need nu in (0, 1], zeta in [0, 1], gamma > 0"));
        }
        if !(self.speed > 0.0 && self.dt > 0.0) {
            return Err(contract("speed and dt must be positive"));
        }
        Ok(())
    }
}

/// Every quantity of one control tick.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AssistState {
    pub v_u: Vec3,
    pub v_g: Vec3,
    pub v_tr: Vec3,
    pub v_r: Vec3,
    pub w_g: f64,
    pub w_tr: f64,
    pub a_g: f64,
    pub a_tr: f64,
    /// Agreement-scaled goal weight `sqrt(a_g w_g)`.
    pub w_g2: f64,
    /// Agreement-scaled trajectory weight `sqrt(a_tr w_tr)`.
    pub w_tr2: f64,
    pub active_goal: Option<usize>,
}

fn unit_towards(from: Vec3, to: Vec3) -> Vec3 {
    let d = sub(to, from);
    let n = norm(d);
    if n < MIN_DISTANCE {
        [0.0; 3]
    } else {
        [d[0] / n, d[1] / n, d[2] / n]
    }
}

/// Goal field toward the most probable goal (ties go to the nearest one).
/// Returns `(v_g, w_g, goal index)`.
pub fn goal_attraction(p: Vec3, belief: &GoalBelief, cfg: &ControllerConfig) -> Result<(Vec3, f64, usize)> {
    if belief.goals.is_empty() || belief.goals.len() != belief.probs.len() {
        return Err(contract("empty goal belief"));
    }
    let best = belief.probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let idx = (0..belief.goals.len())
        .filter(|&i| belief.probs[i] == best)
        .min_by(|&a, &b| {
            norm(sub(belief.goals[a], p)).total_cmp(&norm(sub(belief.goals[b], p)))
        })
        .expect("non-empty");
    let score = if cfg.raw_density {
        belief.densities[idx]
    } else {
        belief.probs[idx]
    };
    let w_g = (cfg.gamma * score).min(cfg.nu);
    Ok((unit_towards(p, belief.goals[idx]), w_g, idx))
}

/// Field toward the first predicted point, weighted by the predicted share
/// of the total path length, floored at `zeta`.
pub fn trajectory_following(p: Vec3, predicted: &[Vec3], l_past: f64, cfg: &ControllerConfig) -> Result<(Vec3, f64)> {
    let first = *predicted
        .first()
        .ok_or_else(|| contract("empty predicted path"))?;
    if !(l_past >= 0.0) {
        return Err(contract("l_past must be non-negative"));
    }
    let l_pred = norm(sub(first, p)) + path_length(predicted);
    let share = if l_past + l_pred > 0.0 {
        l_pred / (l_past + l_pred)
    } else {
        1.0
    };
    Ok((unit_towards(p, first), share.max(cfg.zeta)))
}

/// `max(cos(v_u, v), 0)`, zero for degenerate vectors.
pub fn agreement(v_u: Vec3, v: Vec3) -> f64 {
    let (nu, nv) = (norm(v_u), norm(v));
    if nu < MIN_NORM || nv < MIN_NORM {
        return 0.0;
    }
    (dot(v_u, v) / (nu * nv)).clamp(0.0, 1.0)
}

/// Field outputs feeding [`blend`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Fields {
    pub v_g: Vec3,
    pub w_g: f64,
    pub v_tr: Vec3,
    pub w_tr: f64,
    pub goal: Option<usize>,
}

/// Soft switch `v_r = (1 - w_g')(v_u + w_tr' v_tr) + w_g' v_g`, rescaled to
/// the commanded speed.
pub fn blend(v_u: Vec3, f: &Fields, cfg: &ControllerConfig) -> AssistState {
    let a_g = agreement(v_u, f.v_g);
    let a_tr = agreement(v_u, f.v_tr);
    let w_g2 = (a_g * f.w_g).sqrt();
    let w_tr2 = (a_tr * f.w_tr).sqrt();
    let mut v_r = [0.0; 3];
    for i in 0..3 {
        v_r[i] = (1.0 - w_g2) * (v_u[i] + w_tr2 * f.v_tr[i]) + w_g2 * f.v_g[i];
    }
    let n = norm(v_r);
    if n > 0.0 {
        v_r = [v_r[0] / n * cfg.speed, v_r[1] / n * cfg.speed, v_r[2] / n * cfg.speed];
    }
    AssistState {
        v_u,
        v_g: f.v_g,
        v_tr: f.v_tr,
        v_r,
        w_g: f.w_g,
        w_tr: f.w_tr,
        a_g,
        a_tr,
        w_g2,
        w_tr2,
        active_goal: f.goal,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssistMode {
    Teleop,
    RtAssist,
    MaxentAssist,
}

impl std::str::FromStr for AssistMode {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "teleop" => Ok(Self::Teleop),
            "rt-assist" => Ok(Self::RtAssist),
            "maxent-assist" => Ok(Self::MaxentAssist),
            _ => Err(contract(format!("unknown mode `{s}`"))),
        }
    }
}

impl std::fmt::Display for AssistMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Teleop => "teleop",
            Self::RtAssist => "rt-assist",
            Self::MaxentAssist => "maxent-assist",
        })
    }
}

/// Result of one [`SharedController::tick`].
#[derive(Clone, Debug, PartialEq)]
pub struct TickOutput {
    pub assist: AssistState,
    pub position: Vec3,
    pub belief: GoalBelief,
    pub predicted: Vec<Vec3>,
    pub position_mixture: Option<PositionMixture>,
    /// The predictor failed this tick and pure teleoperation was used.
    pub fallback: bool,
}

/// Tick-driven controller owning the end-effector position and the history
/// since motion onset.
#[derive(Clone, Debug)]
pub struct SharedController {
    pub cfg: ControllerConfig,
    pub mode: AssistMode,
    pub scene: Scene,
    model: Option<Arc<RtModel>>,
    position: Vec3,
    history: Vec<Vec3>,
}

impl SharedController {
    pub fn new(cfg: ControllerConfig, mode: AssistMode, scene: Scene, model: Option<Arc<RtModel>>) -> Result<Self> {
        cfg.validate()?;
        if mode == AssistMode::RtAssist && model.is_none() {
            return Err(contract("rt-assist mode needs a model checkpoint"));
        }
        let home = scene.home;
        Ok(Self {
            cfg,
            mode,
            scene,
            model,
            position: home,
            history: vec![home],
        })
    }

    pub fn position(&self) -> Vec3 {
        self.position
    }

    pub fn history(&self) -> &[Vec3] {
        &self.history
    }

    pub fn model(&self) -> Option<&Arc<RtModel>> {
        self.model.as_ref()
    }

    pub fn set_mode(&mut self, mode: AssistMode) -> Result<()> {
        if mode == AssistMode::RtAssist && self.model.is_none() {
            return Err(contract("rt-assist mode needs a model checkpoint"));
        }
        self.mode = mode;
        Ok(())
    }

    /// Moves to `pose` and clears the history.
    pub fn reset_to(&mut self, pose: Vec3) {
        self.position = pose;
        self.history = vec![pose];
    }

    /// Prediction and belief from the current history under the RT model.
    pub fn predict(&self) -> Result<(Vec<Vec3>, PositionMixture, GoalBelief)> {
        let model = self.model.as_ref().ok_or_else(|| contract("no model loaded"))?;
        let goals = self.scene.goal_positions();
        let x = history_features(&self.history, model.config.dt);
        let rollout = predict_most_likely(model, &x, self.position)?;
        let pm = propagate_position_mixture(&rollout.mixtures, self.position, model.config.dt, Some(self.scene.table_height));
        let belief = goal_belief(&pm, &goals, self.scene.table_height)?;
        Ok((rollout.positions, pm, belief))
    }

    fn fields(&self) -> Result<(Fields, GoalBelief, Vec<Vec3>, Option<PositionMixture>)> {
        let goals = self.scene.goal_positions();
        let p = self.position;
        match self.mode {
            AssistMode::Teleop => Ok((Fields::default(), GoalBelief::uniform(&goals), Vec::new(), None)),
            AssistMode::MaxentAssist => {
                let probs = maxent_ioc(&self.history, &goals, self.cfg.maxent_lambda);
                let belief = GoalBelief {
                    goals: goals.clone(),
                    densities: probs.clone(),
                    probs,
                    low_confidence: self.history.len() < 2,
                };
                let cfg = ControllerConfig {
                    raw_density: false,
                    ..self.cfg.clone()
                };
                let (v_g, w_g, goal) = goal_attraction(p, &belief, &cfg)?;
                Ok((
                    Fields {
                        v_g,
                        w_g,
                        goal: Some(goal),
                        ..Fields::default()
                    },
                    belief,
                    Vec::new(),
                    None,
                ))
            }
            AssistMode::RtAssist => {
                if self.history.len() < 3 {
                    return Ok((Fields::default(), GoalBelief::uniform(&goals), Vec::new(), None));
                }
                let (pred, pm, belief) = self.predict()?;
                let (v_g, w_g, goal) = goal_attraction(p, &belief, &self.cfg)?;
                let (v_tr, w_tr) = trajectory_following(p, &pred, path_length(&self.history), &self.cfg)?;
                Ok((
                    Fields {
                        v_g,
                        w_g,
                        v_tr,
                        w_tr,
                        goal: Some(goal),
                    },
                    belief,
                    pred,
                    Some(pm),
                ))
            }
        }
    }

    /// Replaces the history with `positions`; the last one becomes the
    /// current position.
    pub fn load_history(&mut self, positions: &[Vec3]) -> Result<()> {
        let last = *positions.last().ok_or_else(|| contract("empty history"))?;
        self.position = last;
        self.history = positions.to_vec();
        Ok(())
    }

    /// Everything a tick under `user_dir` would compute, without moving.
    /// Only the direction of `user_dir` is used.
    pub fn assess(&self, user_dir: Vec3) -> TickOutput {
        let n = norm(user_dir);
        let v_u = if n > MIN_NORM {
            [user_dir[0] / n, user_dir[1] / n, user_dir[2] / n]
        } else {
            [0.0; 3]
        };
        let (fields, belief, predicted, pm, fallback) = match self.fields() {
            Ok((f, b, p, pm)) => (f, b, p, pm, false),
            Err(e) => {
                tracing::warn!(error = %e, "predictor failed, falling back to teleop");
                let goals = self.scene.goal_positions();
                (Fields::default(), GoalBelief::uniform(&goals), Vec::new(), None, true)
            }
        };
        TickOutput {
            assist: blend(v_u, &fields, &self.cfg),
            position: self.position,
            belief,
            predicted,
            position_mixture: pm,
            fallback,
        }
    }

    /// Advances one tick under the user direction `user_dir`.
    pub fn tick(&mut self, user_dir: Vec3) -> TickOutput {
        let mut out = self.assess(user_dir);
        let v = out.assist.v_r;
        if norm(v) > 0.0 {
            let dt = self.cfg.dt;
            let p = self.position;
            self.position = [p[0] + v[0] * dt, p[1] + v[1] * dt, p[2] + v[2] * dt];
            self.history.push(self.position);
        }
        out.position = self.position;
        out
    }
}
