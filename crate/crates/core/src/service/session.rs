//! One teleoperation session: the controller, the latched joystick command
//! and the command log that makes a run replayable.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::protocol::{Command, GoalState, Heatmap, StateMessage, Velocities, Weights};
use crate::control::{AssistMode, ControllerConfig, SharedController, TickOutput};
use crate::data::sim::{norm, stream_rng, sub};
use crate::data::Vec3;
use crate::error::{contract, Result};
use crate::model::RtModel;
use crate::predict::PlaneSlice;
use crate::scene::{Goal, Scene};

pub const HEATMAP_CELLS: usize = 64;
/// Distance to a goal at which the grasp fires, metres.
pub const GRASP_RADIUS: f64 = 0.02;
const MIN_GOAL_SPACING: f64 = 0.08;

/// Replayable session events, one JSON object per line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    /// Session (re)start with the resolved scene.
    Reset { id: u64, mode: AssistMode, scene: Scene },
    /// Effective from tick `tick + 1` on.
    Command { tick: u64, dir: [i8; 3] },
    Mode { tick: u64, mode: AssistMode },
    /// Ticks run so far; written when the loop pauses.
    Pause { tick: u64 },
}

pub struct Session {
    pub id: u64,
    base_scene: Scene,
    controller: SharedController,
    tick: u64,
    command: Command,
    grasped: bool,
    paused: bool,
    log: Vec<LogRecord>,
}

impl Session {
    pub fn new(scene: Scene, cfg: ControllerConfig, mode: AssistMode, model: Option<Arc<RtModel>>) -> Result<Self> {
        if scene.goals.is_empty() {
            return Err(contract("scene has no goals"));
        }
        let controller = SharedController::new(cfg, mode, scene.clone(), model)?;
        let mut s = Self {
            id: 0,
            base_scene: scene,
            controller,
            tick: 0,
            command: Command { dir: [0; 3] },
            grasped: false,
            paused: true,
            log: Vec::new(),
        };
        s.log_reset();
        Ok(s)
    }

    fn log_reset(&mut self) {
        self.log.push(LogRecord::Reset {
            id: self.id,
            mode: self.controller.mode,
            scene: self.controller.scene.clone(),
        });
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn mode(&self) -> AssistMode {
        self.controller.mode
    }

    pub fn scene(&self) -> &Scene {
        &self.controller.scene
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.controller.cfg
    }

    pub fn position(&self) -> Vec3 {
        self.controller.position()
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn grasp_triggered(&self) -> bool {
        self.grasped
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    /// Records appended since `from`, for incremental log writing.
    pub fn log_since(&self, from: usize) -> &[LogRecord] {
        &self.log[from.min(self.log.len())..]
    }

    pub fn pause(&mut self) {
        if !self.paused {
            self.paused = true;
            self.log.push(LogRecord::Pause { tick: self.tick });
        }
    }

    pub fn resume(&mut self) {
        self.paused = false;
    }

    /// Latches `cmd` until superseded; repeats are not logged.
    pub fn set_command(&mut self, cmd: Command) {
        if cmd != self.command {
            self.command = cmd;
            self.log.push(LogRecord::Command {
                tick: self.tick,
                dir: cmd.dir,
            });
        }
    }

    pub fn set_mode(&mut self, mode: AssistMode) -> Result<()> {
        self.controller.set_mode(mode)?;
        self.log.push(LogRecord::Mode { tick: self.tick, mode });
        Ok(())
    }

    /// Restarts at the home pose. Explicit `goals` win; otherwise `seed`
    /// draws a fresh layout of the configured goal ids on the table; with
    /// neither the configured scene is restored.
    pub fn reset(&mut self, goals: Option<Vec<Goal>>, seed: Option<u64>) -> Result<()> {
        let mut scene = self.base_scene.clone();
        match (goals, seed) {
            (Some(g), _) => {
                if g.is_empty() {
                    return Err(contract("reset needs at least one goal"));
                }
                scene.goals = g;
            }
            (None, Some(seed)) => scene.goals = random_layout(&self.base_scene, seed),
            (None, None) => {}
        }
        self.apply_reset(scene);
        Ok(())
    }

    fn apply_reset(&mut self, scene: Scene) {
        self.id += 1;
        self.controller.scene = scene;
        self.controller.reset_to(self.controller.scene.home);
        self.tick = 0;
        self.command = Command { dir: [0; 3] };
        self.grasped = false;
        self.log_reset();
    }

    /// Advances one tick and reports the new state. After a grasp the
    /// end-effector holds still until the next reset.
    pub fn step(&mut self) -> StateMessage {
        self.tick += 1;
        let out = if self.grasped {
            self.controller.assess([0.0; 3])
        } else {
            self.controller.tick(self.command.vector())
        };
        if !self.grasped {
            let p = out.position;
            self.grasped = self.controller.scene.goals.iter().any(|g| norm(sub(g.pos, p)) < GRASP_RADIUS);
        }
        state_message(self.tick, &self.controller, &out, self.grasped)
    }
}

/// Goals at uniform table positions at least [`MIN_GOAL_SPACING`] apart.
fn random_layout(base: &Scene, seed: u64) -> Vec<Goal> {
    let mut rng = stream_rng(seed, 0);
    let mut out: Vec<Goal> = Vec::new();
    for g in &base.goals {
        let mut pos;
        let mut tries = 0;
        loop {
            pos = [
                rng.gen_range(base.table_min[0]..=base.table_max[0]),
                rng.gen_range(base.table_min[1]..=base.table_max[1]),
                base.table_height,
            ];
            tries += 1;
            if tries > 1000 || out.iter().all(|o| norm(sub(o.pos, pos)) >= MIN_GOAL_SPACING) {
                break;
            }
        }
        out.push(Goal { id: g.id.clone(), pos });
    }
    out
}

/// Plane density over the table rectangle; zeros when there is no
/// confident prediction.
pub fn heatmap(scene: &Scene, slice: Option<&PlaneSlice>) -> Heatmap {
    let n = HEATMAP_CELLS;
    let cell = [
        (scene.table_max[0] - scene.table_min[0]) / n as f64,
        (scene.table_max[1] - scene.table_min[1]) / n as f64,
    ];
    let data = (0..n)
        .map(|r| {
            let y = scene.table_min[1] + (r as f64 + 0.5) * cell[1];
            (0..n)
                .map(|c| match slice {
                    Some(s) => s.density(scene.table_min[0] + (c as f64 + 0.5) * cell[0], y),
                    None => 0.0,
                })
                .collect()
        })
        .collect();
    Heatmap {
        origin: scene.table_min,
        cell,
        rows: n,
        cols: n,
        data,
    }
}

fn state_message(tick: u64, ctrl: &SharedController, out: &TickOutput, grasped: bool) -> StateMessage {
    let scene = &ctrl.scene;
    let slice = out
        .position_mixture
        .as_ref()
        .map(|pm| PlaneSlice::new(pm, scene.table_height))
        .filter(|s| !s.is_low_confidence());
    let a = &out.assist;
    StateMessage {
        tick,
        t: tick as f64 * ctrl.cfg.dt,
        ee: out.position,
        goals: scene
            .goals
            .iter()
            .zip(&out.belief.probs)
            .map(|(g, &prob)| GoalState {
                id: g.id.clone(),
                pos: g.pos,
                prob,
            })
            .collect(),
        pred_path: out.predicted.clone(),
        plane_heatmap: heatmap(scene, slice.as_ref()),
        weights: Weights {
            w_g: a.w_g,
            w_tr: a.w_tr,
            a_g: a.a_g,
            a_tr: a.a_tr,
            w_g2: a.w_g2,
            w_tr2: a.w_tr2,
        },
        v: Velocities {
            u: a.v_u,
            g: a.v_g,
            tr: a.v_tr,
            r: a.v_r,
        },
        grasp_triggered: grasped,
    }
}

/// Re-runs a recorded command log tick by tick. Returns the state stream of
/// every run segment in order.
pub fn replay_log(
    records: &[LogRecord],
    cfg: ControllerConfig,
    model: Option<Arc<RtModel>>,
) -> Result<Vec<StateMessage>> {
    let Some(LogRecord::Reset { mode, scene, .. }) = records.first() else {
        return Err(contract("log must start with a reset record"));
    };
    let mut session = Session::new(scene.clone(), cfg, *mode, model)?;
    let mut out = Vec::new();
    let mut i = 1;
    // Run until each record's tick, apply it, and finish at the last tick.
    let run_to = |s: &mut Session, out: &mut Vec<StateMessage>, t: u64| {
        while s.tick < t {
            out.push(s.step());
        }
    };
    while i < records.len() {
        match &records[i] {
            LogRecord::Reset { mode, scene, .. } => {
                session.apply_reset(scene.clone());
                session.controller.set_mode(*mode)?;
            }
            LogRecord::Command { tick, dir } => {
                run_to(&mut session, &mut out, *tick);
                session.set_command(Command { dir: *dir });
            }
            LogRecord::Mode { tick, mode } => {
                run_to(&mut session, &mut out, *tick);
                session.set_mode(*mode)?;
            }
            LogRecord::Pause { tick } => run_to(&mut session, &mut out, *tick),
        }
        i += 1;
    }
    Ok(out)
}

pub fn read_log(text: &str) -> Result<Vec<LogRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| crate::Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Streams a recorded end-effector path through the controller: at every
/// step the history up to it is assessed under the direction of the last
/// displacement.
pub fn replay_positions(
    positions: &[Vec3],
    scene: Scene,
    cfg: ControllerConfig,
    mode: AssistMode,
    model: Option<Arc<RtModel>>,
) -> Result<Vec<StateMessage>> {
    let mut ctrl = SharedController::new(cfg, mode, scene, model)?;
    let mut out = Vec::with_capacity(positions.len());
    for t in 0..positions.len() {
        ctrl.load_history(&positions[..=t])?;
        let dir = if t == 0 { [0.0; 3] } else { sub(positions[t], positions[t - 1]) };
        let o = ctrl.assess(dir);
        let grasped = ctrl.scene.goals.iter().any(|g| norm(sub(g.pos, positions[t])) < GRASP_RADIUS);
        out.push(state_message(t as u64, &ctrl, &o, grasped));
    }
    Ok(out)
}
