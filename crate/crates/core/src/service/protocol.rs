//! Wire records exchanged with clients. Every message is a JSON object
//! tagged by `type`.

use serde::{Deserialize, Serialize};

use crate::data::Vec3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalState {
    pub id: String,
    pub pos: Vec3,
    pub prob: f64,
}

/// Plane density sampled at cell centres, row-major with rows along `y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    /// Lower table corner `(x, y)`.
    pub origin: [f64; 2],
    /// Cell size `(dx, dy)`.
    pub cell: [f64; 2],
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Vec<f64>>,
}

impl Heatmap {
    /// Riemann sum of the grid, which approximates the mass on the table.
    pub fn mass(&self) -> f64 {
        let area = self.cell[0] * self.cell[1];
        self.data.iter().flatten().sum::<f64>() * area
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub w_g: f64,
    pub w_tr: f64,
    pub a_g: f64,
    pub a_tr: f64,
    pub w_g2: f64,
    pub w_tr2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Velocities {
    pub u: Vec3,
    pub g: Vec3,
    pub tr: Vec3,
    pub r: Vec3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateMessage {
    pub tick: u64,
    pub t: f64,
    pub ee: Vec3,
    pub goals: Vec<GoalState>,
    pub pred_path: Vec<Vec3>,
    pub plane_heatmap: Heatmap,
    pub weights: Weights,
    pub v: Velocities,
    pub grasp_triggered: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    State(StateMessage),
    Error { message: String },
}

/// Joystick direction, each axis in `{-1, 0, 1}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Command {
    pub dir: [i8; 3],
}

impl Command {
    pub fn vector(&self) -> Vec3 {
        [self.dir[0] as f64, self.dir[1] as f64, self.dir[2] as f64]
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCommand {
    #[serde(rename = "type")]
    kind: Option<String>,
    dir: Vec<i64>,
}

/// Parses an inbound `command` record. `type` may be omitted.
pub fn parse_command(text: &str) -> Result<Command, String> {
    let raw: RawCommand = serde_json::from_str(text).map_err(|e| format!("malformed command: {e}"))?;
    if let Some(k) = raw.kind.as_deref() {
        if k != "command" {
            return Err(format!("unknown message type `{k}`"));
        }
    }
    if raw.dir.len() != 3 || raw.dir.iter().any(|d| !(-1..=1).contains(d)) {
        return Err("dir must hold three values in {-1, 0, 1}".into());
    }
    Ok(Command {
        dir: [raw.dir[0] as i8, raw.dir[1] as i8, raw.dir[2] as i8],
    })
}
