//! Tabletop scene: table plane, candidate goals and the rest pose, loaded
//! from a plain `key = value` file.
//!
//! ```text
//! table_height = 0.0
//! home = 0.35, 0.0, 0.35
//! table_min = 0.35, -0.35
//! table_max = 0.75, 0.35
//! goal.red = 0.45, -0.20
//! goal.blue = 0.62, -0.08
//! ```
//!
//! Goals given as `x, y` sit on the table; a third value overrides `z`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Vec3;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub id: String,
    pub pos: Vec3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub table_height: f64,
    pub home: Vec3,
    pub table_min: [f64; 2],
    pub table_max: [f64; 2],
    pub goals: Vec<Goal>,
}

/// Built-in four-cube layout.
pub const DEFAULT_SCENE: &str = "\
table_height = 0.0
home = 0.35, 0.0, 0.35
table_min = 0.35, -0.35
table_max = 0.75, 0.35
goal.red = 0.45, -0.22
goal.green = 0.66, -0.10
goal.blue = 0.64, 0.14
goal.yellow = 0.44, 0.21
";

impl Default for Scene {
    fn default() -> Self {
        Self::parse(DEFAULT_SCENE).expect("built-in scene parses")
    }
}

fn numbers(line: usize, v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(|s| {
            s.trim().parse::<f64>().map_err(|_| Error::Parse {
                line,
                msg: format!("`{}` is not a number", s.trim()),
            })
        })
        .collect()
}

fn fixed<const N: usize>(line: usize, key: &str, v: &str) -> Result<[f64; N]> {
    let n = numbers(line, v)?;
    n.try_into().map_err(|_| Error::Parse {
        line,
        msg: format!("`{key}` needs {N} values"),
    })
}

impl Scene {
    pub fn parse(text: &str) -> Result<Self> {
        let mut table_height = None;
        let mut home = None;
        let mut table_min = None;
        let mut table_max = None;
        let mut goals: Vec<(usize, String, Vec<f64>)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let l = raw.split('#').next().unwrap_or("").trim();
            if l.is_empty() {
                continue;
            }
            let (k, v) = l.split_once('=').ok_or_else(|| Error::Parse {
                line,
                msg: format!("expected `key = value`, got `{l}`"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "table_height" => table_height = Some(fixed::<1>(line, k, v)?[0]),
                "home" => home = Some(fixed::<3>(line, k, v)?),
                "table_min" => table_min = Some(fixed::<2>(line, k, v)?),
                "table_max" => table_max = Some(fixed::<2>(line, k, v)?),
                _ => match k.strip_prefix("goal.") {
                    Some(id) if !id.is_empty() => {
                        let n = numbers(line, v)?;
                        if !(2..=3).contains(&n.len()) {
                            return Err(Error::Parse {
                                line,
                                msg: format!("goal `{id}` needs 2 or 3 values"),
                            });
                        }
                        goals.push((line, id.to_string(), n));
                    }
                    _ => {
                        return Err(Error::Parse {
                            line,
                            msg: format!("unknown key `{k}`"),
                        })
                    }
                },
            }
        }
        let missing = |what: &str| Error::Parse {
            line: 0,
            msg: format!("missing `{what}`"),
        };
        let table_height = table_height.ok_or_else(|| missing("table_height"))?;
        let scene = Scene {
            table_height,
            home: home.ok_or_else(|| missing("home"))?,
            table_min: table_min.ok_or_else(|| missing("table_min"))?,
            table_max: table_max.ok_or_else(|| missing("table_max"))?,
            goals: goals
                .into_iter()
                .map(|(_, id, n)| Goal {
                    id,
                    pos: [n[0], n[1], n.get(2).copied().unwrap_or(table_height)],
                })
                .collect(),
        };
        if scene.goals.is_empty() {
            return Err(missing("goal.<id>"));
        }
        Ok(scene)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_config(&self) -> String {
        let mut s = format!(
            "table_height = {}\nhome = {}, {}, {}\ntable_min = {}, {}\ntable_max = {}, {}\n",
            self.table_height,
            self.home[0],
            self.home[1],
            self.home[2],
            self.table_min[0],
            self.table_min[1],
            self.table_max[0],
            self.table_max[1]
        );
        for g in &self.goals {
            s.push_str(&format!("goal.{} = {}, {}, {}\n", g.id, g.pos[0], g.pos[1], g.pos[2]));
        }
        s
    }

    pub fn goal_positions(&self) -> Vec<Vec3> {
        self.goals.iter().map(|g| g.pos).collect()
    }
}
