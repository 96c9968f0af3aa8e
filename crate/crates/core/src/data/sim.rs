//! Kinematic reach simulator: a noisy proportional controller drives the
//! end-effector from an elevated start, through a via-point above the
//! target, down to a point on the table.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::Trajectory;
use crate::error::{contract, Result};

pub type Vec3 = [f64; 3];

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    /// Proportional gain, 1/s.
    pub k: f64,
    /// Speed cap before noise, m/s.
    pub v_max: f64,
    pub dt: f64,
    pub table_height: f64,
    pub start_min: Vec3,
    pub start_max: Vec3,
    /// Target rectangle on the table, `[x, y]` corners.
    pub target_min: [f64; 2],
    pub target_max: [f64; 2],
    /// Distance of the via-point from the target, metres.
    pub via_distance: (f64, f64),
    /// Largest angle of the approach direction from vertical, radians.
    pub approach_cone: f64,
    /// Disables the via-point (straight proportional approach).
    pub use_via: bool,
    /// Scale of the multiplicative velocity noise; 1.0 reproduces `z ~ U(-1, 1)^3`.
    pub noise: f64,
    pub arrival_tol: f64,
    pub max_duration: f64,
    /// Histories shorter than this many rows are regenerated.
    pub min_len: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            k: 1.0,
            v_max: 0.25,
            dt: 0.05,
            table_height: 0.0,
            start_min: [0.25, -0.15, 0.25],
            start_max: [0.45, 0.15, 0.45],
            target_min: [0.35, -0.35],
            target_max: [0.75, 0.35],
            via_distance: (0.05, 0.15),
            approach_cone: 1.0,
            use_via: true,
            noise: 1.0,
            arrival_tol: 0.005,
            max_duration: 15.0,
            min_len: 3,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = (0..3).all(|i| self.start_min[i] <= self.start_max[i])
            && (0..2).all(|i| self.target_min[i] <= self.target_max[i])
            && self.via_distance.0 <= self.via_distance.1;
        if !(self.k > 0.0 && self.v_max > 0.0 && self.dt > 0.0) {
            return Err(contract("k, v_max and dt must be positive"));
        }
        if !ordered || self.start_min[2] <= self.table_height {
            return Err(contract("invalid workspace bounds"));
        }
        if !(0.0..=1.0).contains(&self.noise) || self.arrival_tol <= 0.0 {
            return Err(contract("noise must be in [0, 1] and arrival_tol positive"));
        }
        Ok(())
    }
}

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn scaled(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// `v' = v + z‖v‖` with `z ~ U(-scale, scale)^3`.
pub fn noisy_velocity<R: Rng + ?Sized>(v: Vec3, scale: f64, rng: &mut R) -> Vec3 {
    let speed = norm(v);
    let mut out = v;
    for o in &mut out {
        let z: f64 = rng.gen_range(-1.0..=1.0);
        *o += z * scale * speed;
    }
    out
}

/// Proportional velocity toward `aim`, with its magnitude computed from
/// `remaining` path length and capped at `v_max`.
fn command(p: Vec3, aim: Vec3, remaining: f64, cfg: &GenConfig) -> Vec3 {
    let d = sub(aim, p);
    let dist = norm(d);
    if dist < 1e-12 {
        return [0.0; 3];
    }
    let speed = (cfg.k * remaining).min(cfg.v_max);
    scaled(d, speed / dist)
}

/// Outcome of a single simulation attempt.
#[derive(Clone, Debug)]
pub enum Attempt {
    Done(Vec<Vec3>),
    TooShort,
    Timeout,
}

/// Runs the controller from `start` to `target` via an optional via-point.
pub fn simulate<R: Rng + ?Sized>(
    cfg: &GenConfig,
    start: Vec3,
    target: Vec3,
    via: Option<Vec3>,
    rng: &mut R,
) -> Attempt {
    let max_ticks = (cfg.max_duration / cfg.dt).round() as usize;
    let mut p = start;
    let mut positions = vec![p];
    let mut via = via;
    let leg_dir = via.map(|v| sub(v, start));
    while norm(sub(p, target)) >= cfg.arrival_tol {
        if positions.len() > max_ticks {
            return Attempt::Timeout;
        }
        if let (Some(v), Some(dir)) = (via, leg_dir) {
            // Switch to the final leg once the via-point is close or passed.
            if norm(sub(v, p)) < 0.02 || dot(sub(v, p), dir) <= 0.0 {
                via = None;
            }
        }
        let v = match via {
            Some(w) => command(p, w, norm(sub(w, p)) + norm(sub(target, w)), cfg),
            None => command(p, target, norm(sub(target, p)), cfg),
        };
        let v = noisy_velocity(v, cfg.noise, rng);
        p = [p[0] + v[0] * cfg.dt, p[1] + v[1] * cfg.dt, p[2] + v[2] * cfg.dt];
        positions.push(p);
    }
    if positions.len() < cfg.min_len {
        Attempt::TooShort
    } else {
        Attempt::Done(positions)
    }
}

fn sample_task<R: Rng + ?Sized>(cfg: &GenConfig, rng: &mut R) -> (Vec3, Vec3, Option<Vec3>) {
    let u = |rng: &mut R, lo: f64, hi: f64| if hi > lo { rng.gen_range(lo..hi) } else { lo };
    let start = [
        u(rng, cfg.start_min[0], cfg.start_max[0]),
        u(rng, cfg.start_min[1], cfg.start_max[1]),
        u(rng, cfg.start_min[2], cfg.start_max[2]),
    ];
    let target = [
        u(rng, cfg.target_min[0], cfg.target_max[0]),
        u(rng, cfg.target_min[1], cfg.target_max[1]),
        cfg.table_height,
    ];
    // Via-point draws happen even when disabled so the stream layout is fixed.
    let dist = u(rng, cfg.via_distance.0, cfg.via_distance.1);
    let polar = rng.gen_range(0.0..=cfg.approach_cone);
    let azimuth = rng.gen_range(0.0..std::f64::consts::TAU);
    let dir = [
        polar.sin() * azimuth.cos(),
        polar.sin() * azimuth.sin(),
        polar.cos(),
    ];
    let via = cfg.use_via.then(|| [
        target[0] + dist * dir[0],
        target[1] + dist * dir[1],
        target[2] + dist * dir[2],
    ]);
    (start, target, via)
}

/// Generates one trajectory, retrying failed attempts on the same stream.
/// Returns the trajectory and the number of discarded attempts.
pub fn generate_trajectory<R: Rng + ?Sized>(
    cfg: &GenConfig,
    id: u64,
    rng: &mut R,
) -> Result<(Trajectory, usize)> {
    cfg.validate()?;
    let mut discarded = 0;
    loop {
        let (start, target, via) = sample_task(cfg, rng);
        match simulate(cfg, start, target, via, rng) {
            Attempt::Done(positions) => {
                return Ok((
                    Trajectory {
                        id,
                        dt: cfg.dt,
                        table_height: cfg.table_height,
                        target,
                        positions,
                    },
                    discarded,
                ))
            }
            Attempt::TooShort | Attempt::Timeout => discarded += 1,
        }
        if discarded > 10_000 {
            return Err(contract("generator cannot produce valid trajectories"));
        }
    }
}

/// Seeded dataset: trajectory `i` uses stream `i` of `ChaCha8(seed)`, so
/// each record is independent of the others.
pub fn generate_dataset(cfg: &GenConfig, n: usize) -> Result<(Vec<Trajectory>, usize)> {
    let mut out = Vec::with_capacity(n);
    let mut discarded = 0;
    for i in 0..n {
        let mut rng = stream_rng(cfg.seed, i as u64);
        let (t, d) = generate_trajectory(cfg, i as u64, &mut rng)?;
        out.push(t);
        discarded += d;
    }
    Ok((out, discarded))
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
