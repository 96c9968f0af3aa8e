use super::sim::Vec3;
use super::Trajectory;
use crate::error::{contract, Result};

/// Encoder input and decoder target for one observation time.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturizedSample {
    /// Rows `0..=t_obs`: position relative to the last row, velocity, acceleration.
    pub x: Vec<[f64; 9]>,
    /// Future velocities, zero where `mask` is false.
    pub y: Vec<[f64; 3]>,
    pub mask: Vec<bool>,
    /// Absolute position at `t_obs`.
    pub origin: Vec3,
}

/// Finite-difference features for a position history. The motion is treated
/// as starting from rest, so the first velocity and first two accelerations
/// only see the zero velocity before row 0.
pub fn history_features(positions: &[Vec3], dt: f64) -> Vec<[f64; 9]> {
    let Some(&last) = positions.last() else {
        return Vec::new();
    };
    let mut prev_v = [0.0; 3];
    positions
        .iter()
        .enumerate()
        .map(|(t, p)| {
            let v = if t == 0 {
                [0.0; 3]
            } else {
                let q = positions[t - 1];
                [(p[0] - q[0]) / dt, (p[1] - q[1]) / dt, (p[2] - q[2]) / dt]
            };
            let a = [
                (v[0] - prev_v[0]) / dt,
                (v[1] - prev_v[1]) / dt,
                (v[2] - prev_v[2]) / dt,
            ];
            prev_v = v;
            [
                p[0] - last[0],
                p[1] - last[1],
                p[2] - last[2],
                v[0],
                v[1],
                v[2],
                a[0],
                a[1],
                a[2],
            ]
        })
        .collect()
}

/// Splits `traj` at `t_obs` into a history and a horizon-length future.
pub fn featurize(traj: &Trajectory, t_obs: usize, horizon: usize) -> Result<FeaturizedSample> {
    let n = traj.positions.len();
    if t_obs < 2 || t_obs + 1 > n {
        return Err(contract(format!(
            "t_obs {t_obs} outside [2, {}]",
            n.saturating_sub(1)
        )));
    }
    let p = &traj.positions;
    let x = history_features(&p[..=t_obs], traj.dt);
    let mut y = vec![[0.0; 3]; horizon];
    let mut mask = vec![false; horizon];
    for k in 0..horizon {
        let t = t_obs + 1 + k;
        if t >= n {
            break;
        }
        let dt = traj.dt;
        y[k] = [
            (p[t][0] - p[t - 1][0]) / dt,
            (p[t][1] - p[t - 1][1]) / dt,
            (p[t][2] - p[t - 1][2]) / dt,
        ];
        mask[k] = true;
    }
    Ok(FeaturizedSample {
        x,
        y,
        mask,
        origin: p[t_obs],
    })
}

/// Integrates velocities from `origin`: `X_t = X_{t-1} + v_t dt`.
pub fn integrate(origin: Vec3, velocities: &[[f64; 3]], dt: f64) -> Vec<Vec3> {
    let mut p = origin;
    velocities
        .iter()
        .map(|v| {
            p = [p[0] + v[0] * dt, p[1] + v[1] * dt, p[2] + v[2] * dt];
            p
        })
        .collect()
}
