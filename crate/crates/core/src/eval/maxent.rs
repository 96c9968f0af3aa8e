//! Goal inference by maximum-entropy inverse optimal control with a
//! distance cost: each goal scores the progress made toward it minus the
//! distance travelled.

use crate::data::sim::{norm, sub};
use crate::data::Vec3;

pub const DEFAULT_LAMBDA: f64 = 5.0;

/// Path length of a polyline.
pub fn path_length(path: &[Vec3]) -> f64 {
    path.windows(2).map(|w| norm(sub(w[1], w[0]))).sum()
}

/// Per-goal probabilities `∝ exp(λ (|p0 - g| - |pt - g| - len))`.
pub fn maxent_ioc(history: &[Vec3], goals: &[Vec3], lambda: f64) -> Vec<f64> {
    if goals.is_empty() {
        return Vec::new();
    }
    let (Some(&p0), Some(&pt)) = (history.first(), history.last()) else {
        return vec![1.0 / goals.len() as f64; goals.len()];
    };
    let len = path_length(history);
    let scores: Vec<f64> = goals
        .iter()
        .map(|&g| lambda * (norm(sub(p0, g)) - norm(sub(pt, g)) - len))
        .collect();
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}
