use nalgebra::{Matrix2, Vector2};

use super::PositionMixture;
use crate::data::Vec3;
use crate::error::{contract, Result};

/// Uniform probability mass mixed into every normalised belief.
pub const UNIFORM_FLOOR: f64 = 0.01;
const MIN_PLANE_WEIGHT: f64 = 1e-12;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq)]
struct SliceTerm {
    log_w: f64,
    mean: Vector2<f64>,
    cov_inv: Matrix2<f64>,
    log_norm: f64,
}

/// The position mixture conditioned on `z = h_tab`: a 2-d mixture over the
/// table plane, weighted by each component's density at the plane.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneSlice {
    terms: Vec<SliceTerm>,
    log_total: f64,
    max_log_w: f64,
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl PlaneSlice {
    pub fn new(pm: &PositionMixture, table_height: f64) -> Self {
        let mut terms = Vec::new();
        for step in &pm.steps {
            for c in step {
                let s = &c.cov;
                let szz = s[(2, 2)];
                if !(szz > 0.0) || c.weight <= 0.0 {
                    continue;
                }
                let dz = table_height - c.mean.z;
                let log_w = c.weight.ln() - 0.5 * (LN_2PI + szz.ln() + dz * dz / szz);
                let sxz = Vector2::new(s[(0, 2)], s[(1, 2)]);
                let mean = Vector2::new(c.mean.x, c.mean.y) + sxz * (dz / szz);
                let cov = Matrix2::new(s[(0, 0)], s[(0, 1)], s[(1, 0)], s[(1, 1)])
                    - sxz * sxz.transpose() / szz;
                let det = cov.determinant();
                let Some(cov_inv) = cov.try_inverse().filter(|_| det > 0.0) else {
                    continue;
                };
                terms.push(SliceTerm {
                    log_w,
                    mean,
                    cov_inv,
                    log_norm: -LN_2PI - 0.5 * det.ln(),
                });
            }
        }
        let log_total = log_sum_exp(terms.iter().map(|t| t.log_w));
        let max_log_w = terms.iter().map(|t| t.log_w).fold(f64::NEG_INFINITY, f64::max);
        Self {
            terms,
            log_total,
            max_log_w,
        }
    }

    /// True when no component comes meaningfully near the table.
    pub fn is_low_confidence(&self) -> bool {
        !(self.max_log_w >= MIN_PLANE_WEIGHT.ln())
    }

    /// Log of the renormalised plane density at `(x, y)`.
    pub fn log_density(&self, x: f64, y: f64) -> f64 {
        let p = Vector2::new(x, y);
        let parts = self.terms.iter().map(|t| {
            let d = p - t.mean;
            t.log_w + t.log_norm - 0.5 * (d.transpose() * t.cov_inv * d)[(0, 0)]
        });
        log_sum_exp(parts) - self.log_total
    }

    pub fn density(&self, x: f64, y: f64) -> f64 {
        if self.terms.is_empty() {
            return 0.0;
        }
        self.log_density(x, y).exp()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GoalBelief {
    pub goals: Vec<Vec3>,
    /// Plane density at each goal, 1/m².
    pub densities: Vec<f64>,
    /// Normalised over goals with a uniform floor.
    pub probs: Vec<f64>,
    pub low_confidence: bool,
}

impl GoalBelief {
    pub fn uniform(goals: &[Vec3]) -> Self {
        let n = goals.len();
        Self {
            goals: goals.to_vec(),
            densities: vec![0.0; n],
            probs: vec![1.0 / n as f64; n],
            low_confidence: true,
        }
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// Per-goal probabilities from the plane slice of a position mixture.
pub fn goal_belief(pm: &PositionMixture, goals: &[Vec3], table_height: f64) -> Result<GoalBelief> {
    if goals.is_empty() {
        return Err(contract("goal belief needs at least one goal"));
    }
    let slice = PlaneSlice::new(pm, table_height);
    Ok(belief_from_slice(&slice, goals))
}

pub fn belief_from_slice(slice: &PlaneSlice, goals: &[Vec3]) -> GoalBelief {
    if slice.terms.is_empty() || slice.is_low_confidence() {
        return GoalBelief::uniform(goals);
    }
    let logs: Vec<f64> = goals.iter().map(|g| slice.log_density(g[0], g[1])).collect();
    let total = log_sum_exp(logs.iter().copied());
    if total == f64::NEG_INFINITY || total.is_nan() {
        return GoalBelief::uniform(goals);
    }
    let n = goals.len() as f64;
    GoalBelief {
        goals: goals.to_vec(),
        densities: logs.iter().map(|l| l.exp()).collect(),
        probs: logs
            .iter()
            .map(|l| (1.0 - UNIFORM_FLOOR) * (l - total).exp() + UNIFORM_FLOOR / n)
            .collect(),
        low_confidence: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predict::PositionComponent;
    use nalgebra::{Matrix3, Vector3};

    fn pm(comps: Vec<([f64; 3], f64, f64)>) -> PositionMixture {
        PositionMixture {
            origin: [0.0; 3],
            steps: vec![comps
                .into_iter()
                .map(|(m, w, s)| PositionComponent {
                    weight: w,
                    mean: Vector3::from(m),
                    cov: Matrix3::identity() * s,
                })
                .collect()],
        }
    }

    #[test]
    fn single_goal_has_probability_one() {
        let b = goal_belief(&pm(vec![([0.3, 0.1, 0.02], 1.0, 1e-3)]), &[[0.9, 0.9, 0.0]], 0.0).unwrap();
        assert!((b.probs[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_goals_split_evenly() {
        let m = pm(vec![([0.5, 0.1, 0.02], 0.5, 1e-3), ([0.5, -0.1, 0.02], 0.5, 1e-3)]);
        let b = goal_belief(&m, &[[0.45, 0.2, 0.0], [0.45, -0.2, 0.0]], 0.0).unwrap();
        assert!((b.probs[0] - 0.5).abs() < 1e-6 && (b.probs[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn far_from_table_is_low_confidence() {
        let m = pm(vec![([0.5, 0.0, 0.4], 1.0, 1e-4)]);
        let b = goal_belief(&m, &[[0.5, 0.0, 0.0], [0.6, 0.0, 0.0]], 0.0).unwrap();
        assert!(b.low_confidence);
        assert_eq!(b.probs, vec![0.5, 0.5]);
    }

    #[test]
    fn floor_bounds_probabilities() {
        let m = pm(vec![([0.5, 0.0, 0.01], 1.0, 1e-4)]);
        let b = goal_belief(&m, &[[0.5, 0.0, 0.0], [0.9, 0.3, 0.0]], 0.0).unwrap();
        assert!((b.probs[1] - 0.005).abs() < 1e-9);
        assert!((b.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(b.argmax(), 0);
        assert!(goal_belief(&m, &[], 0.0).is_err());
    }
}
