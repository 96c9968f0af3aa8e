use nalgebra::{Matrix3, Vector3};

use crate::data::Vec3;
use crate::model::gmm::GaussianMixture;

#[derive(Clone, Debug, PartialEq)]
pub struct PositionComponent {
    pub weight: f64,
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
}

/// Position-space mixtures for steps `1..=T_end` after the observation.
/// Step 0 is implicit: every component sits at `origin` with zero covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionMixture {
    pub origin: Vec3,
    pub steps: Vec<Vec<PositionComponent>>,
}

impl PositionMixture {
    /// Mean of the lowest component at each step.
    pub fn lowest_means(&self) -> impl Iterator<Item = Vector3<f64>> + '_ {
        self.steps.iter().map(|s| {
            s.iter()
                .map(|c| c.mean)
                .min_by(|a, b| a.z.total_cmp(&b.z))
                .unwrap_or_default()
        })
    }
}

/// Accumulates velocity mixtures component-by-index:
/// `mu_t = mu_{t-1} + mu_v dt`, `Sigma_t = Sigma_{t-1} + Sigma_v dt^2`,
/// weights taken from the current step. With `table_height` set, stops at
/// the first step whose lowest component mean reaches the table.
pub fn propagate_position_mixture(
    velocity: &[GaussianMixture],
    origin: Vec3,
    dt: f64,
    table_height: Option<f64>,
) -> PositionMixture {
    let c = velocity.first().map_or(0, |g| g.len());
    let mut mean = vec![Vector3::from(origin); c];
    let mut cov = vec![Matrix3::zeros(); c];
    let mut steps = Vec::with_capacity(velocity.len());
    for gm in velocity {
        let step: Vec<PositionComponent> = gm
            .components
            .iter()
            .enumerate()
            .map(|(i, comp)| {
                mean[i] += comp.mean * dt;
                cov[i] += comp.covariance() * (dt * dt);
                PositionComponent {
                    weight: comp.weight,
                    mean: mean[i],
                    cov: cov[i],
                }
            })
            .collect();
        let crossed = table_height.is_some_and(|h| {
            step.iter()
                .map(|p| p.mean.z)
                .fold(f64::INFINITY, f64::min)
                <= h
        });
        steps.push(step);
        if crossed {
            break;
        }
    }
    PositionMixture { origin, steps }
}
