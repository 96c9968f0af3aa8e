//! Brute-force oracles for position propagation and the table-plane slice.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use robot_trajectron::model::gmm::{Component, GaussianMixture};
use robot_trajectron::predict::position::{PositionComponent, PositionMixture};
use robot_trajectron::predict::{goal_belief, propagate_position_mixture};

pub const MC_SAMPLES: usize = 100_000;

fn random_chol(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Matrix3<f64> {
    let mut l = Matrix3::zeros();
    for i in 0..3 {
        l[(i, i)] = rng.gen_range(lo..hi);
        for j in 0..i {
            l[(i, j)] = rng.gen_range(-0.5 * lo..0.5 * lo);
        }
    }
    l
}

/// A velocity mixture sequence whose components share weights across steps.
pub fn random_velocity_sequence(rng: &mut ChaCha8Rng, steps: usize, comps: usize) -> Vec<GaussianMixture> {
    let raw: Vec<f64> = (0..comps).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let dirs: Vec<Vector3<f64>> = (0..comps)
        .map(|_| Vector3::new(rng.gen_range(0.1..0.4), rng.gen_range(-0.3..0.3), rng.gen_range(-0.4..-0.1)))
        .collect();
    (0..steps)
        .map(|_| {
            let components = (0..comps)
                .map(|c| Component {
                    weight: raw[c] / total,
                    mean: dirs[c] + Vector3::new(rng.gen_range(-0.05..0.05), 0.0, rng.gen_range(-0.05..0.05)),
                    chol: random_chol(rng, 0.02, 0.1),
                })
                .collect();
            GaussianMixture::new(components).unwrap()
        })
        .collect()
}

/// Largest relative mean error and relative covariance error (Frobenius)
/// between propagated components and a Monte-Carlo rollout that draws each
/// step's velocity independently from the same component.
pub fn mc_propagation_errors(seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = 0.05;
    let origin = [0.4, -0.1, 0.3];
    let seq = random_velocity_sequence(&mut rng, 10, 3);
    let pm = propagate_position_mixture(&seq, origin, dt, None);
    let o = Vector3::from(origin);
    let (mut mean_err, mut cov_err) = (0.0f64, 0.0f64);
    for c in 0..3 {
        let steps = seq.len();
        let mut sum = vec![Vector3::zeros(); steps];
        let mut outer = vec![Matrix3::zeros(); steps];
        for _ in 0..MC_SAMPLES {
            let mut x = o;
            for (t, gm) in seq.iter().enumerate() {
                let comp = &gm.components[c];
                let z = Vector3::new(
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                );
                x += (comp.mean + comp.chol * z) * dt;
                let d = x - o;
                sum[t] += d;
                outer[t] += d * d.transpose();
            }
        }
        let n = MC_SAMPLES as f64;
        for t in 0..steps {
            let m = sum[t] / n;
            let cov = (outer[t] - m * m.transpose() * n) / (n - 1.0);
            let p = &pm.steps[t][c];
            let disp = p.mean - o;
            mean_err = mean_err.max((m - disp).norm() / disp.norm());
            cov_err = cov_err.max((cov - p.cov).norm() / p.cov.norm());
        }
    }
    (mean_err, cov_err)
}

fn gauss3(x: &Vector3<f64>, c: &PositionComponent) -> f64 {
    let inv = c.cov.try_inverse().unwrap();
    let d = x - c.mean;
    let q = (d.transpose() * inv * d)[(0, 0)];
    (-0.5 * q).exp() / ((2.0 * std::f64::consts::PI).powi(3) * c.cov.determinant()).sqrt()
}

/// Joint density of every (step, component) term at `x`.
fn joint(pm: &PositionMixture, x: &Vector3<f64>) -> f64 {
    pm.steps.iter().flatten().map(|c| c.weight * gauss3(x, c)).sum()
}

/// Position mixture with a few components straddling the table plane.
pub fn random_position_mixture(rng: &mut ChaCha8Rng) -> PositionMixture {
    let steps = (0..3)
        .map(|_| {
            (0..2)
                .map(|_| {
                    let l = random_chol(rng, 0.02, 0.06);
                    PositionComponent {
                        weight: rng.gen_range(0.1..0.5),
                        mean: Vector3::new(rng.gen_range(0.3..0.7), rng.gen_range(-0.2..0.2), rng.gen_range(-0.03..0.05)),
                        cov: l * l.transpose(),
                    }
                })
                .collect()
        })
        .collect();
    PositionMixture {
        origin: [0.4, 0.0, 0.3],
        steps,
    }
}

/// Largest relative error between the slice density at each goal and the
/// joint density at `(x, y, h)` renormalised by a midpoint-rule integral
/// over the plane.
pub fn slice_grid_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pm = random_position_mixture(&mut rng);
    let h = 0.0;
    let goals: Vec<[f64; 3]> = (0..4)
        .map(|_| [rng.gen_range(0.35..0.65), rng.gen_range(-0.15..0.15), h])
        .collect();
    let belief = goal_belief(&pm, &goals, h).unwrap();

    let (x0, x1, y0, y1) = (-0.2, 1.2, -0.7, 0.7);
    let cells = 700;
    let (dx, dy) = ((x1 - x0) / cells as f64, (y1 - y0) / cells as f64);
    let mut mass = 0.0;
    for i in 0..cells {
        for j in 0..cells {
            let p = Vector3::new(x0 + (i as f64 + 0.5) * dx, y0 + (j as f64 + 0.5) * dy, h);
            mass += joint(&pm, &p);
        }
    }
    mass *= dx * dy;
    goals
        .iter()
        .zip(&belief.densities)
        .map(|(g, d)| {
            let want = joint(&pm, &Vector3::from(*g)) / mass;
            (d - want).abs() / want
        })
        .fold(0.0, f64::max)
}

/// Goal probabilities for a scene mirrored about `y = 0`.
pub fn symmetric_two_goal_probs() -> Vec<f64> {
    let l = Matrix3::new(0.03, 0.0, 0.0, 0.004, 0.03, 0.0, -0.002, 0.003, 0.025);
    let cov = l * l.transpose();
    let mirror = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, 1.0));
    let comp = |y: f64, cov: Matrix3<f64>| PositionComponent {
        weight: 0.5,
        mean: Vector3::new(0.5, y, 0.01),
        cov,
    };
    let pm = PositionMixture {
        origin: [0.4, 0.0, 0.3],
        steps: vec![vec![comp(0.1, cov), comp(-0.1, mirror * cov * mirror)]],
    };
    goal_belief(&pm, &[[0.5, 0.1, 0.0], [0.5, -0.1, 0.0]], 0.0).unwrap().probs
}
