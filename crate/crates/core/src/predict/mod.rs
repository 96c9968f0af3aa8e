//! Inference: most-likely and sampled futures, position-space mixtures and
//! table-plane goal beliefs.

pub mod goal;
pub mod position;

use nalgebra::Vector3;
use rand::Rng;

pub use goal::{goal_belief, GoalBelief, PlaneSlice, UNIFORM_FLOOR};
pub use position::{propagate_position_mixture, PositionComponent, PositionMixture};

use crate::data::{integrate, Vec3};
use crate::error::{contract, Result};
use crate::model::gmm::GaussianMixture;
use crate::model::{LatentDistribution, RtModel, SampleMode};
use crate::tensor::{Graph, Tensor};

/// One decoded future: per-step velocities, their mixtures and integrated positions.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub velocities: Vec<[f64; 3]>,
    pub mixtures: Vec<GaussianMixture>,
    pub positions: Vec<Vec3>,
}

/// How each decoder step picks the velocity fed to the next step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Choice {
    TopMean,
    Sample,
}

fn last_velocity(x: &[[f64; 9]]) -> [f64; 3] {
    let r = x.last().expect("non-empty history");
    [r[3], r[4], r[5]]
}

/// Past encodings and prior probabilities for a batch of histories.
pub fn encode(model: &RtModel, hists: &[&[[f64; 9]]]) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let b = model.bind(&mut g);
    let h = model.encode_past(&mut g, &b, hists)?;
    let p = model.prior(&mut g, &b, h)?;
    Ok((g.value(h).clone(), g.value(p).clone()))
}

/// Autoregressive decode from given encodings and latents.
fn decode<R: Rng + ?Sized>(
    model: &RtModel,
    h: &Tensor,
    r: &Tensor,
    y0: &[[f64; 3]],
    origins: &[Vec3],
    choice: Choice,
    rng: &mut R,
) -> Result<Vec<Rollout>> {
    let batch = y0.len();
    let dt = model.config.dt;
    let mut g = Graph::new();
    let b = model.bind(&mut g);
    let h = g.constant(h.clone());
    let r = g.constant(r.clone());
    let mut state = model.initial_state(&mut g, h);
    let mut prev: Vec<[f64; 3]> = y0.to_vec();
    let mut outs: Vec<Rollout> = (0..batch)
        .map(|_| Rollout {
            velocities: Vec::new(),
            mixtures: Vec::new(),
            positions: Vec::new(),
        })
        .collect();
    for _ in 0..model.config.horizon {
        let data: Vec<f32> = prev.iter().flat_map(|v| v.iter().map(|&x| x as f32)).collect();
        let y_prev = g.constant(Tensor::new(vec![batch, 3], data)?);
        let (head, next) = model.decode_step(&mut g, &b, r, y_prev, state)?;
        state = next;
        let head = g.value(head);
        for (i, out) in outs.iter_mut().enumerate() {
            let gm = model.velocity_mixture(head, i)?;
            let v: Vector3<f64> = match choice {
                Choice::TopMean => gm.mode_surrogate(),
                Choice::Sample => gm.sample(rng),
            };
            prev[i] = [v.x, v.y, v.z];
            out.velocities.push(prev[i]);
            out.mixtures.push(gm);
        }
    }
    for (out, origin) in outs.iter_mut().zip(origins) {
        out.positions = integrate(*origin, &out.velocities, dt);
    }
    Ok(outs)
}

fn check_batch(hists: &[&[[f64; 9]]], origins: &[Vec3]) -> Result<()> {
    if hists.is_empty() || hists.len() != origins.len() {
        return Err(contract("histories and origins must be non-empty and paired"));
    }
    Ok(())
}

/// Most-likely futures: per-dimension argmax latent, then the mean of the
/// heaviest component at every step, integrated from `origins`.
pub fn predict_most_likely_batch(
    model: &RtModel,
    hists: &[&[[f64; 9]]],
    origins: &[Vec3],
) -> Result<Vec<Rollout>> {
    check_batch(hists, origins)?;
    let (h, p) = encode(model, hists)?;
    let n = model.config.latent_dims;
    let mut r = Vec::with_capacity(p.numel());
    let mut dummy = rand::rngs::mock::StepRng::new(0, 0);
    for row in 0..hists.len() {
        let dist = LatentDistribution::new(p.row(row).to_vec());
        r.extend(dist.sample(SampleMode::Argmax, &mut dummy));
    }
    let r = Tensor::new(vec![hists.len(), n], r)?;
    let y0: Vec<_> = hists.iter().map(|x| last_velocity(x)).collect();
    decode(model, &h, &r, &y0, origins, Choice::TopMean, &mut dummy)
}

pub fn predict_most_likely(model: &RtModel, hist: &[[f64; 9]], origin: Vec3) -> Result<Rollout> {
    Ok(predict_most_likely_batch(model, &[hist], &[origin])?.remove(0))
}

/// `k` sampled futures: `r ~ p(r|x)` exactly, then velocities drawn from each
/// step's mixture and fed back.
pub fn sample_trajectories<R: Rng + ?Sized>(
    model: &RtModel,
    hist: &[[f64; 9]],
    origin: Vec3,
    k: usize,
    rng: &mut R,
) -> Result<Vec<Rollout>> {
    if k == 0 {
        return Err(contract("k must be at least 1"));
    }
    let (h1, p1) = encode(model, &[hist])?;
    let hd = h1.data();
    let h = Tensor::new(
        vec![k, hd.len()],
        (0..k).flat_map(|_| hd.iter().copied()).collect(),
    )?;
    let dist = LatentDistribution::new(p1.data().to_vec());
    let r: Vec<f32> = (0..k)
        .flat_map(|_| dist.sample(SampleMode::Hard, rng))
        .collect();
    let r = Tensor::new(vec![k, dist.dims()], r)?;
    let y0 = vec![last_velocity(hist); k];
    decode(model, &h, &r, &y0, &vec![origin; k], Choice::Sample, rng)
}
