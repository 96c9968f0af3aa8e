//! ELBO training loop.

pub mod adam;

use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;

use crate::data::sim::stream_rng;
use crate::data::{featurize, FeaturizedSample, Trajectory};
use crate::error::{contract, Error, Result};
use crate::eval::ade_fde;
use crate::model::gmm::head_log_density;
use crate::model::latent::{kl_graph, relaxed_sample_graph};
use crate::model::{Bound, FeatureScale, RtModel};
use crate::predict::predict_most_likely_batch;
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f32,
    pub batch: usize,
    pub epochs: usize,
    /// KL weight.
    pub beta: f32,
    /// Ramp beta linearly from 0 over the first 10% of steps.
    pub beta_anneal: bool,
    pub grad_clip: f32,
    pub seed: u64,
    /// Observation windows drawn per trajectory per epoch.
    pub windows_per_traj: usize,
    pub temperature: f32,
    pub temperature_decay: f32,
    pub temperature_min: f32,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch: 256,
            epochs: 20,
            beta: 1.0,
            beta_anneal: false,
            grad_clip: 1.0,
            seed: 0,
            windows_per_traj: 1,
            temperature: 1.0,
            temperature_decay: 0.9995,
            temperature_min: 0.3,
            patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.beta >= 0.0) || self.batch == 0 || self.windows_per_traj == 0 {
            return Err(contract("lr > 0, beta >= 0, batch >= 1 and windows >= 1 required"));
        }
        if !(self.temperature > 0.0 && self.temperature_min > 0.0) {
            return Err(contract("temperatures must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ElboOptions {
    pub beta: f32,
    pub temperature: f32,
    pub straight_through: bool,
}

/// Loss node plus its two terms (batch means) for reporting.
#[derive(Clone, Copy, Debug)]
pub struct ElboParts {
    pub loss: Var,
    pub nll: Var,
    pub kl: Var,
}

/// Negative ELBO averaged over the batch: masked teacher-forced mixture NLL
/// of the future velocities plus `beta` times the Bernoulli KL. `uniform`
/// (`[B, N]`, values in (0,1)) drives the single latent sample per row.
///
/// Velocities are measured in feature-scaled units, so the NLL differs from
/// the m/s density by the constant `3 ln s` per step.
pub fn elbo_loss(
    model: &RtModel,
    g: &mut Graph,
    b: &Bound,
    samples: &[&FeaturizedSample],
    uniform: &Tensor,
    opts: ElboOptions,
) -> Result<ElboParts> {
    let batch = samples.len();
    if batch == 0 {
        return Err(contract("empty batch"));
    }
    let horizon = model.config.horizon;
    if samples.iter().any(|s| s.y.len() != horizon || s.mask.len() != horizon) {
        return Err(contract("future length must equal the model horizon"));
    }
    let xs: Vec<&[[f64; 9]]> = samples.iter().map(|s| s.x.as_slice()).collect();
    let ys: Vec<&[[f64; 3]]> = samples.iter().map(|s| s.y.as_slice()).collect();
    let ms: Vec<&[bool]> = samples.iter().map(|s| s.mask.as_slice()).collect();

    let h = model.encode_past(g, b, &xs)?;
    let h_plus = model.encode_future(g, b, &ys, &ms)?;
    let p = model.prior(g, b, h)?;
    let q = model.posterior(g, b, h, h_plus)?;
    let r = relaxed_sample_graph(g, q, uniform, opts.temperature, opts.straight_through)?;

    let last = samples.iter().map(|s| s.mask.iter().rposition(|&m| m).map_or(0, |i| i + 1)).max().unwrap_or(0);
    let mut state = model.initial_state(g, h);
    let mut y_prev: Vec<f32> = samples
        .iter()
        .flat_map(|s| s.x.last().unwrap()[3..6].iter().map(|&v| v as f32))
        .collect();
    let mut total: Option<Var> = None;
    let vs = model.feature_scale.velocity;
    for t in 0..last {
        let yp = g.constant(Tensor::new(vec![batch, 3], y_prev)?);
        let (head, next) = model.decode_step(g, b, r, yp, state)?;
        state = next;
        let target: Vec<[f32; 3]> = samples
            .iter()
            .map(|s| [s.y[t][0] as f32, s.y[t][1] as f32, s.y[t][2] as f32])
            .collect();
        // The head models velocities in feature-scaled units.
        let scaled: Vec<[f32; 3]> = target.iter().map(|v| v.map(|x| x * vs)).collect();
        let ll = head_log_density(g, head, &scaled, model.config.gmm_components)?;
        let mask: Vec<f32> = samples.iter().map(|s| if s.mask[t] { 1.0 } else { 0.0 }).collect();
        let mask = g.constant(Tensor::new(vec![batch, 1], mask)?);
        let ll = g.mul(ll, mask)?;
        total = Some(match total {
            None => ll,
            Some(acc) => g.add(acc, ll)?,
        });
        y_prev = target.iter().flatten().copied().collect();
    }
    let inv_b = 1.0 / batch as f32;
    let nll = match total {
        Some(t) => {
            let s = g.sum(t)?;
            g.scale(s, -inv_b)?
        }
        None => g.constant(Tensor::scalar(0.0)),
    };
    let kl = kl_graph(g, q, p)?;
    let kl = g.sum(kl)?;
    let kl = g.scale(kl, inv_b)?;
    let weighted = g.scale(kl, opts.beta)?;
    let loss = g.add(nll, weighted)?;
    Ok(ElboParts { loss, nll, kl })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    /// Most-likely ADE on the validation windows, millimetres.
    pub val_ade: f64,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    /// Weights from the epoch with the best validation ADE.
    pub model: RtModel,
    pub report: Vec<EpochReport>,
    pub best_epoch: usize,
    pub skipped_batches: usize,
}

/// Where training artefacts go; both optional.
#[derive(Clone, Debug, Default)]
pub struct TrainOutputs {
    pub checkpoint: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

/// Per-group input scale `1 / rms` from the midpoint history of every trajectory.
pub fn fit_feature_scale(trajs: &[Trajectory]) -> FeatureScale {
    let mut sums = [0.0f64; 3];
    let mut count = 0usize;
    for t in trajs {
        let mid = (t.positions.len() / 2).max(2).min(t.positions.len() - 1);
        let x = crate::data::history_features(&t.positions[..=mid], t.dt);
        for row in &x {
            for (gi, s) in sums.iter_mut().enumerate() {
                *s += row[3 * gi..3 * gi + 3].iter().map(|v| v * v).sum::<f64>();
            }
        }
        count += 3 * x.len();
    }
    let f = |s: f64| {
        let rms = (s / count.max(1) as f64).sqrt();
        if rms > 1e-9 {
            (1.0 / rms) as f32
        } else {
            1.0
        }
    };
    FeatureScale {
        position: f(sums[0]),
        velocity: f(sums[1]),
        acceleration: f(sums[2]),
    }
}

/// Observation times used for evaluation: a quarter, half and three
/// quarters of the way through the span that leaves a complete future.
pub fn eval_points(traj: &Trajectory, horizon: usize) -> Vec<usize> {
    let n = traj.positions.len();
    if n < horizon + 3 {
        return Vec::new();
    }
    let hi = n - 1 - horizon;
    [0.25, 0.5, 0.75]
        .iter()
        .map(|f| 2 + ((hi - 2) as f64 * f).round() as usize)
        .collect()
}

/// Fixed evaluation windows at [`eval_points`] of every trajectory.
pub fn eval_windows(trajs: &[Trajectory], horizon: usize) -> Vec<FeaturizedSample> {
    let mut out = Vec::new();
    for t in trajs {
        for t_obs in eval_points(t, horizon) {
            if let Ok(s) = featurize(t, t_obs, horizon) {
                out.push(s);
            }
        }
    }
    out
}

/// Truth positions of a window's future.
pub fn future_positions(s: &FeaturizedSample, dt: f64) -> Vec<crate::data::Vec3> {
    crate::data::integrate(s.origin, &s.y, dt)
}

/// Mean most-likely ADE over windows, millimetres.
pub fn most_likely_ade(model: &RtModel, windows: &[FeaturizedSample]) -> Result<f64> {
    if windows.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for chunk in windows.chunks(256) {
        let xs: Vec<&[[f64; 9]]> = chunk.iter().map(|s| s.x.as_slice()).collect();
        let origins: Vec<_> = chunk.iter().map(|s| s.origin).collect();
        let preds = predict_most_likely_batch(model, &xs, &origins)?;
        for (s, p) in chunk.iter().zip(&preds) {
            total += ade_fde(&p.positions, &future_positions(s, model.config.dt))?.0;
        }
    }
    Ok(1000.0 * total / windows.len() as f64)
}

/// Training windows for one epoch, length-bucketed into batches in shuffled order.
pub(crate) fn epoch_batches<R: Rng>(
    trajs: &[Trajectory],
    cfg: &TrainConfig,
    horizon: usize,
    rng: &mut R,
) -> Result<Vec<Vec<FeaturizedSample>>> {
    let mut windows = Vec::with_capacity(trajs.len() * cfg.windows_per_traj);
    for t in trajs {
        let n = t.positions.len();
        for _ in 0..cfg.windows_per_traj {
            let t_obs = rng.gen_range(2..=n - 2);
            windows.push(featurize(t, t_obs, horizon)?);
        }
    }
    windows.sort_by_key(|s| s.x.len());
    let mut batches: Vec<Vec<FeaturizedSample>> = Vec::new();
    let mut it = windows.into_iter().peekable();
    while it.peek().is_some() {
        batches.push(it.by_ref().take(cfg.batch).collect());
    }
    batches.shuffle(rng);
    Ok(batches)
}

fn uniform_noise<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(1e-6f32..1.0 - 1e-6)).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

/// Trains `model` on `train`, selecting the epoch with the best most-likely
/// ADE on `val`. Input scaling is fitted on `train` first.
pub fn train(
    mut model: RtModel,
    train: &[Trajectory],
    val: &[Trajectory],
    cfg: &TrainConfig,
    outputs: &TrainOutputs,
) -> Result<TrainResult> {
    cfg.validate()?;
    let train: Vec<Trajectory> = train.iter().filter(|t| t.positions.len() >= 4).cloned().collect();
    if train.is_empty() {
        return Err(contract("no trainable trajectories"));
    }
    let horizon = model.config.horizon;
    model.feature_scale = fit_feature_scale(&train);
    let val_windows = eval_windows(val, horizon);
    let mut report_file = match &outputs.report {
        Some(p) => Some(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => None,
    };

    let mut rng = stream_rng(cfg.seed, 0);
    let mut opt = Adam::new(&model.params, cfg.lr);
    let batches_per_epoch = (train.len() * cfg.windows_per_traj).div_ceil(cfg.batch);
    let total_steps = (batches_per_epoch * cfg.epochs).max(1);
    let mut temperature = cfg.temperature;
    let mut best: Option<(f64, RtModel, usize)> = None;
    let mut since_best = 0;
    let mut report = Vec::new();
    let mut skipped = 0;

    for epoch in 1..=cfg.epochs {
        let batches = epoch_batches(&train, cfg, horizon, &mut rng)?;
        model.train();
        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;
        for (bi, batch) in batches.iter().enumerate() {
            let step = opt.steps() as usize;
            let beta = if cfg.beta_anneal {
                cfg.beta * (step as f32 / (0.1 * total_steps as f32)).min(1.0)
            } else {
                cfg.beta
            };
            let noise = uniform_noise(batch.len(), model.config.latent_dims, &mut rng);
            let refs: Vec<&FeaturizedSample> = batch.iter().collect();
            let mut g = Graph::new();
            let b = model.bind(&mut g);
            let opts = ElboOptions {
                beta,
                temperature,
                straight_through: true,
            };
            let parts = match elbo_loss(&model, &mut g, &b, &refs, &noise, opts) {
                Ok(p) => p,
                Err(Error::NonFinite { op }) => {
                    tracing::warn!(epoch, batch = bi, op, "non-finite loss, batch skipped");
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            model.params.zero_grad();
            match g.backward_into(parts.loss, &mut model.params) {
                Ok(_) => {}
                Err(Error::NonFinite { op }) => {
                    tracing::warn!(epoch, batch = bi, op, "non-finite gradient, batch skipped");
                    model.params.zero_grad();
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            }
            if !model.params.grad_norm().is_finite() {
                model.params.zero_grad();
                skipped += 1;
                continue;
            }
            model.params.clip_grad_norm(cfg.grad_clip);
            opt.step(&mut model.params);
            loss_sum += g.value(parts.loss).item() as f64;
            loss_n += 1;
            temperature = (temperature * cfg.temperature_decay).max(cfg.temperature_min);
        }
        model.eval();
        let val_ade = most_likely_ade(&model, &val_windows)?;
        let rec = EpochReport {
            epoch,
            train_loss: loss_sum / loss_n.max(1) as f64,
            val_ade,
        };
        tracing::info!(epoch, train_loss = rec.train_loss, val_ade, "epoch done");
        if let Some(f) = report_file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&rec).expect("report serialises"))?;
            f.flush()?;
        }
        report.push(rec);
        let improved = match &best {
            None => true,
            Some((b, _, _)) => val_ade < *b || b.is_nan(),
        };
        if improved {
            if let Some(p) = &outputs.checkpoint {
                model.save(p)?;
            }
            best = Some((val_ade, model.clone(), epoch));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                tracing::info!(epoch, "early stop");
                break;
            }
        }
    }
    let (_, mut best_model, best_epoch) = best.ok_or_else(|| contract("no epochs run"))?;
    best_model.eval();
    Ok(TrainResult {
        model: best_model,
        report,
        best_epoch,
        skipped_batches: skipped,
    })
}
