//! Deterministic residual LSTM: encodes the same 9-d history, then emits one
//! velocity per step which is added to the running position.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::sim::stream_rng;
use crate::data::{integrate, FeaturizedSample, Trajectory, Vec3};
use crate::error::{contract, Error, Result};
use crate::model::{
    add_linear, add_lstm, bind_linear, bind_lstm, left_padded, load_params, run_lstm, Checkpoint,
    FeatureScale, LinearIds, LstmIds, FEATURE_DIM,
};
use crate::tensor::{lstm_cell, Graph, ParamStore, Tensor, Var};
use crate::train::{
    epoch_batches, eval_windows, fit_feature_scale, future_positions, Adam, EpochReport, TrainConfig,
};

use super::ade_fde;

#[derive(Clone, Debug)]
pub struct VanillaLstm {
    pub hidden_size: usize,
    pub horizon: usize,
    pub dt: f64,
    pub feature_scale: FeatureScale,
    pub params: ParamStore,
    enc: LstmIds,
    dec: LstmIds,
    head: LinearIds,
}

impl VanillaLstm {
    pub fn new(hidden_size: usize, horizon: usize, dt: f64, seed: u64) -> Result<Self> {
        if hidden_size == 0 || horizon == 0 || !(dt > 0.0) {
            return Err(contract("baseline needs positive hidden size, horizon and dt"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let enc = add_lstm(&mut params, "enc", FEATURE_DIM, hidden_size, &mut rng);
        let dec = add_lstm(&mut params, "dec", 3, hidden_size, &mut rng);
        let head = add_linear(&mut params, "head", hidden_size, 3, &mut rng);
        Ok(Self {
            hidden_size,
            horizon,
            dt,
            feature_scale: FeatureScale::default(),
            params,
            enc,
            dec,
            head,
        })
    }

    /// Runs the decoder. With `teacher` the ground-truth velocities are fed
    /// back; otherwise the model's own outputs are. Returns one `[B, 3]`
    /// velocity node (m/s) per step.
    fn forward(
        &self,
        g: &mut Graph,
        hists: &[&[[f64; 9]]],
        steps: usize,
        teacher: Option<&[&FeaturizedSample]>,
    ) -> Result<Vec<Var>> {
        let batch = hists.len();
        let h = self.hidden_size;
        let enc = bind_lstm(g, &self.params, self.enc);
        let dec = bind_lstm(g, &self.params, self.dec);
        let head = bind_linear(g, &self.params, self.head);
        let fs = self.feature_scale;
        let factor = |i: usize| match i / 3 {
            0 => fs.position,
            1 => fs.velocity,
            _ => fs.acceleration,
        };
        let (mut hs, mut cs) = run_lstm(g, &enc, left_padded(hists, factor, h).into_iter(), batch, h)?;
        let y0: Vec<f32> = hists
            .iter()
            .flat_map(|x| x.last().unwrap()[3..6].iter().map(|&v| v as f32))
            .collect();
        let mut prev = g.constant(Tensor::new(vec![batch, 3], y0)?);
        let mut outs = Vec::with_capacity(steps);
        for t in 0..steps {
            let inp = g.scale(prev, fs.velocity)?;
            let (hn, cn) = lstm_cell(g, inp, hs, cs, &dec)?;
            hs = hn;
            cs = cn;
            let out = g.matmul(hs, head.w)?;
            let out = g.add_bias(out, head.b)?;
            let v = g.scale(out, 1.0 / fs.velocity)?;
            outs.push(v);
            prev = match teacher {
                Some(samples) => {
                    let d: Vec<f32> = samples
                        .iter()
                        .flat_map(|s| s.y[t].iter().map(|&v| v as f32))
                        .collect();
                    g.constant(Tensor::new(vec![batch, 3], d)?)
                }
                None => v,
            };
        }
        Ok(outs)
    }

    /// Masked mean squared velocity error under teacher forcing.
    pub fn loss(&self, g: &mut Graph, samples: &[&FeaturizedSample]) -> Result<Var> {
        let hists: Vec<&[[f64; 9]]> = samples.iter().map(|s| s.x.as_slice()).collect();
        let outs = self.forward(g, &hists, self.horizon, Some(samples))?;
        let batch = samples.len();
        let mut total = None;
        let mut count = 0usize;
        for (t, v) in outs.into_iter().enumerate() {
            let mut target = Vec::with_capacity(batch * 3);
            let mut mask = Vec::with_capacity(batch * 3);
            for s in samples {
                let m = if s.mask[t] { 1.0 } else { 0.0 };
                count += if s.mask[t] { 3 } else { 0 };
                target.extend(s.y[t].iter().map(|&y| y as f32));
                mask.extend([m; 3]);
            }
            let target = g.constant(Tensor::new(vec![batch, 3], target)?);
            let mask = g.constant(Tensor::new(vec![batch, 3], mask)?);
            let d = g.sub(v, target)?;
            let d = g.mul(d, mask)?;
            let sq = g.mul(d, d)?;
            let s = g.sum(sq)?;
            total = Some(match total {
                None => s,
                Some(acc) => g.add(acc, s)?,
            });
        }
        let total = total.ok_or_else(|| contract("empty horizon"))?;
        g.scale(total, 1.0 / count.max(1) as f32)
    }

    /// Autoregressive velocity rollout integrated from `origins`.
    pub fn predict_batch(&self, hists: &[&[[f64; 9]]], origins: &[Vec3]) -> Result<Vec<Vec<Vec3>>> {
        if hists.is_empty() || hists.len() != origins.len() {
            return Err(contract("histories and origins must be non-empty and paired"));
        }
        let mut g = Graph::new();
        let outs = self.forward(&mut g, hists, self.horizon, None)?;
        Ok((0..hists.len())
            .map(|i| {
                let vel: Vec<[f64; 3]> = outs
                    .iter()
                    .map(|&v| {
                        let r = g.value(v).row(i);
                        [r[0] as f64, r[1] as f64, r[2] as f64]
                    })
                    .collect();
                integrate(origins[i], &vel, self.dt)
            })
            .collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.set("kind", "vanilla-lstm");
        ck.set("hidden_size", self.hidden_size);
        ck.set("horizon", self.horizon);
        ck.set("dt", self.dt);
        let fs = self.feature_scale;
        ck.set("feature_scale", format!("{},{},{}", fs.position, fs.velocity, fs.acceleration));
        for (name, t) in self.params.iter() {
            ck.tensors.push((name.to_string(), t.shape().to_vec(), t.data().to_vec()));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.get("kind")? != "vanilla-lstm" {
            return Err(Error::Checkpoint("not a vanilla-lstm checkpoint".into()));
        }
        let mut m = Self::new(ck.parse("hidden_size")?, ck.parse("horizon")?, ck.parse("dt")?, 0)?;
        let fs: Vec<f32> = ck
            .get("feature_scale")?
            .split(',')
            .filter_map(|v| v.parse().ok())
            .collect();
        if fs.len() != 3 {
            return Err(Error::Checkpoint("invalid feature_scale".into()));
        }
        m.feature_scale = FeatureScale {
            position: fs[0],
            velocity: fs[1],
            acceleration: fs[2],
        };
        load_params(&mut m.params, ck)?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Mean ADE (mm) of the baseline over fixed windows.
pub fn baseline_ade(model: &VanillaLstm, windows: &[FeaturizedSample]) -> Result<(f64, f64)> {
    if windows.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let (mut ade, mut fde) = (0.0, 0.0);
    for chunk in windows.chunks(256) {
        let xs: Vec<&[[f64; 9]]> = chunk.iter().map(|s| s.x.as_slice()).collect();
        let origins: Vec<_> = chunk.iter().map(|s| s.origin).collect();
        for (s, p) in chunk.iter().zip(model.predict_batch(&xs, &origins)?) {
            let (a, f) = ade_fde(&p, &future_positions(s, model.dt))?;
            ade += a;
            fde += f;
        }
    }
    let n = windows.len() as f64;
    Ok((1000.0 * ade / n, 1000.0 * fde / n))
}

/// Trains the baseline with the same optimiser, batching and model selection
/// as the main model.
pub fn train_baseline(
    mut model: VanillaLstm,
    train: &[Trajectory],
    val: &[Trajectory],
    cfg: &TrainConfig,
) -> Result<(VanillaLstm, Vec<EpochReport>)> {
    cfg.validate()?;
    let train: Vec<Trajectory> = train.iter().filter(|t| t.positions.len() >= 4).cloned().collect();
    if train.is_empty() {
        return Err(contract("no trainable trajectories"));
    }
    model.feature_scale = fit_feature_scale(&train);
    let val_windows = eval_windows(val, model.horizon);
    let mut rng = stream_rng(cfg.seed, 1);
    let mut opt = Adam::new(&model.params, cfg.lr);
    let mut best: Option<(f64, VanillaLstm)> = None;
    let mut since_best = 0;
    let mut report = Vec::new();
    for epoch in 1..=cfg.epochs {
        let batches = epoch_batches(&train, cfg, model.horizon, &mut rng)?;
        let mut loss_sum = 0.0;
        for batch in &batches {
            let refs: Vec<&FeaturizedSample> = batch.iter().collect();
            let mut g = Graph::new();
            let loss = model.loss(&mut g, &refs)?;
            model.params.zero_grad();
            g.backward_into(loss, &mut model.params)?;
            model.params.clip_grad_norm(cfg.grad_clip);
            opt.step(&mut model.params);
            loss_sum += g.value(loss).item() as f64;
        }
        let (val_ade, _) = baseline_ade(&model, &val_windows)?;
        tracing::info!(epoch, val_ade, "baseline epoch done");
        report.push(EpochReport {
            epoch,
            train_loss: loss_sum / batches.len().max(1) as f64,
            val_ade,
        });
        if best.as_ref().map_or(true, |(b, _)| val_ade < *b || b.is_nan()) {
            best = Some((val_ade, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let (_, m) = best.ok_or_else(|| contract("no epochs run"))?;
    Ok((m, report))
}
