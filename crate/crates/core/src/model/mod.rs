//! The trajectory CVAE: past encoder, bidirectional future encoder,
//! Bernoulli prior/posterior heads and a recurrent mixture decoder.

pub mod checkpoint;
pub mod gmm;
pub mod latent;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::Checkpoint;
pub use gmm::{Component, GaussianMixture};
pub use latent::{LatentDistribution, SampleMode};

use crate::error::{contract, Error, Result};
use crate::tensor::{lstm_cell, Graph, LstmWeights, ParamId, ParamStore, Tensor, Var};

pub const FEATURE_DIM: usize = 9;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub hidden_size: usize,
    /// Number of independent Bernoulli latent dimensions.
    pub latent_dims: usize,
    pub gmm_components: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    /// Prediction horizon in steps.
    pub horizon: usize,
    /// Seconds per step.
    pub dt: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_size: 128,
            latent_dims: 5,
            gmm_components: 4,
            input_dim: FEATURE_DIM,
            output_dim: 3,
            horizon: 20,
            dt: 0.05,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0
            || self.latent_dims == 0
            || self.gmm_components == 0
            || self.horizon == 0
        {
            return Err(contract(format!("invalid model config {self:?}")));
        }
        if self.input_dim != FEATURE_DIM || self.output_dim != 3 {
            return Err(contract("model expects 9-d inputs and 3-d outputs"));
        }
        if !(self.dt > 0.0) {
            return Err(contract("dt must be positive"));
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        gmm::HEAD_BLOCKS * self.gmm_components
    }
}

/// Per-group input scaling applied before the encoders
/// (relative position, velocity, acceleration).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureScale {
    pub position: f32,
    pub velocity: f32,
    pub acceleration: f32,
}

impl Default for FeatureScale {
    fn default() -> Self {
        Self {
            position: 1.0,
            velocity: 1.0,
            acceleration: 1.0,
        }
    }
}

impl FeatureScale {
    fn factor(&self, channel: usize) -> f32 {
        match channel / 3 {
            0 => self.position,
            1 => self.velocity,
            _ => self.acceleration,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LstmIds {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LinearIds {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct Ids {
    past: LstmIds,
    fut_fwd: LstmIds,
    fut_bwd: LstmIds,
    fut_proj: LinearIds,
    prior: [LinearIds; 2],
    post: [LinearIds; 2],
    dec: LstmIds,
    head: LinearIds,
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: Var,
    pub b: Var,
}

impl Linear {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let y = g.matmul(x, self.w)?;
        g.add_bias(y, self.b)
    }
}

/// Parameters of one model recorded on a particular graph.
#[derive(Clone, Debug)]
pub struct Bound {
    pub past: LstmWeights,
    pub fut_fwd: LstmWeights,
    pub fut_bwd: LstmWeights,
    pub fut_proj: Linear,
    pub prior: [Linear; 2],
    pub post: [Linear; 2],
    pub dec: LstmWeights,
    pub head: Linear,
}

pub(crate) fn add_lstm(
    store: &mut ParamStore,
    name: &str,
    input: usize,
    hidden: usize,
    rng: &mut ChaCha8Rng,
) -> LstmIds {
    let bound = 1.0 / (hidden as f32).sqrt();
    let w = store.add_uniform(format!("{name}.w"), &[input + hidden, 4 * hidden], bound, rng);
    let mut b = Tensor::zeros(&[4 * hidden]);
    b.data_mut()[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
    let b = store.add(format!("{name}.b"), b);
    LstmIds { w, b }
}

pub(crate) fn add_linear(
    store: &mut ParamStore,
    name: &str,
    input: usize,
    output: usize,
    rng: &mut ChaCha8Rng,
) -> LinearIds {
    let bound = 1.0 / (input as f32).sqrt();
    let w = store.add_uniform(format!("{name}.w"), &[input, output], bound, rng);
    let b = store.add(format!("{name}.b"), Tensor::zeros(&[output]));
    LinearIds { w, b }
}

pub(crate) fn bind_lstm(g: &mut Graph, s: &ParamStore, ids: LstmIds) -> LstmWeights {
    LstmWeights {
        w: g.param(s, ids.w),
        b: g.param(s, ids.b),
    }
}

pub(crate) fn bind_linear(g: &mut Graph, s: &ParamStore, ids: LinearIds) -> Linear {
    Linear {
        w: g.param(s, ids.w),
        b: g.param(s, ids.b),
    }
}

/// Left-pads variable-length sequences so they all end on the last step.
/// Returns, per step, the `[B, D]` inputs and (when any row is padding) a
/// `[B, hidden]` 0/1 mask.
pub(crate) fn left_padded<const D: usize>(
    seqs: &[&[[f64; D]]],
    scale: impl Fn(usize) -> f32,
    hidden: usize,
) -> Vec<(Tensor, Option<Tensor>)> {
    let steps = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
    let batch = seqs.len();
    (0..steps)
        .map(|t| {
            let mut x = Vec::with_capacity(batch * D);
            let mut m = Vec::with_capacity(batch * hidden);
            let mut padded = false;
            for s in seqs {
                let offset = steps - s.len();
                if t >= offset {
                    x.extend(s[t - offset].iter().enumerate().map(|(i, &v)| v as f32 * scale(i)));
                    m.extend(std::iter::repeat(1.0).take(hidden));
                } else {
                    padded = true;
                    x.extend(std::iter::repeat(0.0).take(D));
                    m.extend(std::iter::repeat(0.0).take(hidden));
                }
            }
            let x = Tensor::new(vec![batch, D], x).unwrap();
            let m = padded.then(|| Tensor::new(vec![batch, hidden], m).unwrap());
            (x, m)
        })
        .collect()
}

/// Runs an LSTM over pre-built steps; masked rows keep their previous state.
pub(crate) fn run_lstm(
    g: &mut Graph,
    weights: &LstmWeights,
    steps: impl Iterator<Item = (Tensor, Option<Tensor>)>,
    batch: usize,
    hidden: usize,
) -> Result<(Var, Var)> {
    let mut h = g.constant(Tensor::zeros(&[batch, hidden]));
    let mut c = g.constant(Tensor::zeros(&[batch, hidden]));
    for (x, mask) in steps {
        let x = g.constant(x);
        let (hn, cn) = lstm_cell(g, x, h, c, weights)?;
        match mask {
            None => {
                h = hn;
                c = cn;
            }
            Some(m) => {
                let m = g.constant(m);
                h = masked_update(g, h, hn, m)?;
                c = masked_update(g, c, cn, m)?;
            }
        }
    }
    Ok((h, c))
}

fn masked_update(g: &mut Graph, old: Var, new: Var, mask: Var) -> Result<Var> {
    let d = g.sub(new, old)?;
    let d = g.mul(d, mask)?;
    g.add(old, d)
}

#[derive(Clone, Debug)]
pub struct RtModel {
    pub config: ModelConfig,
    pub feature_scale: FeatureScale,
    pub params: ParamStore,
    ids: Ids,
    training: bool,
}

impl RtModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let h = config.hidden_size;
        let n = config.latent_dims;
        let ids = Ids {
            past: add_lstm(&mut s, "past", FEATURE_DIM, h, &mut rng),
            fut_fwd: add_lstm(&mut s, "future_fwd", 3, h, &mut rng),
            fut_bwd: add_lstm(&mut s, "future_bwd", 3, h, &mut rng),
            fut_proj: add_linear(&mut s, "future_proj", 2 * h, h, &mut rng),
            prior: [
                add_linear(&mut s, "prior.0", h, h, &mut rng),
                add_linear(&mut s, "prior.1", h, n, &mut rng),
            ],
            post: [
                add_linear(&mut s, "posterior.0", 2 * h, h, &mut rng),
                add_linear(&mut s, "posterior.1", h, n, &mut rng),
            ],
            dec: add_lstm(&mut s, "decoder", 3 + n, h, &mut rng),
            head: add_linear(&mut s, "head", h, config.head_width(), &mut rng),
        };
        Ok(Self {
            config,
            feature_scale: FeatureScale::default(),
            params: s,
            ids,
            training: false,
        })
    }

    pub fn train(&mut self) {
        self.training = true;
    }

    pub fn eval(&mut self) {
        self.training = false;
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn bind(&self, g: &mut Graph) -> Bound {
        let s = &self.params;
        let ids = &self.ids;
        Bound {
            past: bind_lstm(g, s, ids.past),
            fut_fwd: bind_lstm(g, s, ids.fut_fwd),
            fut_bwd: bind_lstm(g, s, ids.fut_bwd),
            fut_proj: bind_linear(g, s, ids.fut_proj),
            prior: [bind_linear(g, s, ids.prior[0]), bind_linear(g, s, ids.prior[1])],
            post: [bind_linear(g, s, ids.post[0]), bind_linear(g, s, ids.post[1])],
            dec: bind_lstm(g, s, ids.dec),
            head: bind_linear(g, s, ids.head),
        }
    }

    /// Past-trajectory encoder. Each history is a sequence of 9-d rows
    /// (relative position, velocity, acceleration); returns `[B, hidden]`.
    pub fn encode_past(&self, g: &mut Graph, b: &Bound, x: &[&[[f64; 9]]]) -> Result<Var> {
        if x.is_empty() {
            return Err(contract("empty history batch"));
        }
        if let Some(short) = x.iter().find(|s| s.len() < 2) {
            return Err(contract(format!(
                "history needs at least 2 rows, got {}",
                short.len()
            )));
        }
        let h = self.config.hidden_size;
        let fs = self.feature_scale;
        let steps = left_padded(x, |i| fs.factor(i), h);
        let (hs, _) = run_lstm(g, &b.past, steps.into_iter(), x.len(), h)?;
        Ok(hs)
    }

    /// Bidirectional future encoder over ground-truth future velocities.
    /// `valid[i][t]` is false for steps past the end of a trajectory.
    pub fn encode_future(
        &self,
        g: &mut Graph,
        b: &Bound,
        y: &[&[[f64; 3]]],
        valid: &[&[bool]],
    ) -> Result<Var> {
        if !self.training {
            return Err(contract("encode_future is only available in training mode"));
        }
        let h = self.config.hidden_size;
        let batch = y.len();
        let len = y.first().map_or(0, |s| s.len());
        if batch == 0 || len == 0 || y.iter().any(|s| s.len() != len) || valid.len() != batch {
            return Err(contract("future batch must be non-empty and rectangular"));
        }
        let vs = self.feature_scale.velocity;
        let step = |t: usize| {
            let mut x = Vec::with_capacity(batch * 3);
            let mut m = Vec::with_capacity(batch * h);
            let mut padded = false;
            for (seq, ok) in y.iter().zip(valid) {
                let keep = ok[t];
                padded |= !keep;
                x.extend(seq[t].iter().map(|&v| if keep { v as f32 * vs } else { 0.0 }));
                m.extend(std::iter::repeat(if keep { 1.0 } else { 0.0 }).take(h));
            }
            (
                Tensor::new(vec![batch, 3], x).unwrap(),
                padded.then(|| Tensor::new(vec![batch, h], m).unwrap()),
            )
        };
        let (hf, _) = run_lstm(g, &b.fut_fwd, (0..len).map(step), batch, h)?;
        let (hb, _) = run_lstm(g, &b.fut_bwd, (0..len).rev().map(step), batch, h)?;
        let both = g.concat(&[hf, hb], 1)?;
        b.fut_proj.forward(g, both)
    }

    fn mlp(g: &mut Graph, layers: &[Linear; 2], x: Var) -> Result<Var> {
        let z = layers[0].forward(g, x)?;
        let z = g.relu(z)?;
        let logits = layers[1].forward(g, z)?;
        latent::probs_from_logits(g, logits)
    }

    /// Prior Bernoulli probabilities `[B, N]` from the past encoding.
    pub fn prior(&self, g: &mut Graph, b: &Bound, h: Var) -> Result<Var> {
        Self::mlp(g, &b.prior, h)
    }

    /// Posterior Bernoulli probabilities `[B, N]` from past and future encodings.
    pub fn posterior(&self, g: &mut Graph, b: &Bound, h: Var, h_plus: Var) -> Result<Var> {
        let x = g.concat(&[h, h_plus], 1)?;
        Self::mlp(g, &b.post, x)
    }

    /// One decoder step: consumes the previous velocity `[B, 3]` (m/s) and the
    /// latent `[B, N]`, returns the raw mixture head `[B, 10C]` and new state.
    /// The head lives in feature-scaled velocity units; see [`Self::velocity_mixture`].
    pub fn decode_step(
        &self,
        g: &mut Graph,
        b: &Bound,
        r: Var,
        y_prev: Var,
        state: (Var, Var),
    ) -> Result<(Var, (Var, Var))> {
        let y_in = g.scale(y_prev, self.feature_scale.velocity)?;
        let x = g.concat(&[y_in, r], 1)?;
        let (h, c) = lstm_cell(g, x, state.0, state.1, &b.dec)?;
        let head = b.head.forward(g, h)?;
        Ok((head, (h, c)))
    }

    /// Row `row` of a decoder head as a mixture over velocities in m/s.
    pub fn velocity_mixture(&self, head: &Tensor, row: usize) -> Result<gmm::GaussianMixture> {
        let gm = gmm::mixture_from_head(head, row, self.config.gmm_components)?;
        Ok(gm.scaled(1.0 / self.feature_scale.velocity as f64))
    }

    /// Decoder state at the first prediction step.
    pub fn initial_state(&self, g: &mut Graph, h_past: Var) -> (Var, Var) {
        let batch = g.shape(h_past)[0];
        let c = g.constant(Tensor::zeros(&[batch, self.config.hidden_size]));
        (h_past, c)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        let c = &self.config;
        ck.set("kind", "robot-trajectron");
        ck.set("hidden_size", c.hidden_size);
        ck.set("latent_dims", c.latent_dims);
        ck.set("gmm_components", c.gmm_components);
        ck.set("input_dim", c.input_dim);
        ck.set("output_dim", c.output_dim);
        ck.set("horizon", c.horizon);
        ck.set("dt", c.dt);
        let fs = self.feature_scale;
        ck.set(
            "feature_scale",
            format!("{},{},{}", fs.position, fs.velocity, fs.acceleration),
        );
        for (name, t) in self.params.iter() {
            ck.tensors
                .push((name.to_string(), t.shape().to_vec(), t.data().to_vec()));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.get("kind")? != "robot-trajectron" {
            return Err(Error::Checkpoint(format!(
                "checkpoint kind `{}` is not a trajectory model",
                ck.get("kind")?
            )));
        }
        let config = ModelConfig {
            hidden_size: ck.parse("hidden_size")?,
            latent_dims: ck.parse("latent_dims")?,
            gmm_components: ck.parse("gmm_components")?,
            input_dim: ck.parse("input_dim")?,
            output_dim: ck.parse("output_dim")?,
            horizon: ck.parse("horizon")?,
            dt: ck.parse("dt")?,
        };
        let mut model = Self::new(config, 0)?;
        let fs: Vec<f32> = ck
            .get("feature_scale")?
            .split(',')
            .map(|v| v.parse::<f32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Checkpoint("invalid feature_scale".into()))?;
        if fs.len() != 3 {
            return Err(Error::Checkpoint("feature_scale needs 3 values".into()));
        }
        model.feature_scale = FeatureScale {
            position: fs[0],
            velocity: fs[1],
            acceleration: fs[2],
        };
        load_params(&mut model.params, ck)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

pub(crate) fn load_params(store: &mut ParamStore, ck: &Checkpoint) -> Result<()> {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_string();
        let (shape, data) = ck.tensor(&name)?;
        if shape != store.get(id).shape() {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has shape {shape:?}, expected {:?}",
                store.get(id).shape()
            )));
        }
        store.set_value(id, data)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            hidden_size: 6,
            latent_dims: 3,
            gmm_components: 2,
            horizon: 4,
            ..ModelConfig::default()
        }
    }

    fn history(n: usize, phase: f64) -> Vec<[f64; 9]> {
        (0..n)
            .map(|t| {
                let s = (t as f64 * 0.7 + phase).sin();
                [s, 0.5 * s, -s, 0.1, s * s, 0.2, -0.3 * s, 0.0, 0.4]
            })
            .collect()
    }

    fn encode(m: &RtModel, x: &[&[[f64; 9]]]) -> Vec<f32> {
        let mut g = Graph::new();
        let b = m.bind(&mut g);
        let h = m.encode_past(&mut g, &b, x).unwrap();
        g.value(h).data().to_vec()
    }

    #[test]
    fn encoding_is_deterministic_and_order_sensitive() {
        let m = RtModel::new(tiny(), 1).unwrap();
        let x = history(7, 0.0);
        let a = encode(&m, &[&x]);
        assert_eq!(a, encode(&m, &[&x]));
        let mut rev = x.clone();
        rev.reverse();
        assert_ne!(a, encode(&m, &[&rev]));
    }

    #[test]
    fn padding_does_not_change_encoding() {
        let m = RtModel::new(tiny(), 2).unwrap();
        let short = history(3, 0.3);
        let long = history(9, 1.1);
        let alone = encode(&m, &[&short]);
        let batched = encode(&m, &[&long, &short]);
        for (a, b) in alone.iter().zip(&batched[6..]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn short_history_is_rejected() {
        let m = RtModel::new(tiny(), 2).unwrap();
        let x = history(1, 0.0);
        let mut g = Graph::new();
        let b = m.bind(&mut g);
        assert!(matches!(
            m.encode_past(&mut g, &b, &[&x]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn zero_weights_encode_to_zero() {
        let mut m = RtModel::new(tiny(), 3).unwrap();
        let ids: Vec<_> = m.params.ids().collect();
        for id in ids {
            let n = m.params.get(id).numel();
            m.params.set_value(id, &vec![0.0; n]).unwrap();
        }
        let x = history(5, 0.0);
        assert!(encode(&m, &[&x]).iter().all(|&v| v == 0.0));
        m.train();
        let y = vec![[0.1, 0.2, 0.3]; 4];
        let ok = vec![true; 4];
        let mut g = Graph::new();
        let b = m.bind(&mut g);
        let hp = m.encode_future(&mut g, &b, &[&y], &[&ok]).unwrap();
        assert!(g.value(hp).data().iter().all(|&v| v == 0.0));
        let h = g.constant(Tensor::zeros(&[1, 6]));
        let p = m.prior(&mut g, &b, h).unwrap();
        assert!(g.value(p).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn future_encoder_requires_training_mode() {
        let m = RtModel::new(tiny(), 4).unwrap();
        let y = vec![[0.1, 0.2, 0.3]; 4];
        let ok = vec![true; 4];
        let mut g = Graph::new();
        let b = m.bind(&mut g);
        assert!(m.encode_future(&mut g, &b, &[&y], &[&ok]).is_err());
    }

    #[test]
    fn future_encoder_is_direction_and_noise_sensitive() {
        let mut m = RtModel::new(tiny(), 5).unwrap();
        m.train();
        let y: Vec<[f64; 3]> = (0..4).map(|t| [0.1 * t as f64, 0.05, -0.02 * t as f64]).collect();
        let mut rev = y.clone();
        rev.reverse();
        let noisy: Vec<[f64; 3]> = y.iter().map(|v| [v[0] + 0.03, v[1] - 0.02, v[2]]).collect();
        let ok = vec![true; 4];
        let run = |seq: &Vec<[f64; 3]>| {
            let mut g = Graph::new();
            let b = m.bind(&mut g);
            let hp = m.encode_future(&mut g, &b, &[seq], &[&ok]).unwrap();
            g.value(hp).data().to_vec()
        };
        let base = run(&y);
        assert_ne!(base, run(&rev));
        assert_ne!(base, run(&noisy));
    }

    #[test]
    fn prior_probabilities_stay_clamped_under_extreme_inputs() {
        let m = RtModel::new(tiny(), 6).unwrap();
        for v in [1e3f32, -1e3] {
            let mut g = Graph::new();
            let b = m.bind(&mut g);
            let h = g.constant(Tensor::full(&[2, 6], v));
            let p = m.prior(&mut g, &b, h).unwrap();
            for &x in g.value(p).data() {
                assert!((latent::PROB_CLAMP..=1.0 - latent::PROB_CLAMP).contains(&x));
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut m = RtModel::new(tiny(), 7).unwrap();
        m.feature_scale.velocity = 4.0;
        let mut buf = Vec::new();
        m.to_checkpoint().write_to(&mut buf).unwrap();
        let back = RtModel::from_checkpoint(&Checkpoint::read_from(buf.as_slice()).unwrap()).unwrap();
        assert_eq!(back.config, m.config);
        assert_eq!(back.feature_scale, m.feature_scale);
        for ((_, a), (_, b)) in back.params.iter().zip(m.params.iter()) {
            assert_eq!(a.data(), b.data());
        }
    }
}
