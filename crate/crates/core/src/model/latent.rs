//! Factorised Bernoulli latent variable.

use rand::Rng;

use crate::error::Result;
use crate::tensor::{Graph, Tensor, Var};

pub const PROB_CLAMP: f32 = 1e-6;

/// `N` independent Bernoulli probabilities, each in `[1e-6, 1 - 1e-6]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentDistribution {
    probs: Vec<f32>,
}

/// How to draw `r` from a [`LatentDistribution`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SampleMode {
    /// Straight-through relaxed Bernoulli at the given temperature.
    Relaxed { temperature: f32 },
    /// Exact Bernoulli draw.
    Hard,
    /// Per-dimension threshold at 0.5.
    Argmax,
}

impl LatentDistribution {
    pub fn new(probs: Vec<f32>) -> Self {
        Self {
            probs: probs
                .into_iter()
                .map(|p| p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
                .collect(),
        }
    }

    pub fn probs(&self) -> &[f32] {
        &self.probs
    }

    pub fn dims(&self) -> usize {
        self.probs.len()
    }

    /// Draws `r`. Relaxed mode returns the soft sample in `[0, 1]^N`.
    pub fn sample<R: Rng + ?Sized>(&self, mode: SampleMode, rng: &mut R) -> Vec<f32> {
        match mode {
            SampleMode::Argmax => self
                .probs
                .iter()
                .map(|&p| if p > 0.5 { 1.0 } else { 0.0 })
                .collect(),
            SampleMode::Hard => self
                .probs
                .iter()
                .map(|&p| if rng.gen::<f32>() < p { 1.0 } else { 0.0 })
                .collect(),
            SampleMode::Relaxed { temperature } => self
                .probs
                .iter()
                .map(|&p| {
                    let u = rng.gen_range(1e-6f32..1.0 - 1e-6);
                    let logit = (p / (1.0 - p)).ln() + (u / (1.0 - u)).ln();
                    1.0 / (1.0 + (-logit / temperature).exp())
                })
                .collect(),
        }
    }

    /// Closed-form `KL(self ‖ other)`, summed over dimensions.
    pub fn kl(&self, other: &LatentDistribution) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(&q, &p)| bernoulli_kl(q as f64, p as f64))
            .sum()
    }
}

pub fn bernoulli_kl(q: f64, p: f64) -> f64 {
    q * (q / p).ln() + (1.0 - q) * ((1.0 - q) / (1.0 - p)).ln()
}

/// Clamped probabilities `sigmoid(logits)` in the graph.
pub fn probs_from_logits(g: &mut Graph, logits: Var) -> Result<Var> {
    let p = g.sigmoid(logits)?;
    let p = g.max_const(p, PROB_CLAMP)?;
    g.min_const(p, 1.0 - PROB_CLAMP)
}

/// Per-dimension `KL(Bern(q) ‖ Bern(p))` as a `[B, N]` node.
pub fn kl_graph(g: &mut Graph, q: Var, p: Var) -> Result<Var> {
    let lq = g.log(q)?;
    let lp = g.log(p)?;
    let q1 = g.affine(q, -1.0, 1.0)?;
    let p1 = g.affine(p, -1.0, 1.0)?;
    let lq1 = g.log(q1)?;
    let lp1 = g.log(p1)?;
    let a = g.sub(lq, lp)?;
    let a = g.mul(q, a)?;
    let b = g.sub(lq1, lp1)?;
    let b = g.mul(q1, b)?;
    g.add(a, b)
}

/// Relaxed Bernoulli sample `sigmoid((logit p + logistic noise) / τ)` with
/// the uniform noise supplied by the caller. With `straight_through` the
/// forward value is the hard threshold of the soft sample while gradients
/// follow the soft path.
pub fn relaxed_sample_graph(
    g: &mut Graph,
    probs: Var,
    uniform: &Tensor,
    temperature: f32,
    straight_through: bool,
) -> Result<Var> {
    let noise: Vec<f32> = uniform
        .data()
        .iter()
        .map(|&u| {
            let u = u.clamp(1e-6, 1.0 - 1e-6);
            (u / (1.0 - u)).ln()
        })
        .collect();
    let noise = g.constant(Tensor::new(uniform.shape().to_vec(), noise)?);
    let lp = g.log(probs)?;
    let q = g.affine(probs, -1.0, 1.0)?;
    let lq = g.log(q)?;
    let logit = g.sub(lp, lq)?;
    let logit = g.add(logit, noise)?;
    let logit = g.scale(logit, 1.0 / temperature)?;
    let soft = g.sigmoid(logit)?;
    if !straight_through {
        return Ok(soft);
    }
    let shift: Vec<f32> = g
        .value(soft)
        .data()
        .iter()
        .map(|&s| if s > 0.5 { 1.0 - s } else { -s })
        .collect();
    let shift = g.constant(Tensor::new(g.shape(soft).to_vec(), shift)?);
    g.add(soft, shift)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn argmax_thresholds() {
        let d = LatentDistribution::new(vec![1.0 - 1e-6; 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(d.sample(SampleMode::Argmax, &mut rng), vec![1.0; 5]);
        let d = LatentDistribution::new(vec![0.9, 0.1]);
        assert_eq!(d.sample(SampleMode::Argmax, &mut rng), vec![1.0, 0.0]);
    }

    #[test]
    fn hard_sampling_is_unbiased() {
        let d = LatentDistribution::new(vec![0.5; 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut sums = [0.0f64; 5];
        let n = 10_000;
        for _ in 0..n {
            for (s, v) in sums.iter_mut().zip(d.sample(SampleMode::Hard, &mut rng)) {
                *s += v as f64;
            }
        }
        for s in sums {
            assert!((s / n as f64 - 0.5).abs() < 0.02);
        }
    }

    #[test]
    fn probabilities_clamped() {
        let d = LatentDistribution::new(vec![0.0, 1.0]);
        assert_eq!(d.probs(), &[PROB_CLAMP, 1.0 - PROB_CLAMP]);
    }

    #[test]
    fn kl_closed_forms() {
        let q = LatentDistribution::new(vec![0.3, 0.8]);
        assert!(q.kl(&q).abs() < 1e-12);
        let expect = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((bernoulli_kl(0.5, 0.25) - expect).abs() < 1e-12);
        assert!((expect - 0.14384).abs() < 1e-5);
    }

    #[test]
    fn straight_through_forward_is_binary() {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::new(vec![1, 4], vec![0.2, 0.5, 0.7, 0.9]).unwrap().with_grad());
        let u = Tensor::new(vec![1, 4], vec![0.3, 0.6, 0.5, 0.1]).unwrap();
        let r = relaxed_sample_graph(&mut g, p, &u, 0.5, true).unwrap();
        assert!(g.value(r).data().iter().all(|&v| v == 0.0 || v == 1.0));
        let loss = g.sum(r).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(p).unwrap().iter().all(|&v| v > 0.0));
    }
}
