//! Velocity-space Gaussian mixtures with Cholesky-parameterised covariances.
//!
//! The decoder head emits `10 * C` raw values per row, laid out as ten
//! consecutive blocks of width `C`:
//! `mu_x, mu_y, mu_z, log_d1, log_d2, log_d3, l21, l31, l32, logits`.
//! Diagonals of `L` are `exp(max(log_d, ln 1e-4))`, off-diagonals are used
//! as-is and weights are `softmax(logits)`.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{dim_err, Error, Result};
use crate::tensor::{Graph, Tensor, Var};

pub const HEAD_BLOCKS: usize = 10;
pub const LOG_DIAG_FLOOR: f32 = -9.210_34; // ln(1e-4)
const LN_2PI: f64 = 1.837_877_066_409_345_5;
const WEIGHT_TOL: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: Vector3<f64>,
    /// Lower-triangular factor with `cov = L Lᵀ`.
    pub chol: Matrix3<f64>,
}

impl Component {
    pub fn covariance(&self) -> Matrix3<f64> {
        self.chol * self.chol.transpose()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture {
    pub components: Vec<Component>,
}

impl GaussianMixture {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        let gm = Self { components };
        gm.validate()?;
        Ok(gm)
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::Contract("mixture has no components".into()));
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        let finite = self.components.iter().all(|c| {
            c.weight.is_finite()
                && c.weight >= 0.0
                && c.mean.iter().all(|v| v.is_finite())
                && c.chol.iter().all(|v| v.is_finite())
        });
        if !finite {
            return Err(Error::NonFinite { op: "mixture" });
        }
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::Contract(format!("mixture weights sum to {total}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Index of the highest-weight component (lowest index on ties).
    pub fn top_component(&self) -> usize {
        let mut best = 0;
        for (i, c) in self.components.iter().enumerate() {
            if c.weight > self.components[best].weight {
                best = i;
            }
        }
        best
    }

    /// Mean of the highest-weight component.
    pub fn mode_surrogate(&self) -> Vector3<f64> {
        self.components[self.top_component()].mean
    }

    /// `log Σ_c α_c N(v; μ_c, L_c L_cᵀ)` via triangular solves and log-sum-exp.
    pub fn log_density(&self, v: &Vector3<f64>) -> Result<f64> {
        let mut terms = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let l = &c.chol;
            let (d1, d2, d3) = (l[(0, 0)], l[(1, 1)], l[(2, 2)]);
            if d1 < 1e-8 || d2 < 1e-8 || d3 < 1e-8 {
                return Err(Error::NonFinite {
                    op: "gmm_log_density",
                });
            }
            if c.weight <= 0.0 {
                continue;
            }
            let r = v - c.mean;
            let z1 = r[0] / d1;
            let z2 = (r[1] - l[(1, 0)] * z1) / d2;
            let z3 = (r[2] - l[(2, 0)] * z1 - l[(2, 1)] * z2) / d3;
            let log_n = -0.5 * (z1 * z1 + z2 * z2 + z3 * z3)
                - (d1.ln() + d2.ln() + d3.ln())
                - 1.5 * LN_2PI;
            terms.push(c.weight.ln() + log_n);
        }
        let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let out = m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
        if !out.is_finite() {
            return Err(Error::NonFinite {
                op: "gmm_log_density",
            });
        }
        Ok(out)
    }

    /// The same mixture over `k * v`: means and factors scale by `k`.
    pub fn scaled(mut self, k: f64) -> Self {
        for c in &mut self.components {
            c.mean *= k;
            c.chol *= k;
        }
        self
    }

    /// Draws `c ~ α`, then returns `μ_c + L_c z` with `z ~ N(0, I)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector3<f64> {
        let c = &self.components[self.sample_component(rng)];
        let z = Vector3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        c.mean + c.chol * z
    }

    pub fn sample_component<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                return i;
            }
        }
        self.components.len() - 1
    }
}

/// Decodes row `row` of a raw head output into a mixture.
pub fn mixture_from_head(head: &Tensor, row: usize, components: usize) -> Result<GaussianMixture> {
    if head.cols() != HEAD_BLOCKS * components {
        return Err(dim_err(
            "mixture_from_head",
            format!("{:?} for {components} components", head.shape()),
        ));
    }
    let r = head.row(row);
    let block = |b: usize, c: usize| r[b * components + c] as f64;
    let logits: Vec<f64> = (0..components).map(|c| block(9, c)).collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    let comps = (0..components)
        .map(|c| {
            let diag = |b: usize| (block(b, c).max(LOG_DIAG_FLOOR as f64)).exp();
            let chol = Matrix3::new(
                diag(3),
                0.0,
                0.0,
                block(6, c),
                diag(4),
                0.0,
                block(7, c),
                block(8, c),
                diag(5),
            );
            Component {
                weight: (logits[c] - m).exp() / z,
                mean: Vector3::new(block(0, c), block(1, c), block(2, c)),
                chol,
            }
        })
        .collect();
    let gm = GaussianMixture { components: comps };
    gm.validate()?;
    Ok(gm)
}

/// Differentiable `log p(y)` for every row of a raw head output.
///
/// `head` is `[B, 10C]`, `y` holds `B` observed 3-d velocities. Returns a
/// `[B, 1]` node.
pub fn head_log_density(
    g: &mut Graph,
    head: Var,
    y: &[[f32; 3]],
    components: usize,
) -> Result<Var> {
    let shape = g.shape(head).to_vec();
    if shape.len() != 2 || shape[1] != HEAD_BLOCKS * components || shape[0] != y.len() {
        return Err(dim_err(
            "head_log_density",
            format!("head {shape:?}, {} targets", y.len()),
        ));
    }
    let c = components;
    let rep = |axis: usize| {
        let data: Vec<f32> = y
            .iter()
            .flat_map(|v| std::iter::repeat(v[axis]).take(c))
            .collect();
        Tensor::new(vec![y.len(), c], data).unwrap()
    };
    let mut blocks = Vec::with_capacity(HEAD_BLOCKS);
    for b in 0..HEAD_BLOCKS {
        blocks.push(g.cols(head, b * c, c)?);
    }
    let mut resid = Vec::with_capacity(3);
    for axis in 0..3 {
        let target = g.constant(rep(axis));
        resid.push(g.sub(target, blocks[axis])?);
    }
    let mut log_d = Vec::with_capacity(3);
    let mut inv_d = Vec::with_capacity(3);
    for b in 3..6 {
        let ld = g.max_const(blocks[b], LOG_DIAG_FLOOR)?;
        let neg = g.neg(ld)?;
        inv_d.push(g.exp(neg)?);
        log_d.push(ld);
    }
    let (l21, l31, l32) = (blocks[6], blocks[7], blocks[8]);
    // forward substitution L z = resid
    let z1 = g.mul(resid[0], inv_d[0])?;
    let t = g.mul(l21, z1)?;
    let t = g.sub(resid[1], t)?;
    let z2 = g.mul(t, inv_d[1])?;
    let a = g.mul(l31, z1)?;
    let b = g.mul(l32, z2)?;
    let t = g.sub(resid[2], a)?;
    let t = g.sub(t, b)?;
    let z3 = g.mul(t, inv_d[2])?;
    let q1 = g.mul(z1, z1)?;
    let q2 = g.mul(z2, z2)?;
    let q3 = g.mul(z3, z3)?;
    let q = g.add(q1, q2)?;
    let q = g.add(q, q3)?;
    let ld = g.add(log_d[0], log_d[1])?;
    let ld = g.add(ld, log_d[2])?;
    let half_q = g.scale(q, -0.5)?;
    let log_n = g.sub(half_q, ld)?;
    let log_n = g.affine(log_n, 1.0, -1.5 * LN_2PI as f32)?;
    let log_w = g.log_softmax(blocks[9])?;
    let joint = g.add(log_w, log_n)?;
    g.logsumexp(joint)
}
