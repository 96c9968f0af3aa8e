//! Finite-difference gradient oracles. Every check re-implements the forward
//! computation in f64, differentiates it with central differences and
//! compares against the f32 analytic gradient from the graph.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use robot_trajectron::data::{featurize, generate_dataset, FeaturizedSample, GenConfig};
use robot_trajectron::model::gmm::LOG_DIAG_FLOOR;
use robot_trajectron::model::latent::PROB_CLAMP;
use robot_trajectron::model::{ModelConfig, RtModel};
use robot_trajectron::tensor::{lstm_cell, Graph, LstmWeights, Tensor, Var};
use robot_trajectron::train::{elbo_loss, fit_feature_scale, ElboOptions};

pub const STEP: f64 = 1e-3;

/// `‖a − n‖ / max(‖a‖, ‖n‖)` over a whole gradient.
pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nn);
    if denom < 1e-12 {
        diff
    } else {
        diff / denom
    }
}

/// Central differences of `f` around `x`, one coordinate at a time.
pub fn numeric_grad(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + STEP;
            let up = f(&p);
            p[i] = x[i] - STEP;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logsumexp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Row-major `[m,k] x [k,n]`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            for j in 0..n {
                out[i * n + j] += av * b[p * n + j];
            }
        }
    }
    out
}

fn add_bias(x: &mut [f64], b: &[f64]) {
    let n = b.len();
    for (i, v) in x.iter_mut().enumerate() {
        *v += b[i % n];
    }
}

/// Straight-line LSTM cell: gates ordered input, forget, candidate, output.
#[allow(clippy::too_many_arguments)]
pub fn lstm_ref(
    x: &[f64],
    h: &[f64],
    c: &[f64],
    w: &[f64],
    b: &[f64],
    batch: usize,
    input: usize,
    hidden: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut hn = vec![0.0; batch * hidden];
    let mut cn = vec![0.0; batch * hidden];
    for r in 0..batch {
        let mut xh = x[r * input..(r + 1) * input].to_vec();
        xh.extend_from_slice(&h[r * hidden..(r + 1) * hidden]);
        let mut pre = matmul(&xh, w, 1, input + hidden, 4 * hidden);
        add_bias(&mut pre, b);
        for j in 0..hidden {
            let i_g = sigmoid(pre[j]);
            let f_g = sigmoid(pre[hidden + j]);
            let g_g = pre[2 * hidden + j].tanh();
            let o_g = sigmoid(pre[3 * hidden + j]);
            let cv = f_g * c[r * hidden + j] + i_g * g_g;
            cn[r * hidden + j] = cv;
            hn[r * hidden + j] = o_g * cv.tanh();
        }
    }
    (hn, cn)
}

type Build = dyn Fn(&mut Graph, &[Var]) -> Var;
type Oracle = dyn Fn(&[Vec<f64>]) -> Vec<f64>;

/// One op under test: input shapes, an input domain map applied to
/// uniform draws in [-2, 2], the graph construction and its f64 oracle.
pub struct OpCase {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    pub domain: fn(f32) -> f32,
    pub build: Box<Build>,
    pub oracle: Box<Oracle>,
}

fn identity(v: f32) -> f32 {
    v
}

/// Keeps draws away from the kink of a clamp at `c` (1e-2 > step).
fn off_kink(v: f32, c: f32) -> f32 {
    if (v - c).abs() < 1e-2 {
        v + 2e-2
    } else {
        v
    }
}

fn case(
    name: &'static str,
    shapes: Vec<Vec<usize>>,
    domain: fn(f32) -> f32,
    build: impl Fn(&mut Graph, &[Var]) -> Var + 'static,
    oracle: impl Fn(&[Vec<f64>]) -> Vec<f64> + 'static,
) -> OpCase {
    OpCase {
        name,
        shapes,
        domain,
        build: Box::new(build),
        oracle: Box::new(oracle),
    }
}

fn rowwise(x: &[f64], cols: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    x.chunks(cols).flat_map(|r| f(r)).collect()
}

pub fn op_cases() -> Vec<OpCase> {
    let (m, k, n) = (3, 4, 5);
    vec![
        case(
            "matmul",
            vec![vec![m, k], vec![k, n]],
            identity,
            |g, v| g.matmul(v[0], v[1]).unwrap(),
            move |x| matmul(&x[0], &x[1], m, k, n),
        ),
        case(
            "add",
            vec![vec![m, n], vec![m, n]],
            identity,
            |g, v| g.add(v[0], v[1]).unwrap(),
            |x| x[0].iter().zip(&x[1]).map(|(a, b)| a + b).collect(),
        ),
        case(
            "sub",
            vec![vec![m, n], vec![m, n]],
            identity,
            |g, v| g.sub(v[0], v[1]).unwrap(),
            |x| x[0].iter().zip(&x[1]).map(|(a, b)| a - b).collect(),
        ),
        case(
            "mul",
            vec![vec![m, n], vec![m, n]],
            identity,
            |g, v| g.mul(v[0], v[1]).unwrap(),
            |x| x[0].iter().zip(&x[1]).map(|(a, b)| a * b).collect(),
        ),
        case(
            "add_bias",
            vec![vec![m, n], vec![n]],
            identity,
            |g, v| g.add_bias(v[0], v[1]).unwrap(),
            |x| {
                let mut y = x[0].clone();
                add_bias(&mut y, &x[1]);
                y
            },
        ),
        case(
            "affine",
            vec![vec![m, n]],
            identity,
            |g, v| g.affine(v[0], -1.5, 0.25).unwrap(),
            |x| x[0].iter().map(|v| -1.5 * v + 0.25).collect(),
        ),
        case(
            "concat",
            vec![vec![m, 2], vec![m, 3]],
            identity,
            |g, v| g.concat(&[v[0], v[1]], 1).unwrap(),
            move |x| {
                (0..m)
                    .flat_map(|r| x[0][r * 2..r * 2 + 2].iter().chain(&x[1][r * 3..r * 3 + 3]).copied())
                    .collect()
            },
        ),
        case(
            "slice",
            vec![vec![m, n]],
            identity,
            |g, v| g.cols(v[0], 1, 3).unwrap(),
            move |x| (0..m).flat_map(|r| x[0][r * n + 1..r * n + 4].to_vec()).collect(),
        ),
        case(
            "sigmoid",
            vec![vec![m, n]],
            identity,
            |g, v| g.sigmoid(v[0]).unwrap(),
            |x| x[0].iter().map(|&v| sigmoid(v)).collect(),
        ),
        case(
            "tanh",
            vec![vec![m, n]],
            identity,
            |g, v| g.tanh(v[0]).unwrap(),
            |x| x[0].iter().map(|v| v.tanh()).collect(),
        ),
        case(
            "exp",
            vec![vec![m, n]],
            identity,
            |g, v| g.exp(v[0]).unwrap(),
            |x| x[0].iter().map(|v| v.exp()).collect(),
        ),
        // log is only defined on positive inputs: |u| + 0.1 maps [-2, 2] to [0.1, 2.1]
        case(
            "log",
            vec![vec![m, n]],
            |v| v.abs() + 0.1,
            |g, v| g.log(v[0]).unwrap(),
            |x| x[0].iter().map(|v| v.ln()).collect(),
        ),
        case(
            "softmax",
            vec![vec![m, n]],
            identity,
            |g, v| g.softmax(v[0]).unwrap(),
            move |x| {
                rowwise(&x[0], n, |r| {
                    let l = logsumexp(r);
                    r.iter().map(|v| (v - l).exp()).collect()
                })
            },
        ),
        case(
            "log_softmax",
            vec![vec![m, n]],
            identity,
            |g, v| g.log_softmax(v[0]).unwrap(),
            move |x| {
                rowwise(&x[0], n, |r| {
                    let l = logsumexp(r);
                    r.iter().map(|v| v - l).collect()
                })
            },
        ),
        case(
            "logsumexp",
            vec![vec![m, n]],
            identity,
            |g, v| g.logsumexp(v[0]).unwrap(),
            move |x| rowwise(&x[0], n, |r| vec![logsumexp(r)]),
        ),
        case(
            "sum_last",
            vec![vec![m, n]],
            identity,
            |g, v| g.sum_last(v[0]).unwrap(),
            move |x| rowwise(&x[0], n, |r| vec![r.iter().sum()]),
        ),
        case(
            "sum",
            vec![vec![m, n]],
            identity,
            |g, v| g.sum(v[0]).unwrap(),
            |x| vec![x[0].iter().sum()],
        ),
        case(
            "mean",
            vec![vec![m, n]],
            identity,
            |g, v| g.mean(v[0]).unwrap(),
            |x| vec![x[0].iter().sum::<f64>() / x[0].len() as f64],
        ),
        case(
            "max_const",
            vec![vec![m, n]],
            |v| off_kink(v, 0.3),
            |g, v| g.max_const(v[0], 0.3).unwrap(),
            |x| x[0].iter().map(|v| v.max(0.3f32 as f64)).collect(),
        ),
        case(
            "min_const",
            vec![vec![m, n]],
            |v| off_kink(v, -0.2),
            |g, v| g.min_const(v[0], -0.2).unwrap(),
            |x| x[0].iter().map(|v| v.min(-0.2f32 as f64)).collect(),
        ),
        case(
            "lstm_cell",
            vec![vec![2, 3], vec![2, 4], vec![2, 4], vec![7, 16], vec![16]],
            identity,
            |g, v| {
                let w = LstmWeights { w: v[3], b: v[4] };
                let (h, c) = lstm_cell(g, v[0], v[1], v[2], &w).unwrap();
                g.concat(&[h, c], 1).unwrap()
            },
            |x| {
                let (h, c) = lstm_ref(&x[0], &x[1], &x[2], &x[3], &x[4], 2, 3, 4);
                (0..2).flat_map(|r| h[r * 4..r * 4 + 4].iter().chain(&c[r * 4..r * 4 + 4]).copied()).collect()
            },
        ),
    ]
}

/// Relative gradient error of one op under a random weighted-sum loss.
pub fn check_op(c: &OpCase, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Vec<f32>> = c
        .shapes
        .iter()
        .map(|s| {
            (0..s.iter().product::<usize>())
                .map(|_| (c.domain)(rng.gen_range(-2.0f32..2.0)))
                .collect()
        })
        .collect();
    let mut g = Graph::new();
    let vars: Vec<Var> = c
        .shapes
        .iter()
        .zip(&inputs)
        .map(|(s, d)| g.leaf(Tensor::new(s.clone(), d.clone()).unwrap().with_grad()))
        .collect();
    let out = (c.build)(&mut g, &vars);
    let weights: Vec<f32> = (0..g.value(out).numel()).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let wv = g.constant(Tensor::new(g.shape(out).to_vec(), weights.clone()).unwrap());
    let prod = g.mul(out, wv).unwrap();
    let loss = g.sum(prod).unwrap();
    let grads = g.backward(loss).unwrap();

    let x64: Vec<Vec<f64>> = inputs.iter().map(|v| v.iter().map(|&x| x as f64).collect()).collect();
    let w64: Vec<f64> = weights.iter().map(|&w| w as f64).collect();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (i, v) in vars.iter().enumerate() {
        analytic.extend(grads.get(*v).expect("input gradient").iter().map(|&x| x as f64));
        numeric.extend(numeric_grad(&x64[i], |p| {
            let mut xs = x64.clone();
            xs[i] = p.to_vec();
            (c.oracle)(&xs).iter().zip(&w64).map(|(y, w)| y * w).sum()
        }));
    }
    rel_err(&analytic, &numeric)
}

/// Worst relative error over every op, with its name.
pub fn worst_op(seed: u64) -> (&'static str, f64) {
    op_cases()
        .iter()
        .map(|c| (c.name, check_op(c, seed)))
        .fold(("", 0.0), |acc, x| if x.1 > acc.1 { x } else { acc })
}

/// Relative error of the weight gradients of a random 3-layer perceptron
/// (tanh, relu, linear) under a random weighted-sum loss.
pub fn mlp_rel_err(seed: u64) -> f64 {
    let dims = [4usize, 6, 5, 2];
    let batch = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| -> Vec<f32> { (0..n).map(|_| rng.gen_range(-2.0f32..2.0)).collect() };
    let x = draw(batch * dims[0]);
    let mut params: Vec<(Vec<usize>, Vec<f32>)> = Vec::new();
    for l in 0..3 {
        params.push((vec![dims[l], dims[l + 1]], draw(dims[l] * dims[l + 1])));
        params.push((vec![dims[l + 1]], draw(dims[l + 1])));
    }
    let weights = draw(batch * dims[3]);

    let mut g = Graph::new();
    let vars: Vec<Var> = params
        .iter()
        .map(|(s, d)| g.leaf(Tensor::new(s.clone(), d.clone()).unwrap().with_grad()))
        .collect();
    let mut h = g.constant(Tensor::new(vec![batch, dims[0]], x.clone()).unwrap());
    for l in 0..3 {
        let z = g.matmul(h, vars[2 * l]).unwrap();
        let z = g.add_bias(z, vars[2 * l + 1]).unwrap();
        h = match l {
            0 => g.tanh(z).unwrap(),
            1 => g.relu(z).unwrap(),
            _ => z,
        };
    }
    let wv = g.constant(Tensor::new(vec![batch, dims[3]], weights.clone()).unwrap());
    let prod = g.mul(h, wv).unwrap();
    let loss = g.sum(prod).unwrap();
    let grads = g.backward(loss).unwrap();

    let to64 = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    let p64: Vec<Vec<f64>> = params.iter().map(|(_, d)| to64(d)).collect();
    let (x64, w64) = (to64(&x), to64(&weights));
    let forward = |p: &[Vec<f64>]| -> f64 {
        let mut h = x64.clone();
        for l in 0..3 {
            let mut z = matmul(&h, &p[2 * l], batch, dims[l], dims[l + 1]);
            add_bias(&mut z, &p[2 * l + 1]);
            h = match l {
                0 => z.iter().map(|v| v.tanh()).collect(),
                1 => z.iter().map(|v| v.max(0.0)).collect(),
                _ => z,
            };
        }
        h.iter().zip(&w64).map(|(a, b)| a * b).sum()
    };
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (i, v) in vars.iter().enumerate() {
        analytic.extend(grads.get(*v).unwrap().iter().map(|&x| x as f64));
        numeric.extend(numeric_grad(&p64[i], |q| {
            let mut ps = p64.clone();
            ps[i] = q.to_vec();
            forward(&ps)
        }));
    }
    rel_err(&analytic, &numeric)
}

/// Named f64 copy of a model's parameters.
type Params = HashMap<String, Vec<f64>>;

struct TinyElbo {
    hidden: usize,
    latent: usize,
    components: usize,
    scale: [f64; 3],
    samples: Vec<FeaturizedSample>,
    uniform: Vec<f64>,
    temperature: f64,
    beta: f64,
}

impl TinyElbo {
    fn linear(&self, p: &Params, name: &str, x: &[f64], input: usize, output: usize) -> Vec<f64> {
        let mut y = matmul(x, &p[&format!("{name}.w")], 1, input, output);
        add_bias(&mut y, &p[&format!("{name}.b")]);
        y
    }

    fn run_lstm(&self, p: &Params, name: &str, xs: &[Vec<f64>], input: usize) -> Vec<f64> {
        let h0 = vec![0.0; self.hidden];
        let (mut h, mut c) = (h0.clone(), h0);
        for x in xs {
            let (hn, cn) = lstm_ref(
                x,
                &h,
                &c,
                &p[&format!("{name}.w")],
                &p[&format!("{name}.b")],
                1,
                input,
                self.hidden,
            );
            h = hn;
            c = cn;
        }
        h
    }

    fn probs(&self, p: &Params, name: &str, x: &[f64]) -> Vec<f64> {
        let (hd, n) = (self.hidden, self.latent);
        let z: Vec<f64> = self.linear(p, &format!("{name}.0"), x, x.len(), hd).iter().map(|v| v.max(0.0)).collect();
        let clamp = PROB_CLAMP as f64;
        self.linear(p, &format!("{name}.1"), &z, hd, n)
            .iter()
            .map(|&l| sigmoid(l).max(clamp).min(1.0 - clamp))
            .collect()
    }

    fn log_density(&self, head: &[f64], y: &[f64; 3]) -> f64 {
        let c = self.components;
        let floor = LOG_DIAG_FLOOR as f64;
        let blk = |b: usize, k: usize| head[b * c + k];
        let logits: Vec<f64> = (0..c).map(|k| blk(9, k)).collect();
        let lse = logsumexp(&logits);
        let terms: Vec<f64> = (0..c)
            .map(|k| {
                let r: Vec<f64> = (0..3).map(|a| y[a] - blk(a, k)).collect();
                let ld: Vec<f64> = (3..6).map(|b| blk(b, k).max(floor)).collect();
                let d: Vec<f64> = ld.iter().map(|v| v.exp()).collect();
                let z1 = r[0] / d[0];
                let z2 = (r[1] - blk(6, k) * z1) / d[1];
                let z3 = (r[2] - blk(7, k) * z1 - blk(8, k) * z2) / d[2];
                let log_n = -0.5 * (z1 * z1 + z2 * z2 + z3 * z3)
                    - ld.iter().sum::<f64>()
                    - 1.5 * (2.0 * std::f64::consts::PI).ln();
                logits[k] - lse + log_n
            })
            .collect();
        logsumexp(&terms)
    }

    fn loss(&self, p: &Params) -> f64 {
        let (hd, n) = (self.hidden, self.latent);
        let vs = self.scale[1];
        let batch = self.samples.len() as f64;
        let (mut nll, mut kl) = (0.0, 0.0);
        for (si, s) in self.samples.iter().enumerate() {
            let past: Vec<Vec<f64>> =
                s.x.iter().map(|r| r.iter().enumerate().map(|(i, v)| v * self.scale[i / 3]).collect()).collect();
            let h = self.run_lstm(p, "past", &past, 9);
            let fut: Vec<Vec<f64>> = s.y.iter().map(|v| v.iter().map(|x| x * vs).collect()).collect();
            let hf = self.run_lstm(p, "future_fwd", &fut, 3);
            let rev: Vec<Vec<f64>> = fut.iter().rev().cloned().collect();
            let hb = self.run_lstm(p, "future_bwd", &rev, 3);
            let both: Vec<f64> = hf.iter().chain(&hb).copied().collect();
            let h_plus = self.linear(p, "future_proj", &both, 2 * hd, hd);
            let prior = self.probs(p, "prior", &h);
            let hh: Vec<f64> = h.iter().chain(&h_plus).copied().collect();
            let post = self.probs(p, "posterior", &hh);
            for (q, pr) in post.iter().zip(&prior) {
                kl += q * (q.ln() - pr.ln()) + (1.0 - q) * ((1.0 - q).ln() - (1.0 - pr).ln());
            }
            let r: Vec<f64> = post
                .iter()
                .enumerate()
                .map(|(j, q)| {
                    let u = self.uniform[si * n + j].clamp(1e-6, 1.0 - 1e-6);
                    sigmoid((q.ln() - (1.0 - q).ln() + (u / (1.0 - u)).ln()) / self.temperature)
                })
                .collect();
            let (mut dh, mut dc) = (h.clone(), vec![0.0; hd]);
            let mut y_prev: Vec<f64> = s.x.last().unwrap()[3..6].to_vec();
            for (t, y) in s.y.iter().enumerate() {
                let mut x: Vec<f64> = y_prev.iter().map(|v| v * vs).collect();
                x.extend_from_slice(&r);
                let (hn, cn) = lstm_ref(&x, &dh, &dc, &p["decoder.w"], &p["decoder.b"], 1, 3 + n, hd);
                dh = hn;
                dc = cn;
                let head = self.linear(p, "head", &dh, hd, 10 * self.components);
                if s.mask[t] {
                    nll -= self.log_density(&head, &[y[0] * vs, y[1] * vs, y[2] * vs]);
                }
                y_prev = y.to_vec();
            }
        }
        nll / batch + self.beta * kl / batch
    }
}

/// Relative error of the full ELBO parameter gradient on a tiny model
/// (hidden 8, N = 2, C = 1, T = 3).
pub fn elbo_rel_err(seed: u64) -> f64 {
    let (data, _) = generate_dataset(&GenConfig { seed, ..GenConfig::default() }, 2).unwrap();
    let cfg = ModelConfig {
        hidden_size: 8,
        latent_dims: 2,
        gmm_components: 1,
        horizon: 3,
        ..ModelConfig::default()
    };
    let mut model = RtModel::new(cfg, seed).unwrap();
    model.feature_scale = fit_feature_scale(&data);
    model.train();
    let samples: Vec<FeaturizedSample> = data.iter().map(|t| featurize(t, 6, 3).unwrap()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe1b0);
    let uniform: Vec<f32> = (0..samples.len() * 2).map(|_| rng.gen_range(0.05f32..0.95)).collect();
    let opts = ElboOptions {
        beta: 1.0,
        temperature: 0.5,
        straight_through: false,
    };

    let mut g = Graph::new();
    let b = model.bind(&mut g);
    let refs: Vec<&FeaturizedSample> = samples.iter().collect();
    let noise = Tensor::new(vec![samples.len(), 2], uniform.clone()).unwrap();
    let parts = elbo_loss(&model, &mut g, &b, &refs, &noise, opts).unwrap();
    model.params.zero_grad();
    g.backward_into(parts.loss, &mut model.params).unwrap();

    let fs = model.feature_scale;
    let oracle = TinyElbo {
        hidden: 8,
        latent: 2,
        components: 1,
        scale: [fs.position as f64, fs.velocity as f64, fs.acceleration as f64],
        samples,
        uniform: uniform.iter().map(|&u| u as f64).collect(),
        temperature: opts.temperature as f64,
        beta: opts.beta as f64,
    };
    let params: Params = model
        .params
        .iter()
        .map(|(name, t)| (name.to_string(), t.data().iter().map(|&v| v as f64).collect()))
        .collect();
    let forward = oracle.loss(&params);
    let graph_loss = g.value(parts.loss).item() as f64;
    assert!(
        (forward - graph_loss).abs() < 1e-3 * (1.0 + forward.abs()),
        "oracle loss {forward} differs from graph loss {graph_loss}"
    );

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (name, t) in model.params.iter() {
        analytic.extend(t.grad().expect("parameter gradient").iter().map(|&x| x as f64));
        let base = &params[name];
        numeric.extend(numeric_grad(base, |q| {
            let mut ps = params.clone();
            ps.insert(name.to_string(), q.to_vec());
            oracle.loss(&ps)
        }));
    }
    rel_err(&analytic, &numeric)
}
