//! Fits a two-layer perceptron to `y = sin(3x)` with the reverse-mode graph
//! and the Adam optimiser, printing the loss as it falls.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use robot_trajectron::tensor::{Graph, ParamStore, Tensor};
use robot_trajectron::train::Adam;

fn main() -> robot_trajectron::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut params = ParamStore::new();
    let w1 = params.add_uniform("w1", &[1, 32], 1.0, &mut rng);
    let b1 = params.add("b1", Tensor::zeros(&[32]));
    let w2 = params.add_uniform("w2", &[32, 1], 0.2, &mut rng);
    let b2 = params.add("b2", Tensor::zeros(&[1]));

    let xs: Vec<f32> = (0..64).map(|i| -1.0 + 2.0 * i as f32 / 63.0).collect();
    let ys: Vec<f32> = xs.iter().map(|x| (3.0 * x).sin()).collect();
    let x = Tensor::new(vec![64, 1], xs)?;
    let y = Tensor::new(vec![64, 1], ys)?;

    let mut opt = Adam::new(&params, 1e-2);
    for step in 0..=500 {
        let mut g = Graph::new();
        let (xv, yv) = (g.constant(x.clone()), g.constant(y.clone()));
        let [w1, b1, w2, b2] = [w1, b1, w2, b2].map(|id| g.param(&params, id));
        let h = g.matmul(xv, w1)?;
        let h = g.add_bias(h, b1)?;
        let h = g.tanh(h)?;
        let out = g.matmul(h, w2)?;
        let out = g.add_bias(out, b2)?;
        let err = g.sub(out, yv)?;
        let sq = g.mul(err, err)?;
        let loss = g.mean(sq)?;
        params.zero_grad();
        g.backward_into(loss, &mut params)?;
        opt.step(&mut params);
        if step % 100 == 0 {
            println!("step {step:>3}  mse {:.5}", g.value(loss).item());
        }
    }
    Ok(())
}

