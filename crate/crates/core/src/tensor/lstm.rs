use super::{Graph, Var};
use crate::error::{dim_err, Result};

/// Bound LSTM weights: `w` is `[input + hidden, 4 * hidden]` with gate blocks
/// ordered input, forget, cell candidate, output; `b` is `[4 * hidden]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    pub w: Var,
    pub b: Var,
}

/// One LSTM step over a batch. `x` is `[B, input]`, `h_prev`/`c_prev` are
/// `[B, hidden]`. Returns `(h_t, c_t)`.
pub fn lstm_cell(
    g: &mut Graph,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    weights: &LstmWeights,
) -> Result<(Var, Var)> {
    let (sx, sh, sc) = (
        g.shape(x).to_vec(),
        g.shape(h_prev).to_vec(),
        g.shape(c_prev).to_vec(),
    );
    let sw = g.shape(weights.w).to_vec();
    let sb = g.shape(weights.b).to_vec();
    if sx.len() != 2 || sh.len() != 2 || sh != sc || sx[0] != sh[0] {
        return Err(dim_err(
            "lstm_cell",
            format!("x {sx:?}, h {sh:?}, c {sc:?}"),
        ));
    }
    let hidden = sh[1];
    if sw != [sx[1] + hidden, 4 * hidden] || sb != [4 * hidden] {
        return Err(dim_err(
            "lstm_cell",
            format!(
                "weights {sw:?}/{sb:?} for input {} and hidden {hidden}",
                sx[1]
            ),
        ));
    }
    let xh = g.concat(&[x, h_prev], 1)?;
    let pre = g.matmul(xh, weights.w)?;
    let pre = g.add_bias(pre, weights.b)?;
    let i = g.cols(pre, 0, hidden)?;
    let f = g.cols(pre, hidden, hidden)?;
    let c_hat = g.cols(pre, 2 * hidden, hidden)?;
    let o = g.cols(pre, 3 * hidden, hidden)?;
    let i = g.sigmoid(i)?;
    let f = g.sigmoid(f)?;
    let c_hat = g.tanh(c_hat)?;
    let o = g.sigmoid(o)?;
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, c_hat)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c)?;
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn setup(
        g: &mut Graph,
        input: usize,
        hidden: usize,
        w: Vec<f32>,
        b: Vec<f32>,
    ) -> LstmWeights {
        let w = g.constant(Tensor::new(vec![input + hidden, 4 * hidden], w).unwrap());
        let b = g.constant(Tensor::new(vec![4 * hidden], b).unwrap());
        LstmWeights { w, b }
    }

    #[test]
    fn zero_weights_give_zero_hidden() {
        let mut g = Graph::new();
        let lw = setup(&mut g, 3, 4, vec![0.0; 7 * 16], vec![0.0; 16]);
        let x = g.constant(Tensor::zeros(&[2, 3]));
        let h = g.constant(Tensor::zeros(&[2, 4]));
        let c = g.constant(Tensor::zeros(&[2, 4]));
        let (h1, _) = lstm_cell(&mut g, x, h, c, &lw).unwrap();
        assert!(g.value(h1).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_forget_keeps_cell() {
        let hidden = 3;
        let mut b = vec![0.0; 4 * hidden];
        b[..hidden].iter_mut().for_each(|v| *v = -60.0);
        b[hidden..2 * hidden].iter_mut().for_each(|v| *v = 60.0);
        let mut g = Graph::new();
        let lw = setup(&mut g, 2, hidden, vec![0.0; 5 * 12], b);
        let x = g.constant(Tensor::new(vec![1, 2], vec![0.3, -0.8]).unwrap());
        let h = g.constant(Tensor::new(vec![1, 3], vec![0.1, 0.2, 0.3]).unwrap());
        let c_prev = vec![0.5, -1.5, 2.0];
        let c = g.constant(Tensor::new(vec![1, 3], c_prev.clone()).unwrap());
        let (_, c1) = lstm_cell(&mut g, x, h, c, &lw).unwrap();
        for (a, b) in g.value(c1).data().iter().zip(&c_prev) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_weight_shape() {
        let mut g = Graph::new();
        let w = g.constant(Tensor::zeros(&[4, 12]));
        let b = g.constant(Tensor::zeros(&[12]));
        let lw = LstmWeights { w, b };
        let x = g.constant(Tensor::zeros(&[1, 2]));
        let h = g.constant(Tensor::zeros(&[1, 3]));
        let c = g.constant(Tensor::zeros(&[1, 3]));
        assert!(lstm_cell(&mut g, x, h, c, &lw).is_err());
    }
}
