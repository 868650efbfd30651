//! Peephole-free LSTM cell, single-layer sequence runner and stacked runner.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, RngCore};

use crate::error::{contract, dim, Result};
use crate::graph::{Graph, Var};
use crate::params::{bind_all, gaussian, ParamKind};
use crate::tensor::Tensor;

/// Gate order used for every per-gate array: input, forget, cell candidate, output.
pub const GATES: [&str; 4] = ["i", "f", "c", "o"];

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `[H, D]` input weights per gate.
    pub w_x: [Tensor; 4],
    /// `[H, H]` recurrent weights per gate.
    pub w_h: [Tensor; 4],
    /// `[H]` biases per gate.
    pub b: [Tensor; 4],
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_x: core::array::from_fn(|_| Tensor::zeros(&[hidden, input])),
            w_h: core::array::from_fn(|_| Tensor::zeros(&[hidden, hidden])),
            b: core::array::from_fn(|_| Tensor::zeros(&[hidden])),
        }
    }

    /// Gaussian weights, zero biases.
    pub fn gaussian(input: usize, hidden: usize, std: f64, rng: &mut dyn RngCore) -> Self {
        Self {
            w_x: core::array::from_fn(|_| gaussian(&[hidden, input], std, rng)),
            w_h: core::array::from_fn(|_| gaussian(&[hidden, hidden], std, rng)),
            b: core::array::from_fn(|_| Tensor::zeros(&[hidden])),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_x[0].shape()[1]
    }

    pub fn hidden_size(&self) -> usize {
        self.w_x[0].shape()[0]
    }

    pub(crate) fn tensors(&self) -> Vec<(String, ParamKind, &Tensor)> {
        let mut out = Vec::with_capacity(12);
        for (g, t) in GATES.iter().zip(&self.w_x) {
            out.push((format!("w_x{g}"), ParamKind::Weight, t));
        }
        for (g, t) in GATES.iter().zip(&self.w_h) {
            out.push((format!("w_h{g}"), ParamKind::Weight, t));
        }
        for (g, t) in GATES.iter().zip(&self.b) {
            out.push((format!("b_{g}"), ParamKind::Bias, t));
        }
        out
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.w_x
            .iter_mut()
            .chain(self.w_h.iter_mut())
            .chain(self.b.iter_mut())
            .collect()
    }

    /// Places the parameters on `g`. Returns the graph view and the leaf
    /// handles in [`LstmParams::tensors`] order.
    pub fn bind(&self, g: &mut Graph, requires_grad: bool) -> (LstmVars, Vec<Var>) {
        let tensors: Vec<&Tensor> = self.tensors().into_iter().map(|(_, _, t)| t).collect();
        let v = bind_all(g, &tensors, requires_grad);
        let vars = LstmVars {
            w_x: [v[0], v[1], v[2], v[3]],
            w_h: [v[4], v[5], v[6], v[7]],
            b: [v[8], v[9], v[10], v[11]],
            input: self.input_size(),
            hidden: self.hidden_size(),
        };
        (vars, v)
    }
}

/// [`LstmParams`] placed on a graph.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w_x: [Var; 4],
    pub w_h: [Var; 4],
    pub b: [Var; 4],
    pub input: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros(g: &mut Graph, hidden: usize) -> Self {
        Self {
            h: g.constant(Tensor::zeros(&[hidden])),
            c: g.constant(Tensor::zeros(&[hidden])),
        }
    }
}

fn gate(g: &mut Graph, p: &LstmVars, k: usize, x: Var, h: Var) -> Result<Var> {
    let wx = g.matmul(p.w_x[k], x)?;
    let wh = g.matmul(p.w_h[k], h)?;
    let s = g.add(wx, wh)?;
    g.add(s, p.b[k])
}

/// One LSTM step: i, f, o sigmoid gates, tanh candidate,
/// `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')`.
pub fn lstm_step(g: &mut Graph, p: &LstmVars, x: Var, s: LstmState) -> Result<LstmState> {
    if g.shape(x) != [p.input] {
        return Err(dim("lstm_step", g.shape(x), &[p.input]));
    }
    if g.shape(s.h) != [p.hidden] || g.shape(s.c) != [p.hidden] {
        return Err(dim("lstm_step", g.shape(s.h), &[p.hidden]));
    }
    let pre_i = gate(g, p, 0, x, s.h)?;
    let i = g.sigmoid(pre_i);
    let pre_f = gate(g, p, 1, x, s.h)?;
    let f = g.sigmoid(pre_f);
    let pre_c = gate(g, p, 2, x, s.h)?;
    let cand = g.tanh(pre_c);
    let pre_o = gate(g, p, 3, x, s.h)?;
    let o = g.sigmoid(pre_o);
    let keep = g.mul(f, s.c)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok(LstmState { h, c })
}

/// Folds [`lstm_step`] over `xs`, returning every intermediate state.
pub fn lstm_layer(g: &mut Graph, p: &LstmVars, xs: &[Var], init: LstmState) -> Result<Vec<LstmState>> {
    if xs.is_empty() {
        return Err(contract("lstm_layer needs a non-empty sequence"));
    }
    let mut states = Vec::with_capacity(xs.len());
    let mut s = init;
    for &x in xs {
        s = lstm_step(g, p, x, s)?;
        states.push(s);
    }
    Ok(states)
}

/// Inverted dropout applied between stacked layers.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut dyn RngCore,
}

/// Runs a stack of LSTM layers from zero initial states and returns the top
/// layer's hidden output per frame. Dropout, when given with a positive rate,
/// masks the activations passed from one layer to the next.
pub fn lstm_stack(
    g: &mut Graph,
    layers: &[LstmVars],
    xs: &[Var],
    mut dropout: Option<Dropout<'_>>,
) -> Result<Vec<Var>> {
    if layers.is_empty() {
        return Err(contract("lstm_stack needs at least one layer"));
    }
    for pair in layers.windows(2) {
        if pair[1].input != pair[0].hidden {
            return Err(dim("lstm_stack", &[pair[0].hidden], &[pair[1].input]));
        }
    }
    let mut seq: Vec<Var> = xs.to_vec();
    for (l, layer) in layers.iter().enumerate() {
        if l > 0 {
            if let Some(d) = dropout.as_mut().filter(|d| d.rate > 0.0) {
                let keep = 1.0 - d.rate;
                for x in seq.iter_mut() {
                    let mask: Vec<f64> = (0..layers[l - 1].hidden)
                        .map(|_| if d.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    let m = g.constant(Tensor::vector(mask));
                    *x = g.mul(*x, m)?;
                }
            }
        }
        let init = LstmState::zeros(g, layer.hidden);
        seq = lstm_layer(g, layer, &seq, init)?.into_iter().map(|s| s.h).collect();
    }
    Ok(seq)
}

/// Plain recurrent cell `h' = tanh(W_x x + W_h h + b)`, kept as the
/// non-gated baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnParams {
    pub w_x: Tensor,
    pub w_h: Tensor,
    pub b: Tensor,
}

impl RnnParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_x: Tensor::zeros(&[hidden, input]),
            w_h: Tensor::zeros(&[hidden, hidden]),
            b: Tensor::zeros(&[hidden]),
        }
    }
}

pub fn rnn_step(g: &mut Graph, w_x: Var, w_h: Var, b: Var, x: Var, h: Var) -> Result<Var> {
    let a = g.matmul(w_x, x)?;
    let r = g.matmul(w_h, h)?;
    let s = g.add(a, r)?;
    let s = g.add(s, b)?;
    Ok(g.tanh(s))
}

/// Convenience: hidden outputs of a single layer over plain vectors.
pub fn run_layer(p: &LstmParams, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut g = Graph::new();
    let (vars, _) = p.bind(&mut g, false);
    let xv: Vec<Var> = xs.iter().map(|x| g.constant(Tensor::vector(x.clone()))).collect();
    let init = LstmState::zeros(&mut g, p.hidden_size());
    let states = lstm_layer(&mut g, &vars, &xv, init)?;
    Ok(states.iter().map(|s| g.value(s.h).data().to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use crate::gradcheck::grad_check_many;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vecs(rng: &mut ChaCha8Rng, t: usize, d: usize) -> Vec<Vec<f64>> {
        (0..t)
            .map(|_| (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
            .collect()
    }

    #[test]
    fn zero_params_zero_state() {
        let p = LstmParams::zeros(3, 2);
        let mut g = Graph::new();
        let (v, _) = p.bind(&mut g, false);
        let x = g.constant(Tensor::vector(vec![0.3, -1.0, 2.0]));
        let s0 = LstmState::zeros(&mut g, 2);
        let s = lstm_step(&mut g, &v, x, s0).unwrap();
        assert_eq!(g.value(s.h).data(), &[0.0, 0.0]);
        assert_eq!(g.value(s.c).data(), &[0.0, 0.0]);
    }

    #[test]
    fn zero_params_unit_cell() {
        // all gates sigmoid(0) = 0.5, candidate tanh(0) = 0
        let p = LstmParams::zeros(1, 1);
        let mut g = Graph::new();
        let (v, _) = p.bind(&mut g, false);
        let x = g.constant(Tensor::vector(vec![0.7]));
        let s0 = LstmState {
            h: g.constant(Tensor::vector(vec![0.0])),
            c: g.constant(Tensor::vector(vec![1.0])),
        };
        let s = lstm_step(&mut g, &v, x, s0).unwrap();
        assert_eq!(g.value(s.c).data()[0], 0.5);
        assert!((g.value(s.h).data()[0] - 0.231059).abs() < 1e-6);
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let p = LstmParams::zeros(3, 2);
        let mut g = Graph::new();
        let (v, _) = p.bind(&mut g, false);
        let x = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let s0 = LstmState::zeros(&mut g, 2);
        assert!(matches!(
            lstm_step(&mut g, &v, x, s0),
            Err(crate::Error::Dimension { .. })
        ));
    }

    #[test]
    fn empty_sequence_is_contract_error() {
        let p = LstmParams::zeros(3, 2);
        let mut g = Graph::new();
        let (v, _) = p.bind(&mut g, false);
        let s0 = LstmState::zeros(&mut g, 2);
        assert!(matches!(
            lstm_layer(&mut g, &v, &[], s0),
            Err(crate::Error::Contract(_))
        ));
    }

    #[test]
    fn single_step_layer_matches_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = LstmParams::gaussian(4, 3, 0.5, &mut rng);
        let xs = vecs(&mut rng, 1, 4);
        let mut g = Graph::new();
        let (v, _) = p.bind(&mut g, false);
        let x = g.constant(Tensor::vector(xs[0].clone()));
        let s0 = LstmState::zeros(&mut g, 3);
        let s = lstm_step(&mut g, &v, x, s0).unwrap();
        assert_eq!(run_layer(&p, &xs).unwrap()[0], g.value(s.h).data());
    }

    #[test]
    fn chaining_states_matches_full_run() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = LstmParams::gaussian(5, 4, 0.4, &mut rng);
        let xs = vecs(&mut rng, 6, 5);
        let mut g = Graph::new();
        let (v, _) = p.bind(&mut g, false);
        let xv: Vec<Var> = xs.iter().map(|x| g.constant(Tensor::vector(x.clone()))).collect();
        let init = LstmState::zeros(&mut g, 4);
        let full = lstm_layer(&mut g, &v, &xv, init).unwrap();
        let first = lstm_layer(&mut g, &v, &xv[..3], init).unwrap();
        let second = lstm_layer(&mut g, &v, &xv[3..], *first.last().unwrap()).unwrap();
        for (a, b) in full.iter().zip(first.iter().chain(&second)) {
            assert_eq!(g.value(a.h).data(), g.value(b.h).data());
            assert_eq!(g.value(a.c).data(), g.value(b.c).data());
        }
    }

    #[test]
    fn step_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = LstmParams::gaussian(3, 2, 0.5, &mut rng);
        let x = Tensor::vector(vec![0.4, -0.7, 1.1]);
        let h0 = Tensor::vector(vec![0.2, -0.1]);
        let c0 = Tensor::vector(vec![0.5, 0.3]);
        let mut inputs: Vec<Tensor> = p.tensors().into_iter().map(|(_, _, t)| t.clone()).collect();
        inputs.extend([x, h0, c0]);
        let r = grad_check_many(
            |g, v| {
                let vars = LstmVars {
                    w_x: [v[0], v[1], v[2], v[3]],
                    w_h: [v[4], v[5], v[6], v[7]],
                    b: [v[8], v[9], v[10], v[11]],
                    input: 3,
                    hidden: 2,
                };
                let s = lstm_step(g, &vars, v[12], LstmState { h: v[13], c: v[14] })?;
                Ok(g.sum(s.h))
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-5, "{}", r.max_rel_error);
        assert!(r.skipped.is_empty());
    }

    #[test]
    fn stack_gradient_check_three_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let layers = [
            LstmParams::gaussian(6, 4, 0.5, &mut rng),
            LstmParams::gaussian(4, 4, 0.5, &mut rng),
            LstmParams::gaussian(4, 4, 0.5, &mut rng),
        ];
        let xs = vecs(&mut rng, 5, 6);
        let inputs: Vec<Tensor> = layers
            .iter()
            .flat_map(|l| l.tensors().into_iter().map(|(_, _, t)| t.clone()))
            .collect();
        let r = grad_check_many(
            |g, v| {
                let lv: Vec<LstmVars> = (0..3)
                    .map(|l| {
                        let o = 12 * l;
                        LstmVars {
                            w_x: [v[o], v[o + 1], v[o + 2], v[o + 3]],
                            w_h: [v[o + 4], v[o + 5], v[o + 6], v[o + 7]],
                            b: [v[o + 8], v[o + 9], v[o + 10], v[o + 11]],
                            input: if l == 0 { 6 } else { 4 },
                            hidden: 4,
                        }
                    })
                    .collect();
                let xv: Vec<Var> = xs.iter().map(|x| g.constant(Tensor::vector(x.clone()))).collect();
                let hs = lstm_stack(g, &lv, &xv, None)?;
                let total = g.add_all(&hs)?;
                Ok(g.sum(total))
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-5, "{}", r.max_rel_error);
    }

    #[test]
    fn one_layer_stack_equals_layer_and_dropout_zero_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = LstmParams::gaussian(4, 3, 0.3, &mut rng);
        let q = LstmParams::gaussian(3, 3, 0.3, &mut rng);
        let xs = vecs(&mut rng, 4, 4);
        let expected = run_layer(&p, &xs).unwrap();

        let run = |layers: &[&LstmParams], dropout: Option<Dropout<'_>>| {
            let mut g = Graph::new();
            let lv: Vec<LstmVars> = layers.iter().map(|l| l.bind(&mut g, false).0).collect();
            let xv: Vec<Var> = xs.iter().map(|x| g.constant(Tensor::vector(x.clone()))).collect();
            let hs = lstm_stack(&mut g, &lv, &xv, dropout).unwrap();
            hs.iter().map(|&h| g.value(h).data().to_vec()).collect::<Vec<_>>()
        };
        assert_eq!(run(&[&p], None), expected);
        let mut drng = ChaCha8Rng::seed_from_u64(0);
        let train = run(&[&p, &q], Some(Dropout { rate: 0.0, rng: &mut drng }));
        assert_eq!(train, run(&[&p, &q], None));
        let dropped = run(&[&p, &q], Some(Dropout { rate: 0.5, rng: &mut drng }));
        assert_ne!(dropped, train);
    }

    #[test]
    fn sbu_sized_stack_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layers = [
            LstmParams::gaussian(90, 100, 0.1, &mut rng),
            LstmParams::gaussian(100, 100, 0.1, &mut rng),
            LstmParams::gaussian(100, 100, 0.1, &mut rng),
        ];
        let xs = vecs(&mut rng, 3, 90);
        let mut g = Graph::new();
        let lv: Vec<LstmVars> = layers.iter().map(|l| l.bind(&mut g, false).0).collect();
        let xv: Vec<Var> = xs.iter().map(|x| g.constant(Tensor::vector(x.clone()))).collect();
        let hs = lstm_stack(&mut g, &lv, &xv, None).unwrap();
        assert_eq!(hs.len(), 3);
        assert_eq!(g.shape(hs[2]), &[100]);
    }

    #[test]
    fn incompatible_stack_is_dimension_error() {
        let a = LstmParams::zeros(4, 3);
        let b = LstmParams::zeros(5, 3);
        let mut g = Graph::new();
        let lv = [a.bind(&mut g, false).0, b.bind(&mut g, false).0];
        let x = g.constant(Tensor::zeros(&[4]));
        assert!(matches!(
            lstm_stack(&mut g, &lv, &[x], None),
            Err(crate::Error::Dimension { .. })
        ));
    }

    #[test]
    fn rnn_baseline_zero_params() {
        let p = RnnParams::zeros(2, 2);
        let mut g = Graph::new();
        let (wx, wh, b) = (
            g.constant(p.w_x.clone()),
            g.constant(p.w_h.clone()),
            g.constant(p.b.clone()),
        );
        let x = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let h = g.constant(Tensor::zeros(&[2]));
        let h1 = rnn_step(&mut g, wx, wh, b, x, h).unwrap();
        assert_eq!(g.value(h1).data(), &[0.0, 0.0]);
    }

    proptest::proptest! {
        #[test]
        fn hidden_output_is_bounded(seed in 0u64..500, scale in 0.1f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = LstmParams::gaussian(3, 4, scale, &mut rng);
            let xs: Vec<Vec<f64>> = (0..8)
                .map(|_| (0..3).map(|_| (rng.random::<f64>() - 0.5) * 10.0).collect())
                .collect();
            for h in run_layer(&p, &xs).unwrap() {
                for v in h {
                    proptest::prop_assert!(v.abs() < 1.0);
                }
            }
        }
    }
}
