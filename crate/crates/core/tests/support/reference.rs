//! Stacked LSTM with summed per-frame scores, written directly over slices.
//! Shares no code with the graph engine; only the float operation order is
//! matched so results can be compared bit for bit.

use sta_core::StaModel;

fn matvec(w: &[f64], rows: usize, x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    (0..rows)
        .map(|r| {
            let mut acc = 0.0;
            for c in 0..cols {
                acc += w[r * cols + c] * x[c];
            }
            acc
        })
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// Top-layer hidden states of the main stack, all layers from zero state.
pub fn lstm_stack(model: &StaModel, frames: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut seq = frames.to_vec();
    for layer in &model.main {
        let hidden = layer.b[0].numel();
        let (mut h, mut c) = (vec![0.0; hidden], vec![0.0; hidden]);
        let mut out = Vec::with_capacity(seq.len());
        for x in &seq {
            let pre: Vec<Vec<f64>> = (0..4)
                .map(|k| {
                    let wx = matvec(layer.w_x[k].data(), hidden, x);
                    let wh = matvec(layer.w_h[k].data(), hidden, &h);
                    (0..hidden).map(|j| (wx[j] + wh[j]) + layer.b[k].data()[j]).collect()
                })
                .collect();
            for j in 0..hidden {
                let i = sigmoid(pre[0][j]);
                let f = sigmoid(pre[1][j]);
                let g = libm::tanh(pre[2][j]);
                let o = sigmoid(pre[3][j]);
                c[j] = f * c[j] + i * g;
                h[j] = o * libm::tanh(c[j]);
            }
            out.push(h.clone());
        }
        seq = out;
    }
    seq
}

/// Class probabilities of the attention-free network.
pub fn plain_probs(model: &StaModel, frames: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let classes = model.proj_b.numel();
    let mut o: Option<Vec<f64>> = None;
    for h in lstm_stack(model, frames) {
        let zw = matvec(model.proj_w.data(), classes, &h);
        let z: Vec<f64> = zw.iter().zip(model.proj_b.data()).map(|(a, b)| a + b).collect();
        o = Some(match o {
            None => z,
            Some(acc) => acc.iter().zip(&z).map(|(a, b)| a + b).collect(),
        });
    }
    let o = o.expect("at least one frame");
    let mut max = f64::NEG_INFINITY;
    for &v in &o {
        max = max.max(v);
    }
    let e: Vec<f64> = o.iter().map(|&v| libm::exp(v - max)).collect();
    let mut s = 0.0;
    for v in &e {
        s += v;
    }
    let p = e.iter().map(|v| v / s).collect();
    (o, p)
}
