//! Joint-selection (spatial) and frame-selection (temporal) gates.
//!
//! Each gate owns a one-layer LSTM fed with the raw frame. At frame `t` the
//! gate is computed from the frame and the subnetwork's hidden state at
//! `t − 1`; only then does the subnetwork LSTM advance on the frame.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::RngCore;

use crate::error::{dim, Result};
use crate::graph::{Graph, Var};
use crate::lstm::{LstmParams, LstmVars};
use crate::params::{bind_all, gaussian, ParamKind};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialAttnParams {
    pub lstm: LstmParams,
    /// `[H_a, D]`
    pub w_xs: Tensor,
    /// `[H_a, H_s]`
    pub w_hs: Tensor,
    /// `[H_a]`
    pub b_s: Tensor,
    /// `[K, H_a]`
    pub u_s: Tensor,
    /// `[K]`
    pub b_us: Tensor,
}

impl SpatialAttnParams {
    pub fn zeros(input: usize, hidden: usize, width: usize, joints: usize) -> Self {
        Self {
            lstm: LstmParams::zeros(input, hidden),
            w_xs: Tensor::zeros(&[width, input]),
            w_hs: Tensor::zeros(&[width, hidden]),
            b_s: Tensor::zeros(&[width]),
            u_s: Tensor::zeros(&[joints, width]),
            b_us: Tensor::zeros(&[joints]),
        }
    }

    pub fn gaussian(
        input: usize,
        hidden: usize,
        width: usize,
        joints: usize,
        std: f64,
        rng: &mut dyn RngCore,
    ) -> Self {
        let lstm = LstmParams::gaussian(input, hidden, std, rng);
        Self {
            lstm,
            w_xs: gaussian(&[width, input], std, rng),
            w_hs: gaussian(&[width, hidden], std, rng),
            b_s: Tensor::zeros(&[width]),
            u_s: gaussian(&[joints, width], std, rng),
            b_us: Tensor::zeros(&[joints]),
        }
    }

    pub fn joints(&self) -> usize {
        self.u_s.shape()[0]
    }

    pub(crate) fn tensors(&self) -> Vec<(String, ParamKind, &Tensor)> {
        let mut out: Vec<_> = self
            .lstm
            .tensors()
            .into_iter()
            .map(|(n, k, t)| (format!("lstm.{n}"), k, t))
            .collect();
        out.push(("w_xs".into(), ParamKind::Weight, &self.w_xs));
        out.push(("w_hs".into(), ParamKind::Weight, &self.w_hs));
        out.push(("b_s".into(), ParamKind::Bias, &self.b_s));
        out.push(("u_s".into(), ParamKind::Weight, &self.u_s));
        out.push(("b_us".into(), ParamKind::Bias, &self.b_us));
        out
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.lstm.tensors_mut();
        out.extend([
            &mut self.w_xs,
            &mut self.w_hs,
            &mut self.b_s,
            &mut self.u_s,
            &mut self.b_us,
        ]);
        out
    }

    pub fn bind(&self, g: &mut Graph, requires_grad: bool) -> (SpatialVars, Vec<Var>) {
        let (lstm, mut vars) = self.lstm.bind(g, requires_grad);
        let rest = bind_all(
            g,
            &[&self.w_xs, &self.w_hs, &self.b_s, &self.u_s, &self.b_us],
            requires_grad,
        );
        let sv = SpatialVars {
            lstm,
            w_xs: rest[0],
            w_hs: rest[1],
            b_s: rest[2],
            u_s: rest[3],
            b_us: rest[4],
            joints: self.joints(),
        };
        vars.extend(rest);
        (sv, vars)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SpatialVars {
    pub lstm: LstmVars,
    pub w_xs: Var,
    pub w_hs: Var,
    pub b_s: Var,
    pub u_s: Var,
    pub b_us: Var,
    pub joints: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalAttnParams {
    pub lstm: LstmParams,
    /// `[D]`
    pub w_x: Tensor,
    /// `[H_t]`
    pub w_h: Tensor,
    /// `[1]`
    pub b: Tensor,
}

impl TemporalAttnParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            lstm: LstmParams::zeros(input, hidden),
            w_x: Tensor::zeros(&[input]),
            w_h: Tensor::zeros(&[hidden]),
            b: Tensor::zeros(&[1]),
        }
    }

    pub fn gaussian(input: usize, hidden: usize, std: f64, rng: &mut dyn RngCore) -> Self {
        let lstm = LstmParams::gaussian(input, hidden, std, rng);
        Self {
            lstm,
            w_x: gaussian(&[input], std, rng),
            w_h: gaussian(&[hidden], std, rng),
            b: Tensor::zeros(&[1]),
        }
    }

    pub(crate) fn tensors(&self) -> Vec<(String, ParamKind, &Tensor)> {
        let mut out: Vec<_> = self
            .lstm
            .tensors()
            .into_iter()
            .map(|(n, k, t)| (format!("lstm.{n}"), k, t))
            .collect();
        out.push(("w_x".into(), ParamKind::Weight, &self.w_x));
        out.push(("w_h".into(), ParamKind::Weight, &self.w_h));
        out.push(("b".into(), ParamKind::Bias, &self.b));
        out
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.lstm.tensors_mut();
        out.extend([&mut self.w_x, &mut self.w_h, &mut self.b]);
        out
    }

    pub fn bind(&self, g: &mut Graph, requires_grad: bool) -> (TemporalVars, Vec<Var>) {
        let (lstm, mut vars) = self.lstm.bind(g, requires_grad);
        let rest = bind_all(g, &[&self.w_x, &self.w_h, &self.b], requires_grad);
        let tv = TemporalVars {
            lstm,
            w_x: rest[0],
            w_h: rest[1],
            b: rest[2],
        };
        vars.extend(rest);
        (tv, vars)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TemporalVars {
    pub lstm: LstmVars,
    pub w_x: Var,
    pub w_h: Var,
    pub b: Var,
}

/// Joint scores `U_s · tanh(W_xs x + W_hs h + b_s) + b_us`.
pub fn spatial_scores(g: &mut Graph, p: &SpatialVars, x: Var, h_prev: Var) -> Result<Var> {
    let a = g.matmul(p.w_xs, x)?;
    let b = g.matmul(p.w_hs, h_prev)?;
    let s = g.add(a, b)?;
    let s = g.add(s, p.b_s)?;
    let hidden = g.tanh(s);
    let u = g.matmul(p.u_s, hidden)?;
    g.add(u, p.b_us)
}

/// Softmax of the joint scores.
pub fn joint_gate(g: &mut Graph, scores: Var) -> Result<Var> {
    g.softmax(scores)
}

/// Scales each joint's three coordinates by its gate. `x` is the flattened
/// joint-major frame of length `3K`.
pub fn modulate(g: &mut Graph, x: Var, alpha: Var) -> Result<Var> {
    let k = g.value(alpha).numel();
    let d = g.value(x).numel();
    if d != 3 * k {
        return Err(dim("modulate", g.shape(x), g.shape(alpha)));
    }
    let index = (0..d).map(|j| j / 3).collect();
    let expanded = g.gather(alpha, index)?;
    let flat = if g.shape(x).len() == 1 {
        x
    } else {
        // reshape [K, 3] -> [3K] through an identity gather
        g.gather(x, (0..d).collect())?
    };
    g.mul(flat, expanded)
}

/// Frame gate `ReLU(w_x · x + w_h · h + b)` as a one-element tensor.
pub fn frame_gate(g: &mut Graph, p: &TemporalVars, x: Var, h_prev: Var) -> Result<Var> {
    let a = g.dot(p.w_x, x)?;
    let b = g.dot(p.w_h, h_prev)?;
    let s = g.add(a, b)?;
    let s = g.add(s, p.b)?;
    Ok(g.relu(s))
}
