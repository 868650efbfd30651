//! Central-difference gradient checking against the tape.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{contract, Error, Result};
use crate::data::SkeletonSequence;
use crate::graph::{Graph, Var};
use crate::model::StaModel;
use crate::objective::{build_objective, LossConfig};
use crate::params::GroupSet;
use crate::tensor::Tensor;

/// Coordinates whose central difference lands this close to a kink are
/// excluded from the comparison.
pub const KINK_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over checked coordinates of |a − n| / max(1, |a|, |n|)
    pub max_rel_error: f64,
    pub checked: usize,
    /// (input index, flat coordinate) pairs skipped because the central
    /// difference straddles or touches a non-differentiable point.
    pub skipped: Vec<(usize, usize)>,
}

fn eval<F>(f: &F, inputs: &[Tensor], rg: bool) -> Result<(Graph, Vec<Var>, Var)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), rg)).collect();
    let root = f(&mut g, &vars)?;
    let value = g.value(root);
    if value.numel() != 1 {
        return Err(contract(format!(
            "gradient check needs a scalar function, got shape {:?}",
            value.shape()
        )));
    }
    if !value.data()[0].is_finite() {
        return Err(Error::Numeric(format!("function value {}", value.data()[0])));
    }
    Ok((g, vars, root))
}

/// Compares tape gradients of the scalar function `f` at `inputs` with
/// central differences of step `eps`, over every coordinate of every input.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let (mut g, vars, root) = eval(&f, inputs, true)?;
    g.backward(root)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| g.grad_or_zeros(v)).collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: Vec::new(),
    };
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (which, input) in inputs.iter().enumerate() {
        for (j, &x0) in input.data().iter().enumerate() {
            probe[which].data_mut()[j] = x0 + eps;
            let (gp, _, rp) = eval(&f, &probe, false)?;
            probe[which].data_mut()[j] = x0 - eps;
            let (gm, _, rm) = eval(&f, &probe, false)?;
            probe[which].data_mut()[j] = x0;

            if near_kink(&gp.kink_offsets(), &gm.kink_offsets()) {
                report.skipped.push((which, j));
                continue;
            }
            let numeric = (gp.value(rp).data()[0] - gm.value(rm).data()[0]) / (2.0 * eps);
            let a = analytic[which][j];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.max_rel_error = report.max_rel_error.max(err);
            report.checked += 1;
        }
    }
    Ok(report)
}

/// True when a non-smooth input moved by the probe lies on opposite sides
/// of its kink, or within [`KINK_TOLERANCE`] of it.
fn near_kink(plus: &[f64], minus: &[f64]) -> bool {
    if plus.len() != minus.len() {
        return true;
    }
    plus.iter().zip(minus).any(|(&p, &m)| {
        p != m && (p.signum() != m.signum() || p.abs() < KINK_TOLERANCE || m.abs() < KINK_TOLERANCE)
    })
}

/// Checks tape gradients of the batch objective with respect to every
/// parameter of `model`, all groups trainable and no dropout.
pub fn model_loss_check(
    model: &StaModel,
    batch: &[&SkeletonSequence],
    cfg: &LossConfig,
    eps: f64,
) -> Result<GradCheckReport> {
    let objective = |m: &StaModel, rg: GroupSet| -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let bound = m.bind(&mut g, rg);
        let obj = build_objective(&mut g, &bound, batch, cfg, None)?;
        let value = g.value(obj.loss).data()[0];
        if !value.is_finite() {
            return Err(Error::Numeric(format!("loss {value}")));
        }
        Ok((g, bound.vars().to_vec(), obj.loss))
    };
    let (mut g, vars, loss) = objective(model, GroupSet::ALL)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| g.grad_or_zeros(v)).collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: Vec::new(),
    };
    let mut probe = model.clone();
    for (i, grad) in analytic.iter().enumerate() {
        for (j, &a) in grad.iter().enumerate() {
            let x0 = probe.params_mut()[i].data()[j];
            probe.params_mut()[i].data_mut()[j] = x0 + eps;
            let (gp, _, rp) = objective(&probe, GroupSet::NONE)?;
            probe.params_mut()[i].data_mut()[j] = x0 - eps;
            let (gm, _, rm) = objective(&probe, GroupSet::NONE)?;
            probe.params_mut()[i].data_mut()[j] = x0;
            if near_kink(&gp.kink_offsets(), &gm.kink_offsets()) {
                report.skipped.push((i, j));
                continue;
            }
            let numeric = (gp.value(rp).data()[0] - gm.value(rm).data()[0]) / (2.0 * eps);
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.max_rel_error = report.max_rel_error.max(err);
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Single-input form of [`grad_check_many`].
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    grad_check_many(|g, vs| f(g, vs[0]), core::slice::from_ref(x), eps)
}
