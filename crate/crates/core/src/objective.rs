//! Regularized cross-entropy: CE + λ1·joint-coverage + λ2·mean |β| + λ3·L1.
//!
//! Each term exists twice: as a plain function over recorded values, and as
//! a graph builder used for training. Both follow the same definitions.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{contract, Result};
use crate::graph::{Graph, Var};
use crate::data::SkeletonSequence;
use crate::lstm::Dropout;
use crate::model::{AttentionTrace, BoundModel, StaModel};

/// Probabilities are clamped here before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub spatial_reg: bool,
    pub temporal_reg: bool,
    pub l1: bool,
}

impl LossConfig {
    /// λ = (0.001, 0.0001, 0.0005), all terms on.
    pub fn sbu() -> Self {
        Self {
            lambda1: 0.001,
            lambda2: 0.0001,
            lambda3: 0.0005,
            spatial_reg: true,
            temporal_reg: true,
            l1: true,
        }
    }

    /// λ = (0.01, 0.001, 0.00005), all terms on.
    pub fn ntu() -> Self {
        Self {
            lambda1: 0.01,
            lambda2: 0.001,
            lambda3: 0.00005,
            ..Self::sbu()
        }
    }

    /// Cross-entropy alone.
    pub fn ce_only() -> Self {
        Self {
            spatial_reg: false,
            temporal_reg: false,
            l1: false,
            ..Self::sbu()
        }
    }

    /// Attention regularizers off, CE plus L1 kept.
    pub fn without_attention_reg(self) -> Self {
        Self {
            spatial_reg: false,
            temporal_reg: false,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, l) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(contract(format!("{name} must be finite and non-negative, got {l}")));
            }
        }
        Ok(())
    }

    fn w1(&self) -> f64 {
        if self.spatial_reg {
            self.lambda1
        } else {
            0.0
        }
    }

    fn w2(&self) -> f64 {
        if self.temporal_reg {
            self.lambda2
        } else {
            0.0
        }
    }

    fn w3(&self) -> f64 {
        if self.l1 {
            self.lambda3
        } else {
            0.0
        }
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::sbu()
    }
}

/// `−ln max(p[label], PROB_FLOOR)`.
pub fn cross_entropy(p: &[f64], label: usize) -> Result<f64> {
    let &q = p
        .get(label)
        .ok_or_else(|| contract(format!("label {label} out of range for {} classes", p.len())))?;
    Ok(-libm::log(q.max(PROB_FLOOR)))
}

/// `Σ_k (1 − (Σ_t α_{t,k}) / T)²` over the given valid rows.
pub fn spatial_reg(alphas: &[Vec<f64>]) -> f64 {
    let Some(first) = alphas.first() else {
        return 0.0;
    };
    let t = alphas.len() as f64;
    (0..first.len())
        .map(|k| {
            let col: f64 = alphas.iter().map(|row| row[k]).sum();
            let d = 1.0 - col / t;
            d * d
        })
        .sum()
}

/// `(1/T) Σ_t |β_t|`.
pub fn temporal_reg(betas: &[f64]) -> f64 {
    if betas.is_empty() {
        return 0.0;
    }
    betas.iter().map(|b| b.abs()).sum::<f64>() / betas.len() as f64
}

/// Sum of |w| over the connection matrices of the model's active networks;
/// biases excluded.
pub fn l1_penalty(model: &StaModel) -> f64 {
    model.l1_norm()
}

/// Loss of a single sequence.
pub fn total_loss(
    p: &[f64],
    label: usize,
    trace: &AttentionTrace,
    model: &StaModel,
    cfg: &LossConfig,
) -> Result<f64> {
    let ce = cross_entropy(p, label)?;
    Ok(ce + cfg.w1() * spatial_reg(&trace.alphas)
        + cfg.w2() * temporal_reg(&trace.betas)
        + cfg.w3() * l1_penalty(model))
}

/// Differentiable loss terms for one sequence.
#[derive(Debug, Clone, Copy)]
pub struct SequenceTerms {
    pub ce: Var,
    pub reg1: Var,
    pub reg2: Var,
}

pub fn cross_entropy_var(g: &mut Graph, p: Var, label: usize) -> Result<Var> {
    let c = g.value(p).numel();
    if label >= c {
        return Err(contract(format!("label {label} out of range for {c} classes")));
    }
    let picked = g.gather(p, alloc::vec![label])?;
    let ln = g.ln_clamped(picked, PROB_FLOOR);
    let neg = g.scale(ln, -1.0);
    Ok(g.sum(neg))
}

/// Graph form of [`spatial_reg`]; an empty list means all gates are one.
pub fn spatial_reg_var(g: &mut Graph, alphas: &[Var]) -> Result<Var> {
    if alphas.is_empty() {
        return Ok(g.scalar(0.0));
    }
    let col = g.add_all(alphas)?;
    let t = alphas.len() as f64;
    let gap = g.affine(col, -1.0 / t, 1.0);
    let sq = g.square(gap);
    Ok(g.sum(sq))
}

/// Graph form of [`temporal_reg`]; an empty list means `valid_len` gates of one.
pub fn temporal_reg_var(g: &mut Graph, betas: &[Var], valid_len: usize) -> Result<Var> {
    if betas.is_empty() {
        return Ok(g.scalar(if valid_len > 0 { 1.0 } else { 0.0 }));
    }
    let abs: Vec<Var> = betas.iter().map(|&b| g.abs(b)).collect();
    let s = g.add_all(&abs)?;
    let s = g.sum(s);
    Ok(g.scale(s, 1.0 / betas.len() as f64))
}

pub fn l1_var(g: &mut Graph, weights: &[Var]) -> Result<Var> {
    if weights.is_empty() {
        return Ok(g.scalar(0.0));
    }
    let sums: Vec<Var> = weights
        .iter()
        .map(|&w| {
            let a = g.abs(w);
            g.sum(a)
        })
        .collect();
    g.add_all(&sums)
}

/// Batch objective: mean over sequences of `CE + λ1·reg1 + λ2·reg2`, plus
/// `λ3·L1` added once.
pub fn batch_loss(
    g: &mut Graph,
    terms: &[SequenceTerms],
    l1: Var,
    cfg: &LossConfig,
) -> Result<Var> {
    if terms.is_empty() {
        return Err(contract("batch loss over an empty batch"));
    }
    let mut per_seq = Vec::with_capacity(terms.len());
    for t in terms {
        let r1 = g.scale(t.reg1, cfg.w1());
        let r2 = g.scale(t.reg2, cfg.w2());
        let s = g.add(t.ce, r1)?;
        per_seq.push(g.add(s, r2)?);
    }
    let total = g.add_all(&per_seq)?;
    let mean = g.scale(total, 1.0 / terms.len() as f64);
    let reg3 = g.scale(l1, cfg.w3());
    g.add(mean, reg3)
}

/// Graph handles of a batch objective.
#[derive(Debug, Clone)]
pub struct BatchObjective {
    pub loss: Var,
    pub terms: Vec<SequenceTerms>,
    pub l1: Var,
}

impl BatchObjective {
    /// Batch means of the unweighted (ce, reg1, reg2) terms and the raw L1 norm.
    pub fn term_means(&self, g: &Graph) -> [f64; 4] {
        let n = self.terms.len() as f64;
        let mean = |f: fn(&SequenceTerms) -> Var| {
            self.terms.iter().map(|t| g.value(f(t)).data()[0]).sum::<f64>() / n
        };
        [
            mean(|t| t.ce),
            mean(|t| t.reg1),
            mean(|t| t.reg2),
            g.value(self.l1).data()[0],
        ]
    }
}

/// Runs `model` over `batch` on `g` and builds the batch objective.
/// `dropout` yields a fresh mask source per sequence.
pub fn build_objective(
    g: &mut Graph,
    model: &BoundModel,
    batch: &[&SkeletonSequence],
    cfg: &LossConfig,
    mut dropout: Option<(f64, &mut dyn rand::RngCore)>,
) -> Result<BatchObjective> {
    let mut terms = Vec::with_capacity(batch.len());
    for seq in batch {
        let d = dropout
            .as_mut()
            .filter(|(rate, _)| *rate > 0.0)
            .map(|(rate, rng)| Dropout { rate: *rate, rng: &mut **rng });
        let fv = model.forward(g, seq, d)?;
        let ce = cross_entropy_var(g, fv.p, seq.label())?;
        let reg1 = spatial_reg_var(g, &fv.alphas)?;
        let reg2 = temporal_reg_var(g, &fv.betas, fv.valid_len)?;
        terms.push(SequenceTerms { ce, reg1, reg2 });
    }
    let l1 = l1_var(g, model.penalized_weights())?;
    let loss = batch_loss(g, &terms, l1, cfg)?;
    Ok(BatchObjective { loss, terms, l1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelShape;
    use crate::tensor::Tensor;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cross_entropy_values() {
        assert!(cross_entropy(&[1.0, 0.0], 0).unwrap().abs() <= 1e-12);
        assert!((cross_entropy(&[0.5, 0.5], 1).unwrap() - core::f64::consts::LN_2).abs() < 1e-15);
        assert!((cross_entropy(&[0.9, 0.1], 1).unwrap() - 2.302585).abs() < 1e-6);
        assert!((cross_entropy(&[1.0, 0.0], 1).unwrap() - 27.631021).abs() < 1e-6);
        assert!(matches!(cross_entropy(&[0.5, 0.5], 2), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn spatial_reg_values() {
        assert_eq!(spatial_reg(&[vec![0.5, 0.5], vec![0.5, 0.5]]), 0.5);
        assert_eq!(spatial_reg(&[vec![1.0], vec![1.0], vec![1.0]]), 0.0);
    }

    #[test]
    fn spatial_reg_bound_for_softmax_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..2000 {
            let t = rng.random_range(1..12);
            let rows: Vec<Vec<f64>> = (0..t)
                .map(|_| {
                    let s: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 8.0 - 4.0).collect();
                    crate::math::softmax(&s)
                })
                .collect();
            assert!(spatial_reg(&rows) >= 2.25 - 1e-9);
        }
        assert!((spatial_reg(&[vec![0.25; 4]]) - 2.25).abs() < 1e-15);
    }

    #[test]
    fn temporal_reg_values() {
        assert_eq!(temporal_reg(&[1.0; 7]), 1.0);
        assert_eq!(temporal_reg(&[0.0; 3]), 0.0);
        assert_eq!(temporal_reg(&[1.0, 2.0, 3.0]), 2.0);
    }

    #[test]
    fn l1_values() {
        let shape = ModelShape::uniform(2, 1, 2, 3);
        let mut m = StaModel::zeros(shape).unwrap();
        assert_eq!(l1_penalty(&m), 0.0);
        m.proj_w = Tensor::matrix(&[&[1.0, -2.0, 0.0], &[0.0, 0.0, 0.0]]).unwrap();
        m.proj_b = Tensor::vector(vec![5.0, 5.0]);
        assert_eq!(l1_penalty(&m), 3.0);
    }

    #[test]
    fn l1_matches_flat_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = StaModel::gaussian(ModelShape::uniform(4, 1, 2, 4), &mut rng).unwrap();
        let mut flat = 0.0;
        for layer in &m.main {
            for t in layer.w_x.iter().chain(&layer.w_h) {
                for v in t.data() {
                    flat += v.abs();
                }
            }
        }
        for t in [&m.proj_w, &m.spatial.w_xs, &m.spatial.w_hs, &m.spatial.u_s, &m.temporal.w_x, &m.temporal.w_h] {
            for v in t.data() {
                flat += v.abs();
            }
        }
        for t in m.spatial.lstm.w_x.iter().chain(&m.spatial.lstm.w_h).chain(&m.temporal.lstm.w_x).chain(&m.temporal.lstm.w_h) {
            for v in t.data() {
                flat += v.abs();
            }
        }
        assert!((l1_penalty(&m) - flat).abs() < 1e-12);
    }

    #[test]
    fn total_loss_composition() {
        let m = StaModel::zeros(ModelShape::uniform(2, 1, 2, 3)).unwrap();
        let trace = AttentionTrace {
            alphas: vec![vec![0.5, 0.5]; 4],
            betas: vec![1.0; 4],
        };
        let l = total_loss(&[0.5, 0.5], 0, &trace, &m, &LossConfig::sbu()).unwrap();
        assert!((l - 0.693747).abs() < 1e-6, "{l}");
        let plain = total_loss(&[0.5, 0.5], 0, &trace, &m, &LossConfig::ce_only()).unwrap();
        assert_eq!(plain, core::f64::consts::LN_2);
    }

    #[test]
    fn lambda_validation() {
        assert!(LossConfig { lambda2: -1.0, ..LossConfig::sbu() }.validate().is_err());
        assert!(LossConfig::ntu().validate().is_ok());
    }

    #[test]
    fn graph_terms_match_plain_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|_| crate::math::softmax(&(0..4).map(|_| rng.random::<f64>()).collect::<Vec<_>>()))
            .collect();
        let betas = [0.3, 0.0, 1.7, 2.2, 0.9];
        let mut g = Graph::new();
        let av: Vec<Var> = rows.iter().map(|r| g.constant(Tensor::vector(r.clone()))).collect();
        let bv: Vec<Var> = betas.iter().map(|&b| g.constant(Tensor::scalar(b))).collect();
        let r1 = spatial_reg_var(&mut g, &av).unwrap();
        let r2 = temporal_reg_var(&mut g, &bv, 5).unwrap();
        assert!((g.value(r1).data()[0] - spatial_reg(&rows)).abs() < 1e-14);
        assert!((g.value(r2).data()[0] - temporal_reg(&betas)).abs() < 1e-14);
        let p = g.constant(Tensor::vector(vec![0.9, 0.1]));
        let ce = cross_entropy_var(&mut g, p, 1).unwrap();
        assert_eq!(g.value(ce).data()[0], cross_entropy(&[0.9, 0.1], 1).unwrap());
    }

    #[test]
    fn term_gradients_match_finite_differences() {
        use crate::gradcheck::grad_check_many;
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let scores: Vec<Tensor> = (0..4)
            .map(|_| Tensor::vector((0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()))
            .collect();
        let mut inputs = scores.clone();
        inputs.extend((0..4).map(|i| Tensor::scalar(0.2 + 0.4 * i as f64)));
        inputs.push(Tensor::matrix(&[&[0.4, -0.3], &[-0.8, 0.25]]).unwrap());
        let r = grad_check_many(
            |g, v| {
                let alphas: Vec<Var> = v[..4].iter().map(|&s| g.softmax(s)).collect::<Result<_>>()?;
                let r1 = spatial_reg_var(g, &alphas)?;
                let r2 = temporal_reg_var(g, &v[4..8], 4)?;
                let l1 = l1_var(g, &v[8..9])?;
                let p = g.softmax(v[0])?;
                let ce = cross_entropy_var(g, p, 2)?;
                batch_loss(g, &[SequenceTerms { ce, reg1: r1, reg2: r2 }], l1, &LossConfig {
                    lambda1: 0.7,
                    lambda2: 0.3,
                    lambda3: 0.2,
                    ..LossConfig::sbu()
                })
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-5, "{}", r.max_rel_error);
        assert!(r.skipped.is_empty());
    }
}
