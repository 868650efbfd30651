//! The assembled network: joint-selection gate, main LSTM stack, per-frame
//! class projection, frame-selection gate and weighted score fusion.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::RngCore;

use crate::attention::{
    frame_gate, joint_gate, modulate, spatial_scores, SpatialAttnParams, SpatialVars,
    TemporalAttnParams, TemporalVars,
};
use crate::data::SkeletonSequence;
use crate::error::{contract, dim, Result};
use crate::graph::{Graph, Var};
use crate::lstm::{lstm_stack, lstm_step, Dropout, LstmParams, LstmState, LstmVars};
use crate::math;
use crate::params::{digest, gaussian, GroupSet, ParamGroup, ParamKind, ParamRef, INIT_STD};
use crate::tensor::Tensor;

/// Layer sizes of an [`StaModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    /// Joints across all persons (K).
    pub joints: usize,
    pub persons: usize,
    pub classes: usize,
    /// Main LSTM hidden size.
    pub hidden: usize,
    pub main_layers: usize,
    pub spatial_hidden: usize,
    pub temporal_hidden: usize,
    /// Width of the tanh bottleneck in the joint-score network.
    pub attn_width: usize,
}

impl ModelShape {
    /// Square layout: every LSTM and the score bottleneck share one width.
    pub fn uniform(joints: usize, persons: usize, classes: usize, hidden: usize) -> Self {
        Self {
            joints,
            persons,
            classes,
            hidden,
            main_layers: 3,
            spatial_hidden: hidden,
            temporal_hidden: hidden,
            attn_width: hidden,
        }
    }

    /// Two persons of 15 joints, 8 classes, 100 units per LSTM layer.
    pub fn sbu() -> Self {
        Self::uniform(30, 2, 8, 100)
    }

    pub fn input_dim(&self) -> usize {
        3 * self.joints
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.joints,
            self.persons,
            self.classes,
            self.hidden,
            self.main_layers,
            self.spatial_hidden,
            self.temporal_hidden,
            self.attn_width,
        ];
        if sizes.contains(&0) {
            return Err(contract(format!("model sizes must be positive: {self:?}")));
        }
        if !self.joints.is_multiple_of(self.persons) {
            return Err(contract("joints must divide evenly across persons"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaModel {
    pub shape: ModelShape,
    pub spatial: SpatialAttnParams,
    pub temporal: TemporalAttnParams,
    pub main: Vec<LstmParams>,
    /// `[C, H]`
    pub proj_w: Tensor,
    /// `[C]`
    pub proj_b: Tensor,
    /// Joint gates fixed to 1.
    pub spatial_bypass: bool,
    /// Frame gates fixed to 1.
    pub temporal_bypass: bool,
}

fn main_stack(shape: &ModelShape, layers: usize, rng: &mut dyn RngCore) -> Vec<LstmParams> {
    (0..layers)
        .map(|l| {
            let input = if l == 0 { shape.input_dim() } else { shape.hidden };
            LstmParams::gaussian(input, shape.hidden, INIT_STD, rng)
        })
        .collect()
}

impl StaModel {
    /// Gaussian weights with standard deviation [`INIT_STD`], zero biases.
    pub fn gaussian(shape: ModelShape, rng: &mut dyn RngCore) -> Result<Self> {
        shape.validate()?;
        let d = shape.input_dim();
        let main = main_stack(&shape, shape.main_layers, rng);
        let proj_w = gaussian(&[shape.classes, shape.hidden], INIT_STD, rng);
        let spatial = SpatialAttnParams::gaussian(
            d,
            shape.spatial_hidden,
            shape.attn_width,
            shape.joints,
            INIT_STD,
            rng,
        );
        let temporal = TemporalAttnParams::gaussian(d, shape.temporal_hidden, INIT_STD, rng);
        Ok(Self {
            shape,
            spatial,
            temporal,
            main,
            proj_w,
            proj_b: Tensor::zeros(&[shape.classes]),
            spatial_bypass: false,
            temporal_bypass: false,
        })
    }

    pub fn zeros(shape: ModelShape) -> Result<Self> {
        shape.validate()?;
        let d = shape.input_dim();
        let main = (0..shape.main_layers)
            .map(|l| LstmParams::zeros(if l == 0 { d } else { shape.hidden }, shape.hidden))
            .collect();
        Ok(Self {
            shape,
            spatial: SpatialAttnParams::zeros(d, shape.spatial_hidden, shape.attn_width, shape.joints),
            temporal: TemporalAttnParams::zeros(d, shape.temporal_hidden),
            main,
            proj_w: Tensor::zeros(&[shape.classes, shape.hidden]),
            proj_b: Tensor::zeros(&[shape.classes]),
            spatial_bypass: false,
            temporal_bypass: false,
        })
    }

    pub fn with_bypass(mut self, spatial: bool, temporal: bool) -> Self {
        self.spatial_bypass = spatial;
        self.temporal_bypass = temporal;
        self
    }

    pub fn classes(&self) -> usize {
        self.shape.classes
    }

    pub fn main_layers(&self) -> usize {
        self.main.len()
    }

    /// Keeps the existing main layers and appends freshly initialized ones
    /// until the stack has `layers` layers.
    pub fn grow_main(&mut self, layers: usize, rng: &mut dyn RngCore) {
        while self.main.len() < layers {
            self.main
                .push(LstmParams::gaussian(self.shape.hidden, self.shape.hidden, INIT_STD, rng));
        }
        self.shape.main_layers = self.main.len();
    }

    /// Replaces the main stack and class projection with fresh Gaussian ones.
    pub fn reinit_main(&mut self, layers: usize, rng: &mut dyn RngCore) {
        self.main = main_stack(&self.shape, layers, rng);
        self.proj_w = gaussian(&[self.shape.classes, self.shape.hidden], INIT_STD, rng);
        self.proj_b = Tensor::zeros(&[self.shape.classes]);
        self.shape.main_layers = layers;
    }

    /// Every parameter tensor, in a fixed order: main layers, projection,
    /// spatial subnetwork, temporal subnetwork.
    pub fn params(&self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        for (l, layer) in self.main.iter().enumerate() {
            for (name, kind, tensor) in layer.tensors() {
                out.push(ParamRef {
                    name: format!("main.{l}.{name}"),
                    group: ParamGroup::Main,
                    kind,
                    tensor,
                });
            }
        }
        out.push(ParamRef {
            name: "proj.w".into(),
            group: ParamGroup::Main,
            kind: ParamKind::Weight,
            tensor: &self.proj_w,
        });
        out.push(ParamRef {
            name: "proj.b".into(),
            group: ParamGroup::Main,
            kind: ParamKind::Bias,
            tensor: &self.proj_b,
        });
        for (name, kind, tensor) in self.spatial.tensors() {
            out.push(ParamRef {
                name: format!("spatial.{name}"),
                group: ParamGroup::Spatial,
                kind,
                tensor,
            });
        }
        for (name, kind, tensor) in self.temporal.tensors() {
            out.push(ParamRef {
                name: format!("temporal.{name}"),
                group: ParamGroup::Temporal,
                kind,
                tensor,
            });
        }
        out
    }

    /// Mutable parameter tensors in [`StaModel::params`] order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for layer in self.main.iter_mut() {
            out.extend(layer.tensors_mut());
        }
        out.push(&mut self.proj_w);
        out.push(&mut self.proj_b);
        out.extend(self.spatial.tensors_mut());
        out.extend(self.temporal.tensors_mut());
        out
    }

    /// Bit-level digest of one parameter group.
    pub fn group_digest(&self, group: ParamGroup) -> u64 {
        digest(self.params().into_iter().filter(|p| p.group == group).map(|p| p.tensor))
    }

    /// Bit-level digest of main-stack layer `i`.
    pub fn main_layer_digest(&self, i: usize) -> u64 {
        digest(self.main[i].tensors().into_iter().map(|(_, _, t)| t))
    }

    /// Whether a group takes part in the forward pass under the current
    /// bypass flags.
    pub fn group_active(&self, group: ParamGroup) -> bool {
        match group {
            ParamGroup::Main => true,
            ParamGroup::Spatial => !self.spatial_bypass,
            ParamGroup::Temporal => !self.temporal_bypass,
        }
    }

    /// Sum of |w| over the connection matrices of the active networks.
    pub fn l1_norm(&self) -> f64 {
        self.params()
            .iter()
            .filter(|p| p.kind == ParamKind::Weight && self.group_active(p.group))
            .map(|p| p.tensor.abs_sum())
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        if self.main.is_empty() || self.main.len() != self.shape.main_layers {
            return Err(contract("main stack length disagrees with the model shape"));
        }
        if self.main[0].input_size() != self.shape.input_dim() {
            return Err(dim("model", &[self.main[0].input_size()], &[self.shape.input_dim()]));
        }
        for pair in self.main.windows(2) {
            if pair[1].input_size() != pair[0].hidden_size() {
                return Err(dim("model", &[pair[0].hidden_size()], &[pair[1].input_size()]));
            }
        }
        if self.proj_w.shape() != [self.shape.classes, self.shape.hidden] {
            return Err(dim("model", self.proj_w.shape(), &[self.shape.classes, self.shape.hidden]));
        }
        if self.spatial.joints() != self.shape.joints {
            return Err(dim("model", &[self.spatial.joints()], &[self.shape.joints]));
        }
        Ok(())
    }

    /// Places all parameters on `g`; those in `trainable` require gradients.
    pub fn bind(&self, g: &mut Graph, trainable: GroupSet) -> BoundModel {
        let mut vars = Vec::new();
        let mut main = Vec::with_capacity(self.main.len());
        let rg_main = trainable.contains(ParamGroup::Main);
        for layer in &self.main {
            let (lv, v) = layer.bind(g, rg_main);
            main.push(lv);
            vars.extend(v);
        }
        let proj_w = g.leaf(self.proj_w.clone(), rg_main);
        let proj_b = g.leaf(self.proj_b.clone(), rg_main);
        vars.extend([proj_w, proj_b]);
        let (spatial, v) = self.spatial.bind(g, trainable.contains(ParamGroup::Spatial));
        vars.extend(v);
        let (temporal, v) = self.temporal.bind(g, trainable.contains(ParamGroup::Temporal));
        vars.extend(v);

        let penalized = self
            .params()
            .iter()
            .zip(&vars)
            .filter(|(p, _)| p.kind == ParamKind::Weight && self.group_active(p.group))
            .map(|(_, &v)| v)
            .collect();
        BoundModel {
            spatial,
            temporal,
            main,
            proj_w,
            proj_b,
            spatial_bypass: self.spatial_bypass,
            temporal_bypass: self.temporal_bypass,
            joints: self.shape.joints,
            vars,
            penalized,
        }
    }

    /// Inference forward pass (no dropout).
    pub fn forward(&self, seq: &SkeletonSequence) -> Result<Forward> {
        self.validate()?;
        let mut g = Graph::new();
        let bound = self.bind(&mut g, GroupSet::NONE);
        let out = bound.forward(&mut g, seq, None)?;
        Ok(out.read(&g))
    }

    /// Class with the highest probability, ties to the smallest index.
    pub fn predict(&self, seq: &SkeletonSequence) -> Result<usize> {
        Ok(math::argmax(&self.forward(seq)?.p))
    }
}

/// A model placed on a graph.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub spatial: SpatialVars,
    pub temporal: TemporalVars,
    pub main: Vec<LstmVars>,
    pub proj_w: Var,
    pub proj_b: Var,
    pub spatial_bypass: bool,
    pub temporal_bypass: bool,
    joints: usize,
    vars: Vec<Var>,
    penalized: Vec<Var>,
}

/// Graph handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    /// Fused class scores.
    pub o: Var,
    pub p: Var,
    /// Per valid frame; empty under spatial bypass.
    pub alphas: Vec<Var>,
    /// Per valid frame; empty under temporal bypass.
    pub betas: Vec<Var>,
    pub valid_len: usize,
    pub joints: usize,
}

impl ForwardVars {
    pub fn read(&self, g: &Graph) -> Forward {
        let t = self.valid_len;
        let alphas = if self.alphas.is_empty() {
            vec![vec![1.0; self.joints]; t]
        } else {
            self.alphas.iter().map(|&a| g.value(a).data().to_vec()).collect()
        };
        let betas = if self.betas.is_empty() {
            vec![1.0; t]
        } else {
            self.betas.iter().map(|&b| g.value(b).data()[0]).collect()
        };
        Forward {
            o: g.value(self.o).data().to_vec(),
            p: g.value(self.p).data().to_vec(),
            trace: AttentionTrace { alphas, betas },
        }
    }
}

impl BoundModel {
    /// Handles in [`StaModel::params`] order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Connection matrices of the active networks.
    pub fn penalized_weights(&self) -> &[Var] {
        &self.penalized
    }

    /// Runs the network over the valid frames of `seq`.
    pub fn forward(
        &self,
        g: &mut Graph,
        seq: &SkeletonSequence,
        dropout: Option<Dropout<'_>>,
    ) -> Result<ForwardVars> {
        if seq.joints() != self.joints {
            return Err(dim("forward", &[seq.joints()], &[self.joints]));
        }
        let t_len = seq.valid_len();
        if t_len == 0 {
            return Err(contract("forward needs at least one valid frame"));
        }
        let xs: Vec<Var> = (0..t_len)
            .map(|t| g.constant(Tensor::vector(seq.frame(t).to_vec())))
            .collect();

        let mut alphas = Vec::new();
        let main_in = if self.spatial_bypass {
            xs.clone()
        } else {
            let mut state = LstmState::zeros(g, self.spatial.lstm.hidden);
            let mut out = Vec::with_capacity(t_len);
            for &x in &xs {
                let s = spatial_scores(g, &self.spatial, x, state.h)?;
                let a = joint_gate(g, s)?;
                out.push(modulate(g, x, a)?);
                alphas.push(a);
                state = lstm_step(g, &self.spatial.lstm, x, state)?;
            }
            out
        };

        let mut betas = Vec::new();
        if !self.temporal_bypass {
            let mut state = LstmState::zeros(g, self.temporal.lstm.hidden);
            for &x in &xs {
                betas.push(frame_gate(g, &self.temporal, x, state.h)?);
                state = lstm_step(g, &self.temporal.lstm, x, state)?;
            }
        }

        let hs = lstm_stack(g, &self.main, &main_in, dropout)?;
        let mut zs = Vec::with_capacity(t_len);
        for &h in &hs {
            let zw = g.matmul(self.proj_w, h)?;
            zs.push(g.add(zw, self.proj_b)?);
        }
        let o = fuse(g, &zs, &betas)?;
        let p = g.softmax(o)?;
        Ok(ForwardVars {
            o,
            p,
            alphas,
            betas,
            valid_len: t_len,
            joints: self.joints,
        })
    }
}

/// `o = Σ_t β_t·z_t`, folded left to right. An empty `betas` means every
/// frame weighs one and the scores are summed unweighted.
pub fn fuse(g: &mut Graph, zs: &[Var], betas: &[Var]) -> Result<Var> {
    if zs.is_empty() {
        return Err(contract("score fusion needs at least one frame"));
    }
    if !betas.is_empty() && betas.len() != zs.len() {
        return Err(dim("fuse", &[zs.len()], &[betas.len()]));
    }
    let mut o: Option<Var> = None;
    for (t, &z) in zs.iter().enumerate() {
        let term = match betas.get(t) {
            Some(&beta) => g.mul(z, beta)?,
            None => z,
        };
        o = Some(match o {
            Some(acc) => g.add(acc, term)?,
            None => term,
        });
    }
    Ok(o.expect("non-empty"))
}

/// Per-frame gate values recorded during a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    /// `T × K`; rows of ones under spatial bypass.
    pub alphas: Vec<Vec<f64>>,
    /// Length `T`; ones under temporal bypass.
    pub betas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub o: Vec<f64>,
    pub p: Vec<f64>,
    pub trace: AttentionTrace,
}
