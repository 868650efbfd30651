//! Minibatch training, parameter-group freezing and the staged schedule.
//!
//! The joint schedule runs eight stages after initialization:
//!
//! | step | gates           | main layers       | trained            | budget |
//! |------|-----------------|-------------------|--------------------|--------|
//! | 2    | spatial = 1     | 1                 | main + temporal    | N1     |
//! | 3    | spatial = 1     | grow to 3         | main               | N1     |
//! | 4    | spatial = 1     | 3                 | main + temporal    | N2     |
//! | 5    | temporal = 1    | fresh, 1          | main + spatial     | N1     |
//! | 6    | temporal = 1    | grow to 3         | main               | N1     |
//! | 7    | temporal = 1    | 3                 | main + spatial     | N2     |
//! | 8    | both learned    | 3                 | main               | N1     |
//! | 9    | both learned    | 3                 | everything         | N2     |

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::SkeletonSequence;
use crate::error::{contract, Error, Result};
use crate::graph::Graph;
use crate::model::{ModelShape, StaModel};
use crate::objective::{build_objective, LossConfig};
use crate::optim::{check_grads, clip_global_norm, AdamConfig, AdamState};
use crate::params::{GroupSet, ParamGroup};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub n1: usize,
    pub n2: usize,
    pub batch_size: usize,
    /// Inverted-dropout rate between stacked main layers.
    pub dropout: f64,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    /// Global-norm gradient clipping threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Depth of the main stack once grown.
    pub main_layers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n1: 1000,
            n2: 500,
            batch_size: 8,
            dropout: 0.5,
            loss: LossConfig::sbu(),
            adam: AdamConfig::default(),
            clip_norm: Some(5.0),
            main_layers: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.batch_size == 0 {
            return Err(contract("batch size must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(contract(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        if self.main_layers == 0 {
            return Err(contract("main stack needs at least one layer"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(contract("clip norm must be positive"));
            }
        }
        Ok(())
    }
}

/// How a stage reshapes the main stack before iterating.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MainLayout {
    Keep,
    /// Keep existing layers, append fresh ones up to the configured depth.
    Grow,
    /// Fresh single-layer stack and fresh class projection.
    FreshSingle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    N1,
    N2,
    /// N1 + N2, used by the attention-free baseline.
    Both,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage {
    /// Step number of the joint schedule; 0 for the plain baseline stage.
    pub step: u8,
    pub name: &'static str,
    pub trainable: GroupSet,
    pub spatial_bypass: bool,
    pub temporal_bypass: bool,
    pub layout: MainLayout,
    pub budget: Budget,
}

impl Stage {
    pub fn frozen(&self) -> Vec<ParamGroup> {
        ParamGroup::ALL
            .into_iter()
            .filter(|&g| !self.trainable.contains(g))
            .collect()
    }
}

const MAIN: GroupSet = GroupSet::NONE.with(ParamGroup::Main);
const MAIN_TEMPORAL: GroupSet = MAIN.with(ParamGroup::Temporal);
const MAIN_SPATIAL: GroupSet = MAIN.with(ParamGroup::Spatial);

const TEMPORAL_STAGES: [Stage; 3] = [
    Stage {
        step: 2,
        name: "temporal-pretrain",
        trainable: MAIN_TEMPORAL,
        spatial_bypass: true,
        temporal_bypass: false,
        layout: MainLayout::Keep,
        budget: Budget::N1,
    },
    Stage {
        step: 3,
        name: "temporal-grow-main",
        trainable: MAIN,
        spatial_bypass: true,
        temporal_bypass: false,
        layout: MainLayout::Grow,
        budget: Budget::N1,
    },
    Stage {
        step: 4,
        name: "temporal-finetune",
        trainable: MAIN_TEMPORAL,
        spatial_bypass: true,
        temporal_bypass: false,
        layout: MainLayout::Keep,
        budget: Budget::N2,
    },
];

const SPATIAL_STAGES: [Stage; 3] = [
    Stage {
        step: 5,
        name: "spatial-pretrain",
        trainable: MAIN_SPATIAL,
        spatial_bypass: false,
        temporal_bypass: true,
        layout: MainLayout::FreshSingle,
        budget: Budget::N1,
    },
    Stage {
        step: 6,
        name: "spatial-grow-main",
        trainable: MAIN,
        spatial_bypass: false,
        temporal_bypass: true,
        layout: MainLayout::Grow,
        budget: Budget::N1,
    },
    Stage {
        step: 7,
        name: "spatial-finetune",
        trainable: MAIN_SPATIAL,
        spatial_bypass: false,
        temporal_bypass: true,
        layout: MainLayout::Keep,
        budget: Budget::N2,
    },
];

const FINAL_STAGES: [Stage; 2] = [
    Stage {
        step: 8,
        name: "main-finetune",
        trainable: MAIN,
        spatial_bypass: false,
        temporal_bypass: false,
        layout: MainLayout::Keep,
        budget: Budget::N1,
    },
    Stage {
        step: 9,
        name: "joint-finetune",
        trainable: GroupSet::ALL,
        spatial_bypass: false,
        temporal_bypass: false,
        layout: MainLayout::Keep,
        budget: Budget::N2,
    },
];

const PLAIN_STAGE: Stage = Stage {
    step: 0,
    name: "plain-lstm",
    trainable: MAIN,
    spatial_bypass: true,
    temporal_bypass: true,
    layout: MainLayout::Keep,
    budget: Budget::Both,
};

/// Architecture variants of the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Main stack only, both gates fixed to 1.
    Lstm,
    /// Joint-selection gate only.
    Sa,
    /// Frame-selection gate only.
    Ta,
    /// Both gates.
    Sta,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Lstm, Variant::Sa, Variant::Ta, Variant::Sta];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Lstm => "lstm",
            Variant::Sa => "sa",
            Variant::Ta => "ta",
            Variant::Sta => "sta",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    /// (spatial_bypass, temporal_bypass)
    pub fn bypass(self) -> (bool, bool) {
        match self {
            Variant::Lstm => (true, true),
            Variant::Sa => (false, true),
            Variant::Ta => (true, false),
            Variant::Sta => (false, false),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainPlan {
    pub stages: Vec<Stage>,
    pub n1: usize,
    pub n2: usize,
}

impl TrainPlan {
    /// Steps 2 through 9 of the joint schedule.
    pub fn joint(n1: usize, n2: usize) -> Self {
        let stages = TEMPORAL_STAGES
            .iter()
            .chain(&SPATIAL_STAGES)
            .chain(&FINAL_STAGES)
            .copied()
            .collect();
        Self { stages, n1, n2 }
    }

    /// Schedule for one ablation variant: the full joint schedule for STA,
    /// its temporal (TA) or spatial (SA) pretraining branch, or a single
    /// plain stage of N1 + N2 iterations for the attention-free baseline.
    pub fn for_variant(variant: Variant, n1: usize, n2: usize) -> Self {
        let stages = match variant {
            Variant::Sta => return Self::joint(n1, n2),
            Variant::Ta => TEMPORAL_STAGES.to_vec(),
            Variant::Sa => SPATIAL_STAGES.to_vec(),
            Variant::Lstm => vec![PLAIN_STAGE],
        };
        Self { stages, n1, n2 }
    }

    pub fn iterations(&self, stage: &Stage) -> usize {
        match stage.budget {
            Budget::N1 => self.n1,
            Budget::N2 => self.n2,
            Budget::Both => self.n1 + self.n2,
            Budget::Fixed(n) => n,
        }
    }

    /// Main-stack depth the model is initialized with: one layer when the
    /// first stage grows it later, otherwise the full depth.
    pub fn initial_layers(&self, full: usize) -> usize {
        let grows = self.stages.iter().any(|s| s.layout != MainLayout::Keep);
        if grows {
            1
        } else {
            full
        }
    }
}

/// One row of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    /// Global iteration counter across stages, starting at 1.
    pub iteration: usize,
    pub stage: u8,
    pub loss: f64,
    /// Batch means of the unweighted terms; `reg3` is the raw L1 norm.
    pub ce: f64,
    pub reg1: f64,
    pub reg2: f64,
    pub reg3: f64,
}

/// Parameter-group digests recorded around a stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageReport {
    pub step: u8,
    pub name: &'static str,
    /// After the layout change, before the first update.
    pub start: Vec<(ParamGroup, u64)>,
    pub end: Vec<(ParamGroup, u64)>,
    /// Digest of main layer 0 right after the layout change.
    pub main_layer0_start: u64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct StageCheckpoint {
    pub step: u8,
    pub name: &'static str,
    pub model: StaModel,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: StaModel,
    pub checkpoints: Vec<StageCheckpoint>,
    pub reports: Vec<StageReport>,
    pub trace: Vec<LossRecord>,
}

/// Endless stream of dataset indices: one seeded permutation per epoch.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    pub fn new(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
        }
    }

    pub fn next_batch(&mut self, size: usize, rng: &mut dyn RngCore) -> Vec<usize> {
        let size = size.min(self.order.len());
        let mut batch = Vec::with_capacity(size);
        while batch.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            batch.push(self.order[self.pos]);
            self.pos += 1;
        }
        batch
    }
}

/// Mutable training context shared by consecutive stages.
pub struct Trainer<'a> {
    pub data: &'a [SkeletonSequence],
    pub cfg: TrainConfig,
    pub rng: ChaCha8Rng,
    pub sampler: BatchSampler,
    pub trace: Vec<LossRecord>,
}

impl<'a> Trainer<'a> {
    pub fn new(data: &'a [SkeletonSequence], cfg: TrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(contract("training set is empty"));
        }
        Ok(Self {
            data,
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            sampler: BatchSampler::new(data.len()),
            trace: Vec::new(),
        })
    }

    /// Applies the stage's gate flags and main-stack layout.
    pub fn prepare(&mut self, stage: &Stage, model: &mut StaModel) {
        model.spatial_bypass = stage.spatial_bypass;
        model.temporal_bypass = stage.temporal_bypass;
        match stage.layout {
            MainLayout::Keep => {}
            MainLayout::Grow => model.grow_main(self.cfg.main_layers, &mut self.rng),
            MainLayout::FreshSingle => model.reinit_main(1, &mut self.rng),
        }
    }

    /// Prepares the model for `stage` and runs `iterations` updates.
    pub fn run_stage(&mut self, stage: &Stage, iterations: usize, model: &mut StaModel) -> Result<StageReport> {
        self.prepare(stage, model);
        model.validate()?;
        let digests = |m: &StaModel| ParamGroup::ALL.iter().map(|&g| (g, m.group_digest(g))).collect();
        let start = digests(model);
        let main_layer0_start = model.main_layer_digest(0);
        if !stage.trainable.is_empty() {
            let mut adam = AdamState::new(self.cfg.adam, model.params().iter().map(|p| p.tensor));
            for it in 0..iterations {
                self.iterate(stage, model, &mut adam).map_err(|e| Error::StageAborted {
                    stage: stage.step,
                    iteration: it,
                    source: Box::new(e),
                })?;
            }
        }
        Ok(StageReport {
            step: stage.step,
            name: stage.name,
            start,
            end: digests(model),
            main_layer0_start,
            iterations,
        })
    }

    fn iterate(&mut self, stage: &Stage, model: &mut StaModel, adam: &mut AdamState) -> Result<()> {
        let batch = self.sampler.next_batch(self.cfg.batch_size, &mut self.rng);
        let mut g = Graph::new();
        let bound = model.bind(&mut g, stage.trainable);
        let seqs: Vec<&SkeletonSequence> = batch.iter().map(|&i| &self.data[i]).collect();
        let dropout = (self.cfg.dropout > 0.0).then_some((self.cfg.dropout, &mut self.rng as &mut dyn RngCore));
        let obj = build_objective(&mut g, &bound, &seqs, &self.cfg.loss, dropout)?;
        let loss = obj.loss;
        let loss_value = g.value(loss).data()[0];
        if !loss_value.is_finite() {
            return Err(Error::Numeric(format!("loss {loss_value}")));
        }
        g.backward(loss)?;

        let params = model.params();
        let names: Vec<String> = params.iter().map(|p| p.name.clone()).collect();
        let mut grads: Vec<Option<Vec<f64>>> = params
            .iter()
            .zip(bound.vars())
            .map(|(p, &v)| stage.trainable.contains(p.group).then(|| g.grad_or_zeros(v)))
            .collect();
        drop(params);
        check_grads(&grads, &names)?;
        if let Some(max) = self.cfg.clip_norm {
            clip_global_norm(&mut grads, max);
        }
        adam.update(&mut model.params_mut(), &grads)?;

        let [ce, reg1, reg2, reg3] = obj.term_means(&g);
        self.trace.push(LossRecord {
            iteration: self.trace.len() + 1,
            stage: stage.step,
            loss: loss_value,
            ce,
            reg1,
            reg2,
            reg3,
        });
        Ok(())
    }
}

/// Initializes a model from `seed` and runs every stage of `plan` in order,
/// keeping a checkpoint after each stage.
pub fn joint_train(
    data: &[SkeletonSequence],
    shape: ModelShape,
    cfg: TrainConfig,
    plan: &TrainPlan,
    seed: u64,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(data, cfg, seed)?;
    let init_shape = ModelShape {
        main_layers: plan.initial_layers(cfg.main_layers),
        ..shape
    };
    let mut model = StaModel::gaussian(init_shape, &mut trainer.rng)?;
    if let Some(s) = data.iter().find(|s| s.joints() != shape.joints || s.label() >= shape.classes) {
        return Err(contract(format!(
            "sequence with K={} label={} does not fit a model with K={} C={}",
            s.joints(),
            s.label(),
            shape.joints,
            shape.classes
        )));
    }
    let mut checkpoints = Vec::with_capacity(plan.stages.len());
    let mut reports = Vec::with_capacity(plan.stages.len());
    for stage in &plan.stages {
        let report = trainer.run_stage(stage, plan.iterations(stage), &mut model)?;
        reports.push(report);
        checkpoints.push(StageCheckpoint {
            step: stage.step,
            name: stage.name,
            model: model.clone(),
        });
    }
    Ok(TrainOutcome {
        model,
        checkpoints,
        reports,
        trace: trainer.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticSpec};

    fn tiny_shape() -> ModelShape {
        ModelShape::uniform(4, 1, 2, 4)
    }

    fn tiny_data() -> Vec<SkeletonSequence> {
        gen_synthetic(&SyntheticSpec::one_joint_per_class(6, 2, 4, 3)).unwrap()
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            n1: 3,
            n2: 2,
            batch_size: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn joint_plan_layout() {
        let plan = TrainPlan::joint(1000, 500);
        let steps: Vec<u8> = plan.stages.iter().map(|s| s.step).collect();
        assert_eq!(steps, [2, 3, 4, 5, 6, 7, 8, 9]);
        let s2 = &plan.stages[0];
        assert!(s2.spatial_bypass && !s2.temporal_bypass);
        assert!(s2.trainable.contains(ParamGroup::Main) && s2.trainable.contains(ParamGroup::Temporal));
        assert_eq!(s2.frozen(), [ParamGroup::Spatial]);
        assert_eq!(plan.stages[1].frozen(), [ParamGroup::Spatial, ParamGroup::Temporal]);
        assert_eq!(plan.stages[7].trainable, GroupSet::ALL);
        let budgets: Vec<usize> = plan.stages.iter().map(|s| plan.iterations(s)).collect();
        assert_eq!(budgets, [1000, 1000, 500, 1000, 1000, 500, 1000, 500]);
        assert_eq!(plan.initial_layers(3), 1);
        let plain = TrainPlan::for_variant(Variant::Lstm, 1000, 500);
        assert_eq!(plain.stages.len(), 1);
        assert_eq!(plain.iterations(&plain.stages[0]), 1500);
        assert_eq!(plain.initial_layers(3), 3);
        assert_eq!(TrainPlan::for_variant(Variant::Ta, 1, 1).stages.len(), 3);
        assert_eq!(TrainPlan::for_variant(Variant::Sa, 1, 1).stages[0].step, 5);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { batch_size: 0, ..quick() }.validate().is_err());
        assert!(TrainConfig { dropout: 1.0, ..quick() }.validate().is_err());
        assert!(TrainConfig { clip_norm: Some(0.0), ..quick() }.validate().is_err());
        let data = tiny_data();
        assert!(Trainer::new(&[], quick(), 0).is_err());
        assert!(Trainer::new(&data, quick(), 0).is_ok());
    }

    #[test]
    fn sampler_covers_each_epoch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = BatchSampler::new(10);
        let mut seen: Vec<usize> = (0..5).flat_map(|_| s.next_batch(2, &mut rng)).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert_eq!(BatchSampler::new(3).next_batch(8, &mut rng).len(), 3);
    }

    #[test]
    fn frozen_or_empty_stages_leave_model_unchanged() {
        let data = tiny_data();
        let mut t = Trainer::new(&data, quick(), 1).unwrap();
        let model = StaModel::gaussian(tiny_shape(), &mut t.rng).unwrap();
        let frozen = Stage {
            trainable: GroupSet::NONE,
            ..FINAL_STAGES[1]
        };
        let mut m = model.clone();
        t.run_stage(&frozen, 5, &mut m).unwrap();
        assert_eq!(m, model);
        let mut m = model.clone();
        t.run_stage(&FINAL_STAGES[1], 0, &mut m).unwrap();
        assert_eq!(m, model);
        assert!(t.trace.is_empty());
    }

    #[test]
    fn stages_respect_freezing_and_growth() {
        let data = tiny_data();
        let out = joint_train(&data, tiny_shape(), quick(), &TrainPlan::joint(3, 2), 5).unwrap();
        assert_eq!(out.checkpoints.len(), 8);
        assert_eq!(out.trace.len(), 3 * 5 + 2 * 3);
        let plan = TrainPlan::joint(3, 2);
        for (stage, r) in plan.stages.iter().zip(&out.reports) {
            for ((g, a), (_, b)) in r.start.iter().zip(&r.end) {
                if stage.trainable.contains(*g) {
                    assert_ne!(a, b, "step {} group {:?} did not move", stage.step, g);
                } else {
                    assert_eq!(a, b, "step {} group {:?} moved", stage.step, g);
                }
            }
        }
        // step 3 grows 1 -> 3 layers from the model that left step 2
        let after2 = &out.checkpoints[0].model;
        let grown = &out.reports[1];
        assert_eq!(after2.main_layers(), 1);
        assert_eq!(grown.main_layer0_start, after2.main_layer_digest(0));
        assert_eq!(out.checkpoints[1].model.main_layers(), 3);
        assert_eq!(out.checkpoints[3].model.main_layers(), 1);
        assert_eq!(out.model.main_layers(), 3);
        assert!(!out.model.spatial_bypass && !out.model.temporal_bypass);
    }

    #[test]
    fn training_is_deterministic() {
        let data = tiny_data();
        let run = |seed| joint_train(&data, tiny_shape(), quick(), &TrainPlan::joint(3, 2), seed).unwrap();
        let (a, b, c) = (run(7), run(7), run(8));
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.model, b.model);
        assert_ne!(a.trace, c.trace);
    }

    #[test]
    fn non_finite_input_aborts_with_iteration() {
        let data = tiny_data();
        let mut t = Trainer::new(&data, quick(), 1).unwrap();
        let mut m = StaModel::gaussian(tiny_shape(), &mut t.rng).unwrap();
        m.proj_w.data_mut()[0] = f64::NAN;
        let err = t.run_stage(&FINAL_STAGES[1], 4, &mut m).unwrap_err();
        assert!(matches!(err, Error::StageAborted { stage: 9, iteration: 0, .. }), "{err:?}");
    }
}
