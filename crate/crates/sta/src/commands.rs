//! The operations behind each subcommand, callable without a process.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sta_core::data::{center_normalize, gen_synthetic, smooth, split_folds, SkeletonSequence, SyntheticSpec};
use sta_core::eval::{evaluate, Confusion};
use sta_core::gradcheck::{model_loss_check, GradCheckReport};
use sta_core::model::{ModelShape, StaModel};
use sta_core::objective::LossConfig;
use sta_core::train::{joint_train, LossRecord, TrainOutcome, TrainPlan};

use crate::checkpoint;
use crate::config::{DataFormat, FoldSel, RunConfig};
use crate::error::{Error, Result};
use crate::formats::{load_generic, save_generic};
use crate::fsutil::write_atomic;
use crate::sbu::load_sbu;

pub const FINAL_DIR: &str = "final";
pub const LOSS_CSV: &str = "loss.csv";

pub fn load_dataset(path: &Path, format: DataFormat) -> Result<Vec<SkeletonSequence>> {
    match format {
        DataFormat::Generic => load_generic(path),
        DataFormat::Sbu => load_sbu(path),
    }
}

/// Loads the configured dataset and applies smoothing and centering.
pub fn prepare_data(cfg: &RunConfig) -> Result<Vec<SkeletonSequence>> {
    let path = cfg.data.as_deref().ok_or_else(|| Error::Config("no data path given".into()))?;
    let raw = load_dataset(path, cfg.format)?;
    raw.iter()
        .map(|s| {
            let s = if cfg.smooth_window > 1 { smooth(s, cfg.smooth_window)? } else { s.clone() };
            Ok(if cfg.center { center_normalize(&s) } else { s })
        })
        .collect()
}

fn dataset_shape(data: &[SkeletonSequence]) -> Result<(usize, usize, usize)> {
    let first = data.first().ok_or_else(|| sta_core::Error::Contract("empty dataset".into()))?;
    if let Some(s) = data.iter().find(|s| s.joints() != first.joints() || s.persons() != first.persons()) {
        return Err(Error::Layout(format!(
            "mixed skeleton layouts: K={} P={} and K={} P={}",
            first.joints(),
            first.persons(),
            s.joints(),
            s.persons()
        )));
    }
    let classes = data.iter().map(SkeletonSequence::label).max().unwrap_or(0) + 1;
    Ok((first.joints(), first.persons(), classes))
}

pub fn loss_csv(trace: &[LossRecord]) -> String {
    let mut s = String::from("iteration,stage,loss,ce,reg1,reg2,reg3\n");
    for r in trace {
        writeln!(s, "{},{},{},{},{},{},{}", r.iteration, r.stage, r.loss, r.ce, r.reg1, r.reg2, r.reg3).unwrap();
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: Option<usize>,
    pub dir: PathBuf,
    pub train_size: usize,
    pub test_size: usize,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub runs: Vec<FoldResult>,
}

impl TrainSummary {
    pub fn mean_accuracy(&self) -> Option<f64> {
        let accs: Vec<f64> = self.runs.iter().filter_map(|r| r.accuracy).collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    }
}

impl fmt::Display for TrainSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.runs {
            let name = r.fold.map_or_else(|| "all data".to_string(), |i| format!("fold {i}"));
            write!(f, "{name}: trained on {} sequences -> {}", r.train_size, r.dir.display())?;
            if let Some(a) = r.accuracy {
                write!(f, ", test accuracy {:.2}% on {}", 100.0 * a, r.test_size)?;
            }
            writeln!(f)?;
        }
        if let (Some(m), true) = (self.mean_accuracy(), self.runs.len() > 1) {
            writeln!(f, "mean accuracy {:.2}%", 100.0 * m)?;
        }
        Ok(())
    }
}

fn write_run(dir: &Path, cfg: &RunConfig, out: &TrainOutcome) -> Result<()> {
    write_atomic(&dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    write_atomic(&dir.join(LOSS_CSV), loss_csv(&out.trace).as_bytes())?;
    if out.checkpoints.len() > 1 {
        for c in &out.checkpoints {
            checkpoint::save(&dir.join(format!("stage-{:02}-{}", c.step, c.name)), &c.model, None)?;
        }
    }
    checkpoint::save(&dir.join(FINAL_DIR), &out.model, None)
        .map(|_| ())
}

/// Final model with the variant's gate flags.
fn finalize(cfg: &RunConfig, mut model: StaModel) -> StaModel {
    let (s, t) = cfg.bypass();
    model.spatial_bypass = s;
    model.temporal_bypass = t;
    model
}

fn train_one(
    cfg: &RunConfig,
    shape: ModelShape,
    train: &[SkeletonSequence],
    test: &[SkeletonSequence],
    dir: &Path,
    fold: Option<usize>,
) -> Result<FoldResult> {
    let plan = TrainPlan::for_variant(cfg.variant, cfg.n1, cfg.n2);
    let mut out = joint_train(train, shape, cfg.train_config(), &plan, cfg.seed)?;
    out.model = finalize(cfg, out.model);
    write_run(dir, cfg, &out)?;
    let accuracy = if test.is_empty() { None } else { Some(evaluate(&out.model, test)?.accuracy()) };
    Ok(FoldResult {
        fold,
        dir: dir.to_path_buf(),
        train_size: train.len(),
        test_size: test.len(),
        accuracy,
    })
}

fn pick(data: &[SkeletonSequence], idx: &[usize]) -> Vec<SkeletonSequence> {
    idx.iter().map(|&i| data[i].clone()).collect()
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    let (k, p, c) = dataset_shape(&data)?;
    let shape = cfg.model_shape(k, p, c);
    let runs = match cfg.fold {
        None => vec![train_one(cfg, shape, &data, &[], &cfg.out, None)?],
        Some(sel) => {
            let split = split_folds(&data, cfg.folds, cfg.seed)?;
            let folds: Vec<usize> = match sel {
                FoldSel::Index(i) => vec![i],
                FoldSel::All => (0..cfg.folds).collect(),
            };
            let mut runs = Vec::new();
            for f in folds {
                let dir = match sel {
                    FoldSel::All => cfg.out.join(format!("fold-{f}")),
                    FoldSel::Index(_) => cfg.out.clone(),
                };
                let train = pick(&data, &split.train_indices(f));
                let test = pick(&data, &split.test_indices(f));
                runs.push(train_one(cfg, shape, &train, &test, &dir, Some(f))?);
            }
            runs
        }
    };
    let summary = TrainSummary { runs };
    write_atomic(&cfg.out.join("summary.txt"), summary.to_string().as_bytes())?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// (fold, confusion) per evaluated checkpoint.
    pub folds: Vec<(Option<usize>, Confusion)>,
}

impl EvalReport {
    pub fn mean_accuracy(&self) -> f64 {
        self.folds.iter().map(|(_, c)| c.accuracy()).sum::<f64>() / self.folds.len() as f64
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (fold, c) in &self.folds {
            if let Some(i) = fold {
                writeln!(f, "fold {i}")?;
            }
            writeln!(f, "accuracy {:.2}% ({}/{})", 100.0 * c.accuracy(), c.correct(), c.total())?;
            for (label, row) in c.counts.iter().enumerate() {
                let n: usize = row.iter().sum();
                let acc = if n == 0 { 0.0 } else { row[label] as f64 / n as f64 };
                let cells: Vec<String> = row.iter().map(|v| format!("{v:>4}")).collect();
                writeln!(f, "class {label:>2}: {:>7.2}% |{}", 100.0 * acc, cells.join(""))?;
            }
        }
        if self.folds.len() > 1 {
            writeln!(f, "mean accuracy {:.2}%", 100.0 * self.mean_accuracy())?;
        }
        Ok(())
    }
}

pub fn eval_checkpoint(ckpt: &Path, data: &[SkeletonSequence]) -> Result<Confusion> {
    if data.is_empty() {
        return Err(sta_core::Error::Contract("evaluation set is empty".into()).into());
    }
    let model = checkpoint::load(ckpt)?.model;
    if let Some(s) = data.iter().find(|s| s.joints() != model.shape.joints || s.label() >= model.classes()) {
        return Err(Error::Layout(format!(
            "checkpoint expects K={} C={}, data has K={} label {}",
            model.shape.joints,
            model.classes(),
            s.joints(),
            s.label()
        )));
    }
    Ok(evaluate(&model, data)?)
}

/// Evaluates `ckpt` on the configured data: all of it, the held-out part of
/// one fold, or, with `fold = all`, each `fold-i/final` below `ckpt`.
pub fn cmd_eval(ckpt: &Path, cfg: &RunConfig) -> Result<EvalReport> {
    let data = prepare_data(cfg)?;
    let folds = match cfg.fold {
        None => vec![(None, eval_checkpoint(ckpt, &data)?)],
        Some(sel) => {
            let split = split_folds(&data, cfg.folds, cfg.seed)?;
            match sel {
                FoldSel::Index(i) => vec![(Some(i), eval_checkpoint(ckpt, &pick(&data, &split.test_indices(i)))?)],
                FoldSel::All => (0..cfg.folds)
                    .map(|i| {
                        let dir = ckpt.join(format!("fold-{i}")).join(FINAL_DIR);
                        Ok((Some(i), eval_checkpoint(&dir, &pick(&data, &split.test_indices(i)))?))
                    })
                    .collect::<Result<_>>()?,
            }
        }
    };
    Ok(EvalReport { folds })
}

/// Per-frame attention of one sequence as (alpha.csv, beta.csv) contents.
/// `delta_beta` is the first difference of β, with the first frame's delta
/// equal to its β.
pub fn attention_csv(model: &StaModel, seq: &SkeletonSequence) -> Result<(String, String)> {
    let trace = model.forward(seq)?.trace;
    let mut alpha = String::from("frame,joint,alpha\n");
    for (t, row) in trace.alphas.iter().enumerate() {
        for (j, a) in row.iter().enumerate() {
            writeln!(alpha, "{},{},{}", t + 1, j, a).unwrap();
        }
    }
    let mut beta = String::from("frame,beta,delta_beta\n");
    let mut prev = 0.0;
    for (t, &b) in trace.betas.iter().enumerate() {
        writeln!(beta, "{},{},{}", t + 1, b, b - prev).unwrap();
        prev = b;
    }
    Ok((alpha, beta))
}

pub fn cmd_export_attention(ckpt: &Path, seq_file: &Path, index: usize, out: &Path) -> Result<()> {
    let model = checkpoint::load(ckpt)?.model;
    let seqs = load_generic(seq_file)?;
    let seq = seqs
        .get(index)
        .ok_or_else(|| Error::Config(format!("sequence {index} not found; file holds {}", seqs.len())))?;
    let (alpha, beta) = attention_csv(&model, seq)?;
    write_atomic(&out.join("alpha.csv"), alpha.as_bytes())?;
    write_atomic(&out.join("beta.csv"), beta.as_bytes())
}

pub fn cmd_gen_synth(spec: &SyntheticSpec, out: &Path) -> Result<usize> {
    let seqs = gen_synthetic(spec)?;
    save_generic(out, &seqs)?;
    Ok(seqs.len())
}

/// Finite-difference check of the full loss on a tiny model
/// (K=4, one person, H=4, T=5, C=2) with every loss term active.
pub fn cmd_grad_check(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = StaModel::gaussian(ModelShape::uniform(4, 1, 2, 4), &mut rng)?;
    // positive offset keeps the frame gates away from their kink
    model.temporal.b.data_mut()[0] = 0.5;
    let frames = (0..5 * 12).map(|_| rng.random_range(-1.0..1.0)).collect();
    let seq = SkeletonSequence::new(4, 1, 1, frames)?;
    Ok(model_loss_check(&model, &[&seq], &LossConfig::sbu(), 1e-6)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_csv_layout() {
        let r = LossRecord {
            iteration: 1,
            stage: 2,
            loss: 0.5,
            ce: 0.25,
            reg1: 1.0,
            reg2: 2.0,
            reg3: 3.5,
        };
        assert_eq!(loss_csv(&[r]), "iteration,stage,loss,ce,reg1,reg2,reg3\n1,2,0.5,0.25,1,2,3.5\n");
    }

    #[test]
    fn single_frame_delta_is_beta() {
        let model = StaModel::gaussian(ModelShape::uniform(2, 1, 2, 3), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let seq = SkeletonSequence::new(2, 1, 0, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let (alpha, beta) = attention_csv(&model, &seq).unwrap();
        assert_eq!(alpha.lines().count(), 3);
        let row: Vec<&str> = beta.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row[1], row[2]);
    }

    #[test]
    fn grad_check_passes() {
        let r = cmd_grad_check(0).unwrap();
        assert!(r.max_rel_error < 1e-5, "{}", r.max_rel_error);
        assert!(r.checked > 1000);
    }
}
