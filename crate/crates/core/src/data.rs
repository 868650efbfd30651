//! Skeleton sequences, preprocessing, fold assignment and the synthetic
//! action generator.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{contract, Result};

/// `T × K × 3` joint coordinates with a class label.
///
/// Frames are stored joint-major: frame `t` is
/// `[j0.x, j0.y, j0.z, j1.x, ...]`. Only the first `valid_len` frames take
/// part in training and inference; the rest are padding.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    frames: Vec<f64>,
    joints: usize,
    persons: usize,
    label: usize,
    valid_len: usize,
    subject_ids: Option<(u32, u32)>,
}

impl SkeletonSequence {
    pub fn new(joints: usize, persons: usize, label: usize, frames: Vec<f64>) -> Result<Self> {
        if joints == 0 || persons == 0 || !joints.is_multiple_of(persons) {
            return Err(contract(format!(
                "{joints} joints cannot be split over {persons} persons"
            )));
        }
        let width = 3 * joints;
        if frames.is_empty() || !frames.len().is_multiple_of(width) {
            return Err(contract(format!(
                "{} coordinates do not form whole frames of {width}",
                frames.len()
            )));
        }
        if let Some(i) = frames.iter().position(|v| !v.is_finite()) {
            return Err(contract(format!("non-finite coordinate at flat index {i}")));
        }
        let valid_len = frames.len() / width;
        Ok(Self {
            frames,
            joints,
            persons,
            label,
            valid_len,
            subject_ids: None,
        })
    }

    pub fn with_valid_len(mut self, valid_len: usize) -> Result<Self> {
        if valid_len == 0 || valid_len > self.len() {
            return Err(contract(format!(
                "valid length {valid_len} outside 1..={}",
                self.len()
            )));
        }
        self.valid_len = valid_len;
        Ok(self)
    }

    pub fn with_subjects(mut self, a: u32, b: u32) -> Self {
        self.subject_ids = Some((a, b));
        self
    }

    /// Stored frame count, padding included.
    pub fn len(&self) -> usize {
        self.frames.len() / self.frame_width()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn valid_len(&self) -> usize {
        self.valid_len
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn persons(&self) -> usize {
        self.persons
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn subject_ids(&self) -> Option<(u32, u32)> {
        self.subject_ids
    }

    pub fn frame_width(&self) -> usize {
        3 * self.joints
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let w = self.frame_width();
        &self.frames[t * w..(t + 1) * w]
    }

    pub fn frames(&self) -> &[f64] {
        &self.frames
    }

    fn with_frames(&self, frames: Vec<f64>) -> Self {
        Self {
            frames,
            ..self.clone()
        }
    }
}

/// Centered moving average per coordinate over `window` frames, replicating
/// the edge frames. Applied to the valid frames only.
pub fn smooth(seq: &SkeletonSequence, window: usize) -> Result<SkeletonSequence> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(contract(format!("smoothing window must be odd, got {window}")));
    }
    let half = (window / 2) as isize;
    let t_len = seq.valid_len() as isize;
    let w = seq.frame_width();
    let mut out = seq.frames().to_vec();
    for t in 0..t_len {
        for c in 0..w {
            let mut acc = 0.0;
            for dt in -half..=half {
                let src = (t + dt).clamp(0, t_len - 1) as usize;
                acc += seq.frames()[src * w + c];
            }
            out[t as usize * w + c] = acc / window as f64;
        }
    }
    Ok(seq.with_frames(out))
}

/// Translates every coordinate by minus the body center (mean of all joints)
/// of the first frame.
pub fn center_normalize(seq: &SkeletonSequence) -> SkeletonSequence {
    let k = seq.joints();
    let first = seq.frame(0);
    let mut center = [0.0; 3];
    for j in 0..k {
        for (d, c) in center.iter_mut().enumerate() {
            *c += first[3 * j + d];
        }
    }
    for c in center.iter_mut() {
        *c /= k as f64;
    }
    let frames = seq
        .frames()
        .iter()
        .enumerate()
        .map(|(i, &v)| v - center[i % 3])
        .collect();
    seq.with_frames(frames)
}

/// Parameters of the synthetic action generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_sequences: usize,
    pub n_classes: usize,
    pub joints: usize,
    /// Inclusive frame-count range.
    pub t_range: (usize, usize),
    /// Joints carrying the class motion, per class.
    pub active_joints: BTreeMap<usize, Vec<usize>>,
    pub noise_sigma: f64,
    pub amplitude: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Class `c` moves joint `c mod K`.
    pub fn one_joint_per_class(n_sequences: usize, n_classes: usize, joints: usize, seed: u64) -> Self {
        Self {
            n_sequences,
            n_classes,
            joints,
            t_range: (10, 20),
            active_joints: (0..n_classes).map(|c| (c, vec![c % joints])).collect(),
            noise_sigma: 0.1,
            amplitude: 1.0,
            seed,
        }
    }

    /// Oscillation period of class `c`, in frames.
    pub fn period(class: usize) -> usize {
        6 + 3 * class
    }
}

/// Generates class-balanced sequences. Active joints of class `c` follow
/// `A·sin(2π(t + shift)/P_c + φ_{c,d})` per coordinate `d` with an integer
/// period `P_c` and a per-sequence integer frame shift; every coordinate
/// additionally receives i.i.d. `N(0, σ²)` noise.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Vec<SkeletonSequence>> {
    let (t_min, t_max) = spec.t_range;
    if spec.n_classes == 0 || spec.joints == 0 || t_min == 0 || t_min > t_max {
        return Err(contract("synthetic spec needs classes, joints and a valid frame range"));
    }
    for (&c, js) in &spec.active_joints {
        if let Some(&j) = js.iter().find(|&&j| j >= spec.joints) {
            return Err(contract(format!("class {c}: active joint {j} >= K={}", spec.joints)));
        }
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(contract("noise sigma must be finite and non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
    let mut labels: Vec<usize> = (0..spec.n_sequences).map(|i| i % spec.n_classes).collect();
    labels.shuffle(&mut rng);

    let w = 3 * spec.joints;
    let mut out = Vec::with_capacity(spec.n_sequences);
    for label in labels {
        let t_len = rng.random_range(t_min..=t_max);
        let period = SyntheticSpec::period(label);
        let shift = rng.random_range(0..period);
        let active = spec.active_joints.get(&label).map(Vec::as_slice).unwrap_or(&[]);
        let mut frames = vec![0.0; t_len * w];
        for t in 0..t_len {
            for &j in active {
                for d in 0..3 {
                    frames[t * w + 3 * j + d] = synthetic_motion(spec.amplitude, label, d, t + shift);
                }
            }
        }
        if spec.noise_sigma > 0.0 {
            for v in frames.iter_mut() {
                *v += noise.sample(&mut rng);
            }
        }
        out.push(SkeletonSequence::new(spec.joints, 1, label, frames)?);
    }
    Ok(out)
}

/// Noise-free coordinate `d` of an active joint of `class` at frame `t`.
pub fn synthetic_motion(amplitude: f64, class: usize, d: usize, t: usize) -> f64 {
    let period = SyntheticSpec::period(class);
    let phase = class as f64 * core::f64::consts::FRAC_PI_3 + d as f64 * core::f64::consts::FRAC_PI_2;
    // reduce t modulo the period first so the trajectory is exactly periodic
    let t = (t % period) as f64;
    amplitude * libm::sin(core::f64::consts::TAU * t / period as f64 + phase)
}

/// Assignment of sequence indices to folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    assignments: Vec<usize>,
    k: usize,
}

impl FoldSplit {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of(&self, seq: usize) -> usize {
        self.assignments[seq]
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    /// Indices held out in `fold`.
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }
}

/// Splits into `k` folds. When every sequence carries subject ids, whole
/// (unordered) subject pairs are assigned to folds so no pair crosses folds;
/// otherwise sequences are stratified by label and dealt round-robin.
pub fn split_folds(seqs: &[SkeletonSequence], k: usize, seed: u64) -> Result<FoldSplit> {
    if k == 0 {
        return Err(contract("fold count must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![0; seqs.len()];
    let subjects: Option<Vec<(u32, u32)>> = seqs
        .iter()
        .map(|s| s.subject_ids().map(|(a, b)| (a.min(b), a.max(b))))
        .collect();

    if let (Some(pairs), false) = (subjects, seqs.is_empty()) {
        let mut groups: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
        for (i, p) in pairs.into_iter().enumerate() {
            groups.entry(p).or_default().push(i);
        }
        if groups.len() < k {
            return Err(contract(format!(
                "{} distinct subject pairs cannot fill {k} folds",
                groups.len()
            )));
        }
        let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
        groups.shuffle(&mut rng);
        // largest groups first, each into the currently smallest fold
        groups.sort_by_key(|g| core::cmp::Reverse(g.len()));
        let mut sizes = vec![0usize; k];
        for (n, group) in groups.iter().enumerate() {
            let fold = if n < k {
                n
            } else {
                (0..k).min_by_key(|&f| (sizes[f], f)).unwrap_or(0)
            };
            sizes[fold] += group.len();
            for &i in group {
                assignments[i] = fold;
            }
        }
    } else {
        let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, s) in seqs.iter().enumerate() {
            by_label.entry(s.label()).or_default().push(i);
        }
        let mut next = 0;
        for members in by_label.values_mut() {
            members.shuffle(&mut rng);
            for &i in members.iter() {
                assignments[i] = next % k;
                next += 1;
            }
        }
    }
    Ok(FoldSplit { assignments, k })
}
