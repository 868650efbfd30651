use alloc::string::String;
use alloc::vec::Vec;

use rand::RngCore;
use rand_distr::{Distribution, Normal};

use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Standard deviation of the Gaussian weight initialization.
pub const INIT_STD: f64 = 0.1;

/// Parameter groups frozen or trained together by the staged schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamGroup {
    /// Main LSTM stack and the per-frame class projection.
    Main,
    Spatial,
    Temporal,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 3] = [ParamGroup::Main, ParamGroup::Spatial, ParamGroup::Temporal];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Main => "main",
            ParamGroup::Spatial => "spatial",
            ParamGroup::Temporal => "temporal",
        }
    }
}

/// Small set of [`ParamGroup`]s.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct GroupSet(u8);

impl GroupSet {
    pub const NONE: GroupSet = GroupSet(0);
    pub const ALL: GroupSet = GroupSet(0b111);

    pub fn of(groups: &[ParamGroup]) -> Self {
        groups.iter().fold(Self::NONE, |s, &g| s.with(g))
    }

    const fn bit(g: ParamGroup) -> u8 {
        match g {
            ParamGroup::Main => 1,
            ParamGroup::Spatial => 2,
            ParamGroup::Temporal => 4,
        }
    }

    pub const fn with(self, g: ParamGroup) -> Self {
        GroupSet(self.0 | Self::bit(g))
    }

    pub const fn contains(self, g: ParamGroup) -> bool {
        self.0 & Self::bit(g) != 0
    }

    pub const fn is_empty(self) -> bool {
        self.0 == 0
    }
}

/// Connection matrices carry the L1 penalty; biases do not.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

#[derive(Debug, Clone)]
pub struct ParamRef<'a> {
    pub name: String,
    pub group: ParamGroup,
    pub kind: ParamKind,
    pub tensor: &'a Tensor,
}

/// Tensor with i.i.d. N(0, std²) entries.
pub fn gaussian(shape: &[usize], std: f64, rng: &mut dyn RngCore) -> Tensor {
    let normal = Normal::new(0.0, std).expect("finite positive std");
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = normal.sample(rng);
    }
    t
}

/// Pushes each tensor onto `g` as a leaf and returns the handles in order.
pub(crate) fn bind_all(g: &mut Graph, tensors: &[&Tensor], requires_grad: bool) -> Vec<Var> {
    tensors.iter().map(|&t| g.leaf(t.clone(), requires_grad)).collect()
}

/// FNV-1a over the bit patterns of a sequence of tensors.
pub fn digest<'a>(tensors: impl IntoIterator<Item = &'a Tensor>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    for t in tensors {
        for &d in t.shape() {
            feed(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            feed(&v.to_bits().to_le_bytes());
        }
    }
    h
}
