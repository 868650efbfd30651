//! Run configuration: a profile's defaults, overlaid by a TOML file, then by
//! command-line flags. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sta_core::model::ModelShape;
use sta_core::objective::LossConfig;
use sta_core::optim::AdamConfig;
use sta_core::train::{TrainConfig, Variant};

use crate::error::{Error, Result};
use crate::fsutil::read_to_string;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Generic,
    Sbu,
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "generic" => Ok(Self::Generic),
            "sbu" => Ok(Self::Sbu),
            _ => Err(Error::Config(format!("unknown data format {s:?}"))),
        }
    }
}

/// Which cross-validation fold to hold out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FoldSel {
    Index(usize),
    All,
}

impl std::str::FromStr for FoldSel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(Self::All);
        }
        s.parse()
            .map(Self::Index)
            .map_err(|_| Error::Config(format!("fold must be an index or \"all\", got {s:?}")))
    }
}

impl Serialize for FoldSel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            FoldSel::Index(i) => s.serialize_u64(*i as u64),
            FoldSel::All => s.serialize_str("all"),
        }
    }
}

impl<'de> Deserialize<'de> for FoldSel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Index(usize),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Index(i) => Ok(FoldSel::Index(i)),
            Raw::Name(n) => n.parse().map_err(serde::de::Error::custom),
        }
    }
}

fn variant_name<S: serde::Serializer>(v: &Variant, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(v.name())
}

fn parse_variant<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Variant, D::Error> {
    let s = String::deserialize(d)?;
    Variant::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown variant {s:?}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: String,
    #[serde(serialize_with = "variant_name", deserialize_with = "parse_variant")]
    pub variant: Variant,
    pub spatial_reg: bool,
    pub temporal_reg: bool,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub hidden: usize,
    pub main_layers: usize,
    pub dropout: f64,
    pub batch_size: usize,
    pub n1: usize,
    pub n2: usize,
    pub lr: f64,
    /// Global gradient-norm bound; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
    /// Odd moving-average window applied to every sequence; 1 disables.
    pub smooth_window: usize,
    /// Subtract the first frame's body center.
    pub center: bool,
    pub folds: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fold: Option<FoldSel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    pub format: DataFormat,
    pub out: PathBuf,
}

impl RunConfig {
    /// Two-person interaction defaults: batch 8, 100 units, 3 main layers.
    pub fn sbu() -> Self {
        let loss = LossConfig::sbu();
        Self {
            profile: "sbu".into(),
            variant: Variant::Sta,
            spatial_reg: true,
            temporal_reg: true,
            lambda1: loss.lambda1,
            lambda2: loss.lambda2,
            lambda3: loss.lambda3,
            hidden: 100,
            main_layers: 3,
            dropout: 0.5,
            batch_size: 8,
            n1: 1000,
            n2: 500,
            lr: AdamConfig::default().lr,
            clip_norm: 5.0,
            seed: 0,
            smooth_window: 5,
            center: false,
            folds: 5,
            fold: None,
            data: None,
            format: DataFormat::Sbu,
            out: PathBuf::from("runs/sta"),
        }
    }

    /// Large-scale defaults: batch 256 and the lighter-L1 weights.
    pub fn ntu() -> Self {
        let loss = LossConfig::ntu();
        Self {
            profile: "ntu".into(),
            lambda1: loss.lambda1,
            lambda2: loss.lambda2,
            lambda3: loss.lambda3,
            batch_size: 256,
            center: true,
            format: DataFormat::Generic,
            ..Self::sbu()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "sbu" => Ok(Self::sbu()),
            "ntu" => Ok(Self::ntu()),
            _ => Err(Error::Config(format!("unknown profile {name:?}"))),
        }
    }

    /// Overlays `text` on the defaults of the profile it names (SBU when
    /// absent).
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        let profile = match table.get("profile") {
            None => "sbu",
            Some(toml::Value::String(s)) => s.as_str(),
            Some(_) => return Err(Error::Config("profile must be a string".into())),
        };
        let base = toml::Table::try_from(Self::profile(profile)?).expect("config serializes");
        let mut merged = base;
        merged.extend(table);
        let cfg: Self = merged.try_into().map_err(|e| Error::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_to_string(path)?).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if [self.lambda1, self.lambda2, self.lambda3].iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return bad("lambdas must be finite and non-negative");
        }
        if self.hidden == 0 || self.main_layers == 0 || self.batch_size == 0 {
            return bad("hidden, main_layers and batch_size must be positive");
        }
        if self.smooth_window.is_multiple_of(2) {
            return bad("smooth_window must be odd");
        }
        if self.folds < 2 {
            return bad("folds must be at least 2");
        }
        if let Some(FoldSel::Index(i)) = self.fold {
            if i >= self.folds {
                return Err(Error::Config(format!("fold {i} out of range for {} folds", self.folds)));
            }
        }
        if self.lr.is_nan() || self.lr <= 0.0 || self.clip_norm < 0.0 {
            return bad("lr must be positive and clip_norm non-negative");
        }
        self.train_config().validate()?;
        Ok(())
    }

    /// Gate flags forced by the variant.
    pub fn bypass(&self) -> (bool, bool) {
        self.variant.bypass()
    }

    pub fn loss_config(&self) -> LossConfig {
        let (spatial_off, temporal_off) = self.bypass();
        LossConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
            spatial_reg: self.spatial_reg && !spatial_off,
            temporal_reg: self.temporal_reg && !temporal_off,
            l1: true,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            n1: self.n1,
            n2: self.n2,
            batch_size: self.batch_size,
            dropout: self.dropout,
            loss: self.loss_config(),
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            main_layers: self.main_layers,
        }
    }

    pub fn model_shape(&self, joints: usize, persons: usize, classes: usize) -> ModelShape {
        ModelShape {
            main_layers: self.main_layers,
            ..ModelShape::uniform(joints, persons, classes, self.hidden)
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::sbu()
    }
}
