//! Common interfaces over CTNCF and the baselines.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::baselines::{BaselineConfig, Gmf, Mlp, Ncf, Popularity};
use crate::error::{Error, Result};
use crate::model::{Ctncf, HyperParams};
use crate::params::ParamStore;

/// Anything that can score a (user, item) pair. Higher means more relevant.
pub trait Scorer: Sync {
    fn num_users(&self) -> usize;
    fn num_items(&self) -> usize;
    fn score(&self, user: usize, item: usize) -> Result<f64>;

    fn score_items(&self, user: usize, items: &[usize]) -> Result<Vec<f64>> {
        items.iter().map(|&i| self.score(user, i)).collect()
    }
}

/// A scorer trained by gradient descent on pointwise logits.
pub trait Trainable: Scorer {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    /// Records the pre-sigmoid score for `(user, item)` on `tape`.
    fn logit(&self, tape: &mut Tape, user: usize, item: usize) -> Result<Var>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ctncf,
    Ncf,
    Mlp,
    Gmf,
    Popularity,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Ctncf,
        ModelKind::Ncf,
        ModelKind::Mlp,
        ModelKind::Gmf,
        ModelKind::Popularity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ctncf => "ctncf",
            ModelKind::Ncf => "ncf",
            ModelKind::Mlp => "mlp",
            ModelKind::Gmf => "gmf",
            ModelKind::Popularity => "popularity",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            ModelKind::Ctncf => 0,
            ModelKind::Ncf => 1,
            ModelKind::Mlp => 2,
            ModelKind::Gmf => 3,
            ModelKind::Popularity => 4,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        ModelKind::ALL.into_iter().find(|k| k.tag() == tag)
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model {s:?} (expected ctncf|ncf|mlp|gmf|popularity)")))
    }
}

/// Architecture choice plus the settings for every kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub ctncf: HyperParams,
    pub baseline: BaselineConfig,
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        ModelConfig {
            kind,
            ctncf: HyperParams::default(),
            baseline: BaselineConfig::default(),
        }
    }
}

/// A concrete model of any kind.
#[derive(Debug, Clone)]
pub enum AnyModel {
    Ctncf(Ctncf),
    Ncf(Ncf),
    Mlp(Mlp),
    Gmf(Gmf),
    Popularity(Popularity),
}

impl AnyModel {
    /// Freshly initialized model. Popularity starts with all-zero counts.
    pub fn build(config: &ModelConfig, num_users: usize, num_items: usize, seed: u64) -> Result<Self> {
        Ok(match config.kind {
            ModelKind::Ctncf => AnyModel::Ctncf(Ctncf::new(config.ctncf.clone(), num_users, num_items, seed)?),
            ModelKind::Ncf => AnyModel::Ncf(Ncf::new(&config.baseline, num_users, num_items, seed)?),
            ModelKind::Mlp => AnyModel::Mlp(Mlp::new(&config.baseline, num_users, num_items, seed)?),
            ModelKind::Gmf => AnyModel::Gmf(Gmf::new(&config.baseline, num_users, num_items, seed)?),
            ModelKind::Popularity => AnyModel::Popularity(Popularity::zeros(num_users, num_items)),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Ctncf(_) => ModelKind::Ctncf,
            AnyModel::Ncf(_) => ModelKind::Ncf,
            AnyModel::Mlp(_) => ModelKind::Mlp,
            AnyModel::Gmf(_) => ModelKind::Gmf,
            AnyModel::Popularity(_) => ModelKind::Popularity,
        }
    }

    pub fn trainable(&self) -> Option<&dyn Trainable> {
        match self {
            AnyModel::Ctncf(m) => Some(m),
            AnyModel::Ncf(m) => Some(m),
            AnyModel::Mlp(m) => Some(m),
            AnyModel::Gmf(m) => Some(m),
            AnyModel::Popularity(_) => None,
        }
    }

    pub fn trainable_mut(&mut self) -> Option<&mut dyn Trainable> {
        match self {
            AnyModel::Ctncf(m) => Some(m),
            AnyModel::Ncf(m) => Some(m),
            AnyModel::Mlp(m) => Some(m),
            AnyModel::Gmf(m) => Some(m),
            AnyModel::Popularity(_) => None,
        }
    }

    /// Parameter arrays, including the popularity counts.
    pub fn params(&self) -> &ParamStore {
        match self {
            AnyModel::Popularity(p) => p.params(),
            other => other.trainable().expect("trainable").params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        match self {
            AnyModel::Popularity(p) => p.params_mut(),
            other => other.trainable_mut().expect("trainable").params_mut(),
        }
    }

    /// Attention evaluations so far (always 0 for non-CTNCF models).
    pub fn attention_calls(&self) -> u64 {
        match self {
            AnyModel::Ctncf(m) => m.attention_calls(),
            _ => 0,
        }
    }

    fn scorer(&self) -> &dyn Scorer {
        match self {
            AnyModel::Ctncf(m) => m,
            AnyModel::Ncf(m) => m,
            AnyModel::Mlp(m) => m,
            AnyModel::Gmf(m) => m,
            AnyModel::Popularity(m) => m,
        }
    }
}

impl Scorer for AnyModel {
    fn num_users(&self) -> usize {
        self.scorer().num_users()
    }

    fn num_items(&self) -> usize {
        self.scorer().num_items()
    }

    fn score(&self, user: usize, item: usize) -> Result<f64> {
        self.scorer().score(user, item)
    }

    fn score_items(&self, user: usize, items: &[usize]) -> Result<Vec<f64>> {
        self.scorer().score_items(user, items)
    }
}
