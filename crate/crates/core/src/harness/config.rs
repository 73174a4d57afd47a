use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{LearnerKind, LoopConfig, QConfig, SacConfig};
use crate::baselines::{RedistributorKind, RrdConfig};
use crate::envlab::{chain_mdp, gridworld, point_mass_env, BagRegime, Environment, TabularEnv, TabularMdp, TRAJECTORY_ALIAS};
use crate::rbt::RbtConfig;

use super::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    Gridworld {
        #[serde(default = "default_grid_size")]
        size: usize,
        #[serde(default = "default_horizon")]
        horizon: usize,
    },
    Chain { n: usize },
    PointMass {
        #[serde(default = "default_horizon")]
        horizon: usize,
    },
}

fn default_grid_size() -> usize {
    5
}

fn default_horizon() -> usize {
    200
}

impl EnvSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let ok = match *self {
            EnvSpec::Gridworld { size, horizon } => size >= 2 && horizon >= 1,
            EnvSpec::Chain { n } => n >= 2,
            EnvSpec::PointMass { horizon } => horizon >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(HarnessError::Config(format!("bad environment parameters {self:?}")))
        }
    }

    pub fn tabular(&self) -> Option<TabularMdp> {
        match *self {
            EnvSpec::Gridworld { size, horizon } => Some(gridworld(size, horizon)),
            EnvSpec::Chain { n } => Some(chain_mdp(n)),
            EnvSpec::PointMass { .. } => None,
        }
    }

    pub fn build(&self) -> Box<dyn Environment> {
        match (self.tabular(), *self) {
            (Some(mdp), _) => Box::new(TabularEnv::new(mdp)),
            (None, EnvSpec::PointMass { horizon }) => Box::new(point_mass_env(horizon)),
            (None, _) => unreachable!("every non-tabular spec is the point mass"),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            EnvSpec::Gridworld { size, .. } => format!("gridworld{size}"),
            EnvSpec::Chain { n } => format!("chain{n}"),
            EnvSpec::PointMass { .. } => "point_mass".into(),
        }
    }
}

/// A bare integer is a fixed bag length, with 9999 meaning the whole trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegimeSpec {
    Length(usize),
    Regime(BagRegime),
}

impl RegimeSpec {
    pub fn regime(&self) -> BagRegime {
        match *self {
            RegimeSpec::Length(len) => BagRegime::Fixed { len }.normalized(),
            RegimeSpec::Regime(r) => r.normalized(),
        }
    }
}

impl From<usize> for RegimeSpec {
    fn from(len: usize) -> Self {
        RegimeSpec::Length(len)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RbtBase {
    /// The small configuration in [`RbtConfig::desk`].
    #[default]
    Desk,
    /// [`RbtConfig::default`].
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub regime: RegimeSpec,
    pub redistributor: RedistributorKind,
    /// Defaults to Q-learning on tabular environments and SAC otherwise.
    #[serde(default)]
    pub learner: Option<LearnerKind>,
    #[serde(default)]
    pub rbt_base: RbtBase,
    /// Keys of [`RbtConfig`] overriding the base.
    #[serde(default)]
    pub rbt: toml::Table,
    #[serde(default)]
    pub rrd: RrdConfig,
    #[serde(default, rename = "loop")]
    pub loop_config: LoopConfig,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let config: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io { path: path.to_path_buf(), source: e })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn rbt_config(&self) -> Result<RbtConfig, HarnessError> {
        let base = match self.rbt_base {
            RbtBase::Desk => RbtConfig::desk(),
            RbtBase::Full => RbtConfig::default(),
        };
        let mut table = toml::Table::try_from(&base).expect("rbt config serializes");
        for (k, v) in &self.rbt {
            if !table.contains_key(k) {
                return Err(HarnessError::Config(format!("unknown rbt key `{k}`")));
            }
            table.insert(k.clone(), v.clone());
        }
        let config: RbtConfig = table.try_into().map_err(|e: toml::de::Error| HarnessError::Config(format!("rbt: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn learner_kind(&self) -> LearnerKind {
        match self.learner {
            Some(k) => k,
            None if self.env.tabular().is_some() => LearnerKind::Q(QConfig::default()),
            None => LearnerKind::Sac(SacConfig::default()),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.env.validate()?;
        self.regime.regime().validate()?;
        if let RegimeSpec::Length(len) = self.regime {
            let horizon = self.env.build().horizon();
            if len > horizon && len != TRAJECTORY_ALIAS {
                return Err(HarnessError::Config(format!("bag length {len} exceeds the horizon {horizon}")));
            }
        }
        self.redistributor.validate()?;
        let learner = self.learner_kind();
        learner.validate()?;
        if matches!(learner, LearnerKind::Q(_)) != self.env.tabular().is_some() {
            return Err(HarnessError::Config(format!("learner {} does not fit {}", learner.label(), self.env.label())));
        }
        self.rbt_config()?;
        self.loop_config.validate()?;
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("seeds must not be empty".into()));
        }
        Ok(())
    }

    /// Name of the output cell: environment, regime and method.
    pub fn cell_label(&self) -> String {
        format!("{}_{}_{}", self.env.label(), self.regime.regime().label(), self.redistributor.label())
    }
}
