//! Reward streams the bag-aware model is compared against: the raw bagged
//! stream, uniform min-max redistribution, and randomized return
//! decomposition.

mod ircr;
mod rrd;

pub use ircr::ircr_relabel;
pub use rrd::{rrd_estimate, rrd_loss, RrdConfig, RrdModel};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envlab::{BaggedTrajectory, RewardView};
use crate::numcore::NumError;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("subset of {k} indices does not fit a bag of {n} steps")]
    SubsetSize { k: usize, n: usize },
    #[error("subset index {index} is outside the bag or repeated")]
    SubsetIndex { index: usize },
    #[error("subset size must be at least 1")]
    ZeroSubset,
    #[error("no bags to fit")]
    EmptyBuffer,
    #[error("feature dimension {got}, expected {expected}")]
    FeatureDim { expected: usize, got: usize },
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Which reward stream a learner trains on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum RedistributorKind {
    Raw,
    Ircr,
    Rrd { k: usize },
    Rbt,
}

impl RedistributorKind {
    pub fn validate(&self) -> Result<(), BaselineError> {
        match self {
            RedistributorKind::Rrd { k: 0 } => Err(BaselineError::ZeroSubset),
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            RedistributorKind::Raw => "raw".into(),
            RedistributorKind::Ircr => "ircr".into(),
            RedistributorKind::Rrd { k } => format!("rrd{k}"),
            RedistributorKind::Rbt => "rbt".into(),
        }
    }
}

/// Bag reward at each bag's last step, zero elsewhere.
pub fn raw_stream(traj: &BaggedTrajectory) -> Vec<f64> {
    traj.learner_view(RewardView::Raw)
}
