//! Line-oriented trajectory dumps: one JSON object per line.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{EnvError, ObservedTrajectory};

/// One step of a dumped trajectory. `reward` is the observable (raw bagged) reward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub bag: Option<usize>,
    pub reward: f64,
}

#[derive(Serialize)]
struct LayoutRecord {
    bag: usize,
    start: usize,
    len: usize,
    reward: f64,
}

pub fn write_step_records<W: Write>(mut out: W, traj: &ObservedTrajectory) -> Result<(), EnvError> {
    let stream = traj.raw_stream();
    for (t, tr) in traj.transitions.iter().enumerate() {
        let rec = StepRecord {
            step: t,
            state: tr.state.features.clone(),
            action: tr.action.features.clone(),
            bag: traj.layout.bag_of(t),
            reward: stream[t],
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_layout_records<W: Write>(mut out: W, traj: &ObservedTrajectory) -> Result<(), EnvError> {
    for (i, (b, r)) in traj.layout.bags().iter().zip(&traj.bag_rewards).enumerate() {
        serde_json::to_writer(&mut out, &LayoutRecord { bag: i, start: b.start, len: b.len, reward: *r })?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_step_records<R: BufRead>(input: R) -> Result<Vec<StepRecord>, EnvError> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
