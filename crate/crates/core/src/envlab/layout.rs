use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EnvError;

/// Bag length that stands for "one bag over the whole trajectory".
pub const TRAJECTORY_ALIAS: usize = 9999;

/// A bag `[start, start + len)` over trajectory step indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BagSpec {
    pub start: usize,
    pub len: usize,
}

impl BagSpec {
    pub fn new(start: usize, len: usize) -> Self {
        Self { start, len }
    }

    pub fn end(&self) -> usize {
        self.start + self.len
    }

    pub fn contains(&self, t: usize) -> bool {
        t >= self.start && t < self.end()
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.end()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayoutKind {
    /// Bags tile `[0, T)`.
    Neighboring,
    /// Bags are in bounds but may overlap or leave gaps.
    Arbitrary,
}

/// Ordered bags over a trajectory of length `horizon`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BagLayout {
    bags: Vec<BagSpec>,
    horizon: usize,
    kind: LayoutKind,
}

impl BagLayout {
    pub fn neighboring(bags: Vec<BagSpec>, horizon: usize) -> Result<Self, EnvError> {
        let layout = Self { bags, horizon, kind: LayoutKind::Neighboring };
        layout.check_bounds()?;
        if !layout.tiles() {
            return Err(EnvError::NotTiling { horizon });
        }
        Ok(layout)
    }

    pub fn arbitrary(bags: Vec<BagSpec>, horizon: usize) -> Result<Self, EnvError> {
        let layout = Self { bags, horizon, kind: LayoutKind::Arbitrary };
        layout.check_bounds()?;
        Ok(layout)
    }

    fn check_bounds(&self) -> Result<(), EnvError> {
        if self.bags.is_empty() {
            return Err(EnvError::EmptyFeasibleRegion("a layout needs at least one bag".into()));
        }
        for b in &self.bags {
            if b.len == 0 || b.end() > self.horizon {
                return Err(EnvError::BagOutOfBounds { start: b.start, end: b.end(), horizon: self.horizon });
            }
        }
        Ok(())
    }

    pub fn bags(&self) -> &[BagSpec] {
        &self.bags
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn kind(&self) -> LayoutKind {
        self.kind
    }

    /// True when the bags are contiguous, in order, and cover exactly `[0, horizon)`.
    pub fn tiles(&self) -> bool {
        let mut next = 0;
        for b in &self.bags {
            if b.start != next {
                return false;
            }
            next = b.end();
        }
        next == self.horizon
    }

    /// Index of the first bag containing step `t`.
    pub fn bag_of(&self, t: usize) -> Option<usize> {
        self.bags.iter().position(|b| b.contains(t))
    }

    /// Per-step coverage count.
    pub fn coverage(&self) -> Vec<usize> {
        let mut cov = vec![0; self.horizon];
        for b in &self.bags {
            cov[b.range()].iter_mut().for_each(|c| *c += 1);
        }
        cov
    }
}

/// Neighboring bags of `bag_len` steps; the last bag is truncated when `bag_len`
/// does not divide `t`, and a `bag_len` above `t` yields one whole-trajectory bag.
pub fn partition_fixed(t: usize, bag_len: usize) -> Result<BagLayout, EnvError> {
    if bag_len < 1 {
        return Err(EnvError::BagLength(bag_len));
    }
    if t == 0 {
        return Err(EnvError::EmptyFeasibleRegion("empty trajectory".into()));
    }
    let bags = (0..t).step_by(bag_len).map(|s| BagSpec::new(s, bag_len.min(t - s))).collect();
    BagLayout::neighboring(bags, t)
}

/// Bags with lengths drawn from `len_range` and gaps from `interval_range`
/// (both inclusive). A negative gap overlaps the previous bag; a bag that would
/// run past `t` is truncated.
pub fn partition_arbitrary<R: Rng + ?Sized>(
    t: usize,
    len_range: (usize, usize),
    interval_range: (i64, i64),
    rng: &mut R,
) -> Result<BagLayout, EnvError> {
    let (lo, hi) = len_range;
    let (glo, ghi) = interval_range;
    if t == 0 || lo < 1 || lo > hi || glo > ghi {
        return Err(EnvError::EmptyFeasibleRegion(format!(
            "t={t}, len_range=[{lo},{hi}], interval_range=[{glo},{ghi}]"
        )));
    }
    let mut bags = Vec::new();
    let mut start = 0usize;
    loop {
        let len = rng.random_range(lo..=hi);
        let end = (start + len).min(t);
        bags.push(BagSpec::new(start, end - start));
        if end >= t {
            break;
        }
        let gap = rng.random_range(glo..=ghi);
        // the next bag must start strictly after this one
        let next = (end as i64 + gap).max(start as i64 + 1);
        if next >= t as i64 {
            break;
        }
        start = next as usize;
    }
    BagLayout::arbitrary(bags, t)
}

/// How bags are generated for each collected trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BagRegime {
    Fixed { len: usize },
    Arbitrary { len_range: (usize, usize), interval_range: (i64, i64) },
    Trajectory,
}

impl BagRegime {
    /// Maps the `9999` bag length onto the whole-trajectory regime.
    pub fn normalized(self) -> Self {
        match self {
            BagRegime::Fixed { len: TRAJECTORY_ALIAS } => BagRegime::Trajectory,
            other => other,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        match *self {
            BagRegime::Fixed { len } if len < 1 => Err(EnvError::BagLength(len)),
            BagRegime::Arbitrary { len_range: (lo, hi), interval_range: (glo, ghi) } if lo < 1 || lo > hi || glo > ghi => {
                Err(EnvError::EmptyFeasibleRegion(format!("len_range=[{lo},{hi}], interval_range=[{glo},{ghi}]")))
            }
            _ => Ok(()),
        }
    }

    pub fn layout<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> Result<BagLayout, EnvError> {
        match self.normalized() {
            BagRegime::Fixed { len } => partition_fixed(t, len),
            BagRegime::Arbitrary { len_range, interval_range } => partition_arbitrary(t, len_range, interval_range, rng),
            BagRegime::Trajectory => partition_fixed(t, t.max(1)),
        }
    }

    /// Short label used in file names and summaries.
    pub fn label(&self) -> String {
        match self.normalized() {
            BagRegime::Fixed { len } => format!("fixed{len}"),
            BagRegime::Arbitrary { len_range, interval_range } => format!(
                "arb{}-{}_gap{}-{}",
                len_range.0, len_range.1, interval_range.0, interval_range.1
            ),
            BagRegime::Trajectory => "trajectory".to_string(),
        }
    }
}
