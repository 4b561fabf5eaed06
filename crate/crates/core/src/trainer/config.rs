use std::fmt;

use crate::codec::{QpLevel, QP_VALUES};
use crate::distortion::Metric;
use crate::error::{Error, Result};
use crate::filter::FilterArch;

/// Temperature used by hard-min training: small enough that every
/// non-degenerate loss gap yields a one-hot assignment.
pub const HARD_MIN_TEMPERATURE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TrainMode {
    /// Competitive training with annealed softmax assignment.
    Joint,
    /// One filter per QP range, each trained only on its range.
    Independent,
    /// One filter trained on everything.
    Single,
    /// Joint training with the temperature pinned near zero from epoch 0.
    HardMin,
}

impl TrainMode {
    pub const ALL: [TrainMode; 4] = [
        TrainMode::Single,
        TrainMode::Independent,
        TrainMode::Joint,
        TrainMode::HardMin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Joint => "joint",
            TrainMode::Independent => "independent",
            TrainMode::Single => "single",
            TrainMode::HardMin => "hard-min",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        TrainMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown training mode {s:?}")))
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How initial parameters are seeded across the filters of a bank.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum InitSeeds {
    /// Filter `j` uses `derive_seed(seed, j)`.
    #[default]
    Distinct,
    /// Every filter uses the same seed (symmetric start).
    Shared,
}

/// Disjoint QP sets covering all seven QPs; one filter per set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QpRangePartition {
    ranges: Vec<Vec<QpLevel>>,
}

impl QpRangePartition {
    pub fn new(ranges: Vec<Vec<QpLevel>>) -> Result<Self> {
        let mut seen = [false; QP_VALUES.len()];
        for r in &ranges {
            if r.is_empty() {
                return Err(Error::Config("empty QP range in partition".into()));
            }
            for qp in r {
                if std::mem::replace(&mut seen[qp.index()], true) {
                    return Err(Error::Config(format!("qp {qp} appears in two ranges")));
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Config(format!(
                "qp {} is not covered by the partition",
                QP_VALUES[i]
            )));
        }
        Ok(Self { ranges })
    }

    pub fn from_values(ranges: &[&[u32]]) -> Result<Self> {
        let ranges = ranges
            .iter()
            .map(|r| r.iter().map(|&q| QpLevel::new(q)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Self::new(ranges)
    }

    pub fn ranges(&self) -> &[Vec<QpLevel>] {
        &self.ranges
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn range_of(&self, qp: QpLevel) -> usize {
        self.ranges
            .iter()
            .position(|r| r.contains(&qp))
            .expect("partition covers every QP")
    }
}

impl Default for QpRangePartition {
    fn default() -> Self {
        Self::from_values(&[&[22, 27], &[32, 37], &[42, 47], &[52]]).unwrap()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Number of filters M (joint and hard-min modes).
    pub filters: usize,
    /// Initial temperature T0.
    pub t0: f64,
    /// Cooling factor applied every `drop_step` epochs.
    pub beta: f64,
    /// Drop step K in epochs.
    pub drop_step: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub patch: usize,
    pub metric: Metric,
    pub seed: u64,
    pub mode: TrainMode,
    pub partition: QpRangePartition,
    pub arch: FilterArch,
    pub init: InitSeeds,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            filters: 4,
            t0: 1.0,
            beta: 10.0,
            drop_step: 5,
            epochs: 30,
            lr: 2e-4,
            batch: 8,
            patch: 32,
            metric: Metric::Mse,
            seed: 0,
            mode: TrainMode::Joint,
            partition: QpRangePartition::default(),
            arch: FilterArch::default(),
            init: InitSeeds::Distinct,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.t0 > 0.0 && self.t0.is_finite()) {
            return bad(format!("T0 must be positive, got {}", self.t0));
        }
        if !(self.beta > 1.0 && self.beta.is_finite()) {
            return bad(format!("beta must exceed 1, got {}", self.beta));
        }
        if self.drop_step == 0 {
            return bad("drop step K must be at least 1".into());
        }
        if self.filters == 0 {
            return bad("filter count M must be at least 1".into());
        }
        if self.batch == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        self.arch.validate()?;
        let g = self.arch.granularity();
        if self.patch == 0 || !self.patch.is_multiple_of(g) {
            return bad(format!("patch {} must be a positive multiple of {g}", self.patch));
        }
        if self.mode == TrainMode::Independent && self.filters != self.partition.len() {
            return bad(format!(
                "independent mode trains one filter per QP range: M = {} but the partition has {} ranges",
                self.filters,
                self.partition.len()
            ));
        }
        Ok(())
    }

    /// Bank size actually produced by `mode`.
    pub fn bank_size(&self) -> usize {
        match self.mode {
            TrainMode::Single => 1,
            TrainMode::Independent => self.partition.len(),
            TrainMode::Joint | TrainMode::HardMin => self.filters,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_partition_matches_reference_ranges() {
        let p = QpRangePartition::default();
        let values: Vec<Vec<u32>> = p
            .ranges()
            .iter()
            .map(|r| r.iter().map(|q| q.value()).collect())
            .collect();
        assert_eq!(values, vec![vec![22, 27], vec![32, 37], vec![42, 47], vec![52]]);
        assert_eq!(p.range_of(QpLevel::new(37).unwrap()), 1);
    }

    #[test]
    fn partition_must_be_disjoint_cover() {
        assert!(QpRangePartition::from_values(&[&[22, 27, 32], &[37, 42, 47]]).is_err());
        assert!(QpRangePartition::from_values(&[&[22, 27, 32, 37], &[37, 42, 47, 52]]).is_err());
        assert!(QpRangePartition::from_values(&[&[22, 27, 32, 37, 42, 47, 52]]).is_ok());
    }

    #[test]
    fn config_invariants() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { t0: 0.0, ..Default::default() },
            TrainConfig { beta: 1.0, ..Default::default() },
            TrainConfig { drop_step: 0, ..Default::default() },
            TrainConfig { filters: 0, ..Default::default() },
            TrainConfig { patch: 30, ..Default::default() },
            TrainConfig { mode: TrainMode::Independent, filters: 3, ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_)) | Err(Error::Parameter(_))), "{c:?}");
        }
    }

    #[test]
    fn mode_names_round_trip() {
        for m in TrainMode::ALL {
            assert_eq!(TrainMode::parse(m.name()).unwrap(), m);
        }
        assert!(TrainMode::parse("soft").is_err());
    }
}
