use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Group, OpKind, LEVELS};
use crate::error::{ensure, Error, Result};

/// Five strictly increasing strengths, severity 1 first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Ladder(pub [f64; LEVELS]);

impl Ladder {
    /// Strength at a 1-based severity.
    pub fn level(&self, severity: usize) -> f64 {
        self.0[severity - 1]
    }

    pub fn validate_for(&self, op: OpKind) -> Result<()> {
        let (lo, hi) = op.domain();
        ensure!(
            self.0.windows(2).all(|w| w[0] < w[1]),
            Config,
            "ladder for {op} must be strictly increasing: {:?}",
            self.0
        );
        ensure!(
            self.0.iter().all(|v| *v > lo && *v <= hi),
            Config,
            "ladder for {op} leaves the domain ({lo}, {hi}]: {:?}",
            self.0
        );
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum HardNegativeOrder {
    #[default]
    DegradeThenCrop,
    CropThenDegrade,
}

/// Whether the two views of a positive pair come from different pristine images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ViewSource {
    #[default]
    Distinct,
    Same,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalCorruptions {
    /// Corruption ids in round-robin order.
    pub corruptions: Vec<String>,
    pub ladders: BTreeMap<String, Ladder>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradationConfig {
    /// Upper bound on operators per composition.
    pub max_ops: usize,
    pub hard_negative_order: HardNegativeOrder,
    pub view_source: ViewSource,
    /// Training roster: operator id to severity ladder.
    pub train: BTreeMap<String, Ladder>,
    pub eval: EvalCorruptions,
}

fn ladder_map(entries: &[(&str, [f64; LEVELS])]) -> BTreeMap<String, Ladder> {
    entries.iter().map(|(k, v)| ((*k).to_owned(), Ladder(*v))).collect()
}

impl Default for DegradationConfig {
    fn default() -> Self {
        let train = ladder_map(&[
            ("gaussian_blur", [0.5, 0.9, 1.4, 2.0, 2.8]),
            ("motion_blur", [2.0, 3.5, 5.0, 7.0, 9.0]),
            ("gaussian_noise", [0.04, 0.08, 0.12, 0.18, 0.26]),
            ("impulse_noise", [0.01, 0.03, 0.06, 0.10, 0.16]),
            ("jpeg", [50.0, 70.0, 82.0, 90.0, 95.0]),
            ("pixelate", [0.3, 0.45, 0.6, 0.7, 0.8]),
            ("brighten", [0.15, 0.3, 0.5, 0.75, 1.1]),
            ("darken", [0.15, 0.3, 0.5, 0.75, 1.1]),
            ("channel_shift", [0.75, 1.5, 2.25, 3.0, 4.0]),
            ("saturation", [0.2, 0.4, 0.6, 0.8, 1.0]),
            ("elastic", [0.5, 1.0, 1.6, 2.3, 3.2]),
            ("oversharpen", [0.5, 1.0, 2.0, 3.0, 4.5]),
            ("contrast", [0.15, 0.3, 0.45, 0.6, 0.75]),
        ]);
        let eval_ladders = ladder_map(&[
            ("gaussian_noise", [0.03, 0.06, 0.10, 0.15, 0.22]),
            ("shot_noise", [0.01, 0.025, 0.05, 0.1, 0.2]),
            ("impulse_noise", [0.01, 0.03, 0.05, 0.08, 0.12]),
            ("defocus_blur", [0.75, 1.0, 1.5, 2.0, 3.0]),
            ("motion_blur", [1.5, 3.0, 4.5, 6.5, 9.0]),
            ("gaussian_blur", [0.4, 0.7, 1.0, 1.5, 2.2]),
            ("jpeg", [20.0, 35.0, 50.0, 70.0, 85.0]),
            ("pixelate", [0.2, 0.35, 0.5, 0.6, 0.7]),
            ("brighten", [0.1, 0.2, 0.35, 0.5, 0.7]),
            ("contrast", [0.2, 0.35, 0.5, 0.65, 0.8]),
            ("saturation", [0.15, 0.3, 0.5, 0.7, 0.9]),
            ("elastic", [0.4, 0.8, 1.2, 1.8, 2.5]),
        ]);
        let corruptions = [
            "gaussian_noise",
            "shot_noise",
            "impulse_noise",
            "defocus_blur",
            "motion_blur",
            "gaussian_blur",
            "jpeg",
            "pixelate",
            "brighten",
            "contrast",
            "saturation",
            "elastic",
        ]
        .iter()
        .map(|s| (*s).to_owned())
        .collect();
        Self {
            max_ops: 4,
            hard_negative_order: HardNegativeOrder::default(),
            view_source: ViewSource::default(),
            train,
            eval: EvalCorruptions {
                corruptions,
                ladders: eval_ladders,
            },
        }
    }
}

impl DegradationConfig {
    pub fn train_ladders(&self) -> Result<Vec<(OpKind, Ladder)>> {
        self.train
            .iter()
            .map(|(id, ladder)| Ok((id.parse::<OpKind>()?, *ladder)))
            .collect()
    }

    /// Evaluation corruptions in round-robin order with their ladders.
    pub fn eval_corruptions(&self) -> Result<Vec<(OpKind, Ladder)>> {
        self.eval
            .corruptions
            .iter()
            .map(|id| {
                let op: OpKind = id.parse()?;
                let ladder = self
                    .eval
                    .ladders
                    .get(id)
                    .ok_or_else(|| Error::Config(format!("eval corruption '{id}' has no ladder")))?;
                Ok((op, *ladder))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let train = self.train_ladders()?;
        for (op, ladder) in &train {
            ladder.validate_for(*op)?;
        }
        let mut groups: Vec<Group> = train.iter().map(|(op, _)| op.group()).collect();
        groups.sort();
        groups.dedup();
        ensure!(self.max_ops >= 1, Config, "degradation.max_ops must be at least 1");
        ensure!(
            self.max_ops <= groups.len(),
            Config,
            "degradation.max_ops {} exceeds the {} groups in the training roster",
            self.max_ops,
            groups.len()
        );
        ensure!(!self.eval.corruptions.is_empty(), Config, "degradation.eval.corruptions is empty");
        for (op, ladder) in self.eval_corruptions()? {
            ladder.validate_for(op)?;
        }
        Ok(())
    }
}
