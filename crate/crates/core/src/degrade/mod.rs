//! Degradation engine: grouped operators, severity ladders, composition
//! sampling and application, two-view generation, hard negatives and the
//! corruption benchmark.

mod benchmark;
mod config;
mod ops;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::imagebuf::ImageBuffer;
use crate::seed;

pub use benchmark::{build_severity_benchmark, materialize_benchmark, BenchmarkEntry, SeverityBenchmark};
pub use config::{DegradationConfig, HardNegativeOrder, Ladder, ViewSource};

/// Number of discrete severity levels.
pub const LEVELS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Blur,
    Noise,
    Compression,
    BrightnessChange,
    ColorDistortion,
    SpatialDistortion,
    SharpnessContrast,
}

impl Group {
    pub const ALL: [Group; 7] = [
        Group::Blur,
        Group::Noise,
        Group::Compression,
        Group::BrightnessChange,
        Group::ColorDistortion,
        Group::SpatialDistortion,
        Group::SharpnessContrast,
    ];
}

/// Concrete degradation operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    GaussianBlur,
    MotionBlur,
    DefocusBlur,
    GaussianNoise,
    ImpulseNoise,
    ShotNoise,
    Jpeg,
    Pixelate,
    Brighten,
    Darken,
    ChannelShift,
    Saturation,
    Elastic,
    Oversharpen,
    Contrast,
}

impl OpKind {
    pub const ALL: [OpKind; 15] = [
        OpKind::GaussianBlur,
        OpKind::MotionBlur,
        OpKind::DefocusBlur,
        OpKind::GaussianNoise,
        OpKind::ImpulseNoise,
        OpKind::ShotNoise,
        OpKind::Jpeg,
        OpKind::Pixelate,
        OpKind::Brighten,
        OpKind::Darken,
        OpKind::ChannelShift,
        OpKind::Saturation,
        OpKind::Elastic,
        OpKind::Oversharpen,
        OpKind::Contrast,
    ];

    pub fn id(self) -> &'static str {
        match self {
            OpKind::GaussianBlur => "gaussian_blur",
            OpKind::MotionBlur => "motion_blur",
            OpKind::DefocusBlur => "defocus_blur",
            OpKind::GaussianNoise => "gaussian_noise",
            OpKind::ImpulseNoise => "impulse_noise",
            OpKind::ShotNoise => "shot_noise",
            OpKind::Jpeg => "jpeg",
            OpKind::Pixelate => "pixelate",
            OpKind::Brighten => "brighten",
            OpKind::Darken => "darken",
            OpKind::ChannelShift => "channel_shift",
            OpKind::Saturation => "saturation",
            OpKind::Elastic => "elastic",
            OpKind::Oversharpen => "oversharpen",
            OpKind::Contrast => "contrast",
        }
    }

    pub fn group(self) -> Group {
        match self {
            OpKind::GaussianBlur | OpKind::MotionBlur | OpKind::DefocusBlur => Group::Blur,
            OpKind::GaussianNoise | OpKind::ImpulseNoise | OpKind::ShotNoise => Group::Noise,
            OpKind::Jpeg | OpKind::Pixelate => Group::Compression,
            OpKind::Brighten | OpKind::Darken => Group::BrightnessChange,
            OpKind::ChannelShift | OpKind::Saturation => Group::ColorDistortion,
            OpKind::Elastic => Group::SpatialDistortion,
            OpKind::Oversharpen | OpKind::Contrast => Group::SharpnessContrast,
        }
    }

    /// Closed interval of accepted strengths. The lower bound is always the identity.
    ///
    /// | op | unit |
    /// |----|------|
    /// | gaussian_blur | sigma, px |
    /// | motion_blur | streak length, px |
    /// | defocus_blur | disk radius, px |
    /// | gaussian_noise | additive std |
    /// | impulse_noise | corrupted sample fraction |
    /// | shot_noise | inverse photon count |
    /// | jpeg | 100 - quality |
    /// | pixelate | fraction of resolution removed |
    /// | brighten / darken | gamma offset |
    /// | channel_shift | red/blue displacement, px |
    /// | saturation | desaturation fraction |
    /// | elastic | peak displacement, px |
    /// | oversharpen | unsharp-mask gain |
    /// | contrast | contrast reduction fraction |
    pub fn domain(self) -> (f64, f64) {
        match self {
            OpKind::GaussianBlur | OpKind::DefocusBlur => (0.0, 10.0),
            OpKind::MotionBlur => (0.0, 32.0),
            OpKind::GaussianNoise | OpKind::ImpulseNoise | OpKind::ShotNoise => (0.0, 1.0),
            OpKind::Jpeg => (0.0, 99.0),
            OpKind::Pixelate => (0.0, 0.95),
            OpKind::Brighten | OpKind::Darken => (0.0, 5.0),
            OpKind::ChannelShift => (0.0, 16.0),
            OpKind::Saturation | OpKind::Contrast => (0.0, 1.0),
            OpKind::Elastic => (0.0, 8.0),
            OpKind::Oversharpen => (0.0, 20.0),
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .into_iter()
            .find(|op| op.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown operator id '{s}'")))
    }
}

/// Applies one operator. `seed` drives every stochastic choice the operator makes.
pub fn apply_operator(img: &ImageBuffer, op: OpKind, strength: f64, seed: u64) -> Result<ImageBuffer> {
    ops::apply(img, op, strength, seed)
}

/// Looks an operator up by id, then applies it.
pub fn apply_operator_by_id(img: &ImageBuffer, op_id: &str, strength: f64, seed: u64) -> Result<ImageBuffer> {
    apply_operator(img, op_id.parse()?, strength, seed)
}

/// Ordered operator chain with concrete strengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionSpec {
    pub ops: Vec<(OpKind, f64)>,
}

impl CompositionSpec {
    pub fn new(ops: Vec<(OpKind, f64)>) -> Result<Self> {
        let spec = Self { ops };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.ops.is_empty(), Validation, "composition needs at least one operator");
        let mut groups: Vec<Group> = self.ops.iter().map(|(op, _)| op.group()).collect();
        groups.sort();
        let before = groups.len();
        groups.dedup();
        ensure!(groups.len() == before, Validation, "composition uses a degradation group twice");
        Ok(())
    }

    pub fn template(&self) -> Vec<OpKind> {
        self.ops.iter().map(|(op, _)| *op).collect()
    }
}

/// Applies operators in listed order; operator `k` draws from a child seed of `seed`.
pub fn apply_composition(img: &ImageBuffer, comp: &CompositionSpec, seed: u64) -> Result<ImageBuffer> {
    comp.validate()?;
    let mut current = img.clone();
    for (k, (op, strength)) in comp.ops.iter().enumerate() {
        let op_seed = seed::SeedHasher::new(seed).str("op").u64(k as u64).finish();
        current = apply_operator(&current, *op, *strength, op_seed)?;
    }
    Ok(current)
}

/// Draws compositions and view parameters from the training ladders.
#[derive(Debug, Clone)]
pub struct CompositionSampler {
    ladders: Vec<(OpKind, Ladder)>,
}

impl CompositionSampler {
    pub fn new(ladders: impl IntoIterator<Item = (OpKind, Ladder)>) -> Result<Self> {
        let mut ladders: Vec<_> = ladders.into_iter().collect();
        ensure!(!ladders.is_empty(), Config, "training roster is empty");
        ladders.sort_by_key(|(op, _)| *op);
        for (op, ladder) in &ladders {
            let (lo, hi) = op.domain();
            ensure!(
                ladder.0.windows(2).all(|w| w[0] <= w[1]) && ladder.0.iter().all(|v| (lo..=hi).contains(v)),
                Config,
                "ladder for {op} must be nondecreasing within [{lo}, {hi}]: {:?}",
                ladder.0
            );
        }
        Ok(Self { ladders })
    }

    pub fn from_config(cfg: &DegradationConfig) -> Result<Self> {
        cfg.validate()?;
        Self::new(cfg.train_ladders()?)
    }

    pub fn groups(&self) -> Vec<Group> {
        let mut g: Vec<Group> = self.ladders.iter().map(|(op, _)| op.group()).collect();
        g.sort();
        g.dedup();
        g
    }

    fn ladder(&self, op: OpKind) -> Result<&Ladder> {
        self.ladders
            .iter()
            .find(|(o, _)| *o == op)
            .map(|(_, l)| l)
            .ok_or_else(|| Error::Config(format!("operator '{op}' has no training ladder")))
    }

    /// Continuous strength drawn uniformly between the severity-1 and severity-5 rungs.
    pub fn sample_strength(&self, op: OpKind, rng: &mut seed::Rng) -> Result<f64> {
        let ladder = self.ladder(op)?;
        let (lo, hi) = (ladder.level(1), ladder.level(LEVELS));
        Ok(lo + (hi - lo) * rng.random::<f64>())
    }

    /// Operator count uniform in `1..=max_ops`, at most one operator per group,
    /// shuffled order, strengths sampled per operator.
    pub fn sample_composition(&self, rng_seed: u64, max_ops: usize, group_pool: &[Group]) -> Result<CompositionSpec> {
        ensure!(max_ops >= 1, Validation, "max_ops must be at least 1");
        let mut pool: Vec<Group> = group_pool.to_vec();
        pool.sort();
        pool.dedup();
        ensure!(!pool.is_empty(), Validation, "group pool is empty");
        ensure!(
            max_ops <= pool.len(),
            Validation,
            "max_ops {max_ops} exceeds the {} available groups",
            pool.len()
        );
        let mut rng = seed::rng(rng_seed);
        let count = rng.random_range(1..=max_ops);
        pool.shuffle(&mut rng);
        let mut ops = Vec::with_capacity(count);
        for group in pool.into_iter().take(count) {
            let members: Vec<OpKind> = self
                .ladders
                .iter()
                .map(|(op, _)| *op)
                .filter(|op| op.group() == group)
                .collect();
            ensure!(!members.is_empty(), Config, "group {group:?} has no training operators");
            let op = members[rng.random_range(0..members.len())];
            ops.push(op);
        }
        ops.shuffle(&mut rng);
        let ops = ops
            .into_iter()
            .map(|op| Ok((op, self.sample_strength(op, &mut rng)?)))
            .collect::<Result<Vec<_>>>()?;
        CompositionSpec::new(ops)
    }

    /// Fills a template's strengths with fresh draws.
    pub fn parameterize(&self, template: &[OpKind], rng_seed: u64) -> Result<CompositionSpec> {
        let mut rng = seed::rng(rng_seed);
        let ops = template
            .iter()
            .map(|&op| Ok((op, self.sample_strength(op, &mut rng)?)))
            .collect::<Result<Vec<_>>>()?;
        CompositionSpec::new(ops)
    }
}

/// What a generated view pair was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewProvenance {
    pub template: Vec<OpKind>,
    pub view_a: CompositionSpec,
    pub view_b: CompositionSpec,
}

/// Pair of degraded views sharing an operator sequence.
#[derive(Debug, Clone)]
pub struct ViewPair {
    pub a: ImageBuffer,
    pub b: ImageBuffer,
    pub provenance: ViewProvenance,
}

/// Two views of the same pristine image, see [`generate_view_pair`].
pub fn generate_views(
    sampler: &CompositionSampler,
    img: &ImageBuffer,
    template: &[OpKind],
    seed: u64,
    input_size: usize,
) -> Result<ViewPair> {
    generate_view_pair(sampler, img, img, template, seed, input_size)
}

/// Degrades `img_a` and `img_b` with the same operator sequence and
/// independently sampled strengths, then resizes both to `input_size`.
pub fn generate_view_pair(
    sampler: &CompositionSampler,
    img_a: &ImageBuffer,
    img_b: &ImageBuffer,
    template: &[OpKind],
    seed: u64,
    input_size: usize,
) -> Result<ViewPair> {
    let view_a = sampler.parameterize(template, seed::derive(seed, "params-a"))?;
    let view_b = sampler.parameterize(template, seed::derive(seed, "params-b"))?;
    let a = apply_composition(img_a, &view_a, seed::derive(seed, "apply-a"))?.resize(input_size, input_size)?;
    let b = apply_composition(img_b, &view_b, seed::derive(seed, "apply-b"))?.resize(input_size, input_size)?;
    Ok(ViewPair {
        a,
        b,
        provenance: ViewProvenance {
            template: template.to_vec(),
            view_a,
            view_b,
        },
    })
}

/// Centered crop of half the width and half the height, resized back to `input_size`.
pub fn make_hard_negative(img: &ImageBuffer, input_size: usize) -> Result<ImageBuffer> {
    let (h, w) = (img.height(), img.width());
    ensure!(h >= 2 && w >= 2, Validation, "hard negative needs at least 2x2 input, got {h}x{w}");
    let (ch, cw) = (h / 2, w / 2);
    let (y0, x0) = ((h - ch) / 2, (w - cw) / 2);
    img.crop(y0, x0, ch, cw)?.resize(input_size, input_size)
}

/// Hard negative for one degraded view, honoring the configured order.
pub fn hard_negative_for(
    order: HardNegativeOrder,
    pristine: &ImageBuffer,
    degraded: &ImageBuffer,
    comp: &CompositionSpec,
    apply_seed: u64,
    input_size: usize,
) -> Result<ImageBuffer> {
    match order {
        HardNegativeOrder::DegradeThenCrop => make_hard_negative(degraded, input_size),
        HardNegativeOrder::CropThenDegrade => {
            let cropped = make_hard_negative(pristine, input_size)?;
            apply_composition(&cropped, comp, apply_seed)
        }
    }
}

#[cfg(test)]
mod tests;
