//! Contrastive training of the backbone and manifold head, with prototype
//! formation after warm-up.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::degrade::{
    generate_view_pair, hard_negative_for, CompositionSampler, DegradationConfig, Group, ViewSource,
};
use crate::dataset::ImageSet;
use crate::error::{ensure, Error, Result};
use crate::imagebuf::ImageBuffer;
use crate::loss::{nt_xent_loss_and_grad, ContrastiveBatch};
use crate::model::ManifoldModel;
use crate::nn::{Adam, AdamConfig};
use crate::prototype::{Finalize, PristinePrototype, PrototypeConfig, UpdateSchedule};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Pairs drawn per epoch; defaults to twice the dataset size.
    pub pairs_per_epoch: Option<usize>,
    pub freeze_backbone: bool,
    pub hard_negatives: bool,
    pub optimizer: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            pairs_per_epoch: None,
            freeze_backbone: false,
            hard_negatives: true,
            optimizer: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.epochs >= 1, Config, "epochs must be at least 1");
        ensure!(self.batch_size >= 2, Config, "batch_size must be at least 2, got {}", self.batch_size);
        ensure!(
            self.optimizer.learning_rate >= 0.0 && self.optimizer.learning_rate.is_finite(),
            Config,
            "learning rate must be a finite non-negative number"
        );
        Ok(())
    }

    pub fn pairs_for(&self, dataset_len: usize) -> usize {
        self.pairs_per_epoch.unwrap_or(2 * dataset_len).max(2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub wall_time: f64,
}

/// Degraded views of a contrastive step, all at the model resolution.
#[derive(Debug, Clone)]
pub struct ViewBlocks {
    pub a: Vec<ImageBuffer>,
    pub b: Vec<ImageBuffer>,
    pub hard: Option<(Vec<ImageBuffer>, Vec<ImageBuffer>)>,
}

impl ViewBlocks {
    fn stacked(&self) -> Vec<&ImageBuffer> {
        let mut all: Vec<&ImageBuffer> = self.a.iter().chain(&self.b).collect();
        if let Some((ha, hb)) = &self.hard {
            all.extend(ha.iter().chain(hb));
        }
        all
    }
}

/// Loss and parameter gradients of one contrastive step.
#[derive(Debug, Clone)]
pub struct StepGrads {
    pub loss: f64,
    pub backbone: Option<Vec<Vec<f64>>>,
    pub head: Vec<Vec<f64>>,
}

/// Forward and backward pass of the contrastive objective.
pub fn contrastive_step(model: &ManifoldModel, views: &ViewBlocks, backbone_grads: bool) -> Result<StepGrads> {
    let images = views.stacked();
    let n = views.a.len();
    let (feats, bcache) = model.backbone.forward_batch(&images, backbone_grads)?;
    let (z, hcache) = model.head.forward_batch(&feats, true)?;
    let mut blocks = z.chunks(n).map(|c| c.to_vec());
    let (za, zb) = (blocks.next().unwrap_or_default(), blocks.next().unwrap_or_default());
    let hard = views.hard.as_ref().map(|_| {
        let ha = blocks.next().unwrap_or_default();
        (ha, blocks.next().unwrap_or_default())
    });
    let batch = ContrastiveBatch::new(za, zb, hard)?;
    let (loss, dz) = nt_xent_loss_and_grad(&batch, model.spec.head.temperature)?;
    let mut head_grads = model.head.params().zeros_like();
    let tap_grads = model
        .head
        .backward(&feats, hcache.as_ref().expect("cache requested"), &dz, &mut head_grads);
    let backbone = bcache.map(|cache| {
        let mut g = model.backbone.params().zeros_like();
        model.backbone.backward(&cache, &tap_grads, &mut g);
        g
    });
    Ok(StepGrads {
        loss,
        backbone,
        head: head_grads,
    })
}

/// Builds the degraded views of one pair.
///
/// Both views share a sampled operator sequence; their parameters are
/// drawn independently.
#[allow(clippy::too_many_arguments)]
pub fn pair_views(
    sampler: &CompositionSampler,
    deg: &DegradationConfig,
    groups: &[Group],
    img_a: &ImageBuffer,
    img_b: &ImageBuffer,
    pair_id: &str,
    epoch: u64,
    master_seed: u64,
    input_size: usize,
    hard_negatives: bool,
) -> Result<(ImageBuffer, ImageBuffer, Option<(ImageBuffer, ImageBuffer)>)> {
    let template = sampler
        .sample_composition(seed::view_seed(master_seed, pair_id, epoch, 0), deg.max_ops, groups)?
        .template();
    let vs = seed::view_seed(master_seed, pair_id, epoch, 1);
    let pair = generate_view_pair(sampler, img_a, img_b, &template, vs, input_size)?;
    let hard = if hard_negatives {
        let order = deg.hard_negative_order;
        let ha = hard_negative_for(
            order,
            img_a,
            &pair.a,
            &pair.provenance.view_a,
            seed::derive(vs, "apply-a"),
            input_size,
        )?;
        let hb = hard_negative_for(
            order,
            img_b,
            &pair.b,
            &pair.provenance.view_b,
            seed::derive(vs, "apply-b"),
            input_size,
        )?;
        Some((ha, hb))
    } else {
        None
    };
    Ok((pair.a, pair.b, hard))
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed));
    idx
}

/// Trains `model` in place. `on_epoch` sees every epoch record as it is produced.
pub fn train_manifold(
    model: &mut ManifoldModel,
    set: &ImageSet,
    deg: &DegradationConfig,
    cfg: &TrainConfig,
    proto_cfg: &PrototypeConfig,
    master_seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    proto_cfg.validate()?;
    ensure!(!set.is_empty(), Validation, "training set is empty");
    ensure!(set.ids.len() == set.len(), Validation, "training set ids and images differ in length");
    if deg.view_source == ViewSource::Distinct {
        ensure!(set.len() >= 2, Validation, "distinct-image pairs need at least 2 images");
    }
    let warmup = proto_cfg.warmup_for(cfg.epochs);
    ensure!(
        warmup < cfg.epochs,
        Config,
        "prototype warm-up epoch {warmup} must be below the epoch count {}",
        cfg.epochs
    );
    let sampler = CompositionSampler::from_config(deg)?;
    let groups = sampler.groups();
    let input = model.input_size();
    let pristine = set.images.iter().map(|i| model.prepare(i)).collect::<Result<Vec<_>>>()?;
    let mut proto = PristinePrototype::new(model.spec.head.embed_dim, proto_cfg.momentum, warmup)?;
    let mut opt_backbone = Adam::new(cfg.optimizer, model.backbone.params());
    let mut opt_head = Adam::new(cfg.optimizer, model.head.params());

    let n = set.len();
    let pairs = cfg.pairs_for(n);
    let start = Instant::now();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let perm = shuffled(n, seed::SeedHasher::new(master_seed).str("epoch-order").u64(epoch as u64).finish());
        let mut total = 0.0;
        let mut steps = 0usize;
        let mut k = 0;
        while k < pairs {
            let count = cfg.batch_size.min(pairs - k);
            if count < 2 {
                break;
            }
            let mut views = ViewBlocks {
                a: Vec::with_capacity(count),
                b: Vec::with_capacity(count),
                hard: cfg.hard_negatives.then(|| (Vec::with_capacity(count), Vec::with_capacity(count))),
            };
            let mut anchors = Vec::with_capacity(count);
            for p in k..k + count {
                let ia = perm[(2 * p) % n];
                let ib = match deg.view_source {
                    ViewSource::Distinct => perm[(2 * p + 1) % n],
                    ViewSource::Same => ia,
                };
                anchors.push(ia);
                let (a, b, hard) = pair_views(
                    &sampler,
                    deg,
                    &groups,
                    &set.images[ia],
                    &set.images[ib],
                    &set.ids[ia],
                    epoch as u64,
                    master_seed,
                    input,
                    cfg.hard_negatives,
                )?;
                views.a.push(a);
                views.b.push(b);
                if let (Some((ha, hb)), Some((xa, xb))) = (views.hard.as_mut(), hard) {
                    ha.push(xa);
                    hb.push(xb);
                }
            }
            let step = contrastive_step(model, &views, !cfg.freeze_backbone).map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("epoch {epoch}, step {steps}: {m}")),
                other => other,
            })?;
            if !step.loss.is_finite() {
                return Err(Error::Numerical(format!("epoch {epoch}, step {steps}: loss is {}", step.loss)));
            }
            opt_head.step(model.head.params_mut(), &step.head);
            if let Some(g) = &step.backbone {
                opt_backbone.step(model.backbone.params_mut(), g);
            }
            total += step.loss;
            steps += 1;
            if proto_cfg.schedule == UpdateSchedule::Batch && epoch >= warmup {
                let refs: Vec<&ImageBuffer> = anchors.iter().map(|&i| &pristine[i]).collect();
                proto.maybe_init(epoch, &model.embed_prepared(&refs)?)?;
            }
            k += count;
        }
        if proto_cfg.schedule == UpdateSchedule::Epoch && epoch >= warmup {
            let refs: Vec<&ImageBuffer> = perm.iter().map(|&i| &pristine[i]).collect();
            proto.maybe_init(epoch, &model.embed_prepared(&refs)?)?;
        }
        let record = EpochRecord {
            epoch,
            loss: total / steps.max(1) as f64,
            wall_time: start.elapsed().as_secs_f64(),
        };
        log::info!("epoch {epoch}: loss {:.5} ({:.1}s)", record.loss, record.wall_time);
        on_epoch(&record);
        log.push(record);
    }
    if proto_cfg.finalize == Finalize::TrainMean {
        let refs: Vec<&ImageBuffer> = pristine.iter().collect();
        proto.reset_to_mean(&model.embed_prepared(&refs)?)?;
    }
    model.prototype = Some(proto);
    Ok(log)
}
