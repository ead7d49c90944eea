//! End-to-end orchestration shared by the CLI and the acceptance runs:
//! data loading, training, benchmark reports and the ablation suite.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{MonitorKind, RunConfig};
use crate::dataset::{ingest, ImageSet, Split, SplitRule};
use crate::degrade::{build_severity_benchmark, Ladder, OpKind, SeverityBenchmark};
use crate::error::{ensure, Error, Result};
use crate::eval::{
    mixed_pool_protocol, per_corruption_table, severity_sweep, BenchmarkReport, DegradedSource, FlowMonitor,
    ManifoldMonitor, Monitor, ReportRow, MIXED,
};
use crate::flow::FlowBaseline;
use crate::head::PoolMode;
use crate::model::ManifoldModel;
use crate::seed;
use crate::train::{train_manifold, EpochRecord};

/// Prefix given to image ids of the secondary collection.
pub const SECONDARY_PREFIX: &str = "secondary__";

#[derive(Debug, Clone, Default)]
pub struct Data {
    pub train: ImageSet,
    pub val: ImageSet,
    pub secondary: Option<ImageSet>,
}

/// Ingests the configured collections, writes the dataset manifest to the
/// output directory and loads the splits.
pub fn load_data(cfg: &RunConfig) -> Result<Data> {
    let root = cfg
        .paths
        .data_root
        .as_ref()
        .ok_or_else(|| Error::Config("paths.data_root is not set".into()))?;
    let (manifest, skipped) = ingest(root, SplitRule::ValFraction(cfg.paths.val_fraction), "primary")?;
    for s in &skipped {
        log::warn!("skipped {}: {}", s.path.display(), s.reason);
    }
    manifest.write(&cfg.output_path("dataset.csv"))?;
    let train = manifest.load(root, Some(Split::Train))?;
    let val = manifest.load(root, Some(Split::Val))?;
    ensure!(train.len() >= 2, Validation, "training split has {} images; need at least 2", train.len());
    ensure!(!val.is_empty(), Validation, "validation split is empty");
    let secondary = match &cfg.paths.secondary_root {
        Some(root2) => {
            let (m2, _) = ingest(root2, SplitRule::All(Split::Val), "secondary")?;
            let mut set = m2.load(root2, None)?;
            for id in &mut set.ids {
                id.insert_str(0, SECONDARY_PREFIX);
            }
            Some(set)
        }
        None => None,
    };
    Ok(Data { train, val, secondary })
}

pub fn init_seed(cfg: &RunConfig) -> u64 {
    seed::derive(cfg.seed, "model-init")
}

pub fn train_model(
    cfg: &RunConfig,
    train: &ImageSet,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ManifoldModel, Vec<EpochRecord>)> {
    cfg.validate()?;
    let mut model = ManifoldModel::new(cfg.model.clone(), init_seed(cfg))?;
    model.config_hash = cfg.config_hash();
    let log = train_manifold(
        &mut model,
        train,
        &cfg.degradation,
        &cfg.train,
        &cfg.prototype,
        cfg.seed,
        on_epoch,
    )?;
    Ok((model, log))
}

/// Tap indices the flow baselines read; all taps unless configured.
pub fn flow_layers(cfg: &RunConfig) -> Vec<usize> {
    if cfg.flow.layers.is_empty() {
        (0..cfg.model.backbone.taps.len()).collect()
    } else {
        cfg.flow.layers.clone()
    }
}

pub fn train_flow_baseline(
    cfg: &RunConfig,
    model: &ManifoldModel,
    train: &ImageSet,
    multi_scale: bool,
) -> Result<FlowBaseline> {
    let layers = flow_layers(cfg);
    let feats = FlowMonitor::pooled(model, &train.images, &layers)?;
    let flow_cfg = crate::flow::FlowConfig {
        multi_scale,
        ..cfg.flow.clone()
    };
    let label = if multi_scale { "m-flow" } else { "flow" };
    FlowBaseline::train(&layers, &feats, &flow_cfg, seed::derive(cfg.seed, label))
}

pub fn benchmark_seed(cfg: &RunConfig) -> u64 {
    seed::derive(cfg.seed, "benchmark")
}

/// Round-robin benchmark over the validation images.
pub fn benchmark_for(cfg: &RunConfig, val: &ImageSet) -> Result<SeverityBenchmark> {
    build_severity_benchmark(&val.ids, &cfg.degradation.eval.corruptions, &cfg.eval.levels, benchmark_seed(cfg))
}

pub fn eval_ladders(cfg: &RunConfig) -> Result<(Vec<(OpKind, Ladder)>, BTreeMap<String, Ladder>)> {
    let c = cfg.degradation.eval_corruptions()?;
    let map = c.iter().map(|(op, l)| (op.id().to_string(), *l)).collect();
    Ok((c, map))
}

/// Severity sweep rows, followed by the per-corruption table when enabled.
pub fn benchmark_rows(
    cfg: &RunConfig,
    monitor: &dyn Monitor,
    val: &ImageSet,
    bench: &SeverityBenchmark,
    source: &DegradedSource,
) -> Result<Vec<ReportRow>> {
    let mut rows = severity_sweep(monitor, bench, val, source, MIXED)?;
    if cfg.eval.per_corruption {
        let (corruptions, _) = eval_ladders(cfg)?;
        rows.extend(per_corruption_table(monitor, &corruptions, &cfg.eval.levels, val, benchmark_seed(cfg))?);
    }
    Ok(rows)
}

/// The configured monitors for a trained model.
pub fn build_monitors<'a>(
    cfg: &RunConfig,
    model: &'a ManifoldModel,
    train: &ImageSet,
) -> Result<Vec<Box<dyn Monitor + 'a>>> {
    let mut out: Vec<Box<dyn Monitor + 'a>> = Vec::new();
    for kind in &cfg.eval.monitors {
        out.push(match kind {
            MonitorKind::Manifold => Box::new(ManifoldMonitor {
                id: kind.id().into(),
                model,
            }),
            MonitorKind::Nf | MonitorKind::MultiNf => Box::new(FlowMonitor {
                id: kind.id().into(),
                model,
                baseline: train_flow_baseline(cfg, model, train, *kind == MonitorKind::MultiNf)?,
            }),
        });
    }
    Ok(out)
}

/// Mixed-pool rows are labelled with this monitor-id suffix.
pub const MIXED_POOL_SUFFIX: &str = "/mixed-pool";

/// Scores every monitor on the validation benchmark (and the mixed-pool
/// protocol when a secondary collection is present).
pub fn evaluate_monitors(
    cfg: &RunConfig,
    monitors: &[Box<dyn Monitor + '_>],
    data: &Data,
    source: Option<&DegradedSource>,
) -> Result<Vec<ReportRow>> {
    let bench = benchmark_for(cfg, &data.val)?;
    let (corruptions, ladders) = eval_ladders(cfg)?;
    let render = DegradedSource::Render {
        pristine: &data.val,
        ladders: &ladders,
    };
    let source = source.unwrap_or(&render);
    let mut rows = Vec::new();
    for m in monitors {
        log::info!("evaluating monitor '{}'", m.id());
        rows.extend(benchmark_rows(cfg, m.as_ref(), &data.val, &bench, source)?);
        if let Some(secondary) = &data.secondary {
            let (mut pool_rows, _) = mixed_pool_protocol(
                m.as_ref(),
                &data.val,
                secondary,
                &corruptions,
                &cfg.eval.levels,
                seed::derive(cfg.seed, "mixed-pool"),
            )?;
            for r in &mut pool_rows {
                r.monitor_id.push_str(MIXED_POOL_SUFFIX);
            }
            rows.extend(pool_rows);
        }
    }
    Ok(rows)
}

/// Trains the manifold model and reports every configured monitor.
pub fn run_benchmark(
    cfg: &RunConfig,
    data: &Data,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(BenchmarkReport, ManifoldModel)> {
    let (model, _) = train_model(cfg, &data.train, on_epoch)?;
    let monitors = build_monitors(cfg, &model, &data.train)?;
    let rows = evaluate_monitors(cfg, &monitors, data, None)?;
    drop(monitors);
    Ok((BenchmarkReport::new(cfg.config_hash(), rows), model))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    LastLayerOnly,
    Gap,
    NoHardNegatives,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::LastLayerOnly, Variant::Gap, Variant::NoHardNegatives];

    pub fn id(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::LastLayerOnly => "last-layer-only",
            Variant::Gap => "gap",
            Variant::NoHardNegatives => "no-hard-negatives",
        }
    }

    /// The configuration of this variant; everything else is unchanged.
    pub fn apply(self, cfg: &RunConfig) -> RunConfig {
        let mut c = cfg.clone();
        match self {
            Variant::Full => {}
            Variant::LastLayerOnly => c.model.head.last_layer_only = true,
            Variant::Gap => c.model.head.pool = PoolMode::Gap,
            Variant::NoHardNegatives => c.train.hard_negatives = false,
        }
        c
    }
}

/// Trains and sweeps each variant under the same seed and data. `extra` may
/// add rows per trained variant (e.g. baselines on the full model).
pub fn ablation_suite(
    cfg: &RunConfig,
    data: &Data,
    variants: &[Variant],
    mut extra: impl FnMut(Variant, &RunConfig, &ManifoldModel) -> Result<Vec<ReportRow>>,
    mut on_epoch: impl FnMut(Variant, &EpochRecord),
) -> Result<BenchmarkReport> {
    ensure!(!variants.is_empty(), Validation, "no ablation variants selected");
    let bench = benchmark_for(cfg, &data.val)?;
    let (_, ladders) = eval_ladders(cfg)?;
    let source = DegradedSource::Render {
        pristine: &data.val,
        ladders: &ladders,
    };
    let mut rows = Vec::new();
    for &v in variants {
        log::info!("ablation variant '{}'", v.id());
        let vcfg = v.apply(cfg);
        let (model, _) = train_model(&vcfg, &data.train, |r| on_epoch(v, r))?;
        let monitor = ManifoldMonitor {
            id: v.id().into(),
            model: &model,
        };
        rows.extend(severity_sweep(&monitor, &bench, &data.val, &source, MIXED)?);
        rows.extend(extra(v, &vcfg, &model)?);
    }
    Ok(BenchmarkReport::new(cfg.config_hash(), rows))
}

/// Stamp written next to directory artifacts (materialized benchmarks).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactStamp {
    pub kind: String,
    pub config_hash: String,
}

impl ArtifactStamp {
    pub const FILE: &'static str = "stamp.json";

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(Self::FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(Self::FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;
    use crate::head::ProjectionConfig;
    use crate::model::ModelSpec;
    use crate::synth::{self, SceneStyle};

    pub(crate) fn tiny_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.model = ModelSpec {
            input_size: 16,
            backbone: BackboneConfig {
                widths: vec![4, 6, 8],
                taps: vec![1, 2, 3],
            },
            head: ProjectionConfig {
                reduce_dim: 4,
                embed_dim: 8,
                mlp_hidden: 16,
                ..Default::default()
            },
        };
        cfg.train.epochs = 2;
        cfg.train.batch_size = 4;
        cfg.flow.epochs = 2;
        cfg.flow.hidden = 8;
        cfg.eval.levels = vec![1, 5];
        cfg
    }

    fn tiny_data() -> Data {
        Data {
            train: synth::image_set("t", 8, 16, 1, SceneStyle::Shapes).unwrap(),
            val: synth::image_set("v", 6, 16, 2, SceneStyle::Shapes).unwrap(),
            secondary: Some(synth::image_set("s", 4, 16, 3, SceneStyle::Texture).unwrap()),
        }
    }

    #[test]
    fn benchmark_report_shape_and_determinism() {
        let cfg = tiny_config();
        let data = tiny_data();
        let (report, model) = run_benchmark(&cfg, &data, |_| {}).unwrap();
        assert_eq!(model.config_hash, cfg.config_hash());
        let corruptions = cfg.degradation.eval.corruptions.len();
        for kind in &cfg.eval.monitors {
            let rows: Vec<_> = report.rows_for(kind.id()).collect();
            assert_eq!(rows.len(), 2 + 2 * corruptions);
            let pool_id = format!("{}{MIXED_POOL_SUFFIX}", kind.id());
            let pooled: Vec<_> = report.rows_for(&pool_id).collect();
            assert_eq!(pooled.len(), 2);
            assert!(pooled.iter().all(|r| r.n_id == 8));
        }
        let (again, _) = run_benchmark(&cfg, &data, |_| {}).unwrap();
        assert_eq!(report.to_csv().unwrap(), again.to_csv().unwrap());
    }

    #[test]
    fn ablation_has_four_variants_with_one_row_per_severity() {
        let mut cfg = tiny_config();
        cfg.eval.levels = vec![1, 2, 3, 4, 5];
        let data = tiny_data();
        let mut seen = Vec::new();
        let report = ablation_suite(
            &cfg,
            &data,
            &Variant::ALL,
            |v, vcfg, model| {
                seen.push(v);
                assert_eq!(model.config_hash, vcfg.config_hash());
                Ok(Vec::new())
            },
            |_, _| {},
        )
        .unwrap();
        assert_eq!(seen, Variant::ALL);
        assert_eq!(report.rows.len(), 20);
        for v in Variant::ALL {
            let sev: Vec<usize> = report.rows_for(v.id()).map(|r| r.severity).collect();
            assert_eq!(sev, [1, 2, 3, 4, 5]);
        }
    }

    #[test]
    fn variants_change_one_switch_each() {
        let cfg = RunConfig::default();
        assert_eq!(Variant::Full.apply(&cfg), cfg);
        assert!(Variant::LastLayerOnly.apply(&cfg).model.head.last_layer_only);
        assert_eq!(Variant::Gap.apply(&cfg).model.head.pool, PoolMode::Gap);
        assert!(!Variant::NoHardNegatives.apply(&cfg).train.hard_negatives);
        let hashes: std::collections::BTreeSet<String> =
            Variant::ALL.iter().map(|v| v.apply(&cfg).config_hash()).collect();
        assert_eq!(hashes.len(), 4);
    }

    #[test]
    fn load_data_splits_and_prefixes_secondary_ids() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        std::fs::create_dir_all(&a).unwrap();
        std::fs::create_dir_all(&b).unwrap();
        synth::write_dataset(&a, "img", 30, 16, 1, SceneStyle::Shapes).unwrap();
        synth::write_dataset(&b, "img", 5, 16, 2, SceneStyle::Texture).unwrap();
        let mut cfg = tiny_config();
        cfg.paths.data_root = Some(a);
        cfg.paths.secondary_root = Some(b);
        cfg.paths.output_dir = dir.path().join("out");
        let data = load_data(&cfg).unwrap();
        assert_eq!(data.train.len() + data.val.len(), 30);
        let sec = data.secondary.unwrap();
        assert_eq!(sec.len(), 5);
        assert!(sec.ids.iter().all(|i| i.starts_with(SECONDARY_PREFIX)));
        assert!(cfg.output_path("dataset.csv").is_file());
    }
}
