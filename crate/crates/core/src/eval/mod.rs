//! Separability metrics, benchmark protocols, reports and embedding export.

mod export;
mod metrics;
mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub use export::{export_embeddings, read_embeddings, EmbeddingRecord, PRISTINE_TAG};
pub use metrics::{auroc, pooled_stats, rate_at_operating_point, z_score_normalize, OperatingPoint, ScoreSet};
pub use report::{BenchmarkReport, ReportRow, CSV_HEADER, REPORT_SCHEMA_VERSION};

use crate::dataset::ImageSet;
use crate::degrade::{build_severity_benchmark, BenchmarkEntry, Ladder, OpKind, SeverityBenchmark};
use crate::error::{ensure, Error, Result};
use crate::flow::{pool_batch, FlowBaseline};
use crate::imagebuf::ImageBuffer;
use crate::model::{ManifoldModel, ENCODE_CHUNK};
use crate::seed;

/// Label used for round-robin (mixed-corruption) rows.
pub const MIXED: &str = "mixed";

/// Anything that maps images to scalar scores, larger meaning more degraded.
pub trait Monitor {
    fn id(&self) -> &str;
    fn score_images(&self, images: &[ImageBuffer]) -> Result<Vec<f64>>;
}

/// Prototype-distance monitor.
pub struct ManifoldMonitor<'a> {
    pub id: String,
    pub model: &'a ManifoldModel,
}

impl Monitor for ManifoldMonitor<'_> {
    fn id(&self) -> &str {
        &self.id
    }

    fn score_images(&self, images: &[ImageBuffer]) -> Result<Vec<f64>> {
        Ok(self.model.score(images)?.into_iter().map(|s| s.0).collect())
    }
}

/// Flow likelihood monitor over pooled backbone taps.
pub struct FlowMonitor<'a> {
    pub id: String,
    pub model: &'a ManifoldModel,
    pub baseline: FlowBaseline,
}

impl FlowMonitor<'_> {
    /// Pooled tap features of every image, one list per entry of `layers`.
    pub fn pooled(model: &ManifoldModel, images: &[ImageBuffer], layers: &[usize]) -> Result<Vec<Vec<Vec<f64>>>> {
        let prepared = images.iter().map(|i| model.prepare(i)).collect::<Result<Vec<_>>>()?;
        let mut out = vec![Vec::with_capacity(images.len()); layers.len()];
        for chunk in prepared.chunks(ENCODE_CHUNK) {
            let refs: Vec<&ImageBuffer> = chunk.iter().collect();
            let feats = model.features(&refs)?;
            for (k, &l) in layers.iter().enumerate() {
                out[k].extend(pool_batch(&feats, &[l])?);
            }
        }
        Ok(out)
    }
}

impl Monitor for FlowMonitor<'_> {
    fn id(&self) -> &str {
        &self.id
    }

    fn score_images(&self, images: &[ImageBuffer]) -> Result<Vec<f64>> {
        let per_layer = Self::pooled(self.model, images, self.baseline.layers())?;
        (0..images.len())
            .map(|i| {
                let x: Vec<Vec<f64>> = per_layer.iter().map(|l| l[i].clone()).collect();
                self.baseline.score(&x)
            })
            .collect()
    }
}

/// Monitor backed by a plain function; handy for controls.
pub struct FnMonitor<F> {
    pub id: String,
    pub f: F,
}

impl<F: Fn(&ImageBuffer) -> f64> Monitor for FnMonitor<F> {
    fn id(&self) -> &str {
        &self.id
    }

    fn score_images(&self, images: &[ImageBuffer]) -> Result<Vec<f64>> {
        Ok(images.iter().map(&self.f).collect())
    }
}

/// Where degraded benchmark images come from.
pub enum DegradedSource<'a> {
    /// Rendered on the fly from pristine images, quantized to 8 bits like
    /// the files written by `materialize_benchmark`.
    Render {
        pristine: &'a ImageSet,
        ladders: &'a BTreeMap<String, Ladder>,
    },
    /// Materialized benchmark directory.
    Disk { root: PathBuf },
}

impl DegradedSource<'_> {
    /// Fails with the full list of missing files, if any.
    pub fn check(&self, bench: &SeverityBenchmark) -> Result<()> {
        match self {
            DegradedSource::Render { pristine, .. } => {
                for e in &bench.entries {
                    ensure!(
                        pristine.get(&e.image_id).is_some(),
                        Validation,
                        "no pristine image for benchmark id '{}'",
                        e.image_id
                    );
                }
                Ok(())
            }
            DegradedSource::Disk { root } => {
                let missing: Vec<PathBuf> = bench
                    .entries
                    .iter()
                    .map(|e| root.join(&e.relpath))
                    .filter(|p| !p.is_file())
                    .collect();
                if missing.is_empty() {
                    Ok(())
                } else {
                    Err(Error::MissingFiles(missing))
                }
            }
        }
    }

    pub fn load(&self, entry: &BenchmarkEntry) -> Result<ImageBuffer> {
        match self {
            DegradedSource::Render { pristine, ladders } => {
                let clean = pristine
                    .get(&entry.image_id)
                    .ok_or_else(|| Error::Validation(format!("no pristine image for '{}'", entry.image_id)))?;
                Ok(SeverityBenchmark::render(entry, clean, ladders)?.quantized())
            }
            DegradedSource::Disk { root } => ImageBuffer::load(&root.join(&entry.relpath)),
        }
    }
}

fn score_all(monitor: &dyn Monitor, images: &[ImageBuffer]) -> Result<Vec<f64>> {
    let scores = monitor.score_images(images)?;
    ensure!(
        scores.iter().all(|s| s.is_finite()),
        Numerical,
        "monitor '{}' produced non-finite scores",
        monitor.id()
    );
    Ok(scores)
}

/// One row per severity: all pristine scores against all degraded images of
/// that severity. Pristine scores are computed once and reused.
pub fn severity_sweep(
    monitor: &dyn Monitor,
    bench: &SeverityBenchmark,
    pristine: &ImageSet,
    source: &DegradedSource,
    label: &str,
) -> Result<Vec<ReportRow>> {
    ensure!(!pristine.is_empty(), Validation, "pristine set is empty");
    source.check(bench)?;
    let id_scores = score_all(monitor, &pristine.images)?;
    let mut rows = Vec::with_capacity(bench.levels.len());
    for &severity in &bench.levels {
        let degraded = bench
            .at_severity(severity)
            .map(|e| source.load(e))
            .collect::<Result<Vec<_>>>()?;
        let set = ScoreSet::new(id_scores.clone(), score_all(monitor, &degraded)?)?;
        rows.push(ReportRow::from_scores(monitor.id(), severity, label, &set)?);
    }
    Ok(rows)
}

/// One row per (corruption, severity); every pristine image is degraded by
/// every corruption.
pub fn per_corruption_table(
    monitor: &dyn Monitor,
    corruptions: &[(OpKind, Ladder)],
    levels: &[usize],
    pristine: &ImageSet,
    bench_seed: u64,
) -> Result<Vec<ReportRow>> {
    ensure!(!corruptions.is_empty(), Validation, "corruption set is empty");
    let ladders: BTreeMap<String, Ladder> = corruptions.iter().map(|(op, l)| (op.id().to_string(), *l)).collect();
    let source = DegradedSource::Render {
        pristine,
        ladders: &ladders,
    };
    let id_scores = score_all(monitor, &pristine.images)?;
    let mut rows = Vec::with_capacity(corruptions.len() * levels.len());
    for (op, _) in corruptions {
        let bench = build_severity_benchmark(&pristine.ids, &[op.id().to_string()], levels, bench_seed)?;
        for &severity in levels {
            let degraded = bench
                .at_severity(severity)
                .map(|e| source.load(e))
                .collect::<Result<Vec<_>>>()?;
            let set = ScoreSet::new(id_scores.clone(), score_all(monitor, &degraded)?)?;
            rows.push(ReportRow::from_scores(monitor.id(), severity, op.id(), &set)?);
        }
    }
    Ok(rows)
}

/// `m` indices drawn uniformly without replacement from `0..n`, sorted.
pub fn subsample_indices(n: usize, m: usize, sample_seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed::derive(sample_seed, "subsample")));
    idx.truncate(m.min(n));
    idx.sort_unstable();
    idx
}

/// Mixed-dataset protocol: the larger pristine pool is subsampled to the
/// size of the smaller, the pools are combined, and the combined set is
/// swept against its round-robin degraded counterparts.
pub fn mixed_pool_protocol(
    monitor: &dyn Monitor,
    pool_a: &ImageSet,
    pool_b: &ImageSet,
    corruptions: &[(OpKind, Ladder)],
    levels: &[usize],
    protocol_seed: u64,
) -> Result<(Vec<ReportRow>, ImageSet)> {
    ensure!(!pool_a.is_empty() && !pool_b.is_empty(), Validation, "mixed-pool protocol needs two non-empty pools");
    let m = pool_a.len().min(pool_b.len());
    let take = |pool: &ImageSet| {
        if pool.len() > m {
            pool.select(&subsample_indices(pool.len(), m, protocol_seed))
        } else {
            pool.clone()
        }
    };
    let (a, b) = (take(pool_a), take(pool_b));
    let combined = ImageSet::new(
        a.ids.into_iter().chain(b.ids).collect(),
        a.images.into_iter().chain(b.images).collect(),
    )?;
    let ids: Vec<String> = corruptions.iter().map(|(op, _)| op.id().to_string()).collect();
    let ladders: BTreeMap<String, Ladder> = corruptions.iter().map(|(op, l)| (op.id().to_string(), *l)).collect();
    let bench = build_severity_benchmark(&combined.ids, &ids, levels, protocol_seed)?;
    let rows = severity_sweep(
        monitor,
        &bench,
        &combined,
        &DegradedSource::Render {
            pristine: &combined,
            ladders: &ladders,
        },
        MIXED,
    )?;
    Ok((rows, combined))
}

/// Writes the JSON report and its CSV mirror as `<stem>.json` / `<stem>.csv`.
pub fn write_report(report: &BenchmarkReport, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    let json = dir.join(format!("{stem}.json"));
    let csv = dir.join(format!("{stem}.csv"));
    report.write_json(&json)?;
    report.write_csv(&csv)?;
    Ok((json, csv))
}
