use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{apply_operator, Ladder, OpKind, LEVELS};
use crate::error::{ensure, Error, Result};
use crate::imagebuf::ImageBuffer;
use crate::seed::SeedHasher;

/// One degraded image of the benchmark; CSV column order is the field order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkEntry {
    pub image_id: String,
    pub corruption_id: String,
    pub severity: usize,
    pub relpath: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeverityBenchmark {
    pub entries: Vec<BenchmarkEntry>,
    pub corruption_set: Vec<String>,
    pub levels: Vec<usize>,
}

/// Round-robin assignment: the i-th image in sorted id order gets
/// `corruption_set[i % K]` at every severity level.
pub fn build_severity_benchmark(
    image_ids: &[String],
    corruption_set: &[String],
    levels: &[usize],
    seed: u64,
) -> Result<SeverityBenchmark> {
    ensure!(!image_ids.is_empty(), Validation, "benchmark image manifest is empty");
    ensure!(!corruption_set.is_empty(), Validation, "benchmark corruption set is empty");
    ensure!(!levels.is_empty(), Validation, "benchmark needs at least one severity level");
    for &l in levels {
        ensure!((1..=LEVELS).contains(&l), Validation, "severity {l} outside 1..={LEVELS}");
    }
    for id in image_ids {
        ensure!(
            !id.is_empty() && !id.contains(['/', '\\', ',']) && id != "." && id != "..",
            Validation,
            "image id '{id}' cannot be used as a file name"
        );
    }
    let mut ids: Vec<&String> = image_ids.iter().collect();
    ids.sort();
    let before = ids.len();
    ids.dedup();
    ensure!(ids.len() == before, Validation, "benchmark image ids must be unique");

    let mut entries = Vec::with_capacity(ids.len() * levels.len());
    for &severity in levels {
        for (i, id) in ids.iter().enumerate() {
            let corruption = &corruption_set[i % corruption_set.len()];
            let entry_seed = SeedHasher::new(seed).str("benchmark").str(id).str(corruption).finish();
            entries.push(BenchmarkEntry {
                image_id: (*id).clone(),
                corruption_id: corruption.clone(),
                severity,
                relpath: format!("sev{severity}/{corruption}/{id}.png"),
                seed: entry_seed,
            });
        }
    }
    Ok(SeverityBenchmark {
        entries,
        corruption_set: corruption_set.to_vec(),
        levels: levels.to_vec(),
    })
}

impl SeverityBenchmark {
    pub fn at_severity(&self, severity: usize) -> impl Iterator<Item = &BenchmarkEntry> {
        self.entries.iter().filter(move |e| e.severity == severity)
    }

    /// Renders one entry in memory.
    pub fn render(
        entry: &BenchmarkEntry,
        pristine: &ImageBuffer,
        ladders: &BTreeMap<String, Ladder>,
    ) -> Result<ImageBuffer> {
        let op: OpKind = entry.corruption_id.parse()?;
        let ladder = ladders
            .get(&entry.corruption_id)
            .ok_or_else(|| Error::Config(format!("no ladder for corruption '{}'", entry.corruption_id)))?;
        apply_operator(pristine, op, ladder.level(entry.severity), entry.seed)
    }

    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        for entry in &self.entries {
            writer.serialize(entry).map_err(|e| csv_err(path, e))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_manifest(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
        ensure!(
            headers.iter().collect::<Vec<_>>() == ["image_id", "corruption_id", "severity", "relpath", "seed"],
            Format,
            "{} does not carry the benchmark manifest header",
            path.display()
        );
        let entries = reader
            .deserialize()
            .collect::<std::result::Result<Vec<BenchmarkEntry>, _>>()
            .map_err(|e| csv_err(path, e))?;
        let mut corruption_set: Vec<String> = Vec::new();
        let mut levels: Vec<usize> = Vec::new();
        for e in &entries {
            if !corruption_set.contains(&e.corruption_id) {
                corruption_set.push(e.corruption_id.clone());
            }
            if !levels.contains(&e.severity) {
                levels.push(e.severity);
            }
        }
        levels.sort_unstable();
        Ok(Self {
            entries,
            corruption_set,
            levels,
        })
    }
}

/// Writes every degraded image under `root` and the manifest to `root/manifest.csv`.
/// `pristine` resolves an image id to its clean raster.
pub fn materialize_benchmark(
    bench: &SeverityBenchmark,
    root: &Path,
    ladders: &BTreeMap<String, Ladder>,
    mut pristine: impl FnMut(&str) -> Result<ImageBuffer>,
) -> Result<PathBuf> {
    let mut cache: Option<(String, ImageBuffer)> = None;
    for entry in &bench.entries {
        let clean = match &cache {
            Some((id, img)) if *id == entry.image_id => img.clone(),
            _ => {
                let img = pristine(&entry.image_id)?;
                cache = Some((entry.image_id.clone(), img.clone()));
                img
            }
        };
        let degraded = SeverityBenchmark::render(entry, &clean, ladders)?;
        degraded.save_png(&root.join(&entry.relpath))?;
    }
    let manifest = root.join("manifest.csv");
    bench.write_manifest(&manifest)?;
    Ok(manifest)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}
