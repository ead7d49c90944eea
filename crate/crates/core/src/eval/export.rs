use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::report::ensure_parent;
use crate::container::Container;
use crate::error::{ensure, Error, Result};
use crate::imagebuf::ImageBuffer;
use crate::model::ManifoldModel;

/// Corruption tag of pristine rows.
pub const PRISTINE_TAG: &str = "none";

/// Per-image metadata written to the sidecar CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub image_id: String,
    pub dataset: String,
    pub corruption: String,
    /// 0 for pristine images.
    pub severity: usize,
}

impl EmbeddingRecord {
    pub fn pristine(image_id: impl Into<String>, dataset: impl Into<String>) -> Self {
        Self {
            image_id: image_id.into(),
            dataset: dataset.into(),
            corruption: PRISTINE_TAG.to_string(),
            severity: 0,
        }
    }
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("csv")
}

/// Embeds `images` and writes an `[n, D]` array named `embeddings` to
/// `path`, plus `<path>.csv` with one metadata row per image. Returns the
/// sidecar path.
pub fn export_embeddings(
    model: &ManifoldModel,
    images: &[ImageBuffer],
    records: &[EmbeddingRecord],
    path: &Path,
) -> Result<PathBuf> {
    ensure!(!images.is_empty(), Validation, "nothing to export");
    ensure!(
        images.len() == records.len(),
        Validation,
        "{} metadata records for {} images",
        records.len(),
        images.len()
    );
    let z = model.embed(images)?;
    let dim = z[0].len();
    let mut c = Container::new();
    c.put_f64("embeddings", &[z.len(), dim], z.concat())?;
    c.put_str("config_hash", &model.config_hash)?;
    ensure_parent(path)?;
    c.write(path)?;

    let meta = sidecar(path);
    let mut w = csv::Writer::from_path(&meta).map_err(|e| Error::Format(format!("{}: {e}", meta.display())))?;
    for r in records {
        w.serialize(r).map_err(|e| Error::Format(format!("{}: {e}", meta.display())))?;
    }
    w.flush().map_err(|e| Error::io(&meta, e))?;
    Ok(meta)
}

/// Reads an export back as row vectors and metadata.
pub fn read_embeddings(path: &Path) -> Result<(Vec<Vec<f64>>, Vec<EmbeddingRecord>)> {
    let c = Container::read(path)?;
    let (shape, data) = c.f64("embeddings")?;
    ensure!(shape.len() == 2, Format, "embeddings must be a 2-d array");
    let rows: Vec<Vec<f64>> = data.chunks(shape[1].max(1)).map(<[f64]>::to_vec).collect();
    let meta = sidecar(path);
    let mut r = csv::Reader::from_path(&meta).map_err(|e| Error::Format(format!("{}: {e}", meta.display())))?;
    let records = r
        .deserialize()
        .collect::<std::result::Result<Vec<EmbeddingRecord>, _>>()
        .map_err(|e| Error::Format(format!("{}: {e}", meta.display())))?;
    ensure!(
        records.len() == shape[0],
        Format,
        "{} metadata rows for {} embeddings",
        records.len(),
        shape[0]
    );
    Ok((rows, records))
}
