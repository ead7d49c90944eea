//! Image sets and the on-disk dataset manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::imagebuf::ImageBuffer;
use crate::seed::SeedHasher;

/// Images with stable identifiers, in a fixed order.
#[derive(Debug, Clone, Default)]
pub struct ImageSet {
    pub ids: Vec<String>,
    pub images: Vec<ImageBuffer>,
}

impl ImageSet {
    pub fn new(ids: Vec<String>, images: Vec<ImageBuffer>) -> Result<Self> {
        ensure!(ids.len() == images.len(), Validation, "{} ids for {} images", ids.len(), images.len());
        Ok(Self { ids, images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Subset in the given index order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&ImageBuffer> {
        self.ids.iter().position(|i| i == id).map(|p| &self.images[p])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub image_id: String,
    pub relpath: String,
    pub split: Split,
    pub dataset_tag: String,
}

/// How images are assigned to splits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitRule {
    /// Hash-based: roughly this fraction of ids goes to validation.
    ValFraction(f64),
    All(Split),
}

impl SplitRule {
    fn assign(&self, image_id: &str) -> Split {
        match *self {
            SplitRule::All(s) => s,
            SplitRule::ValFraction(f) => {
                let h = SeedHasher::new(0).str("split").str(image_id).finish();
                if ((h % 1_000_000) as f64) < f * 1_000_000.0 {
                    Split::Val
                } else {
                    Split::Train
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub rows: Vec<ManifestRow>,
}

/// An input file that could not be decoded.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: String,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else if is_image(&path) {
            out.push(path);
        }
    }
    Ok(())
}

/// Image id derived from the path relative to the dataset root.
pub fn image_id_for(relpath: &str) -> String {
    let stem = relpath.rsplit_once('.').map(|(s, _)| s).unwrap_or(relpath);
    stem.replace(['/', '\\'], "__").replace(',', "_")
}

/// Scans `root` for PNG/JPEG files (sorted by relative path). Undecodable
/// files are skipped and reported.
pub fn ingest(root: &Path, rule: SplitRule, dataset_tag: &str) -> Result<(DatasetManifest, Vec<SkippedFile>)> {
    let mut files = Vec::new();
    collect_files(root, &mut files)?;
    let mut rel: Vec<(String, PathBuf)> = files
        .into_iter()
        .map(|p| {
            let r = p.strip_prefix(root).unwrap_or(&p).to_string_lossy().replace('\\', "/");
            (r, p)
        })
        .collect();
    rel.sort();
    ensure!(!rel.is_empty(), Validation, "no PNG/JPEG images found under {}", root.display());
    let mut rows = Vec::with_capacity(rel.len());
    let mut skipped = Vec::new();
    for (relpath, path) in rel {
        if let Err(e) = ImageBuffer::load(&path) {
            log::warn!("skipping {}: {e}", path.display());
            skipped.push(SkippedFile {
                path,
                reason: e.to_string(),
            });
            continue;
        }
        let image_id = image_id_for(&relpath);
        rows.push(ManifestRow {
            split: rule.assign(&image_id),
            image_id,
            relpath,
            dataset_tag: dataset_tag.to_string(),
        });
    }
    let manifest = DatasetManifest { rows };
    manifest.check_unique()?;
    Ok((manifest, skipped))
}

impl DatasetManifest {
    fn check_unique(&self) -> Result<()> {
        let mut ids: Vec<&str> = self.rows.iter().map(|r| r.image_id.as_str()).collect();
        ids.sort_unstable();
        let n = ids.len();
        ids.dedup();
        ensure!(ids.len() == n, Validation, "dataset manifest has duplicate image ids");
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        for row in &self.rows {
            w.serialize(row).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<ManifestRow>, _>>()
            .map_err(|e| csv_error(path, e))?;
        let m = Self { rows };
        m.check_unique()?;
        Ok(m)
    }

    /// Loads the images of one split (or all when `split` is `None`).
    pub fn load(&self, root: &Path, split: Option<Split>) -> Result<ImageSet> {
        let rows: Vec<&ManifestRow> = self.rows.iter().filter(|r| split.is_none_or(|s| r.split == s)).collect();
        let missing: Vec<PathBuf> = rows
            .iter()
            .map(|r| root.join(&r.relpath))
            .filter(|p| !p.is_file())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingFiles(missing));
        }
        let mut set = ImageSet::default();
        for r in rows {
            set.images.push(ImageBuffer::load(&root.join(&r.relpath))?);
            set.ids.push(r.image_id.clone());
        }
        Ok(set)
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{self, SceneStyle};

    #[test]
    fn ingest_skips_corrupt_files_and_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        synth::write_dataset(dir.path(), "img", 10, 16, 1, SceneStyle::Shapes).unwrap();
        let bad = dir.path().join("img_00003.png");
        let bytes = std::fs::read(&bad).unwrap();
        std::fs::write(&bad, &bytes[..bytes.len() / 3]).unwrap();
        let (m, skipped) = ingest(dir.path(), SplitRule::ValFraction(0.3), "synth").unwrap();
        assert_eq!(m.rows.len(), 9);
        assert_eq!(skipped.len(), 1);
        assert!(m.rows.windows(2).all(|w| w[0].relpath < w[1].relpath));

        let out = tempfile::tempdir().unwrap();
        let (p1, p2) = (out.path().join("a.csv"), out.path().join("b.csv"));
        m.write(&p1).unwrap();
        ingest(dir.path(), SplitRule::ValFraction(0.3), "synth").unwrap().0.write(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(DatasetManifest::read(&p1).unwrap(), m);

        let all = m.load(dir.path(), None).unwrap();
        assert_eq!(all.len(), 9);
        let train = m.load(dir.path(), Some(Split::Train)).unwrap();
        let val = m.load(dir.path(), Some(Split::Val)).unwrap();
        assert_eq!(train.len() + val.len(), 9);
    }

    #[test]
    fn empty_directory_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            ingest(dir.path(), SplitRule::All(Split::Train), "x"),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn missing_files_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest {
            rows: vec![ManifestRow {
                image_id: "a".into(),
                relpath: "a.png".into(),
                split: Split::Train,
                dataset_tag: "t".into(),
            }],
        };
        match m.load(dir.path(), None) {
            Err(Error::MissingFiles(p)) => assert_eq!(p, [dir.path().join("a.png")]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ids_are_file_name_safe() {
        assert_eq!(image_id_for("sub/dir/x.png"), "sub__dir__x");
        assert_eq!(image_id_for("a,b.jpg"), "a_b");
    }
}
