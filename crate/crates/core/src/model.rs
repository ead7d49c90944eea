//! Backbone + head + prototype bundle, its checkpoint format and the
//! manifold monitor built on it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig, FeatureBatch};
use crate::container::Container;
use crate::error::{ensure, Error, Result};
use crate::head::{ManifoldHead, ProjectionConfig};
use crate::imagebuf::ImageBuffer;
use crate::nn::ParamSet;
use crate::prototype::{MonitorScore, PristinePrototype};

pub const CHECKPOINT_FORMAT: &str = "degmon-manifold/1";
/// Images per forward pass when encoding without gradients.
pub const ENCODE_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub input_size: usize,
    pub backbone: BackboneConfig,
    pub head: ProjectionConfig,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            input_size: 64,
            backbone: BackboneConfig::default(),
            head: ProjectionConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ManifoldModel {
    pub spec: ModelSpec,
    pub backbone: Backbone,
    pub head: ManifoldHead,
    pub prototype: Option<PristinePrototype>,
    /// Hash of the run configuration that produced the model.
    pub config_hash: String,
}

impl ManifoldModel {
    pub fn new(spec: ModelSpec, init_seed: u64) -> Result<Self> {
        let backbone = Backbone::new(spec.backbone.clone(), spec.input_size, init_seed)?;
        let head = ManifoldHead::new(spec.head.clone(), &backbone.tap_config(), init_seed)?;
        Ok(Self {
            spec,
            backbone,
            head,
            prototype: None,
            config_hash: String::new(),
        })
    }

    pub fn input_size(&self) -> usize {
        self.spec.input_size
    }

    /// Resizes to the model resolution when needed.
    pub fn prepare(&self, img: &ImageBuffer) -> Result<ImageBuffer> {
        let s = self.spec.input_size;
        if img.height() == s && img.width() == s {
            Ok(img.clone())
        } else {
            img.resize(s, s)
        }
    }

    /// Embeddings of images already at the model resolution.
    pub fn embed_prepared(&self, images: &[&ImageBuffer]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(ENCODE_CHUNK) {
            let (feats, _) = self.backbone.forward_batch(chunk, false)?;
            out.extend(self.head.forward_batch(&feats, false)?.0);
        }
        Ok(out)
    }

    pub fn embed(&self, images: &[ImageBuffer]) -> Result<Vec<Vec<f64>>> {
        let prepared = images.iter().map(|i| self.prepare(i)).collect::<Result<Vec<_>>>()?;
        self.embed_prepared(&prepared.iter().collect::<Vec<_>>())
    }

    pub fn features(&self, images: &[&ImageBuffer]) -> Result<FeatureBatch> {
        Ok(self.backbone.forward_batch(images, false)?.0)
    }

    pub fn prototype(&self) -> Result<&PristinePrototype> {
        self.prototype
            .as_ref()
            .filter(|p| p.is_initialized())
            .ok_or_else(|| Error::State("model has no initialized pristine prototype".into()))
    }

    pub fn score(&self, images: &[ImageBuffer]) -> Result<Vec<MonitorScore>> {
        let proto = self.prototype()?;
        self.embed(images)?.iter().map(|z| proto.degradation_score(z)).collect()
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        c.put_str("format", CHECKPOINT_FORMAT)?;
        c.put_str(
            "spec",
            &serde_json::to_string(&self.spec).map_err(|e| Error::Format(e.to_string()))?,
        )?;
        c.put_str("config_hash", &self.config_hash)?;
        for ps in [self.backbone.params(), self.head.params()] {
            put_params(&mut c, ps)?;
        }
        if let Some(p) = &self.prototype {
            p.save_into(&mut c)?;
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let format = c.str("format")?;
        ensure!(format == CHECKPOINT_FORMAT, Format, "unsupported checkpoint format '{format}'");
        let spec: ModelSpec = serde_json::from_str(&c.str("spec")?)
            .map_err(|e| Error::Format(format!("bad model spec in checkpoint: {e}")))?;
        let mut model = Self::new(spec, 0)?;
        model.backbone.params_mut().load_from(|n| c.f64(n).ok())?;
        model.head.params_mut().load_from(|n| c.f64(n).ok())?;
        model.config_hash = c.str("config_hash")?;
        if c.contains(crate::prototype::PROTOTYPE_ARRAY) {
            model.prototype = Some(PristinePrototype::load_from(c)?);
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

pub(crate) fn put_params(c: &mut Container, ps: &ParamSet) -> Result<()> {
    for p in ps.iter() {
        c.put_f64(p.name.clone(), &p.shape, p.data.clone())?;
    }
    Ok(())
}
