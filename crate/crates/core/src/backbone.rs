//! Small trainable convolutional feature extractor with designated tap
//! stages, plus import of externally computed feature maps.
//!
//! Every stage is a stride-2 3×3 convolution followed by SiLU, so the tap
//! after stage `k` has spatial stride `2^k`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{ensure, Error, Result};
use crate::imagebuf::ImageBuffer;
use crate::nn::{silu, silu_grad, Conv3x3, ConvCache, ParamSet};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    /// Output channels per stage.
    pub widths: Vec<usize>,
    /// 1-based stage indices whose activations are read out.
    pub taps: Vec<usize>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            widths: vec![16, 32, 64, 96, 128],
            taps: vec![1, 2, 3, 5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapSpec {
    pub stage_index: usize,
    pub channels: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureTapConfig {
    pub taps: Vec<TapSpec>,
}

impl FeatureTapConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.taps.len() >= 2, Config, "at least two taps are required, got {}", self.taps.len());
        ensure!(
            self.taps.windows(2).all(|w| w[0].stride < w[1].stride),
            Config,
            "tap strides must be strictly increasing"
        );
        ensure!(self.taps.iter().all(|t| t.channels > 0), Config, "tap channel counts must be positive");
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// Spatial size of every tap for a square input.
    pub fn spatial_sizes(&self, input_size: usize) -> Vec<usize> {
        self.taps.iter().map(|t| input_size.div_ceil(t.stride)).collect()
    }
}

/// Activation map of one image at one tap, `channels × height × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapSet {
    pub maps: Vec<FeatureMap>,
}

impl FeatureMapSet {
    /// Checks map count and per-tap shapes against a tap configuration.
    pub fn check(&self, taps: &FeatureTapConfig, input_size: usize) -> Result<()> {
        ensure!(
            self.maps.len() == taps.len(),
            Format,
            "expected {} feature maps, got {}",
            taps.len(),
            self.maps.len()
        );
        for (l, (m, (t, s))) in self
            .maps
            .iter()
            .zip(taps.taps.iter().zip(taps.spatial_sizes(input_size)))
            .enumerate()
        {
            ensure!(
                m.channels == t.channels && m.height == s && m.width == s,
                Format,
                "tap {} has shape {}x{}x{}, expected {}x{s}x{s}",
                l + 1,
                m.channels,
                m.height,
                m.width,
                t.channels
            );
        }
        Ok(())
    }

    /// Stores maps as `tap1..tapL` f64 arrays of shape `[C, H, W]`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut c = Container::new();
        for (l, m) in self.maps.iter().enumerate() {
            c.put_f64(format!("tap{}", l + 1), &[m.channels, m.height, m.width], m.data.clone())?;
        }
        c.write(path)
    }
}

/// Batch of tap activations, each `channels × n × height × width`.
#[derive(Debug, Clone)]
pub struct FeatureBatch {
    pub n: usize,
    pub maps: Vec<FeatureMap>,
}

impl FeatureBatch {
    /// Splits out the maps of sample `i`.
    pub fn sample(&self, i: usize) -> FeatureMapSet {
        let maps = self
            .maps
            .iter()
            .map(|m| {
                let plane = m.height * m.width;
                let mut data = Vec::with_capacity(m.channels * plane);
                for c in 0..m.channels {
                    let start = (c * self.n + i) * plane;
                    data.extend_from_slice(&m.data[start..start + plane]);
                }
                FeatureMap {
                    channels: m.channels,
                    height: m.height,
                    width: m.width,
                    data,
                }
            })
            .collect();
        FeatureMapSet { maps }
    }

    /// Stacks per-image sets into batch layout.
    pub fn from_samples(samples: &[FeatureMapSet]) -> Result<Self> {
        ensure!(!samples.is_empty(), Validation, "empty feature batch");
        let n = samples.len();
        let proto = &samples[0];
        let mut maps = Vec::with_capacity(proto.maps.len());
        for (l, pm) in proto.maps.iter().enumerate() {
            let plane = pm.height * pm.width;
            let mut data = vec![0.0; pm.channels * n * plane];
            for (i, s) in samples.iter().enumerate() {
                let m = s
                    .maps
                    .get(l)
                    .filter(|m| m.channels == pm.channels && m.height == pm.height && m.width == pm.width)
                    .ok_or_else(|| Error::Validation("feature sets in a batch must share shapes".into()))?;
                for c in 0..pm.channels {
                    let dst = (c * n + i) * plane;
                    data[dst..dst + plane].copy_from_slice(&m.data[c * plane..(c + 1) * plane]);
                }
            }
            maps.push(FeatureMap {
                channels: pm.channels,
                height: pm.height,
                width: pm.width,
                data,
            });
        }
        Ok(Self { n, maps })
    }
}

/// Saved intermediates for the backward pass.
#[derive(Debug)]
pub struct BackboneCache {
    stages: Vec<(ConvCache, Vec<f64>)>,
}

#[derive(Debug, Clone)]
pub struct Backbone {
    cfg: BackboneConfig,
    input_size: usize,
    convs: Vec<Conv3x3>,
    params: ParamSet,
}

impl Backbone {
    pub fn new(cfg: BackboneConfig, input_size: usize, init_seed: u64) -> Result<Self> {
        ensure!(!cfg.widths.is_empty(), Config, "backbone needs at least one stage");
        ensure!(cfg.widths.iter().all(|&w| w > 0), Config, "stage widths must be positive");
        ensure!(
            cfg.taps.iter().all(|&t| (1..=cfg.widths.len()).contains(&t)),
            Config,
            "tap stages must lie in 1..={}",
            cfg.widths.len()
        );
        ensure!(input_size >= 2, Config, "input size must be at least 2");
        let mut rng = seed::rng(seed::derive(init_seed, "backbone-init"));
        let mut params = ParamSet::new();
        let mut convs = Vec::with_capacity(cfg.widths.len());
        let mut in_ch = 3;
        for (s, &w) in cfg.widths.iter().enumerate() {
            convs.push(Conv3x3::new(&mut params, &format!("backbone.stage{}", s + 1), in_ch, w, 2, &mut rng));
            in_ch = w;
        }
        let bb = Self {
            cfg,
            input_size,
            convs,
            params,
        };
        bb.tap_config().validate()?;
        Ok(bb)
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.cfg
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn tap_config(&self) -> FeatureTapConfig {
        FeatureTapConfig {
            taps: self
                .cfg
                .taps
                .iter()
                .map(|&s| TapSpec {
                    stage_index: s,
                    channels: self.cfg.widths[s - 1],
                    stride: 1 << s,
                })
                .collect(),
        }
    }

    fn stages_needed(&self) -> usize {
        self.cfg.taps.iter().copied().max().unwrap_or(0)
    }

    /// Planar batch input `3 × n × H × W` from images at the configured resolution.
    fn stack_input(&self, images: &[&ImageBuffer]) -> Result<Vec<f64>> {
        let s = self.input_size;
        let n = images.len();
        let plane = s * s;
        let mut x = vec![0.0; 3 * n * plane];
        for (i, img) in images.iter().enumerate() {
            ensure!(
                img.height() == s && img.width() == s,
                Validation,
                "backbone expects {s}x{s} input, got {}x{}",
                img.height(),
                img.width()
            );
            for (p, px) in img.data().chunks_exact(3).enumerate() {
                for c in 0..3 {
                    x[(c * n + i) * plane + p] = px[c];
                }
            }
        }
        Ok(x)
    }

    /// Forward pass over a batch; keeps intermediates when `keep_cache`.
    pub fn forward_batch(
        &self,
        images: &[&ImageBuffer],
        keep_cache: bool,
    ) -> Result<(FeatureBatch, Option<BackboneCache>)> {
        ensure!(!images.is_empty(), Validation, "empty image batch");
        let n = images.len();
        let mut x = self.stack_input(images)?;
        let (mut h, mut w) = (self.input_size, self.input_size);
        let mut maps = Vec::with_capacity(self.cfg.taps.len());
        let mut stages = Vec::new();
        for (s, conv) in self.convs.iter().take(self.stages_needed()).enumerate() {
            let (pre, cache) = conv.forward(&self.params, &x, n, h, w);
            (h, w) = conv.out_size(h, w);
            let act: Vec<f64> = pre.iter().map(|&v| silu(v)).collect();
            if self.cfg.taps.contains(&(s + 1)) {
                maps.push(FeatureMap {
                    channels: conv.out_ch,
                    height: h,
                    width: w,
                    data: act.clone(),
                });
            }
            if keep_cache {
                stages.push((cache, pre));
            }
            x = act;
        }
        let cache = keep_cache.then_some(BackboneCache { stages });
        Ok((FeatureBatch { n, maps }, cache))
    }

    /// Backpropagates tap gradients (same layout as the forward maps) into `grads`.
    pub fn backward(&self, cache: &BackboneCache, tap_grads: &[Vec<f64>], grads: &mut [Vec<f64>]) {
        let mut upstream: Option<Vec<f64>> = None;
        for s in (0..cache.stages.len()).rev() {
            let (conv_cache, pre) = &cache.stages[s];
            let mut dact = upstream.take().unwrap_or_else(|| vec![0.0; pre.len()]);
            if let Some(t) = self.cfg.taps.iter().position(|&tap| tap == s + 1) {
                for (d, g) in dact.iter_mut().zip(&tap_grads[t]) {
                    *d += g;
                }
            }
            for (d, &p) in dact.iter_mut().zip(pre) {
                *d *= silu_grad(p);
            }
            upstream = self.convs[s].backward(&self.params, conv_cache, &dact, grads, s > 0);
        }
    }

    pub fn extract_features(&self, img: &ImageBuffer) -> Result<FeatureMapSet> {
        let (batch, _) = self.forward_batch(&[img], false)?;
        Ok(batch.sample(0))
    }
}

/// Reads `tap1..tapL` arrays from a container and checks them against `taps`.
/// Unknown extra arrays are ignored with a warning.
pub fn load_external_features(path: &Path, taps: &FeatureTapConfig, input_size: usize) -> Result<FeatureMapSet> {
    let container = Container::read(path)?;
    let expected: Vec<String> = (1..=taps.len()).map(|l| format!("tap{l}")).collect();
    for name in container.names() {
        if !expected.iter().any(|e| e == name) {
            log::warn!("{}: ignoring extra array '{name}'", path.display());
        }
    }
    let mut maps = Vec::with_capacity(taps.len());
    for name in &expected {
        let (shape, data) = container
            .f64(name)
            .map_err(|_| Error::Format(format!("{}: missing feature array '{name}'", path.display())))?;
        ensure!(shape.len() == 3, Format, "{}: '{name}' must be 3-dimensional", path.display());
        maps.push(FeatureMap {
            channels: shape[0],
            height: shape[1],
            width: shape[2],
            data: data.to_vec(),
        });
    }
    let set = FeatureMapSet { maps };
    set.check(taps, input_size)?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{self, SceneStyle};

    fn cfg() -> BackboneConfig {
        BackboneConfig {
            widths: vec![4, 6, 8, 8],
            taps: vec![1, 2, 3, 4],
        }
    }

    #[test]
    fn tap_shapes_follow_strides() {
        let bb = Backbone::new(cfg(), 64, 0).unwrap();
        let img = synth::generate(1, 64, SceneStyle::Shapes).unwrap();
        let fm = bb.extract_features(&img).unwrap();
        let sizes: Vec<usize> = fm.maps.iter().map(|m| m.height).collect();
        assert_eq!(sizes, [32, 16, 8, 4]);
        fm.check(&bb.tap_config(), 64).unwrap();
        let strides: Vec<usize> = bb.tap_config().taps.iter().map(|t| t.stride).collect();
        assert_eq!(strides, [2, 4, 8, 16]);
    }

    #[test]
    fn default_layout_taps_stages_one_two_three_five() {
        let bb = Backbone::new(BackboneConfig::default(), 64, 0).unwrap();
        let tc = bb.tap_config();
        let chans: Vec<usize> = tc.taps.iter().map(|t| t.channels).collect();
        assert_eq!(chans, [16, 32, 64, 128]);
        assert_eq!(tc.spatial_sizes(64), [32, 16, 8, 2]);
    }

    #[test]
    fn rejects_wrong_resolution_and_bad_taps() {
        let bb = Backbone::new(cfg(), 32, 0).unwrap();
        let img = ImageBuffer::filled(16, 16, [0.5; 3]).unwrap();
        assert!(matches!(bb.extract_features(&img), Err(Error::Validation(_))));
        let single = BackboneConfig {
            widths: vec![4, 4],
            taps: vec![2],
        };
        assert!(Backbone::new(single, 32, 0).is_err());
        let unordered = BackboneConfig {
            widths: vec![4, 4, 4],
            taps: vec![3, 1],
        };
        assert!(Backbone::new(unordered, 32, 0).is_err());
    }

    #[test]
    fn zero_image_gives_zero_maps() {
        let bb = Backbone::new(cfg(), 16, 3).unwrap();
        let img = ImageBuffer::filled(16, 16, [0.0; 3]).unwrap();
        let fm = bb.extract_features(&img).unwrap();
        assert!(fm.maps.iter().all(|m| m.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn single_pixel_change_reaches_finest_tap() {
        let bb = Backbone::new(cfg(), 32, 3).unwrap();
        let img = synth::generate(4, 32, SceneStyle::Shapes).unwrap();
        let mut data = img.data().to_vec();
        data[(10 * 32 + 10) * 3] = 1.0 - data[(10 * 32 + 10) * 3];
        let other = ImageBuffer::new(32, 32, data).unwrap();
        let a = bb.extract_features(&img).unwrap();
        let b = bb.extract_features(&other).unwrap();
        assert_ne!(a.maps[0], b.maps[0]);
    }

    #[test]
    fn batch_forward_equals_per_image_forward() {
        let bb = Backbone::new(cfg(), 16, 1).unwrap();
        let imgs: Vec<ImageBuffer> = (0..3).map(|i| synth::generate(i, 16, SceneStyle::Shapes).unwrap()).collect();
        let refs: Vec<&ImageBuffer> = imgs.iter().collect();
        let (batch, _) = bb.forward_batch(&refs, false).unwrap();
        for (i, img) in imgs.iter().enumerate() {
            let single = bb.extract_features(img).unwrap();
            for (a, b) in batch.sample(i).maps.iter().zip(&single.maps) {
                for (x, y) in a.data.iter().zip(&b.data) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
        let restacked = FeatureBatch::from_samples(&(0..3).map(|i| batch.sample(i)).collect::<Vec<_>>()).unwrap();
        assert_eq!(restacked.maps, batch.maps);
    }

    #[test]
    fn external_features_round_trip_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let bb = Backbone::new(cfg(), 16, 2).unwrap();
        let img = synth::generate(9, 16, SceneStyle::Shapes).unwrap();
        let fm = bb.extract_features(&img).unwrap();
        let path = dir.path().join("f.dmna");
        fm.save(&path).unwrap();
        let back = load_external_features(&path, &bb.tap_config(), 16).unwrap();
        assert_eq!(back, fm);

        // extras are ignored
        let mut c = Container::read(&path).unwrap();
        c.put_f64("logits", &[2], vec![0.0, 1.0]).unwrap();
        c.write(&path).unwrap();
        assert_eq!(load_external_features(&path, &bb.tap_config(), 16).unwrap(), fm);

        // a missing tap is named in the error
        let mut partial = Container::new();
        for (l, m) in fm.maps.iter().enumerate().filter(|(l, _)| *l != 2) {
            partial
                .put_f64(format!("tap{}", l + 1), &[m.channels, m.height, m.width], m.data.clone())
                .unwrap();
        }
        partial.write(&path).unwrap();
        match load_external_features(&path, &bb.tap_config(), 16) {
            Err(Error::Format(msg)) => assert!(msg.contains("tap3"), "{msg}"),
            other => panic!("expected format error, got {other:?}"),
        }

        // wrong shape
        let mut bad = Container::new();
        for (l, m) in fm.maps.iter().enumerate() {
            let ch = if l == 0 { m.channels + 1 } else { m.channels };
            bad.put_f64(format!("tap{}", l + 1), &[ch, m.height, m.width], vec![0.0; ch * m.height * m.width])
                .unwrap();
        }
        bad.write(&path).unwrap();
        assert!(matches!(
            load_external_features(&path, &bb.tap_config(), 16),
            Err(Error::Format(_))
        ));
    }
}
