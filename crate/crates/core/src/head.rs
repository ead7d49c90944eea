//! Manifold head: per-tap 1×1 reduction, spatial attention pooling,
//! concatenation across taps and a two-layer MLP projection onto the unit
//! sphere.

use serde::{Deserialize, Serialize};

use crate::backbone::{FeatureBatch, FeatureMap, FeatureMapSet, FeatureTapConfig};
use crate::error::{ensure, Error, Result};
use crate::nn::{gemm, Param, ParamSet};
use crate::seed;

/// Norm below which a projection cannot be normalized.
pub const MIN_PROJECTION_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PoolMode {
    #[default]
    Attention,
    /// Plain global average pooling.
    Gap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionConfig {
    /// Reduced channels per tap.
    pub reduce_dim: usize,
    pub embed_dim: usize,
    pub mlp_hidden: usize,
    pub temperature: f64,
    pub pool: PoolMode,
    /// Read out only the deepest tap.
    pub last_layer_only: bool,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            reduce_dim: 32,
            embed_dim: 64,
            mlp_hidden: 128,
            temperature: 0.1,
            pool: PoolMode::Attention,
            last_layer_only: false,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.reduce_dim >= 1 && self.embed_dim >= 1 && self.mlp_hidden >= 1,
            Config,
            "reduce_dim, embed_dim and mlp_hidden must be at least 1"
        );
        ensure!(
            self.temperature > 0.0 && self.temperature.is_finite(),
            Config,
            "temperature must be positive, got {}",
            self.temperature
        );
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct TapSlots {
    reduce: usize,
    scorer: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ManifoldHead {
    cfg: ProjectionConfig,
    tap_channels: Vec<usize>,
    /// Per backbone tap; `None` when the tap is not read out.
    taps: Vec<Option<TapSlots>>,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    params: ParamSet,
}

#[derive(Debug)]
struct TapCache {
    tap: usize,
    reduced: Vec<f64>,
    weights: Vec<f64>,
    positions: usize,
}

/// Saved intermediates for [`ManifoldHead::backward`].
#[derive(Debug)]
pub struct HeadCache {
    n: usize,
    taps: Vec<TapCache>,
    h: Vec<f64>,
    y1: Vec<f64>,
    r: Vec<f64>,
    norms: Vec<f64>,
    z: Vec<f64>,
}

impl ManifoldHead {
    pub fn new(cfg: ProjectionConfig, taps: &FeatureTapConfig, init_seed: u64) -> Result<Self> {
        cfg.validate()?;
        taps.validate()?;
        let mut rng = seed::rng(seed::derive(init_seed, "head-init"));
        let mut params = ParamSet::new();
        let last = taps.len() - 1;
        let mut slots = Vec::with_capacity(taps.len());
        for (l, t) in taps.taps.iter().enumerate() {
            if cfg.last_layer_only && l != last {
                slots.push(None);
                continue;
            }
            let reduce = params.push(Param::normal(
                format!("head.tap{}.reduce", l + 1),
                &[cfg.reduce_dim, t.channels],
                t.channels,
                1.0,
                &mut rng,
            ));
            let scorer = (cfg.pool == PoolMode::Attention)
                .then(|| params.push(Param::zeros(format!("head.tap{}.scorer", l + 1), &[cfg.reduce_dim])));
            slots.push(Some(TapSlots { reduce, scorer }));
        }
        let used = slots.iter().filter(|s| s.is_some()).count();
        let fused = used * cfg.reduce_dim;
        let w1 = params.push(Param::normal("head.mlp.w1", &[cfg.mlp_hidden, fused], fused, 2f64.sqrt(), &mut rng));
        let b1 = params.push(Param::zeros("head.mlp.b1", &[cfg.mlp_hidden]));
        let w2 = params.push(Param::normal(
            "head.mlp.w2",
            &[cfg.embed_dim, cfg.mlp_hidden],
            cfg.mlp_hidden,
            1.0,
            &mut rng,
        ));
        let b2 = params.push(Param::zeros("head.mlp.b2", &[cfg.embed_dim]));
        Ok(Self {
            cfg,
            tap_channels: taps.taps.iter().map(|t| t.channels).collect(),
            taps: slots,
            w1,
            b1,
            w2,
            b2,
            params,
        })
    }

    pub fn config(&self) -> &ProjectionConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Number of taps feeding the fused descriptor.
    pub fn used_taps(&self) -> usize {
        self.taps.iter().filter(|t| t.is_some()).count()
    }

    pub fn fused_dim(&self) -> usize {
        self.used_taps() * self.cfg.reduce_dim
    }

    pub fn reduce_slot(&self, layer: usize) -> Option<usize> {
        self.taps.get(layer)?.as_ref().map(|t| t.reduce)
    }

    pub fn scorer_slot(&self, layer: usize) -> Option<usize> {
        self.taps.get(layer)?.as_ref()?.scorer
    }

    pub fn mlp_slots(&self) -> [usize; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }

    fn slots(&self, layer: usize) -> Result<&TapSlots> {
        self.taps
            .get(layer)
            .ok_or_else(|| Error::Validation(format!("layer index {layer} out of range")))?
            .as_ref()
            .ok_or_else(|| Error::Validation(format!("layer {layer} is not read out by this head")))
    }

    /// 1×1 convolution of one tap map down to `reduce_dim` channels.
    pub fn reduce_layer(&self, map: &FeatureMap, layer: usize) -> Result<FeatureMap> {
        let slots = self.slots(layer)?;
        ensure!(
            map.channels == self.tap_channels[layer],
            Validation,
            "tap {layer} expects {} channels, got {}",
            self.tap_channels[layer],
            map.channels
        );
        let p = map.height * map.width;
        let d = self.cfg.reduce_dim;
        let mut out = vec![0.0; d * p];
        gemm(d, map.channels, p, 1.0, self.params.data(slots.reduce), false, &map.data, false, 0.0, &mut out);
        Ok(FeatureMap {
            channels: d,
            height: map.height,
            width: map.width,
            data: out,
        })
    }

    /// Softmax-weighted sum of the channel vectors over all positions.
    pub fn attention_pool(&self, reduced: &FeatureMap, layer: usize) -> Result<Vec<f64>> {
        let slots = self.slots(layer)?;
        ensure!(reduced.channels == self.cfg.reduce_dim, Validation, "pooling expects a reduced map");
        let p = reduced.height * reduced.width;
        let weights = match slots.scorer {
            Some(u) => {
                let mut scores = vec![0.0; p];
                gemm(1, reduced.channels, p, 1.0, self.params.data(u), false, &reduced.data, false, 0.0, &mut scores);
                softmax_in_place(&mut scores);
                scores
            }
            None => vec![1.0 / p as f64; p],
        };
        Ok((0..reduced.channels)
            .map(|c| {
                reduced.data[c * p..(c + 1) * p]
                    .iter()
                    .zip(&weights)
                    .map(|(v, w)| v * w)
                    .sum()
            })
            .collect())
    }

    /// Concatenation in tap order.
    pub fn fuse(&self, vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
        fuse(vectors, self.used_taps(), self.cfg.reduce_dim)
    }

    /// MLP followed by ℓ2 normalization.
    pub fn project(&self, h: &[f64]) -> Result<Vec<f64>> {
        ensure!(
            h.len() == self.fused_dim(),
            Validation,
            "descriptor has {} entries, expected {}",
            h.len(),
            self.fused_dim()
        );
        let (hid, dim) = (self.cfg.mlp_hidden, self.cfg.embed_dim);
        let mut y1 = self.params.data(self.b1).to_vec();
        gemm(hid, h.len(), 1, 1.0, self.params.data(self.w1), false, h, false, 1.0, &mut y1);
        y1.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut y2 = self.params.data(self.b2).to_vec();
        gemm(dim, hid, 1, 1.0, self.params.data(self.w2), false, &y1, false, 1.0, &mut y2);
        normalize(y2)
    }

    /// Embedding of a single feature set.
    pub fn embed(&self, fm: &FeatureMapSet) -> Result<Vec<f64>> {
        ensure!(
            fm.maps.len() == self.taps.len(),
            Validation,
            "expected {} feature maps, got {}",
            self.taps.len(),
            fm.maps.len()
        );
        let mut pooled = Vec::with_capacity(self.used_taps());
        for (l, map) in fm.maps.iter().enumerate() {
            if self.taps[l].is_some() {
                pooled.push(self.attention_pool(&self.reduce_layer(map, l)?, l)?);
            }
        }
        self.project(&self.fuse(&pooled)?)
    }

    /// Batched forward; returns one unit vector per sample.
    pub fn forward_batch(&self, feats: &FeatureBatch, keep_cache: bool) -> Result<(Vec<Vec<f64>>, Option<HeadCache>)> {
        ensure!(
            feats.maps.len() == self.taps.len(),
            Validation,
            "expected {} feature maps, got {}",
            self.taps.len(),
            feats.maps.len()
        );
        let n = feats.n;
        let d = self.cfg.reduce_dim;
        let fused = self.fused_dim();
        let mut h = vec![0.0; fused * n];
        let mut tap_caches = Vec::new();
        let mut k = 0;
        for (l, map) in feats.maps.iter().enumerate() {
            let Some(slots) = &self.taps[l] else { continue };
            ensure!(
                map.channels == self.tap_channels[l],
                Validation,
                "tap {l} expects {} channels, got {}",
                self.tap_channels[l],
                map.channels
            );
            let p = map.height * map.width;
            let cols = n * p;
            let mut reduced = vec![0.0; d * cols];
            gemm(d, map.channels, cols, 1.0, self.params.data(slots.reduce), false, &map.data, false, 0.0, &mut reduced);
            let weights = match slots.scorer {
                Some(u) => {
                    let mut s = vec![0.0; cols];
                    gemm(1, d, cols, 1.0, self.params.data(u), false, &reduced, false, 0.0, &mut s);
                    for chunk in s.chunks_exact_mut(p) {
                        softmax_in_place(chunk);
                    }
                    s
                }
                None => vec![1.0 / p as f64; cols],
            };
            for c in 0..d {
                let row = &reduced[c * cols..(c + 1) * cols];
                for i in 0..n {
                    let acc: f64 = row[i * p..(i + 1) * p]
                        .iter()
                        .zip(&weights[i * p..(i + 1) * p])
                        .map(|(v, w)| v * w)
                        .sum();
                    h[(k * d + c) * n + i] = acc;
                }
            }
            if keep_cache {
                tap_caches.push(TapCache {
                    tap: l,
                    reduced,
                    weights,
                    positions: p,
                });
            }
            k += 1;
        }

        let (hid, dim) = (self.cfg.mlp_hidden, self.cfg.embed_dim);
        let mut y1 = vec![0.0; hid * n];
        for (j, row) in y1.chunks_exact_mut(n).enumerate() {
            row.fill(self.params.data(self.b1)[j]);
        }
        gemm(hid, fused, n, 1.0, self.params.data(self.w1), false, &h, false, 1.0, &mut y1);
        let r: Vec<f64> = y1.iter().map(|v| v.max(0.0)).collect();
        let mut y2 = vec![0.0; dim * n];
        for (j, row) in y2.chunks_exact_mut(n).enumerate() {
            row.fill(self.params.data(self.b2)[j]);
        }
        gemm(dim, hid, n, 1.0, self.params.data(self.w2), false, &r, false, 1.0, &mut y2);

        let mut norms = vec![0.0; n];
        for (i, norm) in norms.iter_mut().enumerate() {
            *norm = (0..dim).map(|j| y2[j * n + i] * y2[j * n + i]).sum::<f64>().sqrt();
            if !(*norm >= MIN_PROJECTION_NORM) {
                return Err(Error::Numerical(format!(
                    "projection norm {norm:e} too small to normalize (sample {i})"
                )));
            }
        }
        let mut z = y2;
        for j in 0..dim {
            for i in 0..n {
                z[j * n + i] /= norms[i];
            }
        }
        let embeddings = (0..n).map(|i| (0..dim).map(|j| z[j * n + i]).collect()).collect();
        let cache = keep_cache.then(|| HeadCache {
            n,
            taps: tap_caches,
            h,
            y1,
            r,
            norms,
            z,
        });
        Ok((embeddings, cache))
    }

    /// Accumulates head gradients into `grads` and returns tap-map gradients
    /// for every backbone tap (zeros for taps not read out).
    pub fn backward(
        &self,
        feats: &FeatureBatch,
        cache: &HeadCache,
        dz: &[Vec<f64>],
        grads: &mut [Vec<f64>],
    ) -> Vec<Vec<f64>> {
        let n = cache.n;
        let (d, hid, dim) = (self.cfg.reduce_dim, self.cfg.mlp_hidden, self.cfg.embed_dim);
        let fused = self.fused_dim();

        let mut dy2 = vec![0.0; dim * n];
        for i in 0..n {
            let dot: f64 = (0..dim).map(|j| cache.z[j * n + i] * dz[i][j]).sum();
            for j in 0..dim {
                dy2[j * n + i] = (dz[i][j] - cache.z[j * n + i] * dot) / cache.norms[i];
            }
        }
        gemm(dim, n, hid, 1.0, &dy2, false, &cache.r, true, 1.0, &mut grads[self.w2]);
        for (j, row) in dy2.chunks_exact(n).enumerate() {
            grads[self.b2][j] += row.iter().sum::<f64>();
        }
        let mut dy1 = vec![0.0; hid * n];
        gemm(hid, dim, n, 1.0, self.params.data(self.w2), true, &dy2, false, 0.0, &mut dy1);
        for (g, &y) in dy1.iter_mut().zip(&cache.y1) {
            if y <= 0.0 {
                *g = 0.0;
            }
        }
        gemm(hid, n, fused, 1.0, &dy1, false, &cache.h, true, 1.0, &mut grads[self.w1]);
        for (j, row) in dy1.chunks_exact(n).enumerate() {
            grads[self.b1][j] += row.iter().sum::<f64>();
        }
        let mut dh = vec![0.0; fused * n];
        gemm(fused, hid, n, 1.0, self.params.data(self.w1), true, &dy1, false, 0.0, &mut dh);

        let mut tap_grads: Vec<Vec<f64>> = feats.maps.iter().map(|m| vec![0.0; m.data.len()]).collect();
        for (k, tc) in cache.taps.iter().enumerate() {
            let slots = self.taps[tc.tap].as_ref().expect("cached tap is read out");
            let map = &feats.maps[tc.tap];
            let p = tc.positions;
            let cols = n * p;
            let mut dreduced = vec![0.0; d * cols];
            let mut dw = vec![0.0; cols];
            for c in 0..d {
                let da_row = &dh[(k * d + c) * n..(k * d + c + 1) * n];
                let r_row = &tc.reduced[c * cols..(c + 1) * cols];
                let g_row = &mut dreduced[c * cols..(c + 1) * cols];
                for i in 0..n {
                    let da = da_row[i];
                    for q in i * p..(i + 1) * p {
                        g_row[q] = tc.weights[q] * da;
                        dw[q] += da * r_row[q];
                    }
                }
            }
            if let Some(u) = slots.scorer {
                let mut ds = vec![0.0; cols];
                for i in 0..n {
                    let range = i * p..(i + 1) * p;
                    let mean: f64 = range.clone().map(|q| tc.weights[q] * dw[q]).sum();
                    for q in range {
                        ds[q] = tc.weights[q] * (dw[q] - mean);
                    }
                }
                gemm(1, cols, d, 1.0, &ds, false, &tc.reduced, true, 1.0, &mut grads[u]);
                let uvec = self.params.data(u);
                for c in 0..d {
                    let g_row = &mut dreduced[c * cols..(c + 1) * cols];
                    for (g, s) in g_row.iter_mut().zip(&ds) {
                        *g += uvec[c] * s;
                    }
                }
            }
            gemm(d, cols, map.channels, 1.0, &dreduced, false, &map.data, true, 1.0, &mut grads[slots.reduce]);
            gemm(
                map.channels,
                d,
                cols,
                1.0,
                self.params.data(slots.reduce),
                true,
                &dreduced,
                false,
                0.0,
                &mut tap_grads[tc.tap],
            );
        }
        tap_grads
    }
}

/// Concatenates `count` vectors of length `dim`.
pub fn fuse(vectors: &[Vec<f64>], count: usize, dim: usize) -> Result<Vec<f64>> {
    ensure!(
        vectors.len() == count,
        Validation,
        "expected {count} pooled vectors, got {}",
        vectors.len()
    );
    ensure!(
        vectors.iter().all(|v| v.len() == dim),
        Validation,
        "every pooled vector must have dimension {dim}"
    );
    Ok(vectors.concat())
}

/// ℓ2 normalization; errors on (near) zero vectors.
pub fn normalize(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm >= MIN_PROJECTION_NORM) {
        return Err(Error::Numerical(format!("cannot normalize vector with norm {norm:e}")));
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
}

#[cfg(test)]
mod tests;
