//! Masked affine coupling flow over pooled backbone features, used as a
//! likelihood baseline monitor.

use serde::{Deserialize, Serialize};

use crate::backbone::{FeatureBatch, FeatureMapSet};
use crate::container::Container;
use crate::error::{ensure, Error, Result};
use crate::nn::{gemm, Adam, AdamConfig, Param, ParamSet};
use crate::seed;

pub const BLOCKS: usize = 4;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub hidden: usize,
    pub scale_bound: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Tap indices (0-based) whose pooled features feed the flow; empty means all.
    pub layers: Vec<usize>,
    /// One flow per layer with aggregated scores instead of one flow over
    /// the concatenation.
    pub multi_scale: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            scale_bound: 3.0,
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            layers: Vec::new(),
            multi_scale: false,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.hidden >= 1, Config, "flow hidden width must be positive");
        ensure!(
            self.scale_bound > 0.0 && self.scale_bound.is_finite(),
            Config,
            "flow scale bound must be positive"
        );
        ensure!(self.batch_size >= 1, Config, "flow batch size must be positive");
        ensure!(
            self.learning_rate >= 0.0 && self.learning_rate.is_finite(),
            Config,
            "flow learning rate must be finite and non-negative"
        );
        Ok(())
    }
}

/// Dense layer slots; weights are `out × in`.
#[derive(Debug, Clone, Copy)]
struct Dense {
    w: usize,
    b: usize,
    inp: usize,
    out: usize,
}

impl Dense {
    fn new(params: &mut ParamSet, name: &str, inp: usize, out: usize, zero: bool, rng: &mut seed::Rng) -> Self {
        let w = if zero {
            params.push(Param::zeros(format!("{name}.w"), &[out, inp]))
        } else {
            params.push(Param::normal(format!("{name}.w"), &[out, inp], inp, 1.0, rng))
        };
        let b = params.push(Param::zeros(format!("{name}.b"), &[out]));
        Self { w, b, inp, out }
    }

    /// `x` is `rows × inp`, result `rows × out`.
    fn forward(&self, p: &ParamSet, x: &[f64], rows: usize) -> Vec<f64> {
        let mut y = Vec::with_capacity(rows * self.out);
        for _ in 0..rows {
            y.extend_from_slice(p.data(self.b));
        }
        gemm(rows, self.inp, self.out, 1.0, x, false, p.data(self.w), true, 1.0, &mut y);
        y
    }

    fn backward(&self, p: &ParamSet, x: &[f64], dy: &[f64], rows: usize, grads: &mut [Vec<f64>]) -> Vec<f64> {
        gemm(self.out, rows, self.inp, 1.0, dy, true, x, false, 1.0, &mut grads[self.w]);
        for r in 0..rows {
            for (g, d) in grads[self.b].iter_mut().zip(&dy[r * self.out..(r + 1) * self.out]) {
                *g += d;
            }
        }
        let mut dx = vec![0.0; rows * self.inp];
        gemm(rows, self.out, self.inp, 1.0, dy, false, p.data(self.w), false, 0.0, &mut dx);
        dx
    }
}

/// Two-layer tanh MLP.
#[derive(Debug, Clone, Copy)]
struct Mlp {
    l1: Dense,
    l2: Dense,
}

impl Mlp {
    fn forward(&self, p: &ParamSet, x: &[f64], rows: usize) -> (Vec<f64>, Vec<f64>) {
        let h: Vec<f64> = self.l1.forward(p, x, rows).into_iter().map(f64::tanh).collect();
        let y = self.l2.forward(p, &h, rows);
        (h, y)
    }

    fn backward(&self, p: &ParamSet, x: &[f64], h: &[f64], dy: &[f64], rows: usize, grads: &mut [Vec<f64>]) -> Vec<f64> {
        let mut dh = self.l2.backward(p, h, dy, rows, grads);
        for (d, hv) in dh.iter_mut().zip(h) {
            *d *= 1.0 - hv * hv;
        }
        self.l1.backward(p, x, &dh, rows, grads)
    }
}

/// Affine coupling: coordinates outside `cond` are scaled and shifted by
/// functions of the coordinates in `cond`.
#[derive(Debug, Clone)]
pub struct CouplingBlock {
    cond: Vec<usize>,
    free: Vec<usize>,
    scale_net: Mlp,
    shift_net: Mlp,
}

impl CouplingBlock {
    /// Binary mask over all coordinates; 1 marks conditioning coordinates.
    pub fn mask(&self) -> Vec<u8> {
        let mut m = vec![0u8; self.cond.len() + self.free.len()];
        for &c in &self.cond {
            m[c] = 1;
        }
        m
    }
}

struct BlockCache {
    xc: Vec<f64>,
    xf: Vec<f64>,
    hs: Vec<f64>,
    ht: Vec<f64>,
    s: Vec<f64>,
    tanh_raw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Per-coordinate statistics; a constant coordinate is an error.
    pub fn fit(data: &[Vec<f64>]) -> Result<Self> {
        ensure!(data.len() >= 2, Validation, "need at least 2 samples to standardize, got {}", data.len());
        let d = data[0].len();
        ensure!(data.iter().all(|x| x.len() == d), Validation, "feature vectors differ in length");
        let n = data.len() as f64;
        let mut mean = vec![0.0; d];
        for x in data {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; d];
        for x in data {
            for j in 0..d {
                std[j] += (x[j] - mean[j]).powi(2) / n;
            }
        }
        for (j, s) in std.iter_mut().enumerate() {
            *s = s.sqrt();
            if !(*s > 1e-12 * (1.0 + mean[j].abs())) {
                return Err(Error::Validation(format!(
                    "feature coordinate {j} is constant ({}) over the training set; cannot standardize",
                    mean[j]
                )));
            }
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    fn log_scale(&self) -> f64 {
        self.std.iter().map(|s| s.ln()).sum()
    }
}

#[derive(Debug, Clone)]
pub struct FlowModel {
    dim: usize,
    scale_bound: f64,
    blocks: Vec<CouplingBlock>,
    params: ParamSet,
    standardizer: Option<Standardizer>,
}

impl FlowModel {
    /// Identity-initialized flow (output layers start at zero).
    pub fn new(dim: usize, cfg: &FlowConfig, init_seed: u64) -> Result<Self> {
        cfg.validate()?;
        ensure!(dim >= 2, Validation, "flow dimension must be at least 2, got {dim}");
        let mut rng = seed::rng(seed::derive(init_seed, "flow-init"));
        let mut params = ParamSet::new();
        let half = dim / 2;
        let mut blocks = Vec::with_capacity(BLOCKS);
        for k in 0..BLOCKS {
            let (cond, free): (Vec<usize>, Vec<usize>) = if k % 2 == 0 {
                ((0..half).collect(), (half..dim).collect())
            } else {
                ((half..dim).collect(), (0..half).collect())
            };
            let mut mlp = |name: &str| Mlp {
                l1: Dense::new(&mut params, &format!("flow.block{k}.{name}.l1"), cond.len(), cfg.hidden, false, &mut rng),
                l2: Dense::new(&mut params, &format!("flow.block{k}.{name}.l2"), cfg.hidden, free.len(), true, &mut rng),
            };
            let scale_net = mlp("scale");
            let shift_net = mlp("shift");
            blocks.push(CouplingBlock {
                cond,
                free,
                scale_net,
                shift_net,
            });
        }
        Ok(Self {
            dim,
            scale_bound: cfg.scale_bound,
            blocks,
            params,
            standardizer: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[CouplingBlock] {
        &self.blocks
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn standardizer(&self) -> Option<&Standardizer> {
        self.standardizer.as_ref()
    }

    pub fn set_standardizer(&mut self, s: Standardizer) -> Result<()> {
        ensure!(
            s.mean.len() == self.dim && s.std.len() == self.dim,
            Validation,
            "standardizer dimension does not match the flow"
        );
        self.standardizer = Some(s);
        Ok(())
    }

    fn gather(x: &[f64], rows: usize, dim: usize, idx: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(rows * idx.len());
        for r in 0..rows {
            out.extend(idx.iter().map(|&j| x[r * dim + j]));
        }
        out
    }

    fn scatter(dst: &mut [f64], src: &[f64], rows: usize, dim: usize, idx: &[usize]) {
        for r in 0..rows {
            for (k, &j) in idx.iter().enumerate() {
                dst[r * dim + j] = src[r * idx.len() + k];
            }
        }
    }

    /// Row-major batch forward; returns latents and per-row log-determinants.
    fn forward_rows(&self, x: &[f64], rows: usize, keep: bool) -> (Vec<f64>, Vec<f64>, Vec<BlockCache>) {
        let d = self.dim;
        let mut cur = x.to_vec();
        let mut log_det = vec![0.0; rows];
        let mut caches = Vec::new();
        for b in &self.blocks {
            let xc = Self::gather(&cur, rows, d, &b.cond);
            let xf = Self::gather(&cur, rows, d, &b.free);
            let (hs, raw) = b.scale_net.forward(&self.params, &xc, rows);
            let (ht, t) = b.shift_net.forward(&self.params, &xc, rows);
            let tanh_raw: Vec<f64> = raw.iter().map(|v| v.tanh()).collect();
            let s: Vec<f64> = tanh_raw.iter().map(|v| self.scale_bound * v).collect();
            let nf = b.free.len();
            let mut yf = vec![0.0; rows * nf];
            for r in 0..rows {
                for k in 0..nf {
                    let i = r * nf + k;
                    yf[i] = xf[i] * s[i].exp() + t[i];
                    log_det[r] += s[i];
                }
            }
            Self::scatter(&mut cur, &yf, rows, d, &b.free);
            if keep {
                caches.push(BlockCache {
                    xc,
                    xf,
                    hs,
                    ht,
                    s,
                    tanh_raw,
                });
            }
        }
        (cur, log_det, caches)
    }

    /// Latent and log|det J| of a standardized feature vector.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        ensure!(x.len() == self.dim, Validation, "flow expects {} inputs, got {}", self.dim, x.len());
        ensure!(x.iter().all(|v| v.is_finite()), Validation, "flow input contains non-finite values");
        let (z, ld, _) = self.forward_rows(x, 1, false);
        Ok((z, ld[0]))
    }

    pub fn inverse(&self, z: &[f64]) -> Result<Vec<f64>> {
        ensure!(z.len() == self.dim, Validation, "flow expects {} latents, got {}", self.dim, z.len());
        let mut cur = z.to_vec();
        for b in self.blocks.iter().rev() {
            let xc = Self::gather(&cur, 1, self.dim, &b.cond);
            let (_, raw) = b.scale_net.forward(&self.params, &xc, 1);
            let (_, t) = b.shift_net.forward(&self.params, &xc, 1);
            for (k, &j) in b.free.iter().enumerate() {
                let s = self.scale_bound * raw[k].tanh();
                cur[j] = (cur[j] - t[k]) * (-s).exp();
            }
        }
        Ok(cur)
    }

    /// Negative log-density of a standardized vector under the flow.
    pub fn nll_standardized(&self, x: &[f64]) -> Result<f64> {
        let (z, ld) = self.forward(x)?;
        Ok(0.5 * z.iter().map(|v| v * v).sum::<f64>() + 0.5 * self.dim as f64 * LN_2PI - ld)
    }

    /// Negative log-density of a raw feature vector, including the
    /// standardization Jacobian.
    pub fn nll(&self, x: &[f64]) -> Result<f64> {
        let st = self
            .standardizer
            .as_ref()
            .ok_or_else(|| Error::State("flow has not been trained".into()))?;
        ensure!(x.len() == self.dim, Validation, "flow expects {} inputs, got {}", self.dim, x.len());
        Ok(self.nll_standardized(&st.apply(x))? + st.log_scale())
    }

    /// Mean NLL of a standardized batch and its parameter gradient.
    fn batch_grad(&self, x: &[f64], rows: usize) -> (f64, Vec<Vec<f64>>) {
        let d = self.dim;
        let (z, log_det, caches) = self.forward_rows(x, rows, true);
        let inv = 1.0 / rows as f64;
        let mut loss = 0.0;
        for r in 0..rows {
            loss += 0.5 * z[r * d..(r + 1) * d].iter().map(|v| v * v).sum::<f64>() - log_det[r];
        }
        loss = loss * inv + 0.5 * d as f64 * LN_2PI;

        let mut grads = self.params.zeros_like();
        let mut dcur: Vec<f64> = z.iter().map(|v| v * inv).collect();
        for (b, c) in self.blocks.iter().zip(&caches).rev() {
            let nf = b.free.len();
            let dyf = Self::gather(&dcur, rows, d, &b.free);
            let dyc = Self::gather(&dcur, rows, d, &b.cond);
            let mut dxf = vec![0.0; rows * nf];
            let mut draw = vec![0.0; rows * nf];
            for i in 0..rows * nf {
                let e = c.s[i].exp();
                dxf[i] = dyf[i] * e;
                let ds = dyf[i] * c.xf[i] * e - inv;
                draw[i] = ds * self.scale_bound * (1.0 - c.tanh_raw[i] * c.tanh_raw[i]);
            }
            let dxc_s = b.scale_net.backward(&self.params, &c.xc, &c.hs, &draw, rows, &mut grads);
            let dxc_t = b.shift_net.backward(&self.params, &c.xc, &c.ht, &dyf, rows, &mut grads);
            let dxc: Vec<f64> = dyc
                .iter()
                .zip(dxc_s.iter().zip(&dxc_t))
                .map(|(a, (b, c))| a + b + c)
                .collect();
            Self::scatter(&mut dcur, &dxf, rows, d, &b.free);
            Self::scatter(&mut dcur, &dxc, rows, d, &b.cond);
        }
        (loss, grads)
    }

    pub fn save_into(&self, c: &mut Container, prefix: &str) -> Result<()> {
        let st = self
            .standardizer
            .as_ref()
            .ok_or_else(|| Error::State("cannot save an untrained flow".into()))?;
        c.put_f64(format!("{prefix}meta"), &[2], vec![self.dim as f64, self.scale_bound])?;
        c.put_f64(format!("{prefix}mean"), &[self.dim], st.mean.clone())?;
        c.put_f64(format!("{prefix}std"), &[self.dim], st.std.clone())?;
        for p in self.params.iter() {
            c.put_f64(format!("{prefix}{}", p.name), &p.shape, p.data.clone())?;
        }
        Ok(())
    }

    pub fn load_from(c: &Container, prefix: &str, hidden: usize) -> Result<Self> {
        let (_, meta) = c.f64(&format!("{prefix}meta"))?;
        ensure!(meta.len() == 2, Format, "malformed flow metadata");
        let cfg = FlowConfig {
            hidden,
            scale_bound: meta[1],
            ..Default::default()
        };
        let mut flow = Self::new(meta[0] as usize, &cfg, 0)?;
        flow.params.load_from(|n| c.f64(&format!("{prefix}{n}")).ok())?;
        let mean = c.f64(&format!("{prefix}mean"))?.1.to_vec();
        let std = c.f64(&format!("{prefix}std"))?.1.to_vec();
        flow.set_standardizer(Standardizer { mean, std })?;
        Ok(flow)
    }
}

/// Fits a flow to raw feature vectors by maximum likelihood. Returns the
/// model and the mean training NLL of every epoch (in standardized space).
pub fn train_flow(features: &[Vec<f64>], cfg: &FlowConfig, train_seed: u64) -> Result<(FlowModel, Vec<f64>)> {
    cfg.validate()?;
    let st = Standardizer::fit(features)?;
    let dim = st.mean.len();
    let mut flow = FlowModel::new(dim, cfg, train_seed)?;
    let data: Vec<Vec<f64>> = features.iter().map(|x| st.apply(x)).collect();
    flow.set_standardizer(st)?;
    let mut opt = Adam::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..Default::default()
        },
        flow.params(),
    );
    let n = data.len();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seed::rng(
            seed::SeedHasher::new(train_seed).str("flow-epoch").u64(epoch as u64).finish(),
        ));
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let x: Vec<f64> = chunk.iter().flat_map(|&i| data[i].iter().copied()).collect();
            let (loss, grads) = flow.batch_grad(&x, chunk.len());
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("flow NLL became non-finite at epoch {epoch}")));
            }
            total += loss * chunk.len() as f64;
            opt.step(&mut flow.params, &grads);
        }
        history.push(total / n as f64);
    }
    Ok((flow, history))
}

/// Spatial means of the selected taps, concatenated in selection order.
pub fn pool_features(fm: &FeatureMapSet, layers: &[usize]) -> Result<Vec<f64>> {
    ensure!(!layers.is_empty(), Validation, "empty layer selection");
    let mut out = Vec::new();
    for &l in layers {
        let m = fm
            .maps
            .get(l)
            .ok_or_else(|| Error::Validation(format!("layer {l} is not present in the feature set")))?;
        let p = m.height * m.width;
        out.extend((0..m.channels).map(|c| m.data[c * p..(c + 1) * p].iter().sum::<f64>() / p as f64));
    }
    Ok(out)
}

/// [`pool_features`] for every sample of a batch.
pub fn pool_batch(batch: &FeatureBatch, layers: &[usize]) -> Result<Vec<Vec<f64>>> {
    ensure!(!layers.is_empty(), Validation, "empty layer selection");
    let mut out = vec![Vec::new(); batch.n];
    for &l in layers {
        let m = batch
            .maps
            .get(l)
            .ok_or_else(|| Error::Validation(format!("layer {l} is not present in the feature batch")))?;
        let p = m.height * m.width;
        for c in 0..m.channels {
            for (i, row) in out.iter_mut().enumerate() {
                let start = (c * batch.n + i) * p;
                row.push(m.data[start..start + p].iter().sum::<f64>() / p as f64);
            }
        }
    }
    Ok(out)
}

/// One flow per tap; scores are per-layer NLLs z-scored with training-set
/// statistics and summed.
#[derive(Debug, Clone)]
pub struct MultiScaleFlow {
    pub layers: Vec<usize>,
    pub flows: Vec<FlowModel>,
    pub nll_mean: Vec<f64>,
    pub nll_std: Vec<f64>,
}

impl MultiScaleFlow {
    /// `features[l]` holds the training feature vectors of `layers[l]`.
    pub fn train(layers: &[usize], features: &[Vec<Vec<f64>>], cfg: &FlowConfig, train_seed: u64) -> Result<Self> {
        ensure!(!layers.is_empty(), Validation, "empty layer selection");
        ensure!(layers.len() == features.len(), Validation, "one feature set per layer is required");
        let mut flows = Vec::new();
        let (mut nll_mean, mut nll_std) = (Vec::new(), Vec::new());
        for (&l, feats) in layers.iter().zip(features) {
            let (flow, _) = train_flow(feats, cfg, seed::SeedHasher::new(train_seed).str("layer").u64(l as u64).finish())?;
            let nlls = feats.iter().map(|x| flow.nll(x)).collect::<Result<Vec<_>>>()?;
            let (m, s) = mean_std(&nlls);
            ensure!(s > 0.0, Numerical, "training NLL of layer {l} has zero spread");
            flows.push(flow);
            nll_mean.push(m);
            nll_std.push(s);
        }
        Ok(Self {
            layers: layers.to_vec(),
            flows,
            nll_mean,
            nll_std,
        })
    }

    /// Aggregated score of per-layer raw feature vectors (in `layers` order).
    pub fn score(&self, per_layer: &[Vec<f64>]) -> Result<f64> {
        ensure!(
            per_layer.len() == self.flows.len(),
            Validation,
            "expected features for {} layers, got {}",
            self.flows.len(),
            per_layer.len()
        );
        let z = per_layer
            .iter()
            .enumerate()
            .map(|(k, x)| Ok((self.flows[k].nll(x)? - self.nll_mean[k]) / self.nll_std[k]))
            .collect::<Result<Vec<_>>>()?;
        Ok(multi_scale_score(&z))
    }
}

/// Sum of per-layer standardized NLLs.
pub fn multi_scale_score(standardized: &[f64]) -> f64 {
    standardized.iter().sum()
}

pub(crate) fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len().max(1) as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

pub const FLOW_CHECKPOINT_FORMAT: &str = "degmon-flow/1";

/// Trained likelihood baseline: a single flow over concatenated pooled taps
/// or one flow per tap.
#[derive(Debug, Clone)]
pub enum FlowBaseline {
    Single { flow: FlowModel, layers: Vec<usize> },
    MultiScale(MultiScaleFlow),
}

impl FlowBaseline {
    /// `features[k]` holds the pooled training features of `layers[k]`.
    pub fn train(layers: &[usize], features: &[Vec<Vec<f64>>], cfg: &FlowConfig, train_seed: u64) -> Result<Self> {
        ensure!(!layers.is_empty(), Validation, "empty layer selection");
        ensure!(layers.len() == features.len(), Validation, "one feature set per layer is required");
        if cfg.multi_scale {
            return Ok(Self::MultiScale(MultiScaleFlow::train(layers, features, cfg, train_seed)?));
        }
        let n = features[0].len();
        ensure!(features.iter().all(|f| f.len() == n), Validation, "layers disagree on the sample count");
        let joined: Vec<Vec<f64>> = (0..n)
            .map(|i| features.iter().flat_map(|f| f[i].iter().copied()).collect())
            .collect();
        let (flow, _) = train_flow(&joined, cfg, train_seed)?;
        Ok(Self::Single {
            flow,
            layers: layers.to_vec(),
        })
    }

    pub fn layers(&self) -> &[usize] {
        match self {
            Self::Single { layers, .. } => layers,
            Self::MultiScale(ms) => &ms.layers,
        }
    }

    /// Score of one sample given its pooled features per layer.
    pub fn score(&self, per_layer: &[Vec<f64>]) -> Result<f64> {
        match self {
            Self::Single { flow, layers } => {
                ensure!(
                    per_layer.len() == layers.len(),
                    Validation,
                    "expected features for {} layers, got {}",
                    layers.len(),
                    per_layer.len()
                );
                flow.nll(&per_layer.concat())
            }
            Self::MultiScale(ms) => ms.score(per_layer),
        }
    }

    pub fn to_container(&self, hidden: usize, config_hash: &str) -> Result<Container> {
        let mut c = Container::new();
        c.put_str("format", FLOW_CHECKPOINT_FORMAT)?;
        c.put_str("config_hash", config_hash)?;
        c.put_f64("hidden", &[1], vec![hidden as f64])?;
        c.put_f64("layers", &[self.layers().len()], self.layers().iter().map(|&l| l as f64).collect())?;
        match self {
            Self::Single { flow, .. } => flow.save_into(&mut c, "nf.")?,
            Self::MultiScale(ms) => {
                c.put_f64("nll_mean", &[ms.flows.len()], ms.nll_mean.clone())?;
                c.put_f64("nll_std", &[ms.flows.len()], ms.nll_std.clone())?;
                for (k, f) in ms.flows.iter().enumerate() {
                    f.save_into(&mut c, &format!("mnf{k}."))?;
                }
            }
        }
        Ok(c)
    }

    /// Returns the baseline and the config hash it was trained under.
    pub fn from_container(c: &Container) -> Result<(Self, String)> {
        let format = c.str("format")?;
        ensure!(format == FLOW_CHECKPOINT_FORMAT, Format, "unsupported flow checkpoint format '{format}'");
        let hidden = c.f64("hidden")?.1.first().copied().unwrap_or(0.0) as usize;
        let layers: Vec<usize> = c.f64("layers")?.1.iter().map(|&l| l as usize).collect();
        let baseline = if c.contains("nll_mean") {
            let nll_mean = c.f64("nll_mean")?.1.to_vec();
            let nll_std = c.f64("nll_std")?.1.to_vec();
            ensure!(
                nll_mean.len() == layers.len() && nll_std.len() == layers.len(),
                Format,
                "multi-scale flow statistics do not match its layers"
            );
            let flows = (0..layers.len())
                .map(|k| FlowModel::load_from(c, &format!("mnf{k}."), hidden))
                .collect::<Result<Vec<_>>>()?;
            Self::MultiScale(MultiScaleFlow {
                layers,
                flows,
                nll_mean,
                nll_std,
            })
        } else {
            Self::Single {
                flow: FlowModel::load_from(c, "nf.", hidden)?,
                layers,
            }
        };
        Ok((baseline, c.str("config_hash")?))
    }
}
