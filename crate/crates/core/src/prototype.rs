//! Pristine prototype with warm-up and EMA updates, the degradation score
//! and the accept gate.

use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{ensure, Error, Result};

/// Reserved checkpoint array names.
pub const PROTOTYPE_ARRAY: &str = "prototype.mu";
pub const PROTOTYPE_META: &str = "prototype.meta";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateSchedule {
    /// One update per epoch from that epoch's pristine embeddings.
    #[default]
    Epoch,
    /// One update per training batch.
    Batch,
}

/// Which estimate the trained model keeps as its prototype.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Finalize {
    /// Normalized mean embedding of all clean training images under the
    /// final weights.
    #[default]
    TrainMean,
    /// The EMA state as it stands after the last epoch.
    Ema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrototypeConfig {
    pub momentum: f64,
    /// First epoch at which the prototype is formed; `None` means half the
    /// training epochs.
    pub warmup_epoch: Option<usize>,
    pub schedule: UpdateSchedule,
    pub finalize: Finalize,
}

impl Default for PrototypeConfig {
    fn default() -> Self {
        Self {
            momentum: 0.99,
            warmup_epoch: None,
            schedule: UpdateSchedule::Epoch,
            finalize: Finalize::TrainMean,
        }
    }
}

impl PrototypeConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            (0.0..1.0).contains(&self.momentum),
            Config,
            "prototype momentum must lie in [0, 1), got {}",
            self.momentum
        );
        Ok(())
    }

    pub fn warmup_for(&self, epochs: usize) -> usize {
        self.warmup_epoch.unwrap_or(epochs / 2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PristinePrototype {
    mu: Vec<f64>,
    momentum: f64,
    warmup_epoch: usize,
    initialized: bool,
}

/// Degradation score; larger means more degraded.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct MonitorScore(pub f64);

impl PristinePrototype {
    pub fn new(dim: usize, momentum: f64, warmup_epoch: usize) -> Result<Self> {
        ensure!(dim >= 1, Config, "prototype dimension must be positive");
        ensure!(
            (0.0..1.0).contains(&momentum),
            Config,
            "prototype momentum must lie in [0, 1), got {momentum}"
        );
        Ok(Self {
            mu: vec![0.0; dim],
            momentum,
            warmup_epoch,
            initialized: false,
        })
    }

    /// Builds an initialized prototype from a known direction.
    pub fn from_mu(mu: Vec<f64>, momentum: f64, warmup_epoch: usize) -> Result<Self> {
        let mut p = Self::new(mu.len(), momentum, warmup_epoch)?;
        p.mu = normalized(mu)?;
        p.initialized = true;
        Ok(p)
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn warmup_epoch(&self) -> usize {
        self.warmup_epoch
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Initializes at the first call with `epoch >= warmup_epoch` and
    /// updates on every later call. Returns whether the prototype changed.
    pub fn maybe_init(&mut self, epoch: usize, pristine: &[Vec<f64>]) -> Result<bool> {
        if epoch < self.warmup_epoch {
            return Ok(false);
        }
        if self.initialized {
            self.update(pristine)?;
            return Ok(true);
        }
        self.mu = normalized(self.batch_mean(pristine)?)?;
        self.initialized = true;
        Ok(true)
    }

    /// Replaces `mu` with the normalized mean of `pristine`, keeping the
    /// EMA settings.
    pub fn reset_to_mean(&mut self, pristine: &[Vec<f64>]) -> Result<()> {
        self.mu = normalized(self.batch_mean(pristine)?)?;
        self.initialized = true;
        Ok(())
    }

    /// `mu ← normalize(α·mu + (1−α)·mean(batch))`.
    pub fn update(&mut self, pristine: &[Vec<f64>]) -> Result<()> {
        if !self.initialized {
            return Err(Error::State("prototype updated before initialization".into()));
        }
        let mean = self.batch_mean(pristine)?;
        let a = self.momentum;
        let blended = self.mu.iter().zip(&mean).map(|(m, b)| a * m + (1.0 - a) * b).collect();
        self.mu = normalized(blended)?;
        Ok(())
    }

    fn batch_mean(&self, batch: &[Vec<f64>]) -> Result<Vec<f64>> {
        ensure!(!batch.is_empty(), Validation, "empty pristine batch");
        let d = self.mu.len();
        let mut mean = vec![0.0; d];
        for z in batch {
            ensure!(z.len() == d, Validation, "embedding dimension {} does not match {d}", z.len());
            for (m, v) in mean.iter_mut().zip(z) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= batch.len() as f64);
        Ok(mean)
    }

    /// `S = 1 − zᵀμ`.
    pub fn degradation_score(&self, z: &[f64]) -> Result<MonitorScore> {
        if !self.initialized {
            return Err(Error::State("prototype is not initialized".into()));
        }
        ensure!(
            z.len() == self.mu.len(),
            Validation,
            "embedding dimension {} does not match prototype dimension {}",
            z.len(),
            self.mu.len()
        );
        Ok(MonitorScore(1.0 - z.iter().zip(&self.mu).map(|(a, b)| a * b).sum::<f64>()))
    }

    pub fn save_into(&self, c: &mut Container) -> Result<()> {
        if !self.initialized {
            return Err(Error::State("cannot save an uninitialized prototype".into()));
        }
        c.put_f64(PROTOTYPE_ARRAY, &[self.mu.len()], self.mu.clone())?;
        c.put_f64(PROTOTYPE_META, &[2], vec![self.momentum, self.warmup_epoch as f64])
    }

    pub fn load_from(c: &Container) -> Result<Self> {
        let (_, mu) = c.f64(PROTOTYPE_ARRAY)?;
        let (_, meta) = c.f64(PROTOTYPE_META)?;
        ensure!(meta.len() == 2, Format, "malformed prototype metadata");
        let norm = mu.iter().map(|x| x * x).sum::<f64>().sqrt();
        ensure!((norm - 1.0).abs() <= 1e-6, Format, "stored prototype has norm {norm}");
        let mut p = Self::new(mu.len(), meta[0], meta[1] as usize)?;
        p.mu = mu.to_vec();
        p.initialized = true;
        Ok(p)
    }
}

/// Accept iff `score ≤ tau`.
pub fn gate(score: MonitorScore, tau: f64) -> bool {
    score.0 <= tau
}

/// Nearest-rank quantile of pristine scores: the smallest observed score
/// with at least `ceil(q·n)` scores at or below it.
pub fn suggest_threshold(scores: &[f64], q: f64) -> Result<f64> {
    ensure!(!scores.is_empty(), Validation, "no scores to derive a threshold from");
    ensure!(q > 0.0 && q <= 1.0, Validation, "quantile must lie in (0, 1], got {q}");
    ensure!(scores.iter().all(|s| s.is_finite()), Numerical, "non-finite score");
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[rank - 1])
}

fn normalized(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 1e-12) {
        return Err(Error::Numerical(format!("cannot normalize prototype with norm {n:e}")));
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn warmup_then_init_then_update() {
        let mut p = PristinePrototype::new(2, 0.9, 25).unwrap();
        assert!(!p.maybe_init(0, &[vec![1.0, 0.0]]).unwrap());
        assert!(!p.is_initialized());
        assert!(matches!(p.update(&[vec![1.0, 0.0]]), Err(Error::State(_))));
        assert!(matches!(p.maybe_init(25, &[]), Err(Error::Validation(_))));
        p.maybe_init(25, &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let s = 0.5f64.sqrt();
        assert!((p.mu()[0] - s).abs() < 1e-15 && (p.mu()[1] - s).abs() < 1e-15);
        // further calls update
        p.maybe_init(26, &[vec![1.0, 0.0]]).unwrap();
        assert!(p.mu()[0] > p.mu()[1]);
    }

    #[test]
    fn scripted_update() {
        let mut p = PristinePrototype::from_mu(vec![1.0, 0.0], 0.9, 0).unwrap();
        p.update(&[vec![0.0, 1.0]]).unwrap();
        let n = (0.81f64 + 0.01).sqrt();
        assert!((p.mu()[0] - 0.9 / n).abs() < 1e-15);
        assert!((p.mu()[1] - 0.1 / n).abs() < 1e-15);

        let before = p.mu().to_vec();
        p.update(&[before.clone()]).unwrap();
        assert!(p.mu().iter().zip(&before).all(|(a, b)| (a - b).abs() < 1e-15));

        let mut z = PristinePrototype::from_mu(vec![1.0, 0.0], 0.0, 0).unwrap();
        z.update(&[vec![0.0, 3.0]]).unwrap();
        assert_eq!(z.mu(), [0.0, 1.0]);
    }

    #[test]
    fn reset_to_mean_keeps_settings() {
        let mut p = PristinePrototype::from_mu(vec![1.0, 0.0], 0.9, 4).unwrap();
        p.reset_to_mean(&[vec![0.0, 2.0], vec![0.0, 4.0]]).unwrap();
        assert_eq!(p.mu(), [0.0, 1.0]);
        assert_eq!((p.momentum(), p.warmup_epoch()), (0.9, 4));
        let mut fresh = PristinePrototype::new(2, 0.5, 0).unwrap();
        fresh.reset_to_mean(&[vec![3.0, 4.0]]).unwrap();
        assert!(fresh.is_initialized());
        assert!(matches!(fresh.reset_to_mean(&[vec![1.0, -1.0], vec![-1.0, 1.0]]), Err(Error::Numerical(_))));
    }

    #[test]
    fn score_geometry_and_gate() {
        let p = PristinePrototype::from_mu(vec![0.0, 1.0, 0.0], 0.99, 0).unwrap();
        assert_eq!(p.degradation_score(&[0.0, 1.0, 0.0]).unwrap().0, 0.0);
        assert_eq!(p.degradation_score(&[1.0, 0.0, 0.0]).unwrap().0, 1.0);
        assert_eq!(p.degradation_score(&[0.0, -1.0, 0.0]).unwrap().0, 2.0);
        assert!(gate(MonitorScore(0.1), 0.5));
        assert!(gate(MonitorScore(0.5), 0.5));
        assert!(!gate(MonitorScore(0.9), 0.5));
        let fresh = PristinePrototype::new(3, 0.99, 0).unwrap();
        assert!(matches!(fresh.degradation_score(&[1.0, 0.0, 0.0]), Err(Error::State(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = PristinePrototype::from_mu(vec![0.3, 0.4], 0.95, 7).unwrap();
        let mut c = Container::new();
        p.save_into(&mut c).unwrap();
        assert_eq!(PristinePrototype::load_from(&c).unwrap(), p);
    }

    proptest! {
        #[test]
        fn score_is_rotation_invariant(theta in -3.2f64..3.2, a in -3.2f64..3.2, b in -3.2f64..3.2) {
            let rot = |v: [f64; 2]| [v[0] * theta.cos() - v[1] * theta.sin(), v[0] * theta.sin() + v[1] * theta.cos()];
            let mu = [a.cos(), a.sin()];
            let z = [b.cos(), b.sin()];
            let p = PristinePrototype::from_mu(mu.to_vec(), 0.9, 0).unwrap();
            let q = PristinePrototype::from_mu(rot(mu).to_vec(), 0.9, 0).unwrap();
            let s1 = p.degradation_score(&z).unwrap().0;
            let s2 = q.degradation_score(&rot(z)).unwrap().0;
            prop_assert!((s1 - s2).abs() < 1e-12);
            prop_assert!((-1e-12..=2.0 + 1e-12).contains(&s1));
            prop_assert!(p.degradation_score(&mu).unwrap().0.abs() < 1e-12);
        }

        #[test]
        fn gate_is_invariant_under_monotone_maps(s in -5.0f64..5.0, t in -5.0f64..5.0) {
            let g = gate(MonitorScore(s), t);
            prop_assert_eq!(g, gate(MonitorScore(s.exp()), t.exp()));
            prop_assert_eq!(g, gate(MonitorScore(s.powi(3)), t.powi(3)));
        }
    }

    #[test]
    fn threshold_examples() {
        let scores: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
        assert_eq!(suggest_threshold(&scores, 0.95).unwrap(), 0.95);
        assert_eq!(suggest_threshold(&scores, 1.0).unwrap(), 1.0);
        assert_eq!(suggest_threshold(&[0.3], 0.5).unwrap(), 0.3);
        assert!(suggest_threshold(&[], 0.9).is_err());
        assert!(suggest_threshold(&scores, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn threshold_is_the_smallest_covering_score(
            scores in proptest::collection::vec(0u8..20, 1..60),
            q in 0.01f64..=1.0,
        ) {
            let s: Vec<f64> = scores.iter().map(|&v| v as f64 / 10.0).collect();
            let tau = suggest_threshold(&s, q).unwrap();
            let covered = |t: f64| s.iter().filter(|&&v| v <= t).count() as f64 / s.len() as f64;
            prop_assert!(s.contains(&tau));
            prop_assert!(covered(tau) >= q - 1e-12);
            for &v in s.iter().filter(|&&v| v < tau) {
                prop_assert!(covered(v) < q + 1e-12);
            }
        }
    }
}
