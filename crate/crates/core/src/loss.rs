//! Four-block NT-Xent objective over full-resolution views and their
//! hard negatives.

use crate::error::{ensure, Error, Result};

/// Tolerance on the unit-norm check of incoming embeddings.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Embeddings of one contrastive step.
///
/// `z_a[i]`/`z_b[i]` are the two degraded views of pair `i`; `hard_a[i]` and
/// `hard_b[i]` their crop-and-resize counterparts. Without hard negatives the
/// objective is the plain two-view NT-Xent.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub z_a: Vec<Vec<f64>>,
    pub z_b: Vec<Vec<f64>>,
    pub hard: Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)>,
}

impl ContrastiveBatch {
    pub fn new(z_a: Vec<Vec<f64>>, z_b: Vec<Vec<f64>>, hard: Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)>) -> Result<Self> {
        let batch = Self { z_a, z_b, hard };
        batch.validate()?;
        Ok(batch)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.z_a.len();
        ensure!(n >= 2, Validation, "contrastive batch needs at least 2 pairs, got {n}");
        let blocks = self.blocks();
        ensure!(
            blocks.iter().all(|b| b.len() == n),
            Validation,
            "all contrastive blocks must hold {n} embeddings"
        );
        let dim = self.z_a[0].len();
        for (bi, block) in blocks.iter().enumerate() {
            for (i, z) in block.iter().enumerate() {
                ensure!(z.len() == dim, Validation, "embedding dimension mismatch in block {bi}");
                let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
                ensure!(
                    (norm - 1.0).abs() <= UNIT_NORM_TOL,
                    Validation,
                    "embedding {i} of block {bi} has norm {norm}, expected 1"
                );
            }
        }
        Ok(())
    }

    pub fn pairs(&self) -> usize {
        self.z_a.len()
    }

    /// Blocks in stacking order: A, B, then hard A, hard B.
    pub fn blocks(&self) -> Vec<&Vec<Vec<f64>>> {
        let mut b = vec![&self.z_a, &self.z_b];
        if let Some((ha, hb)) = &self.hard {
            b.push(ha);
            b.push(hb);
        }
        b
    }
}

/// Loss value; see [`nt_xent_loss_and_grad`].
pub fn nt_xent_loss(batch: &ContrastiveBatch, temperature: f64) -> Result<f64> {
    Ok(nt_xent_loss_and_grad(batch, temperature)?.0)
}

/// Loss and its gradient with respect to every embedding, in stacking order
/// (`[A, B, hard A, hard B]`, each block `pairs()` long).
///
/// Each anchor's positive is its same-index partner (A↔B, hard A↔hard B);
/// every other embedding in the batch is a negative.
pub fn nt_xent_loss_and_grad(batch: &ContrastiveBatch, temperature: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    batch.validate()?;
    ensure!(
        temperature > 0.0 && temperature.is_finite(),
        Validation,
        "temperature must be positive"
    );
    let n = batch.pairs();
    let all: Vec<&Vec<f64>> = batch.blocks().into_iter().flatten().collect();
    let m = all.len();
    let partner = |a: usize| {
        let (block, i) = (a / n, a % n);
        (block ^ 1) * n + i
    };

    let mut sim = vec![0.0; m * m];
    for a in 0..m {
        for b in a..m {
            let s = dot(all[a], all[b]) / temperature;
            sim[a * m + b] = s;
            sim[b * m + a] = s;
        }
    }

    let mut loss = 0.0;
    let mut g = vec![0.0; m * m];
    for a in 0..m {
        let row = &sim[a * m..(a + 1) * m];
        let max = (0..m).filter(|&j| j != a).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..m).filter(|&j| j != a).map(|j| (row[j] - max).exp()).sum();
        let p = partner(a);
        loss += max + denom.ln() - row[p];
        for j in (0..m).filter(|&j| j != a) {
            g[a * m + j] = (row[j] - max).exp() / denom / m as f64;
        }
        g[a * m + p] -= 1.0 / m as f64;
    }
    loss /= m as f64;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("contrastive loss is not finite ({loss})")));
    }

    let dim = all[0].len();
    let mut grads = vec![vec![0.0; dim]; m];
    for a in 0..m {
        for b in 0..m {
            let w = (g[a * m + b] + g[b * m + a]) / temperature;
            if w != 0.0 {
                for (d, v) in grads[a].iter_mut().zip(all[b]) {
                    *d += w * v;
                }
            }
        }
    }
    Ok((loss, grads))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn unit(rng: &mut seed::Rng, d: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = dot(&v, &v).sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    fn random_batch(seed: u64, n: usize, d: usize, hard: bool) -> ContrastiveBatch {
        let mut rng = seed::rng(seed);
        let mut block = || (0..n).map(|_| unit(&mut rng, d)).collect::<Vec<_>>();
        let (a, b) = (block(), block());
        let h = hard.then(|| (block(), block()));
        ContrastiveBatch::new(a, b, h).unwrap()
    }

    fn gamma(a: &[f64], b: &[f64], tau: f64) -> f64 {
        let cos = dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt());
        (cos / tau).exp()
    }

    /// Spells out every term of the four-part objective.
    fn oracle(b: &ContrastiveBatch, tau: f64) -> f64 {
        let (ha, hb) = b.hard.as_ref().unwrap();
        let n = b.pairs();
        let term = |anchor: &[f64], pos: &[f64], same: &[Vec<f64>], other: &[Vec<f64>], hs: &[Vec<f64>], ho: &[Vec<f64>], i: usize| {
            let mut denom = 0.0;
            for k in 0..n {
                denom += gamma(anchor, &other[k], tau) + gamma(anchor, &ho[k], tau) + gamma(anchor, &hs[k], tau);
                if k != i {
                    denom += gamma(anchor, &same[k], tau);
                }
            }
            -(gamma(anchor, pos, tau) / denom).ln()
        };
        let mut total = 0.0;
        for i in 0..n {
            total += term(&b.z_a[i], &b.z_b[i], &b.z_a, &b.z_b, ha, hb, i);
            total += term(&b.z_b[i], &b.z_a[i], &b.z_b, &b.z_a, hb, ha, i);
            // hard anchors: the remaining 4N-1 embeddings are negatives
            total += term(&ha[i], &hb[i], ha, hb, &b.z_a, &b.z_b, i);
            total += term(&hb[i], &ha[i], hb, ha, &b.z_b, &b.z_a, i);
        }
        total / (4 * n) as f64
    }

    fn two_view_oracle(b: &ContrastiveBatch, tau: f64) -> f64 {
        let n = b.pairs();
        let views: Vec<&Vec<f64>> = b.z_a.iter().chain(&b.z_b).collect();
        let mut total = 0.0;
        for a in 0..2 * n {
            let pos = if a < n { a + n } else { a - n };
            let denom: f64 = (0..2 * n).filter(|&k| k != a).map(|k| gamma(views[a], views[k], tau)).sum();
            total -= (gamma(views[a], views[pos], tau) / denom).ln();
        }
        total / (2 * n) as f64
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn matches_term_enumeration(seed in any::<u64>(), n in 2usize..=4, d in 1usize..=8, tau in 0.05f64..2.0) {
            let b = random_batch(seed, n, d, true);
            let got = nt_xent_loss(&b, tau).unwrap();
            prop_assert!((got - oracle(&b, tau)).abs() <= 1e-6);
        }

        #[test]
        fn without_hard_negatives_is_two_view_nt_xent(seed in any::<u64>(), n in 2usize..=4, d in 1usize..=8) {
            let b = random_batch(seed, n, d, false);
            prop_assert!((nt_xent_loss(&b, 0.1).unwrap() - two_view_oracle(&b, 0.1)).abs() <= 1e-6);
        }

        #[test]
        fn invariant_under_joint_permutation(seed in any::<u64>(), rot in 1usize..4) {
            let b = random_batch(seed, 4, 5, true);
            let mut p = b.clone();
            p.z_a.rotate_left(rot);
            p.z_b.rotate_left(rot);
            let (ha, hb) = p.hard.as_mut().unwrap();
            ha.rotate_left(rot);
            hb.rotate_left(rot);
            prop_assert!((nt_xent_loss(&b, 0.1).unwrap() - nt_xent_loss(&p, 0.1).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_vectors_match_oracle() {
        let v = vec![0.6, 0.8];
        let block = vec![v.clone(), v.clone()];
        let b = ContrastiveBatch::new(block.clone(), block.clone(), Some((block.clone(), block))).unwrap();
        let got = nt_xent_loss(&b, 0.1).unwrap();
        assert!((got - oracle(&b, 0.1)).abs() < 1e-6);
        assert!((got - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn aligned_positives_beat_shuffled_pairing() {
        let e = |i: usize| {
            let mut v = vec![0.0; 8];
            v[i] = 1.0;
            v
        };
        let a: Vec<Vec<f64>> = (0..2).map(e).collect();
        let ha: Vec<Vec<f64>> = (2..4).map(e).collect();
        let hb: Vec<Vec<f64>> = (4..6).map(e).collect();
        let good = ContrastiveBatch::new(a.clone(), a.clone(), Some((ha.clone(), hb.clone()))).unwrap();
        let shuffled = ContrastiveBatch::new(a.clone(), vec![a[1].clone(), a[0].clone()], Some((ha, hb))).unwrap();
        assert!(nt_xent_loss(&good, 0.1).unwrap() < nt_xent_loss(&shuffled, 0.1).unwrap());
    }

    #[test]
    fn rejects_small_or_malformed_batches() {
        let v = vec![vec![1.0, 0.0]];
        assert!(matches!(
            ContrastiveBatch::new(v.clone(), v.clone(), None),
            Err(Error::Validation(_))
        ));
        let two = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(ContrastiveBatch::new(two.clone(), vec![vec![2.0, 0.0], vec![0.0, 1.0]], None).is_err());
        assert!(ContrastiveBatch::new(two.clone(), two.clone(), Some((two.clone(), v))).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let b = random_batch(11, 3, 4, true);
        let tau = 0.2;
        let (_, grads) = nt_xent_loss_and_grad(&b, tau).unwrap();
        // perturb without renormalizing: evaluate the stacked-similarity loss directly
        let flat: Vec<Vec<f64>> = b.blocks().into_iter().flatten().cloned().collect();
        let eval = |flat: &[Vec<f64>]| {
            let n = 3;
            let m = flat.len();
            let mut total = 0.0;
            for a in 0..m {
                let p = ((a / n) ^ 1) * n + a % n;
                let denom: f64 = (0..m).filter(|&k| k != a).map(|k| (dot(&flat[a], &flat[k]) / tau).exp()).sum();
                total -= dot(&flat[a], &flat[p]) / tau - denom.ln();
            }
            total / m as f64
        };
        let eps = 1e-6;
        for a in 0..flat.len() {
            for j in 0..4 {
                let mut f = flat.clone();
                f[a][j] += eps;
                let up = eval(&f);
                f[a][j] -= 2.0 * eps;
                let down = eval(&f);
                assert!(((up - down) / (2.0 * eps) - grads[a][j]).abs() < 1e-7);
            }
        }
    }
}
