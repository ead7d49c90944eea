use super::*;
use crate::backbone::{FeatureTapConfig, TapSpec};
use proptest::prelude::*;

fn taps() -> FeatureTapConfig {
    FeatureTapConfig {
        taps: vec![
            TapSpec {
                stage_index: 1,
                channels: 3,
                stride: 2,
            },
            TapSpec {
                stage_index: 2,
                channels: 4,
                stride: 4,
            },
        ],
    }
}

fn small_cfg() -> ProjectionConfig {
    ProjectionConfig {
        reduce_dim: 3,
        embed_dim: 4,
        mlp_hidden: 5,
        ..Default::default()
    }
}

fn map(channels: usize, side: usize, seed: u64) -> FeatureMap {
    use rand::Rng;
    let mut rng = seed::rng(seed);
    FeatureMap {
        channels,
        height: side,
        width: side,
        data: (0..channels * side * side).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

fn sample(seed: u64) -> FeatureMapSet {
    FeatureMapSet {
        maps: vec![map(3, 4, seed), map(4, 2, seed + 100)],
    }
}

fn randomize_free_params(head: &mut ManifoldHead, seed: u64) {
    use rand::Rng;
    let mut rng = seed::rng(seed);
    let [_, b1, _, b2] = head.mlp_slots();
    let slots = (0..2).filter_map(|l| head.scorer_slot(l)).chain([b1, b2]).collect::<Vec<_>>();
    for u in slots {
        head.params_mut().data_mut(u).iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    }
}

#[test]
fn zero_scorer_attention_equals_gap() {
    let att = ManifoldHead::new(small_cfg(), &taps(), 1).unwrap();
    let gap = ManifoldHead::new(
        ProjectionConfig {
            pool: PoolMode::Gap,
            ..small_cfg()
        },
        &taps(),
        1,
    )
    .unwrap();
    let fm = sample(3);
    let r = att.reduce_layer(&fm.maps[0], 0).unwrap();
    let a = att.attention_pool(&r, 0).unwrap();
    let g = gap.attention_pool(&gap.reduce_layer(&fm.maps[0], 0).unwrap(), 0).unwrap();
    for (x, y) in a.iter().zip(&g) {
        assert!((x - y).abs() < 1e-12);
    }
    let mean: f64 = r.data[..16].iter().sum::<f64>() / 16.0;
    assert!((a[0] - mean).abs() < 1e-12);
}

#[test]
fn fuse_checks_count_and_dims() {
    let head = ManifoldHead::new(small_cfg(), &taps(), 1).unwrap();
    assert_eq!(head.fuse(&[vec![1.0; 3], vec![2.0; 3]]).unwrap().len(), 6);
    assert!(matches!(head.fuse(&[vec![1.0; 3]]), Err(Error::Validation(_))));
    assert!(matches!(head.fuse(&[vec![1.0; 3], vec![2.0; 2]]), Err(Error::Validation(_))));
}

#[test]
fn projection_is_unit_norm_and_rejects_zero() {
    let mut head = ManifoldHead::new(small_cfg(), &taps(), 2).unwrap();
    let z = head.embed(&sample(4)).unwrap();
    let norm: f64 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-12);
    let [_, _, w2, b2] = head.mlp_slots();
    head.params_mut().data_mut(w2).fill(0.0);
    head.params_mut().data_mut(b2).fill(0.0);
    assert!(matches!(head.embed(&sample(4)), Err(Error::Numerical(_))));
}

#[test]
fn last_layer_only_reads_deepest_tap() {
    let cfg = ProjectionConfig {
        last_layer_only: true,
        ..small_cfg()
    };
    let head = ManifoldHead::new(cfg, &taps(), 1).unwrap();
    assert_eq!(head.used_taps(), 1);
    assert_eq!(head.fused_dim(), 3);
    assert!(head.reduce_slot(0).is_none());
    assert!(head.reduce_layer(&sample(1).maps[0], 0).is_err());
    let mut a = sample(1);
    let z1 = head.embed(&a).unwrap();
    a.maps[0] = map(3, 4, 999);
    assert_eq!(head.embed(&a).unwrap(), z1);
}

#[test]
fn batch_forward_matches_single_embeddings() {
    let mut head = ManifoldHead::new(small_cfg(), &taps(), 5).unwrap();
    randomize_free_params(&mut head, 6);
    let samples: Vec<FeatureMapSet> = (0..3).map(|i| sample(10 + i)).collect();
    let batch = FeatureBatch::from_samples(&samples).unwrap();
    let (zs, _) = head.forward_batch(&batch, false).unwrap();
    for (s, z) in samples.iter().zip(&zs) {
        let single = head.embed(s).unwrap();
        for (a, b) in single.iter().zip(z) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

fn check_backward(pool: PoolMode, last_layer_only: bool) {
    let cfg = ProjectionConfig {
        pool,
        last_layer_only,
        ..small_cfg()
    };
    let mut head = ManifoldHead::new(cfg, &taps(), 7).unwrap();
    randomize_free_params(&mut head, 8);
    let samples: Vec<FeatureMapSet> = (0..3).map(|i| sample(20 + i)).collect();
    let batch = FeatureBatch::from_samples(&samples).unwrap();
    let weights: Vec<Vec<f64>> = (0..3)
        .map(|i| (0..4).map(|j| ((i * 4 + j) as f64 * 0.37).sin()).collect())
        .collect();
    let loss = |h: &ManifoldHead, b: &FeatureBatch| -> f64 {
        let (zs, _) = h.forward_batch(b, false).unwrap();
        zs.iter()
            .zip(&weights)
            .map(|(z, w)| z.iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    };
    let (_, cache) = head.forward_batch(&batch, true).unwrap();
    let mut grads = head.params().zeros_like();
    let tap_grads = head.backward(&batch, &cache.unwrap(), &weights, &mut grads);
    let eps = 1e-6;
    for slot in 0..head.params().len() {
        for j in 0..head.params().data(slot).len() {
            let mut h = head.clone();
            h.params_mut().data_mut(slot)[j] += eps;
            let up = loss(&h, &batch);
            h.params_mut().data_mut(slot)[j] -= 2.0 * eps;
            let down = loss(&h, &batch);
            let fd = (up - down) / (2.0 * eps);
            assert!((fd - grads[slot][j]).abs() < 1e-6, "param {slot}[{j}]: fd {fd} vs {}", grads[slot][j]);
        }
    }
    for l in 0..2 {
        for j in 0..batch.maps[l].data.len() {
            let mut b = batch.clone();
            b.maps[l].data[j] += eps;
            let up = loss(&head, &b);
            b.maps[l].data[j] -= 2.0 * eps;
            let down = loss(&head, &b);
            let fd = (up - down) / (2.0 * eps);
            assert!((fd - tap_grads[l][j]).abs() < 1e-6, "tap {l}[{j}]: fd {fd} vs {}", tap_grads[l][j]);
        }
    }
}

#[test]
fn backward_matches_finite_differences_attention() {
    check_backward(PoolMode::Attention, false);
}

#[test]
fn backward_matches_finite_differences_gap_and_last_layer() {
    check_backward(PoolMode::Gap, false);
    check_backward(PoolMode::Attention, true);
}

proptest! {
    #[test]
    fn pooling_is_invariant_to_spatial_permutation(seed in 0u64..1000, rot in 1usize..16) {
        let mut head = ManifoldHead::new(small_cfg(), &taps(), seed).unwrap();
        randomize_free_params(&mut head, seed + 1);
        let m = map(3, 4, seed + 2);
        let mut shuffled = m.clone();
        for c in 0..3 {
            shuffled.data[c * 16..(c + 1) * 16].rotate_left(rot);
        }
        let a = head.attention_pool(&head.reduce_layer(&m, 0).unwrap(), 0).unwrap();
        let b = head.attention_pool(&head.reduce_layer(&shuffled, 0).unwrap(), 0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
