use super::*;
use crate::synth::{self, SceneStyle};

fn scene(seed: u64, size: usize) -> ImageBuffer {
    synth::generate(seed, size, SceneStyle::Shapes).unwrap()
}

fn default_sampler() -> CompositionSampler {
    CompositionSampler::from_config(&DegradationConfig::default()).unwrap()
}

#[test]
fn zero_strength_is_identity_for_every_operator() {
    let img = scene(3, 24);
    for op in OpKind::ALL {
        let out = apply_operator(&img, op, 0.0, 11).unwrap();
        assert_eq!(out, img, "{op} at zero strength");
    }
}

#[test]
fn unknown_operator_and_out_of_domain_strength_are_rejected() {
    let img = scene(1, 8);
    assert!(matches!(
        apply_operator_by_id(&img, "fog", 0.1, 0),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        apply_operator(&img, OpKind::GaussianNoise, -0.1, 0),
        Err(Error::Validation(_))
    ));
    assert!(matches!(
        apply_operator(&img, OpKind::Jpeg, 120.0, 0),
        Err(Error::Validation(_))
    ));
}

#[test]
fn gaussian_noise_residual_grows_with_severity() {
    let img = scene(5, 64);
    let ladder = DegradationConfig::default().train["gaussian_noise"];
    let residuals: Vec<f64> = (1..=LEVELS)
        .map(|s| apply_operator(&img, OpKind::GaussianNoise, ladder.level(s), 99).unwrap().mse(&img))
        .collect();
    assert!(residuals.windows(2).all(|w| w[0] < w[1]), "{residuals:?}");
}

#[test]
fn brighten_raises_mid_gray() {
    let gray = ImageBuffer::filled(16, 16, [0.5; 3]).unwrap();
    let ladder = DegradationConfig::default().train["brighten"];
    let out = apply_operator(&gray, OpKind::Brighten, ladder.level(3), 0).unwrap();
    assert!(out.mean() > 0.5);
}

#[test]
fn resolution_operator_restores_dimensions() {
    let img = scene(2, 37);
    let out = apply_operator(&img, OpKind::Pixelate, 0.7, 0).unwrap();
    assert_eq!((out.height(), out.width()), (37, 37));
}

#[test]
fn outputs_stay_clamped_under_random_applications() {
    let mut rng = seed::rng(1234);
    let images: Vec<ImageBuffer> = (0..8).map(|i| scene(i, 6)).collect();
    for i in 0..100_000u64 {
        let op = OpKind::ALL[rng.random_range(0..OpKind::ALL.len())];
        let (lo, hi) = op.domain();
        let strength = lo + (hi - lo) * rng.random::<f64>();
        let img = &images[(i % 8) as usize];
        let out = apply_operator(img, op, strength, i).unwrap();
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)), "{op} {strength}");
    }
}

#[test]
fn single_operator_composition_when_bounded_to_one() {
    let sampler = default_sampler();
    for s in 0..50 {
        let comp = sampler.sample_composition(s, 1, &Group::ALL).unwrap();
        assert_eq!(comp.ops.len(), 1);
    }
}

#[test]
fn composition_counts_are_uniform_and_groups_exclusive() {
    let sampler = default_sampler();
    let mut counts = [0usize; 4];
    for s in 0..10_000u64 {
        let comp = sampler.sample_composition(s, 4, &Group::ALL).unwrap();
        counts[comp.ops.len() - 1] += 1;
        let mut groups: Vec<Group> = comp.ops.iter().map(|(op, _)| op.group()).collect();
        groups.sort();
        groups.dedup();
        assert_eq!(groups.len(), comp.ops.len());
    }
    // chi-square with 3 dof, 0.999 quantile 16.27
    let expected = 2500.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    assert!(chi2 < 16.27, "chi2 {chi2} counts {counts:?}");
}

#[test]
fn composition_sampling_is_deterministic() {
    let sampler = default_sampler();
    assert_eq!(
        sampler.sample_composition(77, 4, &Group::ALL).unwrap(),
        sampler.sample_composition(77, 4, &Group::ALL).unwrap()
    );
}

#[test]
fn composition_sampling_validates_bounds() {
    let sampler = default_sampler();
    assert!(matches!(
        sampler.sample_composition(0, 3, &[Group::Blur, Group::Noise]),
        Err(Error::Validation(_))
    ));
    assert!(sampler.sample_composition(0, 0, &Group::ALL).is_err());
    assert!(sampler.sample_composition(0, 1, &[]).is_err());
}

#[test]
fn composition_rejects_repeated_group() {
    assert!(CompositionSpec::new(vec![(OpKind::GaussianBlur, 1.0), (OpKind::MotionBlur, 2.0)]).is_err());
}

#[test]
fn composition_is_order_sensitive_and_deterministic() {
    let img = scene(9, 32);
    let ab = CompositionSpec::new(vec![(OpKind::GaussianNoise, 0.1), (OpKind::GaussianBlur, 1.5)]).unwrap();
    let ba = CompositionSpec::new(vec![(OpKind::GaussianBlur, 1.5), (OpKind::GaussianNoise, 0.1)]).unwrap();
    let out_ab = apply_composition(&img, &ab, 5).unwrap();
    let out_ba = apply_composition(&img, &ba, 5).unwrap();
    assert_ne!(out_ab, out_ba);
    assert_eq!(out_ab, apply_composition(&img, &ab, 5).unwrap());
    let id = CompositionSpec::new(vec![(OpKind::GaussianNoise, 0.0)]).unwrap();
    assert_eq!(apply_composition(&img, &id, 5).unwrap(), img);
}

#[test]
fn zero_strength_template_yields_identical_views() {
    let sampler = CompositionSampler::new([(OpKind::GaussianNoise, Ladder([0.0; LEVELS]))]).unwrap();
    let img = scene(4, 16);
    let pair = generate_views(&sampler, &img, &[OpKind::GaussianNoise], 3, 32).unwrap();
    let expected = img.resize(32, 32).unwrap();
    assert_eq!(pair.a, expected);
    assert_eq!(pair.b, expected);
}

#[test]
fn views_share_sequence_but_not_realization() {
    let sampler = default_sampler();
    let img = scene(4, 32);
    let template = [OpKind::GaussianNoise];
    let pair = generate_views(&sampler, &img, &template, 8, 32).unwrap();
    assert_eq!(pair.provenance.view_a.template(), pair.provenance.view_b.template());
    assert_eq!(pair.provenance.template, template.to_vec());
    assert_ne!(pair.a, pair.b);
    let again = generate_views(&sampler, &img, &template, 8, 32).unwrap();
    assert_eq!(again.a, pair.a);
    assert_eq!(again.b, pair.b);
}

#[test]
fn hard_negative_crops_the_center_half() {
    // a marker pixel block at the crop corner (160, 160) must map to the output corner
    let mut data = vec![0.0; 640 * 640 * 3];
    for y in 0..640 {
        for x in 0..640 {
            if (160..480).contains(&y) && (160..480).contains(&x) {
                data[(y * 640 + x) * 3] = 1.0;
            }
        }
    }
    let img = ImageBuffer::new(640, 640, data).unwrap();
    let hn = make_hard_negative(&img, 640).unwrap();
    assert_eq!((hn.height(), hn.width()), (640, 640));
    assert!(hn.data().chunks(3).all(|p| (p[0] - 1.0).abs() < 1e-12));

    let crop = img.crop(160, 160, 320, 320).unwrap();
    assert_eq!(hn, crop.resize(640, 640).unwrap());
}

#[test]
fn hard_negative_keeps_constant_fields_and_drops_fine_detail() {
    let flat = ImageBuffer::filled(32, 32, [0.3, 0.6, 0.9]).unwrap();
    let hn = make_hard_negative(&flat, 32).unwrap();
    assert!(hn.mean_abs_diff(&flat) < 1e-12);

    let checker: Vec<f64> = (0..32 * 32)
        .flat_map(|i| {
            let (y, x) = (i / 32, i % 32);
            [((y + x) % 2) as f64; 3]
        })
        .collect();
    let checker = ImageBuffer::new(32, 32, checker).unwrap();
    let hn = make_hard_negative(&checker, 32).unwrap();
    assert!(hn.mean_abs_diff(&checker) > 0.0);

    assert!(make_hard_negative(&ImageBuffer::filled(1, 4, [0.0; 3]).unwrap(), 4).is_err());
}

#[test]
fn crop_then_degrade_order_differs_from_default() {
    let sampler = default_sampler();
    let img = scene(12, 32);
    let comp = sampler.parameterize(&[OpKind::GaussianNoise], 4).unwrap();
    let degraded = apply_composition(&img, &comp, 1).unwrap();
    let main = hard_negative_for(HardNegativeOrder::DegradeThenCrop, &img, &degraded, &comp, 1, 32).unwrap();
    let alt = hard_negative_for(HardNegativeOrder::CropThenDegrade, &img, &degraded, &comp, 1, 32).unwrap();
    assert_eq!(main, make_hard_negative(&degraded, 32).unwrap());
    assert_ne!(main, alt);
}

#[test]
fn benchmark_assigns_round_robin() {
    let ids: Vec<String> = ["d", "a", "c", "b"].iter().map(|s| s.to_string()).collect();
    let corr: Vec<String> = ["c0", "c1", "c2"].iter().map(|s| s.to_string()).collect();
    let bench = build_severity_benchmark(&ids, &corr, &[1, 2, 3, 4, 5], 0).unwrap();
    let at = |sev: usize| -> Vec<(String, String)> {
        bench
            .at_severity(sev)
            .map(|e| (e.image_id.clone(), e.corruption_id.clone()))
            .collect()
    };
    let sev1 = at(1);
    let got: Vec<&str> = sev1.iter().map(|(_, c)| c.as_str()).collect();
    assert_eq!(got, ["c0", "c1", "c2", "c0"]);
    assert_eq!(sev1[0].0, "a");
    assert_eq!(at(2), at(5));
    assert_eq!(bench.entries.len(), 20);
    assert!(build_severity_benchmark(&ids, &[], &[1], 0).is_err());
    assert!(build_severity_benchmark(&[], &corr, &[1], 0).is_err());
}

#[test]
fn benchmark_manifest_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let ids: Vec<String> = (0..3).map(|i| format!("img{i}")).collect();
    let cfg = DegradationConfig::default();
    let bench = build_severity_benchmark(&ids, &cfg.eval.corruptions, &[1, 5], 42).unwrap();
    let render = |root: &std::path::Path| {
        materialize_benchmark(&bench, root, &cfg.eval.ladders, |id| {
            Ok(scene(id.len() as u64 + id.as_bytes()[3] as u64, 16))
        })
        .unwrap()
    };
    let m1 = render(&dir.path().join("run1"));
    let m2 = render(&dir.path().join("run2"));
    assert_eq!(std::fs::read(&m1).unwrap(), std::fs::read(&m2).unwrap());
    let header = std::fs::read_to_string(&m1).unwrap();
    assert!(header.starts_with("image_id,corruption_id,severity,relpath,seed\n"));
    let back = SeverityBenchmark::read_manifest(&m1).unwrap();
    assert_eq!(back.entries, bench.entries);
    for e in &bench.entries {
        let a = std::fs::read(dir.path().join("run1").join(&e.relpath)).unwrap();
        let b = std::fs::read(dir.path().join("run2").join(&e.relpath)).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn default_config_validates() {
    DegradationConfig::default().validate().unwrap();
    let mut bad = DegradationConfig::default();
    bad.max_ops = 9;
    assert!(bad.validate().is_err());
    let mut bad = DegradationConfig::default();
    bad.train.insert("gaussian_noise".into(), Ladder([0.1, 0.1, 0.2, 0.3, 0.4]));
    assert!(bad.validate().is_err());
}
