use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use degmon::backbone::BackboneConfig;
use degmon::degrade::{apply_operator, OpKind};
use degmon::eval::FlowMonitor;
use degmon::flow::{FlowBaseline, FlowConfig};
use degmon::head::ProjectionConfig;
use degmon::model::{ManifoldModel, ModelSpec};
use degmon::prototype::PristinePrototype;
use degmon::synth::{self, SceneStyle};
use degmon::ImageBuffer;
use degmon_ffi::*;

fn tiny_model() -> ManifoldModel {
    let spec = ModelSpec {
        input_size: 16,
        backbone: BackboneConfig {
            widths: vec![4, 6, 8],
            taps: vec![1, 2, 3],
        },
        head: ProjectionConfig {
            reduce_dim: 4,
            embed_dim: 8,
            mlp_hidden: 16,
            ..Default::default()
        },
    };
    let mut m = ManifoldModel::new(spec, 3).unwrap();
    let z = m.embed(&[scene(0)]).unwrap().remove(0);
    m.prototype = Some(PristinePrototype::from_mu(z, 0.99, 1).unwrap());
    m
}

fn scene(i: u64) -> ImageBuffer {
    synth::generate(i, 16, SceneStyle::Shapes).unwrap().quantized()
}

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    unsafe {
        degmon_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

struct Fixture {
    _dir: tempfile::TempDir,
    model: PathBuf,
    flow: PathBuf,
    rust: ManifoldModel,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let rust = tiny_model();
    let model = dir.path().join("m.ckpt");
    rust.save(&model).unwrap();
    let images: Vec<ImageBuffer> = (0..24).map(scene).collect();
    let layers = vec![0, 1];
    let per_layer = FlowMonitor::pooled(&rust, &images, &layers).unwrap();
    let cfg = FlowConfig {
        epochs: 2,
        hidden: 8,
        ..Default::default()
    };
    let nf = FlowBaseline::train(&layers, &per_layer, &cfg, 0).unwrap();
    let flow = dir.path().join("nf.ckpt");
    nf.to_container(8, "h").unwrap().write(&flow).unwrap();
    Fixture {
        _dir: dir,
        model,
        flow,
        rust,
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(degmon_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn model_scores_match_the_rust_api() {
    let fx = fixture();
    let mut handle = ptr::null_mut();
    let p = cpath(&fx.model);
    assert_eq!(unsafe { degmon_model_load(p.as_ptr(), &mut handle) }, DegmonStatus::Ok);
    assert!(!handle.is_null());
    unsafe {
        assert_eq!(degmon_model_input_size(handle), 16);
        assert_eq!(degmon_model_embed_dim(handle), 8);
    }

    let img = scene(5);
    let rgb = img.to_rgb8();
    let mut s = f64::NAN;
    assert_eq!(
        unsafe { degmon_model_score_rgb8(handle, rgb.as_ptr(), 16, 16, &mut s) },
        DegmonStatus::Ok
    );
    assert_eq!(s, fx.rust.score(&[img.clone()]).unwrap()[0].0);

    let mut z = vec![0.0; 8];
    assert_eq!(
        unsafe { degmon_model_embed_rgb8(handle, rgb.as_ptr(), 16, 16, z.as_mut_ptr(), z.len()) },
        DegmonStatus::Ok
    );
    assert_eq!(z, fx.rust.embed(&[img]).unwrap()[0]);
    assert_eq!(
        unsafe { degmon_model_embed_rgb8(handle, rgb.as_ptr(), 16, 16, z.as_mut_ptr(), 3) },
        DegmonStatus::InvalidArgument
    );

    let mut s0 = f64::NAN;
    let rgb0 = scene(0).to_rgb8();
    unsafe { degmon_model_score_rgb8(handle, rgb0.as_ptr(), 16, 16, &mut s0) };
    assert!(s0.abs() < 1e-9, "prototype image scores {s0}");

    let png = fx.model.with_file_name("x.png");
    scene(5).save_png(&png).unwrap();
    let mut sf = f64::NAN;
    let pp = cpath(&png);
    assert_eq!(
        unsafe { degmon_model_score_file(handle, pp.as_ptr(), &mut sf) },
        DegmonStatus::Ok
    );
    assert_eq!(sf, s);
    unsafe { degmon_model_free(handle) };
}

#[test]
fn flow_scores_match_the_rust_api() {
    let fx = fixture();
    let (mut m, mut f) = (ptr::null_mut(), ptr::null_mut());
    let (mp, fp) = (cpath(&fx.model), cpath(&fx.flow));
    unsafe {
        assert_eq!(degmon_model_load(mp.as_ptr(), &mut m), DegmonStatus::Ok);
        assert_eq!(degmon_flow_load(fp.as_ptr(), &mut f), DegmonStatus::Ok);
    }
    let img = scene(7);
    let rgb = img.to_rgb8();
    let mut s = f64::NAN;
    assert_eq!(
        unsafe { degmon_flow_score_rgb8(f, m, rgb.as_ptr(), 16, 16, &mut s) },
        DegmonStatus::Ok
    );
    let (nf, _) = FlowBaseline::from_container(&degmon::container::Container::read(&fx.flow).unwrap()).unwrap();
    let expected = degmon::eval::Monitor::score_images(
        &FlowMonitor {
            id: String::new(),
            model: &fx.rust,
            baseline: nf,
        },
        &[img],
    )
    .unwrap()[0];
    assert_eq!(s, expected);
    unsafe {
        degmon_flow_free(f);
        degmon_model_free(m);
    }
}

#[test]
fn errors_map_to_status_codes_with_messages() {
    let mut handle = ptr::null_mut();
    let missing = CString::new("/no/such/model.ckpt").unwrap();
    assert_eq!(unsafe { degmon_model_load(missing.as_ptr(), &mut handle) }, DegmonStatus::Io);
    assert!(handle.is_null());
    assert!(last_error().contains("/no/such/model.ckpt"));

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a container").unwrap();
    let jp = cpath(&junk);
    assert_eq!(unsafe { degmon_model_load(jp.as_ptr(), &mut handle) }, DegmonStatus::Format);

    assert_eq!(unsafe { degmon_model_load(ptr::null(), &mut handle) }, DegmonStatus::NullPointer);
    assert_eq!(unsafe { degmon_model_load(jp.as_ptr(), ptr::null_mut()) }, DegmonStatus::NullPointer);
    let mut s = 0.0;
    assert_eq!(
        unsafe { degmon_model_score_rgb8(ptr::null(), [0u8; 3].as_ptr(), 1, 1, &mut s) },
        DegmonStatus::NullPointer
    );
    assert_eq!(last_error(), "model is null");

    let needed = unsafe { degmon_last_error(ptr::null_mut(), 0) };
    assert_eq!(needed, "model is null".len());
    let mut small = [0x7f as std::ffi::c_char; 4];
    unsafe { degmon_last_error(small.as_mut_ptr(), small.len()) };
    assert_eq!(unsafe { CStr::from_ptr(small.as_ptr()) }.to_str().unwrap(), "mod");

    unsafe {
        degmon_model_free(ptr::null_mut());
        degmon_flow_free(ptr::null_mut());
        assert_eq!(degmon_model_input_size(ptr::null()), 0);
    }
}

#[test]
fn gate_and_auroc() {
    assert!(degmon_gate(0.5, 0.5));
    assert!(!degmon_gate(0.5000001, 0.5));
    let id = [0.1, 0.2, 0.3];
    let ood = [0.25, 0.4];
    let mut a = 0.0;
    assert_eq!(
        unsafe { degmon_auroc(id.as_ptr(), 3, ood.as_ptr(), 2, &mut a) },
        DegmonStatus::Ok
    );
    assert!((a - 5.0 / 6.0).abs() < 1e-12);
    assert_eq!(
        unsafe { degmon_auroc(id.as_ptr(), 3, ood.as_ptr(), 0, &mut a) },
        DegmonStatus::Validation
    );
}

#[test]
fn operator_matches_the_rust_api() {
    let img = scene(2);
    let rgb = img.to_rgb8();
    let mut out = vec![0u8; rgb.len()];
    let op = CString::new("gaussian_noise").unwrap();
    assert_eq!(
        unsafe { degmon_apply_operator_rgb8(rgb.as_ptr(), 16, 16, op.as_ptr(), 0.1, 9, out.as_mut_ptr()) },
        DegmonStatus::Ok
    );
    let expected = apply_operator(&img, OpKind::GaussianNoise, 0.1, 9).unwrap().to_rgb8();
    assert_eq!(out, expected);

    let bad = CString::new("fog").unwrap();
    assert_ne!(
        unsafe { degmon_apply_operator_rgb8(rgb.as_ptr(), 16, 16, bad.as_ptr(), 0.1, 9, out.as_mut_ptr()) },
        DegmonStatus::Ok
    );
    assert!(last_error().contains("fog"));
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/degmon.h")).unwrap();
    for name in [
        "degmon_version",
        "degmon_last_error",
        "degmon_model_load",
        "degmon_model_free",
        "degmon_model_input_size",
        "degmon_model_embed_dim",
        "degmon_model_embed_rgb8",
        "degmon_model_score_rgb8",
        "degmon_model_score_file",
        "degmon_gate",
        "degmon_flow_load",
        "degmon_flow_free",
        "degmon_flow_score_rgb8",
        "degmon_apply_operator_rgb8",
        "degmon_auroc",
        "DEGMON_STATUS_NULL_POINTER",
        "typedef struct DegmonModel DegmonModel",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"degmon.h\"\nint main(void) { DegmonModel *m = 0; return (int)degmon_model_input_size(m); }\n",
    )
    .unwrap();
    let status = std::process::Command::new("cc")
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .status();
    match status {
        Ok(s) => assert!(s.success(), "C compiler rejected the header"),
        Err(_) => eprintln!("no C compiler available; skipping"),
    }
}
