use std::path::Path;

use degmon::config::RunConfig;

fn shipped() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml")
}

#[test]
fn shipped_default_matches_builtin_defaults() {
    let cfg = RunConfig::load(&shipped()).unwrap();
    let mut builtin = RunConfig::default();
    builtin.paths.output_dir = cfg.paths.output_dir.clone();
    assert_eq!(cfg, builtin);
    assert_eq!(cfg.config_hash(), RunConfig::default().config_hash());
}

#[test]
fn toml_round_trip_keeps_the_hash() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.seed = 17;
    cfg.train.epochs = 7;
    let path = dir.path().join("c.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    let back = RunConfig::load(&path).unwrap();
    assert_eq!(back.config_hash(), cfg.config_hash());
    assert_ne!(back.config_hash(), RunConfig::default().config_hash());
}
