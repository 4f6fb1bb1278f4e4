use std::fs;

use lpg_depth::checkpoint::Checkpoint;
use lpg_depth::config::RunConfig;
use lpg_depth::network::{build_model, ModelConfig};
use lpg_depth::optim::AdamState;
use lpg_depth::synth::{gen_dataset, generate_sample, load_dataset, read_manifest, SynthConfig, MANIFEST};
use lpg_depth::Error;
use tempfile::TempDir;

fn small() -> SynthConfig {
    SynthConfig {
        width: 24,
        height: 16,
        ..SynthConfig::default()
    }
}

#[test]
fn empty_dataset_has_empty_manifest() {
    let tmp = TempDir::new().unwrap();
    gen_dataset(0, &small(), 1, tmp.path()).unwrap();
    assert_eq!(fs::read_to_string(tmp.path().join(MANIFEST)).unwrap(), "");
    assert!(load_dataset(tmp.path()).unwrap().is_empty());
}

#[test]
fn regeneration_is_byte_identical() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    gen_dataset(3, &small(), 9, a.path()).unwrap();
    gen_dataset(3, &small(), 9, b.path()).unwrap();
    let entries = read_manifest(a.path()).unwrap();
    assert_eq!(entries.len(), 3);
    for e in &entries {
        for p in [&e.image, &e.depth, &e.mask] {
            let other = b.path().join(p.file_name().unwrap());
            assert_eq!(fs::read(p).unwrap(), fs::read(other).unwrap(), "{}", p.display());
        }
    }
}

#[test]
fn files_reload_as_generated() {
    let tmp = TempDir::new().unwrap();
    let cfg = SynthConfig {
        gt_dropout: 0.3,
        ..small()
    };
    gen_dataset(2, &cfg, 4, tmp.path()).unwrap();
    for (i, s) in load_dataset(tmp.path()).unwrap().iter().enumerate() {
        let want = generate_sample(&cfg, 4, i as u64).unwrap();
        assert_eq!(s.depth.data, want.depth.data);
        assert_eq!(s.mask, want.mask);
        for (a, b) in s.image.data().iter().zip(want.image.data()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-7);
        }
    }
}

#[test]
fn missing_manifest_names_the_path() {
    let tmp = TempDir::new().unwrap();
    let err = load_dataset(tmp.path()).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains(MANIFEST));
}

#[test]
fn checkpoint_file_round_trip() {
    let tmp = TempDir::new().unwrap();
    let cfg = ModelConfig {
        base_width: 4,
        input_size: (16, 16),
        variant: "aspp_upconv".into(),
        ..ModelConfig::default()
    };
    let (_, params) = build_model(cfg.clone()).unwrap();
    let ck = Checkpoint::new(cfg, params, AdamState::new(), 0);
    let (p1, p2) = (tmp.path().join("a.ckpt"), tmp.path().join("b.ckpt"));
    ck.save(&p1).unwrap();
    Checkpoint::load(&p1).unwrap().save(&p2).unwrap();
    assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    assert_eq!(&fs::read(&p1).unwrap()[..4], b"LPGD");
}

#[test]
fn config_text_round_trips() {
    let mut cfg = RunConfig::default();
    cfg.set("variant", "aspp").unwrap();
    cfg.set("aspp_rates", "2, 4").unwrap();
    cfg.set("augment", "off").unwrap();
    cfg.set("val_dir", "held").unwrap();
    assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    let err = RunConfig::parse("# comment\nsteps = 3\nbogus = 1\n").unwrap_err();
    assert!(matches!(err, Error::Config { line: 3, .. }), "{err}");
}
