use cfsr::model::StoreError;
use cfsr::nn::Parameters;
use cfsr::{Cfsr, ModelConfig, ModelError, Shape, StoreMode, Tensor, WeightStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model(cfg: ModelConfig, seed: u64) -> Cfsr {
    Cfsr::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn file_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.cfsrwt");
    let m = model(ModelConfig::tiny(6, 2, 2, 7, 3), 1);
    m.to_store().save(&path).unwrap();
    let loaded = WeightStore::load(&path).unwrap();
    assert_eq!(loaded.mode(), StoreMode::Branched);
    assert_eq!(Cfsr::from_store_inferred(&loaded).unwrap(), m);
    assert_eq!(loaded.to_bytes().unwrap(), std::fs::read(&path).unwrap());
}

#[test]
fn architecture_is_recovered_from_shapes() {
    for cfg in [ModelConfig::standard(4), ModelConfig::tiny(16, 1, 2, 9, 2), ModelConfig::tiny(5, 3, 1, 11, 3)] {
        let store = model(cfg.clone(), 0).to_store();
        assert_eq!(ModelConfig::infer_from_store(&store).unwrap(), cfg);
        let fused = cfsr::model::fuse_store(&store).unwrap();
        assert_eq!(ModelConfig::infer_from_store(&fused).unwrap(), cfg);
    }
}

#[test]
fn wrong_scale_weights_are_rejected() {
    let x2 = model(ModelConfig::standard(2), 0).to_store();
    match Cfsr::from_store(ModelConfig::standard(4), &x2) {
        Err(ModelError::ShapeMismatch { name, expected, found }) => {
            assert_eq!(name, "head.weight");
            assert_eq!(expected, Shape::new(48, 48, 3, 3));
            assert_eq!(found, Shape::new(12, 48, 3, 3));
        }
        other => panic!("expected a shape mismatch, got {other:?}"),
    }
}

#[test]
fn missing_and_unknown_tensors_are_named() {
    let cfg = ModelConfig::tiny(4, 1, 1, 3, 2);
    let full = model(cfg.clone(), 0).to_store();

    let mut partial = WeightStore::new(StoreMode::Branched);
    for (name, t) in full.iter().filter(|(n, _)| *n != "head.bias") {
        partial.insert(name, t.clone()).unwrap();
    }
    assert!(matches!(
        Cfsr::from_store(cfg.clone(), &partial),
        Err(ModelError::MissingTensor(n)) if n == "head.bias"
    ));

    let mut extra = full.clone();
    extra.insert("stray.weight", Tensor::zeros(Shape::vector(2))).unwrap();
    assert!(matches!(
        Cfsr::from_store(cfg, &extra),
        Err(ModelError::UnknownTensor(n)) if n == "stray.weight"
    ));
}

#[test]
fn store_scalar_count_matches_model() {
    let m = model(ModelConfig::standard(3), 0);
    assert_eq!(m.to_store().num_scalars(), m.num_scalars());
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        WeightStore::load(dir.path().join("absent.cfsrwt")),
        Err(StoreError::Io { .. })
    ));
}

#[test]
fn corrupt_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfsrwt");
    let mut bytes = model(ModelConfig::tiny(4, 1, 1, 3, 2), 0).to_store().to_bytes().unwrap();
    bytes[0] ^= 0xff;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(WeightStore::load(&path), Err(StoreError::BadMagic)));
    bytes[0] ^= 0xff;
    bytes.truncate(bytes.len() - 3);
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(WeightStore::load(&path), Err(StoreError::Truncated(_))));
}
