use candle_core::DType;
use formula_distill_model::{checkpoint, ModelConfig, SeqModel};

#[test]
fn file_round_trip_preserves_weights() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = SeqModel::new(ModelConfig::tiny(), 11, DType::F32).unwrap();
    checkpoint::save(&model, &path).unwrap();
    let back = checkpoint::load(&path).unwrap();
    assert_eq!(checkpoint::to_bytes(&back).unwrap(), checkpoint::to_bytes(&model).unwrap());

    // A different seed gives different weights, so equality above is not vacuous.
    let other = SeqModel::new(ModelConfig::tiny(), 12, DType::F32).unwrap();
    assert_ne!(checkpoint::to_bytes(&other).unwrap(), checkpoint::to_bytes(&model).unwrap());
}

#[test]
fn truncated_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = SeqModel::new(ModelConfig::tiny(), 1, DType::F32).unwrap();
    let bytes = checkpoint::to_bytes(&model).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
    assert!(checkpoint::load(&path).is_err());
    assert!(checkpoint::load(&dir.path().join("missing.ckpt")).is_err());
}
