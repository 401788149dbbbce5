mod common;

use common::{random_inputs, rng};
use ndarray::ArrayView2;
use rtp_core::nn::{load_model, save_model, train, ModelDocument, TrainingConfig};
use rtp_core::preprocess::VariantId;
use rtp_core::zoo::{build_variant, VariantSpec};
use rtp_core::Error;

#[test]
fn every_variant_round_trips_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(1);
    for v in VariantId::ALL {
        let model = build_variant(v, 42);
        let path = dir.path().join(format!("{v}.json"));
        save_model(&model, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, model, "{v}");
        let inputs = random_inputs(&mut r, &model, 16);
        let views: Vec<ArrayView2<f64>> = inputs.iter().map(|x| x.view()).collect();
        let a = model.forward(&views).unwrap();
        let b = back.forward(&views).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()), "{v}");
    }
}

#[test]
fn trained_weights_survive_a_round_trip() {
    let mut r = rng(2);
    let v = VariantId::B2;
    let model = build_variant(v, 3);
    let inputs = random_inputs(&mut r, &model, 64);
    let targets = ndarray::Array2::from_shape_fn((64, 1), |(i, _)| (i as f64 + 0.5) / 64.0);
    let data = rtp_core::nn::Dataset::new(inputs, targets).unwrap();
    let config = TrainingConfig {
        max_epochs: 3,
        monitored_metric: Some(VariantSpec::of(v).default_monitor()),
        ..TrainingConfig::default()
    };
    let (trained, _) = train(model, &data, &config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b2.json");
    save_model(&trained, &path).unwrap();
    assert_eq!(load_model(&path).unwrap(), trained);
}

#[test]
fn document_records_topology() {
    let doc = ModelDocument::from_model(&build_variant(VariantId::A1, 1));
    assert_eq!(doc.format, "rtp-model");
    assert_eq!(doc.merge_topology.branches.len(), 2);
    assert_eq!(doc.merge_topology.branches[0].layers, vec![0, 1]);
    assert_eq!(doc.merge_topology.branches[1].layers, vec![2, 3]);
    assert_eq!(doc.merge_topology.trunk, vec![4, 5, 6]);
    assert_eq!(doc.layers[6].shape, [5, 64]);
}

#[test]
fn foreign_json_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.json");
    std::fs::write(&path, r#"{"format": "something-else", "format_version": 1}"#).unwrap();
    assert!(matches!(load_model(&path), Err(Error::Version(_))));
}
