use emoface::emotion::*;
use emoface::image::decode_image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::cnn::*;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");

#[test]
fn forward_matches_nested_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let model = random_network(&mut rng);
        let shape = model.input_shape();
        let input = Tensor::new(shape, random_vec(&mut rng, shape.len())).unwrap();
        let got = model.forward_tensor(&input).unwrap();
        let expected = forward_oracle(&model, &input.data);
        for (g, e) in got.data.iter().zip(&expected) {
            assert!((*g as f64 - e).abs() <= 1e-5, "{g} vs {e}");
        }
        let total: f64 = got.data.iter().map(|&v| v as f64).sum();
        assert!((total - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let model = reference_model(REFERENCE_SEED);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let input = Tensor::new(model.input_shape(), (0..48 * 48).map(|_| rng.random()).collect()).unwrap();
    let a = model.forward(&input).unwrap();
    let b = model.forward(&input).unwrap();
    assert_eq!(a.0.map(f32::to_bits), b.0.map(f32::to_bits));
}

#[test]
fn bundled_reference_weights_round_trip() {
    let bytes = std::fs::read(format!("{FIXTURES}/reference.ferw")).unwrap();
    let model = load_weights(&bytes).unwrap();
    assert_eq!(model, reference_model(REFERENCE_SEED));
    assert_eq!(save_weights(&model), bytes);
}

#[test]
fn reference_model_reproduces_crop_goldens() {
    let model = load_weights(&std::fs::read(format!("{FIXTURES}/reference.ferw")).unwrap()).unwrap();
    let goldens: Vec<EmotionLabel> =
        serde_json::from_str(&std::fs::read_to_string(format!("{FIXTURES}/crops/golden_labels.json")).unwrap()).unwrap();
    assert_eq!(goldens.len(), 10);
    for (k, golden) in goldens.iter().enumerate() {
        let crop = decode_image(&std::fs::read(format!("{FIXTURES}/crops/crop_{k:02}.pgm")).unwrap()).unwrap();
        let (label, scores) = model.classify(&crop, crop.bounds()).unwrap();
        assert_eq!(label, *golden, "crop {k}");
        assert_eq!(label, scores.argmax());
        let total: f32 = scores.0.iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
    }
}

#[test]
fn argmax_survives_uniform_logit_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let logits = random_vec(&mut rng, 7);
        let a = rng.random_range(0.1f32..10.0);
        let scaled: Vec<f32> = logits.iter().map(|v| v * a).collect();
        let label = |z: &[f32]| EmotionScores(softmax(z).try_into().unwrap()).argmax();
        assert_eq!(label(&logits), label(&scaled));
    }
}
