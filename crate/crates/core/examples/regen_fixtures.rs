//! Rewrites everything under `fixtures/` from seeds.
//!
//! Run with `cargo run --release -p emoface --example regen_fixtures`.

use std::fs;
use std::path::Path;

use emoface::annotate::AnnotateStyle;
use emoface::cascade::serialize_cascade;
use emoface::emotion::{reference_model, save_weights, REFERENCE_SEED};
use emoface::image::{encode_gray, encode_rgb};
use emoface::pipeline::{annotated_name, Frame, Pipeline};
use emoface::synth;

fn main() -> std::io::Result<()> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    for dir in ["frames", "crops", "golden"] {
        fs::create_dir_all(root.join(dir))?;
    }

    let (_, training) = synth::train_fixture_cascade(synth::FIXTURE_SEED).expect("fixture trains");
    let cascade = training.model;
    fs::write(root.join("blob_cascade.json"), serialize_cascade(&cascade))?;

    let net = reference_model(REFERENCE_SEED);
    fs::write(root.join("reference.ferw"), save_weights(&net))?;

    let crops = synth::fixture_crops(synth::FIXTURE_SEED);
    let mut labels = Vec::new();
    for (k, crop) in crops.iter().enumerate() {
        fs::write(root.join(format!("crops/crop_{k:02}.pgm")), encode_gray(crop))?;
        let (label, _) = net.classify(crop, crop.bounds()).expect("crop classifies");
        labels.push(label);
    }
    let labels_json = serde_json::to_string_pretty(&labels)? + "\n";
    fs::write(root.join("crops/golden_labels.json"), labels_json)?;

    let frames = synth::fixture_frames();
    for f in &frames {
        fs::write(root.join("frames").join(&f.name), encode_gray(&f.image))?;
    }
    let pipeline = Pipeline {
        cascade: &cascade,
        classifier: &net,
        scan: Default::default(),
        track: Default::default(),
        annotate: Some(AnnotateStyle::FULL),
        timing: false,
    };
    let mut events = String::new();
    for (i, f) in frames.iter().enumerate() {
        let frame = Frame {
            index: i,
            source: f.name.clone(),
            bytes: Ok(encode_gray(&f.image)),
        };
        let out = pipeline.process_frame(&frame);
        events.push_str(&out.event.to_ndjson());
        eprintln!("{}: planted {} found {}", f.name, f.blobs.len(), out.event.detections.len());
        if f.blobs.len() == 2 {
            let img = out.annotated.expect("annotation enabled");
            fs::write(root.join("golden").join(annotated_name(i)), encode_rgb(&img))?;
        }
    }
    fs::write(root.join("golden/events.ndjson"), events)?;
    Ok(())
}
