use std::collections::BTreeSet;

use emoface::cascade::{parse_cascade, stump_vote, CascadeModel};
use emoface::image::{GrayImage, Rect};
use emoface::synth;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn fixture_cascade() -> CascadeModel {
    parse_cascade(include_bytes!("../../fixtures/blob_cascade.json")).unwrap()
}

pub fn pixel_sum(img: &GrayImage, r: Rect) -> u64 {
    let mut s = 0;
    for y in r.y..r.bottom() {
        for x in r.x..r.right() {
            s += img.get(x, y) as u64;
        }
    }
    s
}

pub fn pixel_sq_sum(img: &GrayImage, r: Rect) -> u64 {
    let mut s = 0;
    for y in r.y..r.bottom() {
        for x in r.x..r.right() {
            s += (img.get(x, y) as u64).pow(2);
        }
    }
    s
}

/// Every window of every scale, every stage of the cascade, sums by double
/// loops over pixels. Scaling follows the documented rule: edges map to
/// `round(edge·s)`, the window side to `round(24·s)`.
pub fn brute_force_accepts(img: &GrayImage, model: &CascadeModel, sf: f64) -> BTreeSet<Rect> {
    let mut accepted = BTreeSet::new();
    let base = model.base_width as f64;
    let mut k = 0;
    loop {
        let s = base * sf.powi(k) / base;
        k += 1;
        let ww = (base * s).round() as usize;
        let wh = (model.base_height as f64 * s).round() as usize;
        if ww > img.width() || wh > img.height() {
            break;
        }
        let step = ((ww as f64 / 24.0).round() as usize).max(1);
        let edge = |v: usize| (v as f64 * s).round() as usize;
        for y in (0..=img.height() - wh).step_by(step) {
            for x in (0..=img.width() - ww).step_by(step) {
                let window = Rect::new(x, y, ww, wh);
                let area = (ww * wh) as f64;
                let mean = pixel_sum(img, window) as f64 / area;
                let var = (pixel_sq_sum(img, window) as f64 / area - mean * mean).max(0.0);
                let std = var.sqrt();
                if std < 1.0 {
                    continue;
                }
                let norm = (1.0 / std) / area;
                let mut all_pass = true;
                for stage in &model.stages {
                    let mut score = 0.0;
                    for weak in &stage.weak_classifiers {
                        let rects: Vec<(Rect, f64)> = weak
                            .feature
                            .rects
                            .iter()
                            .map(|wr| {
                                let (x0, y0) = (edge(wr.rect.x), edge(wr.rect.y));
                                let (x1, y1) = (edge(wr.rect.x + wr.rect.w), edge(wr.rect.y + wr.rect.h));
                                (Rect::new(x + x0, y + y0, x1 - x0, y1 - y0), wr.weight)
                            })
                            .collect();
                        let a0 = rects[0].0.area() as i64;
                        let s0 = pixel_sum(img, rects[0].0) as i64;
                        let mut raw = 0.0;
                        for &(r, w) in &rects[1..] {
                            raw += w * (pixel_sum(img, r) as i64 * a0 - r.area() as i64 * s0) as f64;
                        }
                        let value = raw / a0 as f64 * norm;
                        if stump_vote(value, weak.threshold, weak.polarity) {
                            score += weak.alpha;
                        }
                    }
                    all_pass &= score >= stage.stage_threshold;
                }
                if all_pass {
                    accepted.insert(window);
                }
            }
        }
    }
    accepted
}

/// Textured background with a few blobs of random size and position.
pub fn random_scene(rng: &mut ChaCha8Rng, w: usize, h: usize) -> GrayImage {
    let level = rng.random_range(40..180);
    let mut img = GrayImage::from_fn(w, h, |_, _| (level + rng.random_range(-15i32..=15)) as u8);
    for _ in 0..rng.random_range(0..3) {
        let side = rng.random_range(24..44) as f64;
        let sigma = side * rng.random_range(0.14..0.2);
        let cx = rng.random_range(side / 2.0..w as f64 - side / 2.0);
        let cy = rng.random_range(side / 2.0..h as f64 - side / 2.0);
        synth::draw_blob(&mut img, cx, cy, sigma, rng.random_range(60.0..130.0));
    }
    img
}
