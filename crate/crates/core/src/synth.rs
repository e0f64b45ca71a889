//! Deterministic synthetic data: bright-center blob "faces", clutter
//! negatives and scenes with planted blobs.
//!
//! Real face corpora are out of reach for a self-contained test suite, so the
//! detector and trainer are exercised on a distribution that has the same
//! structure (a centered, roughly round bright pattern on a textured
//! background) and can be regenerated bit-for-bit from a seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::GrayImage;
use crate::train::{self, CascadeTraining, StageGoal, TrainError, TrainerConfig};

pub const BASE: usize = 24;

/// Blob width as a fraction of the window side.
const BLOB_SIGMA: (f64, f64) = (0.14, 0.2);
const BLOB_PEAK: (f64, f64) = (70.0, 130.0);
const BACKGROUND: (f64, f64) = (60.0, 120.0);
const NOISE: i32 = 12;
const TEXTURE: f64 = 20.0;

fn gaussian_at(dx: f64, dy: f64, sigma: f64) -> f64 {
    (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
}

/// Adds a Gaussian blob centered at `(cx, cy)` (pixel-center coordinates).
pub fn draw_blob(img: &mut GrayImage, cx: f64, cy: f64, sigma: f64, peak: f64) {
    for y in 0..img.height() {
        for x in 0..img.width() {
            let g = peak * gaussian_at(x as f64 + 0.5 - cx, y as f64 + 0.5 - cy, sigma);
            if g >= 0.5 || g <= -0.5 {
                let v = (img.get(x, y) as f64 + g).round().clamp(0.0, 255.0);
                img.set(x, y, v as u8);
            }
        }
    }
}

fn add_noise(img: &mut GrayImage, amplitude: i32, rng: &mut impl Rng) {
    for y in 0..img.height() {
        for x in 0..img.width() {
            let v = img.get(x, y) as i32 + rng.random_range(-amplitude..=amplitude);
            img.set(x, y, v.clamp(0, 255) as u8);
        }
    }
}

/// Flat, sloped or blocky background with low contrast around a random level.
fn background(side: usize, rng: &mut impl Rng) -> GrayImage {
    let level = rng.random_range(BACKGROUND.0..BACKGROUND.1);
    let c = side as f64 / 2.0;
    match rng.random_range(0..3) {
        0 => GrayImage::filled(side, side, level.round() as u8),
        1 => {
            let (gx, gy) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            GrayImage::from_fn(side, side, |x, y| {
                (level + gx * (x as f64 - c) + gy * (y as f64 - c)).round().clamp(0.0, 255.0) as u8
            })
        }
        _ => {
            let cell = rng.random_range(3..=8);
            let n = side.div_ceil(cell);
            let cells: Vec<f64> = (0..n * n).map(|_| rng.random_range(-TEXTURE..TEXTURE)).collect();
            GrayImage::from_fn(side, side, |x, y| {
                (level + cells[(y / cell) * n + x / cell]).round().clamp(0.0, 255.0) as u8
            })
        }
    }
}

/// A positive sample: a bright blob at the window center (±1 px).
pub fn blob_positive(rng: &mut impl Rng) -> GrayImage {
    let mut img = background(BASE, rng);
    let c = BASE as f64 / 2.0;
    let sigma = rng.random_range(BLOB_SIGMA.0..BLOB_SIGMA.1) * BASE as f64;
    let peak = rng.random_range(BLOB_PEAK.0..BLOB_PEAK.1);
    draw_blob(
        &mut img,
        c + rng.random_range(-1.0..1.0),
        c + rng.random_range(-1.0..1.0),
        sigma,
        peak,
    );
    add_noise(&mut img, NOISE, rng);
    img
}

/// A negative sample drawn from a mixture of clutter: random textures,
/// off-center blobs, wrongly sized blobs, dark blobs and gradients.
pub fn clutter_negative(rng: &mut impl Rng) -> GrayImage {
    let c = BASE as f64 / 2.0;
    let side = BASE as f64;
    match rng.random_range(0..10) {
        0 => GrayImage::from_fn(BASE, BASE, |_, _| rng.random()),
        1 | 2 => {
            let mut img = background(BASE, rng);
            add_noise(&mut img, NOISE, rng);
            img
        }
        3..=5 => {
            let mut img = background(BASE, rng);
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let dist = rng.random_range(6.0..10.0);
            let sigma = rng.random_range(BLOB_SIGMA.0..BLOB_SIGMA.1) * side;
            draw_blob(
                &mut img,
                c + dist * angle.cos(),
                c + dist * angle.sin(),
                sigma,
                rng.random_range(BLOB_PEAK.0..BLOB_PEAK.1),
            );
            add_noise(&mut img, NOISE, rng);
            img
        }
        6 => {
            let mut img = background(BASE, rng);
            let sigma = if rng.random() {
                rng.random_range(0.05..0.08)
            } else {
                rng.random_range(0.32..0.5)
            } * side;
            draw_blob(&mut img, c, c, sigma, rng.random_range(BLOB_PEAK.0..BLOB_PEAK.1));
            add_noise(&mut img, NOISE, rng);
            img
        }
        7 => {
            let mut img = GrayImage::filled(BASE, BASE, rng.random_range(150..220));
            let sigma = rng.random_range(BLOB_SIGMA.0..BLOB_SIGMA.1) * side;
            draw_blob(&mut img, c, c, sigma, -rng.random_range(BLOB_PEAK.0..BLOB_PEAK.1));
            add_noise(&mut img, NOISE, rng);
            img
        }
        _ => {
            let (gx, gy) = (rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0));
            let base = rng.random_range(60.0..190.0);
            let mut img = GrayImage::from_fn(BASE, BASE, |x, y| {
                (base + gx * (x as f64 - c) + gy * (y as f64 - c)).round().clamp(0.0, 255.0) as u8
            });
            add_noise(&mut img, NOISE, rng);
            img
        }
    }
}

/// Train and held-out splits of the blob distribution.
#[derive(Debug, Clone)]
pub struct BlobFixture {
    pub train_positives: Vec<GrayImage>,
    pub negative_pool: Vec<GrayImage>,
    pub test_positives: Vec<GrayImage>,
    pub test_negatives: Vec<GrayImage>,
}

/// 200 positives and 600 pool negatives for training; 200 + 600 held out.
pub fn blob_fixture(seed: u64) -> BlobFixture {
    blob_fixture_sized(seed, 200, 600)
}

pub fn blob_fixture_sized(seed: u64, positives: usize, negatives: usize) -> BlobFixture {
    let mut train = ChaCha8Rng::seed_from_u64(seed);
    let mut held_out = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_7e57);
    BlobFixture {
        train_positives: (0..positives).map(|_| blob_positive(&mut train)).collect(),
        negative_pool: (0..negatives).map(|_| clutter_negative(&mut train)).collect(),
        test_positives: (0..positives).map(|_| blob_positive(&mut held_out)).collect(),
        test_negatives: (0..negatives).map(|_| clutter_negative(&mut held_out)).collect(),
    }
}

/// Stage schedule used for the bundled fixture cascade.
pub fn fixture_goals() -> Vec<StageGoal> {
    vec![
        StageGoal {
            min_detection_rate: 1.0,
            max_false_positive_rate: 0.5,
            max_weak_classifiers: 8,
        },
        StageGoal {
            min_detection_rate: 1.0,
            max_false_positive_rate: 0.3,
            max_weak_classifiers: 16,
        },
        StageGoal {
            min_detection_rate: 1.0,
            max_false_positive_rate: 0.2,
            max_weak_classifiers: 24,
        },
    ]
}

/// Seed of the bundled fixture cascade.
pub const FIXTURE_SEED: u64 = 1;
/// Number of candidate features sampled for fixture training.
pub const FIXTURE_FEATURES: usize = 6000;

/// Trains the fixture cascade from `seed`: the blob fixture, a
/// [`FIXTURE_FEATURES`]-sized feature sample and [`fixture_goals`].
pub fn train_fixture_cascade(seed: u64) -> Result<(BlobFixture, CascadeTraining), TrainError> {
    let fx = blob_fixture(seed);
    let features = train::sample_features(&train::enumerate_features(BASE, BASE), FIXTURE_FEATURES, seed);
    let out = train::train_cascade(
        &fx.train_positives,
        &fx.negative_pool,
        &fixture_goals(),
        &features,
        &TrainerConfig::default(),
    )?;
    Ok((fx, out))
}

/// Where a blob was planted in a scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedBlob {
    /// Center in pixel coordinates.
    pub cx: f64,
    pub cy: f64,
    /// Side of the window the blob was drawn for.
    pub side: usize,
}

/// A scene of the given size on a flat background with blobs planted at
/// `centers`, each drawn as it would appear in a `side` x `side` window.
pub fn scene(width: usize, height: usize, level: u8, blobs: &[PlantedBlob], seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = GrayImage::filled(width, height, level);
    for b in blobs {
        let sigma = (BLOB_SIGMA.0 + BLOB_SIGMA.1) / 2.0 * b.side as f64;
        let peak = (BLOB_PEAK.0 + BLOB_PEAK.1) / 2.0 + rng.random_range(-5.0..5.0);
        draw_blob(&mut img, b.cx, b.cy, sigma, peak);
    }
    img
}

/// Size of the bundled pipeline frames.
pub const FRAME_W: usize = 128;
pub const FRAME_H: usize = 96;

/// One frame of the bundled pipeline sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureFrame {
    pub name: String,
    pub image: GrayImage,
    pub blobs: Vec<PlantedBlob>,
}

/// Ten frames: a blob drifting left to right, a second blob in frame 4 and
/// an empty frame 7.
pub fn fixture_frames() -> Vec<FixtureFrame> {
    (0..10)
        .map(|k| {
            let blobs = match k {
                7 => Vec::new(),
                4 => vec![
                    PlantedBlob { cx: 34.0, cy: 50.0, side: 32 },
                    PlantedBlob { cx: 94.0, cy: 42.0, side: 28 },
                ],
                _ => vec![PlantedBlob {
                    cx: 30.0 + 8.0 * k as f64,
                    cy: 46.0 + (k % 3) as f64,
                    side: 30 + 2 * (k % 2),
                }],
            };
            FixtureFrame {
                name: format!("frame_{k:02}.pgm"),
                image: scene(FRAME_W, FRAME_H, 80 + 4 * k as u8, &blobs, k as u64),
                blobs,
            }
        })
        .collect()
}

/// Side of the bundled classifier crops.
pub const CROP_SIDE: usize = 48;

/// Ten 48x48 crops: the blob distribution's positives and clutter,
/// upsampled 2x by pixel replication.
pub fn fixture_crops(seed: u64) -> Vec<GrayImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..10)
        .map(|k| {
            let small = if k % 2 == 0 { blob_positive(&mut rng) } else { clutter_negative(&mut rng) };
            GrayImage::from_fn(CROP_SIDE, CROP_SIDE, |x, y| small.get(x / 2, y / 2))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_is_deterministic() {
        let a = blob_fixture_sized(3, 5, 5);
        let b = blob_fixture_sized(3, 5, 5);
        assert_eq!(a.train_positives, b.train_positives);
        assert_eq!(a.test_negatives, b.test_negatives);
        assert_ne!(a.train_positives, a.test_positives);
    }

    #[test]
    fn positive_is_brightest_near_center() {
        let mean = |img: &GrayImage, pick: &dyn Fn(usize, usize) -> bool| {
            let (mut sum, mut n) = (0.0, 0.0);
            for y in 0..BASE {
                for x in 0..BASE {
                    if pick(x, y) {
                        sum += img.get(x, y) as f64;
                        n += 1.0;
                    }
                }
            }
            sum / n
        };
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = blob_positive(&mut rng);
            let center = mean(&img, &|x, y| (10..14).contains(&x) && (10..14).contains(&y));
            let border = mean(&img, &|x, y| x < 2 || y < 2 || x >= BASE - 2 || y >= BASE - 2);
            assert!(center > border + 30.0, "seed {seed}: center {center:.1}, border {border:.1}");
        }
    }
}
