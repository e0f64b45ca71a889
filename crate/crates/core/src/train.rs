//! AdaBoost training of Haar-feature cascades at desk scale.
//!
//! Training is split the same way the cascade is: [`train_stump`] picks one
//! weak classifier, [`train_stage`] boosts stumps until a stage meets its
//! [`StageGoal`], and [`train_cascade`] chains stages while mining the
//! negatives that still get through.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::cascade::{
    self, CascadeModel, CascadeOutcome, CascadeStage, FeatureKind, HaarFeature, Polarity, WeakClassifier,
};
use crate::image::{GrayImage, IntegralImage, Rect};

/// Bounds applied to the weighted error before computing a stump's vote weight.
pub const EPSILON_FLOOR: f64 = 1e-10;
pub const EPSILON_CEIL: f64 = 1.0 - 1e-10;

/// Default ceiling for the precomputed feature-value matrix.
pub const DEFAULT_MEMORY_BUDGET: usize = 2 << 30;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("training set has no positive samples")]
    NoPositives,
    #[error("training set has no negative samples")]
    NoNegatives,
    #[error("sample {index} is {width}x{height}, expected {expected_w}x{expected_h}")]
    SampleSize {
        index: usize,
        width: usize,
        height: usize,
        expected_w: usize,
        expected_h: usize,
    },
    #[error("invalid stage goal: {0}")]
    InvalidGoal(&'static str),
    #[error("no stage goals given")]
    NoStageGoals,
    #[error("no candidate features")]
    NoFeatures,
    #[error("no weak classifier beats chance (best weighted error {error})")]
    NoWeakLearner { error: f64 },
}

/// Every Haar feature of the five kinds that fits in a `base_w x base_h` window.
///
/// Order: kind, then height, width, y, x.
pub fn enumerate_features(base_w: usize, base_h: usize) -> Vec<HaarFeature> {
    let mut out = Vec::new();
    for kind in FeatureKind::ALL {
        let (uw, uh) = kind.unit();
        for h in (uh..=base_h).step_by(uh) {
            for w in (uw..=base_w).step_by(uw) {
                for y in 0..=base_h - h {
                    for x in 0..=base_w - w {
                        out.push(HaarFeature::new(kind, Rect::new(x, y, w, h)).expect("extent is a unit multiple"));
                    }
                }
            }
        }
    }
    out
}

/// Deterministic subset of `count` features, kept in their original order.
pub fn sample_features(features: &[HaarFeature], count: usize, seed: u64) -> Vec<HaarFeature> {
    if count >= features.len() {
        return features.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, features.len(), count).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| features[i].clone()).collect()
}

/// Labeled samples with AdaBoost weights. Positives come first in sample order.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub positives: Vec<GrayImage>,
    pub negatives: Vec<GrayImage>,
    /// One weight per sample, positives then negatives; sums to 1.
    pub weights: Vec<f64>,
}

impl TrainingSet {
    /// Builds a set with the balanced initial weighting: each class holds half
    /// the mass, spread evenly over its samples.
    pub fn new(
        positives: Vec<GrayImage>,
        negatives: Vec<GrayImage>,
        base_w: usize,
        base_h: usize,
    ) -> Result<Self, TrainError> {
        if positives.is_empty() {
            return Err(TrainError::NoPositives);
        }
        if negatives.is_empty() {
            return Err(TrainError::NoNegatives);
        }
        for (index, img) in positives.iter().chain(&negatives).enumerate() {
            if img.width() != base_w || img.height() != base_h {
                return Err(TrainError::SampleSize {
                    index,
                    width: img.width(),
                    height: img.height(),
                    expected_w: base_w,
                    expected_h: base_h,
                });
            }
        }
        let wp = 0.5 / positives.len() as f64;
        let wn = 0.5 / negatives.len() as f64;
        let weights = std::iter::repeat_n(wp, positives.len())
            .chain(std::iter::repeat_n(wn, negatives.len()))
            .collect();
        Ok(TrainingSet {
            positives,
            negatives,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_positive(&self, sample: usize) -> bool {
        sample < self.positives.len()
    }

    pub fn samples(&self) -> impl Iterator<Item = &GrayImage> {
        self.positives.iter().chain(&self.negatives)
    }

    pub fn labels(&self) -> Vec<bool> {
        (0..self.len()).map(|i| self.is_positive(i)).collect()
    }
}

/// Per-stage training targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct StageGoal {
    pub min_detection_rate: f64,
    pub max_false_positive_rate: f64,
    pub max_weak_classifiers: usize,
}

impl StageGoal {
    pub fn validate(&self) -> Result<(), TrainError> {
        let in_unit = |r: f64| r > 0.0 && r <= 1.0;
        if !in_unit(self.min_detection_rate) {
            return Err(TrainError::InvalidGoal("min_detection_rate must lie in (0, 1]"));
        }
        if !in_unit(self.max_false_positive_rate) {
            return Err(TrainError::InvalidGoal("max_false_positive_rate must lie in (0, 1]"));
        }
        if self.max_weak_classifiers == 0 {
            return Err(TrainError::InvalidGoal("max_weak_classifiers must be at least 1"));
        }
        Ok(())
    }
}

/// Normalized feature values of every sample, evaluated on the whole sample
/// window at scale 1.
pub struct FeatureValues {
    n_samples: usize,
    storage: Storage,
}

enum Storage {
    /// Feature-major values plus, per feature, sample indices sorted by value.
    Precomputed { values: Vec<f64>, order: Vec<u32> },
    /// Values recomputed from integral images on every request.
    Streamed {
        features: Vec<cascade::ScaledFeature>,
        integrals: Vec<IntegralImage>,
        norms: Vec<f64>,
    },
}

impl FeatureValues {
    /// Precomputes the matrix when `samples × features × 12` bytes (values plus
    /// sort order) fit in `memory_budget`; streams otherwise.
    pub fn build<'a>(
        features: &[HaarFeature],
        samples: impl IntoIterator<Item = &'a GrayImage>,
        memory_budget: usize,
    ) -> Self {
        let (integrals, norms): (Vec<IntegralImage>, Vec<f64>) = samples
            .into_iter()
            .map(|img| {
                let ii = IntegralImage::new(img);
                let (_, std) = ii.mean_std_unchecked(img.bounds());
                (ii, cascade::normalizer(cascade::inv_std(std), img.width() * img.height()))
            })
            .unzip();
        let n_samples = integrals.len();
        let scaled: Vec<cascade::ScaledFeature> = features.iter().map(|f| f.scaled(1.0)).collect();
        let needed = n_samples.saturating_mul(features.len()).saturating_mul(12);
        if needed > memory_budget {
            return FeatureValues {
                n_samples,
                storage: Storage::Streamed {
                    features: scaled,
                    integrals,
                    norms,
                },
            };
        }
        let columns: Vec<(Vec<f64>, Vec<u32>)> = scaled
            .par_iter()
            .map(|f| {
                let col: Vec<f64> = integrals
                    .iter()
                    .zip(&norms)
                    .map(|(ii, &norm)| f.raw_response(ii, 0, 0) * norm)
                    .collect();
                let order = sorted_order(&col);
                (col, order)
            })
            .collect();
        let mut values = Vec::with_capacity(n_samples * features.len());
        let mut order = Vec::with_capacity(n_samples * features.len());
        for (col, ord) in columns {
            values.extend(col);
            order.extend(ord);
        }
        FeatureValues {
            n_samples,
            storage: Storage::Precomputed { values, order },
        }
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn is_precomputed(&self) -> bool {
        matches!(self.storage, Storage::Precomputed { .. })
    }

    /// Values of `feature` for every sample, with the sample order sorted by value.
    fn with_column<R>(&self, feature: usize, f: impl FnOnce(&[f64], &[u32]) -> R) -> R {
        let n = self.n_samples;
        match &self.storage {
            Storage::Precomputed { values, order } => {
                f(&values[feature * n..(feature + 1) * n], &order[feature * n..(feature + 1) * n])
            }
            Storage::Streamed {
                features,
                integrals,
                norms,
            } => {
                let col: Vec<f64> = integrals
                    .iter()
                    .zip(norms)
                    .map(|(ii, &norm)| features[feature].raw_response(ii, 0, 0) * norm)
                    .collect();
                let order = sorted_order(&col);
                f(&col, &order)
            }
        }
    }

    /// Value of `feature` on `sample`.
    pub fn value(&self, feature: usize, sample: usize) -> f64 {
        self.with_column(feature, |col, _| col[sample])
    }
}

fn sorted_order(col: &[f64]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..col.len() as u32).collect();
    order.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
    order
}

/// The best stump found for one boosting round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StumpFit {
    pub feature: usize,
    pub threshold: f64,
    #[serde(serialize_with = "serialize_polarity")]
    pub polarity: Polarity,
    /// Weighted error of the stump on the current weights.
    pub error: f64,
    /// False when no stump reaches a weighted error below 0.5.
    pub beats_chance: bool,
}

fn serialize_polarity<S: serde::Serializer>(p: &Polarity, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_i64((*p).into())
}

/// `ln((1 − ε) / ε)` with ε clamped to `[EPSILON_FLOOR, EPSILON_CEIL]`.
pub fn stump_alpha(error: f64) -> f64 {
    let e = clamp_error(error);
    ((1.0 - e) / e).ln()
}

fn clamp_error(error: f64) -> f64 {
    error.clamp(EPSILON_FLOOR, EPSILON_CEIL)
}

/// Best threshold and polarity for a single feature column.
///
/// Candidate thresholds are one unit below the smallest value, the midpoints
/// between consecutive distinct sorted values, and one unit above the
/// largest value. Ties keep the lowest threshold, then positive polarity.
fn best_split(values: &[f64], order: &[u32], labels: &[bool], weights: &[f64]) -> (f64, f64, Polarity) {
    let (mut total_pos, mut total_neg) = (0.0, 0.0);
    for (i, &w) in weights.iter().enumerate() {
        if labels[i] {
            total_pos += w;
        } else {
            total_neg += w;
        }
    }
    let n = order.len();
    let (mut below_pos, mut below_neg) = (0.0, 0.0);
    let mut best = (f64::INFINITY, 0.0, Polarity::Positive);
    for i in 0..=n {
        let threshold = if i == 0 {
            values[order[0] as usize] - 1.0
        } else if i == n {
            values[order[n - 1] as usize] + 1.0
        } else {
            let lo = values[order[i - 1] as usize];
            let hi = values[order[i] as usize];
            if lo == hi {
                f64::NAN
            } else {
                lo + (hi - lo) / 2.0
            }
        };
        if !threshold.is_nan() {
            // Positive polarity: values below the threshold vote face.
            let err_pos = below_neg + (total_pos - below_pos);
            // Negative polarity: values above the threshold vote face.
            let err_neg = below_pos + (total_neg - below_neg);
            if err_pos < best.0 {
                best = (err_pos, threshold, Polarity::Positive);
            }
            if err_neg < best.0 {
                best = (err_neg, threshold, Polarity::Negative);
            }
        }
        if i < n {
            let s = order[i] as usize;
            if labels[s] {
                below_pos += weights[s];
            } else {
                below_neg += weights[s];
            }
        }
    }
    (best.0.max(0.0), best.1, best.2)
}

/// Searches every feature for the stump with the lowest weighted error.
///
/// Ties between features go to the lower feature index.
pub fn train_stump(
    features: &[HaarFeature],
    set: &TrainingSet,
    values: &FeatureValues,
) -> Result<(WeakClassifier, StumpFit), TrainError> {
    if set.positives.is_empty() {
        return Err(TrainError::NoPositives);
    }
    if set.negatives.is_empty() {
        return Err(TrainError::NoNegatives);
    }
    if features.is_empty() {
        return Err(TrainError::NoFeatures);
    }
    let labels = set.labels();
    let best = (0..features.len())
        .into_par_iter()
        .map(|fi| {
            let (err, thr, pol) = values.with_column(fi, |col, order| best_split(col, order, &labels, &set.weights));
            (err, fi, thr, pol)
        })
        .reduce_with(|a, b| if (b.0, b.1) < (a.0, a.1) { b } else { a })
        .expect("at least one feature");
    let (error, feature, threshold, polarity) = best;
    let fit = StumpFit {
        feature,
        threshold,
        polarity,
        error,
        beats_chance: error < 0.5,
    };
    let weak = WeakClassifier {
        feature: features[feature].clone(),
        threshold,
        polarity,
        alpha: stump_alpha(error),
    };
    Ok((weak, fit))
}

/// One boosting round as logged by the trainer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundLog {
    pub stage: usize,
    pub round: usize,
    pub feature: usize,
    pub kind: FeatureKind,
    pub error: f64,
    pub alpha: f64,
    /// Running product of `2·sqrt(ε_t(1 − ε_t))` with clamped ε.
    pub error_bound: f64,
    pub weight_sum: f64,
    pub min_weight: f64,
    pub stage_threshold: f64,
    pub detection_rate: f64,
    pub false_positive_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageTraining {
    pub stage: CascadeStage,
    pub rounds: Vec<RoundLog>,
    pub detection_rate: f64,
    pub false_positive_rate: f64,
    pub goal_met: bool,
}

/// Largest threshold that keeps at least `min_rate` of the positive scores at or above it.
fn threshold_for_rate(scores: &[f64], min_rate: f64) -> f64 {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let needed = ((min_rate * sorted.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[needed.min(sorted.len()) - 1]
}

fn rate_at_or_above(scores: &[f64], threshold: f64) -> f64 {
    scores.iter().filter(|&&s| s >= threshold).count() as f64 / scores.len() as f64
}

/// Boosts stumps into one stage.
///
/// Each round selects the best stump, multiplies the weights of misclassified
/// samples by `(1 − ε)/ε` and renormalizes, then re-tunes the stage threshold
/// to the largest value keeping `min_detection_rate` of positives. The loop
/// stops once the false positive rate meets the goal or the stump budget is
/// spent. `stage_index` only labels the round logs.
pub fn train_stage(
    set: &mut TrainingSet,
    goal: &StageGoal,
    features: &[HaarFeature],
    values: &FeatureValues,
    stage_index: usize,
) -> Result<StageTraining, TrainError> {
    goal.validate()?;
    let n_pos = set.positives.len();
    let labels = set.labels();
    let mut scores = vec![0.0; set.len()];
    let mut weak_classifiers = Vec::new();
    let mut rounds = Vec::new();
    let mut bound = 1.0;
    let mut stage_threshold = 0.0;
    let (mut detection_rate, mut false_positive_rate) = (0.0, 1.0);

    while weak_classifiers.len() < goal.max_weak_classifiers {
        let (weak, fit) = train_stump(features, set, values)?;
        if !fit.beats_chance {
            if weak_classifiers.is_empty() {
                return Err(TrainError::NoWeakLearner { error: fit.error });
            }
            break;
        }
        let e = clamp_error(fit.error);
        let factor = (1.0 - e) / e;
        let votes: Vec<bool> = values.with_column(fit.feature, |col, _| col.iter().map(|&v| weak.vote(v)).collect());
        for (s, &vote) in votes.iter().enumerate() {
            if vote {
                scores[s] += weak.alpha;
            }
            if vote != labels[s] {
                set.weights[s] *= factor;
            }
        }
        let total: f64 = set.weights.iter().sum();
        set.weights.iter_mut().for_each(|w| *w /= total);
        bound *= 2.0 * (e * (1.0 - e)).sqrt();

        stage_threshold = threshold_for_rate(&scores[..n_pos], goal.min_detection_rate);
        detection_rate = rate_at_or_above(&scores[..n_pos], stage_threshold);
        false_positive_rate = rate_at_or_above(&scores[n_pos..], stage_threshold);
        rounds.push(RoundLog {
            stage: stage_index,
            round: weak_classifiers.len(),
            feature: fit.feature,
            kind: weak.feature.kind,
            error: fit.error,
            alpha: weak.alpha,
            error_bound: bound,
            weight_sum: set.weights.iter().sum(),
            min_weight: set.weights.iter().copied().fold(f64::INFINITY, f64::min),
            stage_threshold,
            detection_rate,
            false_positive_rate,
        });
        weak_classifiers.push(weak);
        if false_positive_rate <= goal.max_false_positive_rate {
            break;
        }
    }
    Ok(StageTraining {
        stage: CascadeStage {
            weak_classifiers,
            stage_threshold,
        },
        rounds,
        detection_rate,
        false_positive_rate,
        goal_met: false_positive_rate <= goal.max_false_positive_rate,
    })
}

/// Knobs for [`train_cascade`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainerConfig {
    pub base_width: usize,
    pub base_height: usize,
    pub memory_budget: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            base_width: 24,
            base_height: 24,
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeTraining {
    pub model: CascadeModel,
    pub stages: Vec<StageTraining>,
    /// Negatives (from the pool) fed to each stage.
    pub negatives_per_stage: Vec<usize>,
    /// True when the pool ran out of false positives before the goal list did.
    pub stopped_early: bool,
}

impl CascadeTraining {
    pub fn rounds(&self) -> impl Iterator<Item = &RoundLog> {
        self.stages.iter().flat_map(|s| &s.rounds)
    }
}

/// Runs `samples` through `stages` with early exit, one outcome per sample.
///
/// Each sample is evaluated as a single base-size window at scale 1.
pub fn cascade_outcomes(stages: &[CascadeStage], base_w: usize, base_h: usize, samples: &[GrayImage]) -> Vec<CascadeOutcome> {
    if stages.is_empty() {
        return vec![
            CascadeOutcome {
                passed: true,
                stages_evaluated: 0,
                last_score: 0.0,
            };
            samples.len()
        ];
    }
    let model = CascadeModel {
        base_width: base_w,
        base_height: base_h,
        stages: stages.to_vec(),
    };
    let scaled = model.scaled(1.0);
    samples
        .par_iter()
        .map(|img| {
            let ii = IntegralImage::new(img);
            let (_, std) = ii.mean_std_unchecked(img.bounds());
            scaled.evaluate(&ii, 0, 0, cascade::inv_std(std))
        })
        .collect()
}

/// Trains one stage per goal. Before each stage the positives and the
/// negative pool are filtered through the stages trained so far, so later
/// stages only see samples earlier stages accept.
pub fn train_cascade(
    positives: &[GrayImage],
    negative_pool: &[GrayImage],
    goals: &[StageGoal],
    features: &[HaarFeature],
    config: &TrainerConfig,
) -> Result<CascadeTraining, TrainError> {
    if goals.is_empty() {
        return Err(TrainError::NoStageGoals);
    }
    if positives.is_empty() {
        return Err(TrainError::NoPositives);
    }
    if negative_pool.is_empty() {
        return Err(TrainError::NoNegatives);
    }
    for goal in goals {
        goal.validate()?;
    }
    let (bw, bh) = (config.base_width, config.base_height);
    let mut stages: Vec<CascadeStage> = Vec::new();
    let mut reports = Vec::new();
    let mut negatives_per_stage = Vec::new();
    let mut stopped_early = false;

    for (index, goal) in goals.iter().enumerate() {
        let survivors = |samples: &[GrayImage]| -> Vec<GrayImage> {
            cascade_outcomes(&stages, bw, bh, samples)
                .iter()
                .zip(samples)
                .filter(|(o, _)| o.passed)
                .map(|(_, img)| img.clone())
                .collect()
        };
        let negatives = survivors(negative_pool);
        if negatives.is_empty() {
            stopped_early = true;
            break;
        }
        let pos = survivors(positives);
        negatives_per_stage.push(negatives.len());
        let mut set = TrainingSet::new(pos, negatives, bw, bh)?;
        let values = FeatureValues::build(features, set.samples(), config.memory_budget);
        let report = train_stage(&mut set, goal, features, &values, index)?;
        stages.push(report.stage.clone());
        reports.push(report);
    }
    Ok(CascadeTraining {
        model: CascadeModel {
            base_width: bw,
            base_height: bh,
            stages,
        },
        stages: reports,
        negatives_per_stage,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Closed-form count: for a unit of `u` along a side of `d`, sizes `k·u`
    /// fit at `d − k·u + 1` offsets.
    fn closed_form_count(w: usize, h: usize) -> usize {
        let along = |d: usize, u: usize| (1..=d / u).map(|k| d - k * u + 1).sum::<usize>();
        FeatureKind::ALL
            .iter()
            .map(|k| {
                let (uw, uh) = k.unit();
                along(w, uw) * along(h, uh)
            })
            .sum()
    }

    #[test]
    fn feature_counts_match_closed_form() {
        assert_eq!(enumerate_features(4, 4).len(), 136);
        assert_eq!(closed_form_count(4, 4), 136);
        for (w, h) in [(5, 7), (8, 6), (12, 12)] {
            assert_eq!(enumerate_features(w, h).len(), closed_form_count(w, h));
        }
    }

    #[test]
    fn enumeration_is_deterministic_and_inside_window() {
        let a = enumerate_features(9, 7);
        assert_eq!(a, enumerate_features(9, 7));
        for f in &a {
            assert!(f.rects.iter().all(|r| r.rect.fits_in(9, 7)));
        }
    }

    #[test]
    fn sampled_features_are_a_stable_ordered_subset() {
        let all = enumerate_features(8, 8);
        let a = sample_features(&all, 50, 4);
        assert_eq!(a.len(), 50);
        assert_eq!(a, sample_features(&all, 50, 4));
        let positions: Vec<usize> = a.iter().map(|f| all.iter().position(|g| g == f).unwrap()).collect();
        assert!(positions.windows(2).all(|p| p[0] < p[1]));
    }

    fn stripes(bright_left: bool, jitter: u8) -> GrayImage {
        GrayImage::from_fn(8, 8, |x, _| {
            let bright = (x < 4) == bright_left;
            if bright { 200 - jitter } else { 40 + jitter }
        })
    }

    #[test]
    fn perfectly_separable_stump_hits_alpha_ceiling() {
        let pos: Vec<_> = (0..5).map(|j| stripes(false, j)).collect();
        let neg: Vec<_> = (0..5).map(|j| stripes(true, j)).collect();
        let set = TrainingSet::new(pos, neg, 8, 8).unwrap();
        let features = enumerate_features(8, 8);
        let values = FeatureValues::build(&features, set.samples(), DEFAULT_MEMORY_BUDGET);
        let (weak, fit) = train_stump(&features, &set, &values).unwrap();
        assert_eq!(fit.error, 0.0);
        assert!(fit.beats_chance);
        assert_eq!(weak.alpha, stump_alpha(0.0));
        assert!((weak.alpha - (1.0f64 / EPSILON_FLOOR - 1.0).ln()).abs() < 1e-9);
    }

    #[test]
    fn constant_feature_gives_best_constant_vote() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let flat = GrayImage::filled(4, 4, 77);
        let pos = vec![flat.clone(); 3];
        let neg = vec![flat.clone(); 4];
        let mut set = TrainingSet::new(pos, neg, 4, 4).unwrap();
        let raw: Vec<f64> = (0..7).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        set.weights = raw.iter().map(|w| w / total).collect();
        let w_pos: f64 = set.weights[..3].iter().sum();
        let w_neg: f64 = set.weights[3..].iter().sum();
        let features = vec![HaarFeature::new(FeatureKind::TwoHorizontal, Rect::new(0, 0, 4, 4)).unwrap()];
        let values = FeatureValues::build(&features, set.samples(), DEFAULT_MEMORY_BUDGET);
        let (_, fit) = train_stump(&features, &set, &values).unwrap();
        assert!((fit.error - w_pos.min(w_neg)).abs() < 1e-12);
    }

    #[test]
    fn empty_class_is_an_error() {
        assert_eq!(
            TrainingSet::new(vec![], vec![GrayImage::filled(4, 4, 0)], 4, 4).unwrap_err(),
            TrainError::NoPositives
        );
        assert_eq!(
            TrainingSet::new(vec![GrayImage::filled(4, 4, 0)], vec![], 4, 4).unwrap_err(),
            TrainError::NoNegatives
        );
        assert!(matches!(
            TrainingSet::new(vec![GrayImage::filled(4, 5, 0)], vec![GrayImage::filled(4, 4, 0)], 4, 4),
            Err(TrainError::SampleSize { index: 0, .. })
        ));
    }

    /// Exhaustive oracle: every feature, every midpoint between distinct values
    /// plus the two outer thresholds, both polarities, error summed directly.
    fn exhaustive_stump(
        features: &[HaarFeature],
        set: &TrainingSet,
        value: impl Fn(usize, usize) -> f64,
    ) -> (f64, usize, f64, Polarity) {
        let mut best = (f64::INFINITY, 0, 0.0, Polarity::Positive);
        for fi in 0..features.len() {
            let mut vals: Vec<f64> = (0..set.len()).map(|s| value(fi, s)).collect();
            let col = vals.clone();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            let mut thresholds = vec![vals[0] - 1.0];
            thresholds.extend(vals.windows(2).map(|p| p[0] + (p[1] - p[0]) / 2.0));
            thresholds.push(vals[vals.len() - 1] + 1.0);
            for &t in &thresholds {
                for pol in [Polarity::Positive, Polarity::Negative] {
                    let err: f64 = (0..set.len())
                        .filter(|&s| cascade::stump_vote(col[s], t, pol) != set.is_positive(s))
                        .map(|s| set.weights[s])
                        .sum();
                    if err < best.0 - 1e-12 {
                        best = (err, fi, t, pol);
                    }
                }
            }
        }
        best
    }

    #[test]
    fn stump_matches_exhaustive_oracle() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let img = |rng: &mut ChaCha8Rng| GrayImage::from_fn(8, 8, |_, _| rng.random());
            let pos: Vec<_> = (0..10).map(|_| img(&mut rng)).collect();
            let neg: Vec<_> = (0..10).map(|_| img(&mut rng)).collect();
            let mut set = TrainingSet::new(pos, neg, 8, 8).unwrap();
            let raw: Vec<f64> = (0..20).map(|_| rng.random_range(0.01..1.0)).collect();
            let total: f64 = raw.iter().sum();
            set.weights = raw.iter().map(|w| w / total).collect();
            let features = sample_features(&enumerate_features(8, 8), 50, seed);
            // Oracle values come straight from the per-feature evaluation API.
            let window = Rect::new(0, 0, 8, 8);
            let samples: Vec<&GrayImage> = set.samples().collect();
            let oracle_value = |fi: usize, s: usize| {
                let ii = IntegralImage::new(samples[s]);
                let (_, std) = ii.window_mean_std(window).unwrap();
                features[fi].evaluate(&ii, window, 1.0, cascade::inv_std(std)).unwrap()
            };
            let want = exhaustive_stump(&features, &set, oracle_value);
            for budget in [DEFAULT_MEMORY_BUDGET, 0] {
                let values = FeatureValues::build(&features, set.samples(), budget);
                assert_eq!(values.is_precomputed(), budget > 0);
                let (_, fit) = train_stump(&features, &set, &values).unwrap();
                assert!((fit.error - want.0).abs() < 1e-12, "seed {seed}: {} vs {}", fit.error, want.0);
                assert_eq!((fit.feature, fit.threshold, fit.polarity), (want.1, want.2, want.3), "seed {seed}");
            }
        }
    }

    #[test]
    fn stage_on_separable_set_needs_one_stump() {
        let pos: Vec<_> = (0..6).map(|j| stripes(false, j)).collect();
        let neg: Vec<_> = (0..6).map(|j| stripes(true, j)).collect();
        let mut set = TrainingSet::new(pos, neg, 8, 8).unwrap();
        let features = enumerate_features(8, 8);
        let values = FeatureValues::build(&features, set.samples(), DEFAULT_MEMORY_BUDGET);
        let goal = StageGoal {
            min_detection_rate: 1.0,
            max_false_positive_rate: 0.01,
            max_weak_classifiers: 5,
        };
        let report = train_stage(&mut set, &goal, &features, &values, 0).unwrap();
        assert_eq!(report.stage.weak_classifiers.len(), 1);
        assert_eq!(report.detection_rate, 1.0);
        assert_eq!(report.false_positive_rate, 0.0);
        assert!(report.goal_met);
        assert!((set.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn stage_respects_budget_and_keeps_weights_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let img = |rng: &mut ChaCha8Rng| GrayImage::from_fn(8, 8, |_, _| rng.random());
        let pos: Vec<_> = (0..30).map(|_| img(&mut rng)).collect();
        let neg: Vec<_> = (0..30).map(|_| img(&mut rng)).collect();
        let mut set = TrainingSet::new(pos, neg, 8, 8).unwrap();
        let features = sample_features(&enumerate_features(8, 8), 200, 1);
        let values = FeatureValues::build(&features, set.samples(), DEFAULT_MEMORY_BUDGET);
        let goal = StageGoal {
            min_detection_rate: 0.99,
            max_false_positive_rate: 0.01,
            max_weak_classifiers: 6,
        };
        let report = train_stage(&mut set, &goal, &features, &values, 0).unwrap();
        assert!(report.stage.weak_classifiers.len() <= 6);
        let mut previous_bound = 1.0;
        for round in &report.rounds {
            assert!((round.weight_sum - 1.0).abs() < 1e-9);
            assert!(round.min_weight >= 0.0);
            assert!(round.error < 0.5);
            assert!(round.error_bound < previous_bound);
            previous_bound = round.error_bound;
            assert!(round.detection_rate >= 0.99);
        }
    }

    #[test]
    fn invalid_goals_and_empty_goal_list_are_rejected() {
        let bad = StageGoal {
            min_detection_rate: 0.0,
            max_false_positive_rate: 0.5,
            max_weak_classifiers: 1,
        };
        assert!(bad.validate().is_err());
        let img = GrayImage::filled(4, 4, 1);
        assert_eq!(
            train_cascade(&[img.clone()], &[img], &[], &enumerate_features(4, 4), &TrainerConfig::default()).unwrap_err(),
            TrainError::NoStageGoals
        );
    }

    #[test]
    fn threshold_for_rate_keeps_requested_fraction() {
        let scores = [0.1, 0.5, 0.9, 0.3, 0.7];
        assert_eq!(threshold_for_rate(&scores, 1.0), 0.1);
        assert_eq!(threshold_for_rate(&scores, 0.8), 0.3);
        assert_eq!(threshold_for_rate(&scores, 0.2), 0.9);
    }
}
