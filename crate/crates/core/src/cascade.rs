//! Haar features, boosted stumps and the staged cascade built from them.
//!
//! # Feature representation
//!
//! Every feature is a list of weighted rectangles whose first entry is the
//! full feature extent ("base rect") with weight −1, followed by one or two
//! inner rects with positive weight. A two-rect edge feature, for example, is
//! `whole × −1 + right_half × 2`, which equals `right − left`. The weights
//! satisfy `Σ weight × area = 0`, so a uniform window evaluates to zero.
//!
//! When a feature is scaled to a larger window its rect edges are rounded to
//! whole pixels, which generally breaks the zero-sum property. The base rect's
//! weight is therefore recomputed as `−Σ_{i≥1} wᵢ·aᵢ / a₀`. Evaluation uses the
//! algebraically equal form `Σ_{i≥1} wᵢ · (Sᵢ·a₀ − aᵢ·S₀) / a₀`, where the
//! bracket is an exact integer that vanishes on uniform windows.
//!
//! # Stump convention
//!
//! A weak classifier votes 1 ("face") iff
//! `polarity × value < polarity × threshold`, where `value` is the feature
//! response divided by `window_area × window_std`. Windows with a standard
//! deviation below [`MIN_STD`] are normalized with `std = MIN_STD`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{BoundsError, IntegralImage, Rect};

/// Current cascade document version.
pub const FORMAT_VERSION: u32 = 1;

/// Standard deviation floor used by variance normalization, in intensity units.
pub const MIN_STD: f64 = 1.0;

/// Relative tolerance for the zero-sum check on loaded features.
const ZERO_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    TwoHorizontal,
    TwoVertical,
    ThreeHorizontal,
    ThreeVertical,
    FourDiagonal,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 5] = [
        FeatureKind::TwoHorizontal,
        FeatureKind::TwoVertical,
        FeatureKind::ThreeHorizontal,
        FeatureKind::ThreeVertical,
        FeatureKind::FourDiagonal,
    ];

    /// Smallest extent `(w, h)`; valid feature sizes are multiples of it.
    pub fn unit(self) -> (usize, usize) {
        match self {
            FeatureKind::TwoHorizontal => (2, 1),
            FeatureKind::TwoVertical => (1, 2),
            FeatureKind::ThreeHorizontal => (3, 1),
            FeatureKind::ThreeVertical => (1, 3),
            FeatureKind::FourDiagonal => (2, 2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedRect {
    pub rect: Rect,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HaarFeature {
    pub kind: FeatureKind,
    pub rects: Vec<WeightedRect>,
}

impl HaarFeature {
    /// Builds the canonical feature of `kind` covering `extent`.
    ///
    /// Returns `None` unless the extent is a positive multiple of the kind's unit.
    pub fn new(kind: FeatureKind, extent: Rect) -> Option<Self> {
        let (uw, uh) = kind.unit();
        if extent.w == 0 || extent.h == 0 || extent.w % uw != 0 || extent.h % uh != 0 {
            return None;
        }
        let Rect { x, y, w, h } = extent;
        let whole = WeightedRect {
            rect: extent,
            weight: -1.0,
        };
        let inner = |rect: Rect, weight: f64| WeightedRect { rect, weight };
        let rects = match kind {
            FeatureKind::TwoHorizontal => vec![whole, inner(Rect::new(x + w / 2, y, w / 2, h), 2.0)],
            FeatureKind::TwoVertical => vec![whole, inner(Rect::new(x, y + h / 2, w, h / 2), 2.0)],
            FeatureKind::ThreeHorizontal => vec![whole, inner(Rect::new(x + w / 3, y, w / 3, h), 3.0)],
            FeatureKind::ThreeVertical => vec![whole, inner(Rect::new(x, y + h / 3, w, h / 3), 3.0)],
            FeatureKind::FourDiagonal => vec![
                whole,
                inner(Rect::new(x + w / 2, y, w / 2, h / 2), 2.0),
                inner(Rect::new(x, y + h / 2, w / 2, h / 2), 2.0),
            ],
        };
        Some(HaarFeature { kind, rects })
    }

    /// Bounding box of all rects.
    pub fn extent(&self) -> Rect {
        let x0 = self.rects.iter().map(|r| r.rect.x).min().unwrap_or(0);
        let y0 = self.rects.iter().map(|r| r.rect.y).min().unwrap_or(0);
        let x1 = self.rects.iter().map(|r| r.rect.right()).max().unwrap_or(0);
        let y1 = self.rects.iter().map(|r| r.rect.bottom()).max().unwrap_or(0);
        Rect::new(x0, y0, x1 - x0, y1 - y0)
    }

    /// Rects scaled by `scale` relative to the window origin.
    ///
    /// Edges are rounded independently (`x' = round(x·s)`,
    /// `right' = round((x + w)·s)`) so a feature inside a base window stays
    /// inside a window of side `round(base·s)`. The base rect's weight is
    /// rebalanced to restore the zero-sum property.
    pub fn scaled(&self, scale: f64) -> ScaledFeature {
        let mut rects: Vec<WeightedRect> = self
            .rects
            .iter()
            .map(|wr| {
                let x0 = scale_coord(wr.rect.x, scale);
                let y0 = scale_coord(wr.rect.y, scale);
                let x1 = scale_coord(wr.rect.right(), scale);
                let y1 = scale_coord(wr.rect.bottom(), scale);
                WeightedRect {
                    rect: Rect::new(x0, y0, x1.saturating_sub(x0), y1.saturating_sub(y0)),
                    weight: wr.weight,
                }
            })
            .collect();
        if let Some((base, rest)) = rects.split_first_mut() {
            let inner: f64 = rest.iter().map(|r| r.weight * r.rect.area() as f64).sum();
            let area = base.rect.area();
            if area > 0 {
                base.weight = -inner / area as f64;
            }
        }
        ScaledFeature { rects }
    }

    /// Variance-normalized response of the feature on `window` at `scale`.
    ///
    /// The result is the weighted rect sum divided by `window area` and
    /// multiplied by `inv_std`.
    pub fn evaluate(
        &self,
        ii: &IntegralImage,
        window: Rect,
        scale: f64,
        inv_std: f64,
    ) -> Result<f64, BoundsError> {
        let scaled = self.scaled(scale);
        let local = Rect::new(0, 0, window.w, window.h);
        for wr in &scaled.rects {
            if !local.contains(&wr.rect) {
                return Err(BoundsError {
                    rect: offset(wr.rect, window),
                    width: window.right(),
                    height: window.bottom(),
                });
            }
        }
        ii.rect_sum(window)?;
        Ok(scaled.raw_response(ii, window.x, window.y) * normalizer(inv_std, window.area()))
    }
}

#[inline]
fn scale_coord(v: usize, scale: f64) -> usize {
    (v as f64 * scale).round() as usize
}

#[inline]
fn offset(r: Rect, window: Rect) -> Rect {
    Rect::new(r.x + window.x, r.y + window.y, r.w, r.h)
}

/// A feature after scaling: rects are relative to the window origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledFeature {
    pub rects: Vec<WeightedRect>,
}

impl ScaledFeature {
    /// Weighted rect sum (before normalization) at window origin `(ox, oy)`.
    ///
    /// Computed as `Σ_{i≥1} wᵢ · (Sᵢ·a₀ − aᵢ·S₀) / a₀`, which is exactly zero on
    /// a uniform window.
    #[inline]
    pub fn raw_response(&self, ii: &IntegralImage, ox: usize, oy: usize) -> f64 {
        let (base, rest) = match self.rects.split_first() {
            Some(parts) => parts,
            None => return 0.0,
        };
        let at = |r: Rect| Rect::new(r.x + ox, r.y + oy, r.w, r.h);
        let a0 = base.rect.area() as i64;
        let s0 = ii.sum_unchecked(at(base.rect)) as i64;
        let mut acc = 0.0;
        for wr in rest {
            let si = ii.sum_unchecked(at(wr.rect)) as i64;
            let ai = wr.rect.area() as i64;
            acc += wr.weight * (si * a0 - ai * s0) as f64;
        }
        acc / a0 as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Positive => 1.0,
            Polarity::Negative => -1.0,
        }
    }
}

impl TryFrom<i64> for Polarity {
    type Error = i64;

    fn try_from(v: i64) -> Result<Self, i64> {
        match v {
            1 => Ok(Polarity::Positive),
            -1 => Ok(Polarity::Negative),
            other => Err(other),
        }
    }
}

impl From<Polarity> for i64 {
    fn from(p: Polarity) -> i64 {
        match p {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }
}

/// Decision stump on one normalized feature value.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakClassifier {
    pub feature: HaarFeature,
    pub threshold: f64,
    pub polarity: Polarity,
    pub alpha: f64,
}

/// The stump vote for a normalized feature value: `polarity·value < polarity·threshold`.
#[inline]
pub fn stump_vote(value: f64, threshold: f64, polarity: Polarity) -> bool {
    let s = polarity.sign();
    s * value < s * threshold
}

impl WeakClassifier {
    pub fn vote(&self, value: f64) -> bool {
        stump_vote(value, self.threshold, self.polarity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeStage {
    pub weak_classifiers: Vec<WeakClassifier>,
    pub stage_threshold: f64,
}

impl CascadeStage {
    /// Weighted vote `Σ alpha·vote` and whether it reaches the stage threshold.
    pub fn evaluate(
        &self,
        ii: &IntegralImage,
        window: Rect,
        scale: f64,
        inv_std: f64,
    ) -> Result<(bool, f64), BoundsError> {
        let mut score = 0.0;
        for weak in &self.weak_classifiers {
            let value = weak.feature.evaluate(ii, window, scale, inv_std)?;
            if weak.vote(value) {
                score += weak.alpha;
            }
        }
        Ok((score >= self.stage_threshold, score))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeModel {
    pub base_width: usize,
    pub base_height: usize,
    pub stages: Vec<CascadeStage>,
}

/// Result of running a window through the cascade.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeOutcome {
    pub passed: bool,
    /// Number of stages whose score was computed.
    pub stages_evaluated: usize,
    /// Score of the last evaluated stage.
    pub last_score: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CascadeError {
    #[error("schema violation at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("unsupported cascade version {found}, expected {expected}")]
    UnsupportedVersion { found: u64, expected: u32 },
    #[error("base window {width}x{height} is degenerate")]
    BadBaseWindow { width: usize, height: usize },
    #[error("cascade has no stages")]
    NoStages,
    #[error("stages[{stage}] has no weak classifiers")]
    EmptyStage { stage: usize },
    #[error("stages[{stage}].weak[{weak}] has {count} rects, expected 2 or 3")]
    RectCount {
        stage: usize,
        weak: usize,
        count: usize,
    },
    #[error("stages[{stage}].weak[{weak}].rects[{rect}] lies outside the base window")]
    FeatureOutOfWindow {
        stage: usize,
        weak: usize,
        rect: usize,
    },
    #[error("stages[{stage}].weak[{weak}] weights do not sum to zero over rect areas")]
    NotZeroSum { stage: usize, weak: usize },
    #[error("stages[{stage}].weak[{weak}].polarity is {value}, expected 1 or -1")]
    InvalidPolarity {
        stage: usize,
        weak: usize,
        value: i64,
    },
    #[error("stages[{stage}].weak[{weak}].alpha is negative")]
    NegativeAlpha { stage: usize, weak: usize },
    #[error("non-finite number at {path}")]
    NonFinite { path: String },
}

impl CascadeModel {
    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<(), CascadeError> {
        if self.base_width == 0 || self.base_height == 0 {
            return Err(CascadeError::BadBaseWindow {
                width: self.base_width,
                height: self.base_height,
            });
        }
        if self.stages.is_empty() {
            return Err(CascadeError::NoStages);
        }
        for (si, stage) in self.stages.iter().enumerate() {
            if stage.weak_classifiers.is_empty() {
                return Err(CascadeError::EmptyStage { stage: si });
            }
            if !stage.stage_threshold.is_finite() {
                return Err(CascadeError::NonFinite {
                    path: format!("stages[{si}].threshold"),
                });
            }
            for (wi, weak) in stage.weak_classifiers.iter().enumerate() {
                validate_weak(weak, self.base_width, self.base_height, si, wi)?;
            }
        }
        Ok(())
    }

    /// Precomputes every feature at `scale` for repeated window evaluation.
    pub fn scaled(&self, scale: f64) -> ScaledCascade {
        let window_w = (self.base_width as f64 * scale).round() as usize;
        let window_h = (self.base_height as f64 * scale).round() as usize;
        let stages = self
            .stages
            .iter()
            .map(|stage| ScaledStage {
                stumps: stage
                    .weak_classifiers
                    .iter()
                    .map(|w| ScaledStump {
                        feature: w.feature.scaled(scale),
                        threshold: w.threshold,
                        polarity: w.polarity,
                        alpha: w.alpha,
                    })
                    .collect(),
                threshold: stage.stage_threshold,
            })
            .collect();
        ScaledCascade {
            window_w,
            window_h,
            stages,
        }
    }

    pub fn weak_count(&self) -> usize {
        self.stages.iter().map(|s| s.weak_classifiers.len()).sum()
    }
}

fn validate_weak(
    weak: &WeakClassifier,
    base_w: usize,
    base_h: usize,
    stage: usize,
    index: usize,
) -> Result<(), CascadeError> {
    let rects = &weak.feature.rects;
    if !(2..=3).contains(&rects.len()) {
        return Err(CascadeError::RectCount {
            stage,
            weak: index,
            count: rects.len(),
        });
    }
    for (ri, wr) in rects.iter().enumerate() {
        if !wr.rect.fits_in(base_w, base_h) {
            return Err(CascadeError::FeatureOutOfWindow {
                stage,
                weak: index,
                rect: ri,
            });
        }
        if !wr.weight.is_finite() {
            return Err(CascadeError::NonFinite {
                path: format!("stages[{stage}].weak[{index}].rects[{ri}].weight"),
            });
        }
    }
    let balance: f64 = rects.iter().map(|r| r.weight * r.rect.area() as f64).sum();
    let magnitude: f64 = rects.iter().map(|r| (r.weight * r.rect.area() as f64).abs()).sum();
    if balance.abs() > ZERO_SUM_TOLERANCE * magnitude.max(1.0) {
        return Err(CascadeError::NotZeroSum { stage, weak: index });
    }
    if !weak.threshold.is_finite() {
        return Err(CascadeError::NonFinite {
            path: format!("stages[{stage}].weak[{index}].threshold"),
        });
    }
    if !weak.alpha.is_finite() {
        return Err(CascadeError::NonFinite {
            path: format!("stages[{stage}].weak[{index}].alpha"),
        });
    }
    if weak.alpha < 0.0 {
        return Err(CascadeError::NegativeAlpha { stage, weak: index });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ScaledStump {
    pub feature: ScaledFeature,
    pub threshold: f64,
    pub polarity: Polarity,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct ScaledStage {
    pub stumps: Vec<ScaledStump>,
    pub threshold: f64,
}

/// A cascade with all features pre-scaled to one window size.
#[derive(Debug, Clone)]
pub struct ScaledCascade {
    pub window_w: usize,
    pub window_h: usize,
    pub stages: Vec<ScaledStage>,
}

impl ScaledCascade {
    fn stage_score(&self, stage: &ScaledStage, ii: &IntegralImage, x: usize, y: usize, norm: f64) -> f64 {
        let mut score = 0.0;
        for stump in &stage.stumps {
            let value = stump.feature.raw_response(ii, x, y) * norm;
            if stump_vote(value, stump.threshold, stump.polarity) {
                score += stump.alpha;
            }
        }
        score
    }

    #[inline]
    fn normalizer(&self, inv_std: f64) -> f64 {
        normalizer(inv_std, self.window_w * self.window_h)
    }

    /// Evaluates stages in order and stops at the first rejection.
    ///
    /// The window at `(x, y)` must lie inside the integral image.
    pub fn evaluate(&self, ii: &IntegralImage, x: usize, y: usize, inv_std: f64) -> CascadeOutcome {
        let norm = self.normalizer(inv_std);
        let mut last_score = 0.0;
        for (i, stage) in self.stages.iter().enumerate() {
            last_score = self.stage_score(stage, ii, x, y, norm);
            if last_score < stage.threshold {
                return CascadeOutcome {
                    passed: false,
                    stages_evaluated: i + 1,
                    last_score,
                };
            }
        }
        CascadeOutcome {
            passed: true,
            stages_evaluated: self.stages.len(),
            last_score,
        }
    }

    /// Per-stage scores for every stage, without early exit.
    pub fn stage_scores(&self, ii: &IntegralImage, x: usize, y: usize, inv_std: f64) -> Vec<f64> {
        let norm = self.normalizer(inv_std);
        self.stages
            .iter()
            .map(|stage| self.stage_score(stage, ii, x, y, norm))
            .collect()
    }
}

/// Factor turning a raw feature response into a normalized value:
/// `inv_std / window_area`. Every evaluation path multiplies by this.
#[inline]
pub fn normalizer(inv_std: f64, window_area: usize) -> f64 {
    inv_std / window_area as f64
}

/// `1 / max(std, MIN_STD)`.
pub fn inv_std(std: f64) -> f64 {
    1.0 / std.max(MIN_STD)
}

// Wire format. Field order here is the canonical serialized order.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CascadeDoc {
    version: u64,
    base_width: usize,
    base_height: usize,
    stages: Vec<StageDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StageDoc {
    threshold: f64,
    weak: Vec<WeakDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeakDoc {
    kind: FeatureKind,
    rects: Vec<RectDoc>,
    threshold: f64,
    polarity: i64,
    alpha: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RectDoc {
    x: usize,
    y: usize,
    w: usize,
    h: usize,
    weight: f64,
}

/// Parses and validates a cascade document.
pub fn parse_cascade(bytes: &[u8]) -> Result<CascadeModel, CascadeError> {
    let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| CascadeError::Schema {
        path: ".".into(),
        message: e.to_string(),
    })?;
    match value.get("version") {
        Some(serde_json::Value::Number(n)) => match n.as_u64() {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            Some(v) => {
                return Err(CascadeError::UnsupportedVersion {
                    found: v,
                    expected: FORMAT_VERSION,
                })
            }
            None => {
                return Err(CascadeError::Schema {
                    path: "version".into(),
                    message: "expected a non-negative integer".into(),
                })
            }
        },
        _ => {
            return Err(CascadeError::Schema {
                path: "version".into(),
                message: "missing or not a number".into(),
            })
        }
    }
    let doc: CascadeDoc = serde_path_to_error::deserialize(value).map_err(|e| CascadeError::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;

    let mut stages = Vec::with_capacity(doc.stages.len());
    for (si, stage) in doc.stages.into_iter().enumerate() {
        let mut weak_classifiers = Vec::with_capacity(stage.weak.len());
        for (wi, weak) in stage.weak.into_iter().enumerate() {
            let polarity = Polarity::try_from(weak.polarity).map_err(|value| CascadeError::InvalidPolarity {
                stage: si,
                weak: wi,
                value,
            })?;
            weak_classifiers.push(WeakClassifier {
                feature: HaarFeature {
                    kind: weak.kind,
                    rects: weak
                        .rects
                        .into_iter()
                        .map(|r| WeightedRect {
                            rect: Rect::new(r.x, r.y, r.w, r.h),
                            weight: r.weight,
                        })
                        .collect(),
                },
                threshold: weak.threshold,
                polarity,
                alpha: weak.alpha,
            });
        }
        stages.push(CascadeStage {
            weak_classifiers,
            stage_threshold: stage.threshold,
        });
    }
    let model = CascadeModel {
        base_width: doc.base_width,
        base_height: doc.base_height,
        stages,
    };
    model.validate()?;
    Ok(model)
}

/// Canonical pretty-printed JSON with a trailing newline.
pub fn serialize_cascade(model: &CascadeModel) -> Vec<u8> {
    let doc = CascadeDoc {
        version: u64::from(FORMAT_VERSION),
        base_width: model.base_width,
        base_height: model.base_height,
        stages: model
            .stages
            .iter()
            .map(|s| StageDoc {
                threshold: s.stage_threshold,
                weak: s
                    .weak_classifiers
                    .iter()
                    .map(|w| WeakDoc {
                        kind: w.feature.kind,
                        rects: w
                            .feature
                            .rects
                            .iter()
                            .map(|r| RectDoc {
                                x: r.rect.x,
                                y: r.rect.y,
                                w: r.rect.w,
                                h: r.rect.h,
                                weight: r.weight,
                            })
                            .collect(),
                        threshold: w.threshold,
                        polarity: w.polarity.into(),
                        alpha: w.alpha,
                    })
                    .collect(),
            })
            .collect(),
    };
    let mut out = serde_json::to_vec_pretty(&doc).expect("cascade document serializes");
    out.push(b'\n');
    out
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FeatureKind::TwoHorizontal => "two-horizontal",
            FeatureKind::TwoVertical => "two-vertical",
            FeatureKind::ThreeHorizontal => "three-horizontal",
            FeatureKind::ThreeVertical => "three-vertical",
            FeatureKind::FourDiagonal => "four-diagonal",
        };
        f.write_str(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::GrayImage;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn feature(kind: FeatureKind, x: usize, y: usize, w: usize, h: usize) -> HaarFeature {
        HaarFeature::new(kind, Rect::new(x, y, w, h)).unwrap()
    }

    fn stump(kind: FeatureKind, threshold: f64, polarity: Polarity, alpha: f64) -> WeakClassifier {
        WeakClassifier {
            feature: feature(kind, 0, 0, 12, 12),
            threshold,
            polarity,
            alpha,
        }
    }

    fn minimal_model() -> CascadeModel {
        CascadeModel {
            base_width: 24,
            base_height: 24,
            stages: vec![CascadeStage {
                weak_classifiers: vec![stump(FeatureKind::TwoHorizontal, 0.1, Polarity::Positive, 1.5)],
                stage_threshold: 0.5,
            }],
        }
    }

    /// Weighted per-pixel sum over scaled rects, without an integral image.
    fn naive_response(img: &GrayImage, f: &ScaledFeature, window: Rect, inv_std: f64) -> f64 {
        let mut total = 0.0;
        for wr in &f.rects {
            let mut s = 0u64;
            for y in wr.rect.y..wr.rect.bottom() {
                for x in wr.rect.x..wr.rect.right() {
                    s += u64::from(img.get(window.x + x, window.y + y));
                }
            }
            total += wr.weight * s as f64;
        }
        total * normalizer(inv_std, window.area())
    }

    #[test]
    fn canonical_features_are_zero_sum() {
        for kind in FeatureKind::ALL {
            let (uw, uh) = kind.unit();
            let f = feature(kind, 1, 2, uw * 4, uh * 3);
            let balance: f64 = f.rects.iter().map(|r| r.weight * r.rect.area() as f64).sum();
            assert_eq!(balance, 0.0, "{kind}");
            assert_eq!(f.extent(), Rect::new(1, 2, uw * 4, uh * 3));
        }
        assert!(HaarFeature::new(FeatureKind::ThreeHorizontal, Rect::new(0, 0, 4, 1)).is_none());
    }

    #[test]
    fn uniform_window_evaluates_to_zero_at_every_scale() {
        let ii = IntegralImage::new(&GrayImage::filled(80, 80, 173));
        for kind in FeatureKind::ALL {
            let (uw, uh) = kind.unit();
            let f = feature(kind, 3, 1, uw * 5, uh * 6);
            for k in 0..12 {
                let scale = 1.1f64.powi(k);
                let side = (24.0 * scale).round() as usize;
                let v = f.evaluate(&ii, Rect::new(2, 3, side, side), scale, 1.0).unwrap();
                assert_eq!(v, 0.0, "{kind} scale {scale}");
            }
        }
    }

    #[test]
    fn two_rect_feature_is_antisymmetric() {
        let left_dark = GrayImage::from_fn(24, 24, |x, _| if x < 12 { 0 } else { 255 });
        let right_dark = GrayImage::from_fn(24, 24, |x, _| if x < 12 { 255 } else { 0 });
        let f = feature(FeatureKind::TwoHorizontal, 0, 0, 24, 24);
        let w = Rect::new(0, 0, 24, 24);
        let a = f.evaluate(&IntegralImage::new(&left_dark), w, 1.0, 1.0).unwrap();
        let b = f.evaluate(&IntegralImage::new(&right_dark), w, 1.0, 1.0).unwrap();
        assert!(a > 0.0);
        assert_eq!(a, -b);
    }

    #[test]
    fn feature_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let img = GrayImage::from_fn(64, 64, |_, _| rng.random());
            let ii = IntegralImage::new(&img);
            let kind = FeatureKind::ALL[rng.random_range(0..5)];
            let (uw, uh) = kind.unit();
            let w = uw * rng.random_range(1..=24 / uw);
            let h = uh * rng.random_range(1..=24 / uh);
            let f = feature(kind, rng.random_range(0..=24 - w), rng.random_range(0..=24 - h), w, h);
            let scale: f64 = rng.random_range(1.0..2.5);
            let side = (24.0 * scale).round() as usize;
            let window = Rect::new(rng.random_range(0..=64 - side), rng.random_range(0..=64 - side), side, side);
            let inv = rng.random_range(0.01..1.0);
            let got = f.evaluate(&ii, window, scale, inv).unwrap();
            let want = naive_response(&img, &f.scaled(scale), window, inv);
            let mag: f64 = 255.0 * f.scaled(scale).rects.iter().map(|r| r.weight.abs() * r.rect.area() as f64).sum::<f64>()
                * inv
                / window.area() as f64;
            assert!((got - want).abs() <= 1e-9 * mag, "{got} vs {want}");
        }
    }

    #[test]
    fn feature_response_is_linear_in_intensity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = GrayImage::from_fn(24, 24, |_, _| rng.random_range(0..=85));
        let tripled = GrayImage::from_fn(24, 24, |x, y| img.get(x, y) * 3);
        let f = feature(FeatureKind::FourDiagonal, 2, 2, 16, 10);
        let w = Rect::new(0, 0, 24, 24);
        let a = f.evaluate(&IntegralImage::new(&img), w, 1.0, 1.0).unwrap();
        let b = f.evaluate(&IntegralImage::new(&tripled), w, 1.0, 1.0).unwrap();
        assert!((3.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }

    #[test]
    fn scaled_rect_escaping_window_is_a_bounds_error() {
        let ii = IntegralImage::new(&GrayImage::filled(64, 64, 9));
        let f = feature(FeatureKind::TwoHorizontal, 12, 0, 12, 24);
        assert!(f.evaluate(&ii, Rect::new(0, 0, 20, 20), 1.0, 1.0).is_err());
    }

    #[test]
    fn stump_vote_convention() {
        assert!(stump_vote(0.0, 1.0, Polarity::Positive));
        assert!(!stump_vote(1.0, 1.0, Polarity::Positive));
        assert!(stump_vote(2.0, 1.0, Polarity::Negative));
        assert!(!stump_vote(1.0, 1.0, Polarity::Negative));
    }

    #[test]
    fn stage_pass_and_infinite_threshold() {
        let ii = IntegralImage::new(&GrayImage::filled(24, 24, 50));
        let w = Rect::new(0, 0, 24, 24);
        // Uniform window: value 0 < 1 votes for every positive-polarity stump.
        let mut stage = CascadeStage {
            weak_classifiers: vec![stump(FeatureKind::TwoVertical, 1.0, Polarity::Positive, 1.0)],
            stage_threshold: 0.5,
        };
        assert_eq!(stage.evaluate(&ii, w, 1.0, 1.0).unwrap(), (true, 1.0));
        stage.stage_threshold = f64::INFINITY;
        assert_eq!(stage.evaluate(&ii, w, 1.0, 1.0).unwrap(), (false, 1.0));
    }

    #[test]
    fn scaled_cascade_agrees_with_stage_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut weak = Vec::new();
        for _ in 0..6 {
            let kind = FeatureKind::ALL[rng.random_range(0..5)];
            let (uw, uh) = kind.unit();
            let (w, h) = (uw * rng.random_range(1..=8 / uw.min(8)), uh * rng.random_range(1..=8 / uh.min(8)));
            weak.push(WeakClassifier {
                feature: feature(kind, rng.random_range(0..=24 - w), rng.random_range(0..=24 - h), w, h),
                threshold: rng.random_range(-0.05..0.05),
                polarity: if rng.random() { Polarity::Positive } else { Polarity::Negative },
                alpha: rng.random_range(0.1..2.0),
            });
        }
        let stage = CascadeStage {
            weak_classifiers: weak,
            stage_threshold: 2.0,
        };
        let model = CascadeModel {
            base_width: 24,
            base_height: 24,
            stages: vec![stage.clone()],
        };
        for _ in 0..50 {
            let img = GrayImage::from_fn(48, 48, |_, _| rng.random());
            let ii = IntegralImage::new(&img);
            let scale = rng.random_range(1.0..1.9);
            let sc = model.scaled(scale);
            let window = Rect::new(rng.random_range(0..=48 - sc.window_w), rng.random_range(0..=48 - sc.window_h), sc.window_w, sc.window_h);
            let (_, std) = ii.window_mean_std(window).unwrap();
            let inv = inv_std(std);
            let (passed, score) = stage.evaluate(&ii, window, scale, inv).unwrap();
            let outcome = sc.evaluate(&ii, window.x, window.y, inv);
            assert_eq!(outcome.passed, passed);
            assert_eq!(outcome.last_score, score);
        }
    }

    #[test]
    fn parse_minimal_document() {
        let doc = r#"{"version":1,"base_width":24,"base_height":24,"stages":[{"threshold":0.5,"weak":[
            {"kind":"two-horizontal","rects":[{"x":0,"y":0,"w":4,"h":2,"weight":-1.0},{"x":2,"y":0,"w":2,"h":2,"weight":2.0}],
             "threshold":0.01,"polarity":-1,"alpha":0.7}]}]}"#;
        let model = parse_cascade(doc.as_bytes()).unwrap();
        assert_eq!(model.stages.len(), 1);
        assert_eq!(model.stages[0].weak_classifiers[0].polarity, Polarity::Negative);
    }

    #[test]
    fn parse_reports_distinct_errors() {
        let bytes = serialize_cascade(&minimal_model());
        let text = String::from_utf8(bytes).unwrap();

        let bad_version = text.replacen("\"version\": 1", "\"version\": 2", 1);
        assert_eq!(
            parse_cascade(bad_version.as_bytes()),
            Err(CascadeError::UnsupportedVersion { found: 2, expected: 1 })
        );

        let mut m = minimal_model();
        m.stages[0].weak_classifiers[0].feature.rects[1].rect.x = 20;
        assert_eq!(
            parse_cascade(&serialize_cascade(&m)),
            Err(CascadeError::FeatureOutOfWindow { stage: 0, weak: 0, rect: 1 })
        );

        let mut m = minimal_model();
        m.stages[0].weak_classifiers.clear();
        assert_eq!(parse_cascade(&serialize_cascade(&m)), Err(CascadeError::EmptyStage { stage: 0 }));

        let mut m = minimal_model();
        m.stages.clear();
        assert_eq!(parse_cascade(&serialize_cascade(&m)), Err(CascadeError::NoStages));

        let mut m = minimal_model();
        m.stages[0].weak_classifiers[0].alpha = -1.0;
        assert!(matches!(parse_cascade(&serialize_cascade(&m)), Err(CascadeError::NegativeAlpha { .. })));

        let mut m = minimal_model();
        m.stages[0].weak_classifiers[0].feature.rects[1].weight = 3.0;
        assert!(matches!(parse_cascade(&serialize_cascade(&m)), Err(CascadeError::NotZeroSum { .. })));

        let bad_polarity = text.replacen("\"polarity\": 1", "\"polarity\": 0", 1);
        assert!(matches!(parse_cascade(bad_polarity.as_bytes()), Err(CascadeError::InvalidPolarity { value: 0, .. })));

        let bad_kind = text.replacen("two-horizontal", "tilted", 1);
        match parse_cascade(bad_kind.as_bytes()) {
            Err(CascadeError::Schema { path, .. }) => assert_eq!(path, "stages[0].weak[0].kind"),
            other => panic!("unexpected {other:?}"),
        }

        assert!(matches!(parse_cascade(b"{\"stages\": []}"), Err(CascadeError::Schema { .. })));
        assert!(matches!(parse_cascade(b"not json"), Err(CascadeError::Schema { .. })));
    }

    #[test]
    fn serialize_parse_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut model = minimal_model();
        for _ in 0..3 {
            model.stages.push(CascadeStage {
                weak_classifiers: (0..4)
                    .map(|_| stump(FeatureKind::ALL[rng.random_range(0..5)], rng.random::<f64>() - 0.5, Polarity::Negative, rng.random()))
                    .collect(),
                stage_threshold: rng.random::<f64>() * 3.0,
            });
        }
        let bytes = serialize_cascade(&model);
        let parsed = parse_cascade(&bytes).unwrap();
        assert_eq!(parsed, model);
        assert_eq!(serialize_cascade(&parsed), bytes);
    }
}
