//! Multi-scale sliding-window detection and grouping of raw hits.
//!
//! One integral image is built per frame. Features are scaled to each window
//! size instead of resampling the image, so every window costs the same
//! handful of table lookups per stump regardless of its size.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cascade::{self, CascadeModel, MIN_STD};
use crate::image::{GrayImage, IntegralImage, Rect};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScanError {
    #[error("scale_factor must be greater than 1, got {0}")]
    ScaleFactor(f64),
    #[error("step_fraction must lie in (0, 1], got {0}")]
    StepFraction(f64),
    #[error("min_window {min_window} is smaller than the {base}px base window")]
    MinWindow { min_window: usize, base: usize },
    #[error("overlap_eps must be non-negative, got {0}")]
    OverlapEps(f64),
}

/// Scan and grouping parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanParams {
    /// Window growth per pyramid step.
    pub scale_factor: f64,
    /// Stride as a fraction of the window width.
    pub step_fraction: f64,
    /// Smallest window width in pixels; `None` means the base window width.
    pub min_window: Option<usize>,
    /// Largest window width in pixels; `None` means no limit beyond the image.
    pub max_window: Option<usize>,
    pub min_neighbors: usize,
    pub overlap_eps: f64,
}

impl Default for ScanParams {
    fn default() -> Self {
        ScanParams {
            scale_factor: 1.1,
            step_fraction: 1.0 / 24.0,
            min_window: None,
            max_window: None,
            min_neighbors: 3,
            overlap_eps: 0.2,
        }
    }
}

impl ScanParams {
    pub fn validate(&self, model: &CascadeModel) -> Result<(), ScanError> {
        if !(self.scale_factor > 1.0) {
            return Err(ScanError::ScaleFactor(self.scale_factor));
        }
        if !(self.step_fraction > 0.0 && self.step_fraction <= 1.0) {
            return Err(ScanError::StepFraction(self.step_fraction));
        }
        if let Some(min_window) = self.min_window {
            if min_window < model.base_width {
                return Err(ScanError::MinWindow {
                    min_window,
                    base: model.base_width,
                });
            }
        }
        if !(self.overlap_eps >= 0.0) {
            return Err(ScanError::OverlapEps(self.overlap_eps));
        }
        Ok(())
    }

    /// Window scales (relative to the base window) that fit in a `width x height` image.
    pub fn scales(&self, model: &CascadeModel, width: usize, height: usize) -> Vec<f64> {
        let min_window = self.min_window.unwrap_or(model.base_width) as f64;
        let max_window = self.max_window.map_or(f64::INFINITY, |m| m as f64);
        let mut out = Vec::new();
        let mut k = 0;
        loop {
            let side = min_window * self.scale_factor.powi(k);
            if side > max_window {
                break;
            }
            let scale = side / model.base_width as f64;
            let w = (model.base_width as f64 * scale).round() as usize;
            let h = (model.base_height as f64 * scale).round() as usize;
            if w > width || h > height {
                break;
            }
            out.push(scale);
            k += 1;
        }
        out
    }
}

/// A window that passed every stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawHit {
    pub rect: Rect,
    /// Score of the final stage.
    pub score: f64,
}

/// A grouped detection in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub rect: Rect,
    /// Number of raw hits merged into this box.
    pub neighbors: usize,
    /// Highest final-stage score among the merged hits.
    pub stage_score: f64,
}

/// Stride in pixels for a window of width `window_w`.
pub fn stride_for(step_fraction: f64, window_w: usize) -> usize {
    ((step_fraction * window_w as f64).round() as usize).max(1)
}

/// Every window accepted by the cascade, ordered by scale, then row, then column.
///
/// Windows whose standard deviation is below [`MIN_STD`] are rejected before
/// any stage runs. Scales are processed in parallel; the result does not
/// depend on the number of threads.
pub fn raw_detections(img: &GrayImage, model: &CascadeModel, params: &ScanParams) -> Result<Vec<RawHit>, ScanError> {
    params.validate(model)?;
    let ii = IntegralImage::new(img);
    let scales = params.scales(model, img.width(), img.height());
    let per_scale: Vec<Vec<RawHit>> = scales
        .par_iter()
        .map(|&scale| {
            let sc = model.scaled(scale);
            let stride = stride_for(params.step_fraction, sc.window_w);
            let mut hits = Vec::new();
            let mut y = 0;
            while y + sc.window_h <= img.height() {
                let mut x = 0;
                while x + sc.window_w <= img.width() {
                    let window = Rect::new(x, y, sc.window_w, sc.window_h);
                    let (_, std) = ii.mean_std_unchecked(window);
                    if std >= MIN_STD {
                        let outcome = sc.evaluate(&ii, x, y, cascade::inv_std(std));
                        if outcome.passed {
                            hits.push(RawHit {
                                rect: window,
                                score: outcome.last_score,
                            });
                        }
                    }
                    x += stride;
                }
                y += stride;
            }
            hits
        })
        .collect();
    Ok(per_scale.into_iter().flatten().collect())
}

/// Detects and groups faces. Images smaller than the smallest window yield
/// an empty list. Output is sorted by `(x, y, w)`.
pub fn detect_faces(img: &GrayImage, model: &CascadeModel, params: &ScanParams) -> Result<Vec<DetectionBox>, ScanError> {
    let raw = raw_detections(img, model, params)?;
    Ok(group_hits(&raw, params.min_neighbors, params.overlap_eps))
}

/// Two rects are similar when each of their four edges differs by at most
/// `eps × mean side length`, where the mean runs over both widths and heights.
pub fn similar(a: &Rect, b: &Rect, eps: f64) -> bool {
    let tolerance = eps * (a.w + a.h + b.w + b.h) as f64 / 4.0;
    let close = |p: usize, q: usize| (p as f64 - q as f64).abs() <= tolerance;
    close(a.x, b.x) && close(a.y, b.y) && close(a.right(), b.right()) && close(a.bottom(), b.bottom())
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet { parent: (0..n).collect() }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Smaller root wins so labels are independent of union order.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Labels the transitive closure of [`similar`]. Class labels are numbered
/// by first appearance, so equal partitions get equal label vectors.
pub fn partition_rects(rects: &[Rect], eps: f64) -> Vec<usize> {
    let mut sets = DisjointSet::new(rects.len());
    for i in 0..rects.len() {
        for j in i + 1..rects.len() {
            if similar(&rects[i], &rects[j], eps) {
                sets.union(i, j);
            }
        }
    }
    let mut relabel = std::collections::HashMap::new();
    (0..rects.len())
        .map(|i| {
            let root = sets.find(i);
            let next = relabel.len();
            *relabel.entry(root).or_insert(next)
        })
        .collect()
}

/// Groups raw rects (all with score 0). See [`group_hits`].
pub fn group_detections(raw: &[Rect], min_neighbors: usize, overlap_eps: f64) -> Vec<DetectionBox> {
    let hits: Vec<RawHit> = raw.iter().map(|&rect| RawHit { rect, score: 0.0 }).collect();
    group_hits(&hits, min_neighbors, overlap_eps)
}

/// Partitions hits into similarity classes, drops classes with fewer than
/// `min_neighbors` members and averages each remaining class into one box.
/// Averaged boxes that are still similar to each other are merged again
/// (weighted by member count) until no two output boxes are similar.
pub fn group_hits(raw: &[RawHit], min_neighbors: usize, overlap_eps: f64) -> Vec<DetectionBox> {
    let rects: Vec<Rect> = raw.iter().map(|h| h.rect).collect();
    let labels = partition_rects(&rects, overlap_eps);
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut clusters: Vec<Cluster> = vec![Cluster::default(); n_classes];
    for (hit, &label) in raw.iter().zip(&labels) {
        clusters[label].add_hit(hit);
    }
    let mut clusters: Vec<Cluster> = clusters.into_iter().filter(|c| c.count >= min_neighbors.max(1)).collect();

    loop {
        let boxes: Vec<Rect> = clusters.iter().map(Cluster::rect).collect();
        let merged = partition_rects(&boxes, overlap_eps);
        let n = merged.iter().copied().max().map_or(0, |m| m + 1);
        if n == clusters.len() {
            break;
        }
        let mut next = vec![Cluster::default(); n];
        for (c, &label) in clusters.iter().zip(&merged) {
            next[label].absorb(c);
        }
        clusters = next;
    }

    let mut out: Vec<DetectionBox> = clusters
        .iter()
        .map(|c| DetectionBox {
            rect: c.rect(),
            neighbors: c.count,
            stage_score: c.best_score,
        })
        .collect();
    out.sort_by_key(|d| (d.rect.x, d.rect.y, d.rect.w, d.rect.h));
    out
}

#[derive(Debug, Clone, Copy)]
struct Cluster {
    count: usize,
    sum_left: f64,
    sum_top: f64,
    sum_right: f64,
    sum_bottom: f64,
    best_score: f64,
}

impl Default for Cluster {
    fn default() -> Self {
        Cluster {
            count: 0,
            sum_left: 0.0,
            sum_top: 0.0,
            sum_right: 0.0,
            sum_bottom: 0.0,
            best_score: f64::NEG_INFINITY,
        }
    }
}

impl Cluster {
    fn add_hit(&mut self, hit: &RawHit) {
        self.count += 1;
        self.sum_left += hit.rect.x as f64;
        self.sum_top += hit.rect.y as f64;
        self.sum_right += hit.rect.right() as f64;
        self.sum_bottom += hit.rect.bottom() as f64;
        self.best_score = self.best_score.max(hit.score);
    }

    fn absorb(&mut self, other: &Cluster) {
        self.count += other.count;
        self.sum_left += other.sum_left;
        self.sum_top += other.sum_top;
        self.sum_right += other.sum_right;
        self.sum_bottom += other.sum_bottom;
        self.best_score = self.best_score.max(other.best_score);
    }

    /// Mean box with edges rounded independently, so it stays inside the
    /// hull of its members.
    fn rect(&self) -> Rect {
        let n = self.count as f64;
        let left = (self.sum_left / n).round() as usize;
        let top = (self.sum_top / n).round() as usize;
        let right = (self.sum_right / n).round() as usize;
        let bottom = (self.sum_bottom / n).round() as usize;
        Rect::new(left, top, right.saturating_sub(left).max(1), bottom.saturating_sub(top).max(1))
    }
}
