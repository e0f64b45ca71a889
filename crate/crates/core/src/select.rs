//! Binomial confidence intervals over model accuracies and budget-constrained
//! model selection.

use std::cmp::Ordering;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.96;
/// Two-sided 98% normal quantile.
pub const Z98: f64 = 2.33;
/// Size of the FER2013 test split.
pub const FER2013_TEST_SIZE: u64 = 3589;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectError {
    #[error("number of test samples must be at least 1")]
    NoTests,
    #[error("accuracy {0} is outside [0, 1]")]
    AccuracyRange(f64),
    #[error("model {name}: size {size_mb} MB must be positive")]
    NonPositiveSize { name: String, size_mb: f64 },
    #[error("z must be positive and finite, got {0}")]
    InvalidZ(f64),
    #[error("no model records")]
    Empty,
    #[error("records table line {line}: {message}")]
    Table { line: u64, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub name: String,
    /// Fraction of test samples classified correctly.
    pub accuracy: f64,
    pub size_mb: f64,
    pub n_tests: u64,
}

impl ModelRecord {
    pub fn new(name: impl Into<String>, accuracy: f64, size_mb: f64, n_tests: u64) -> Result<Self, SelectError> {
        let name = name.into();
        if n_tests == 0 {
            return Err(SelectError::NoTests);
        }
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(SelectError::AccuracyRange(accuracy));
        }
        if !(size_mb > 0.0 && size_mb.is_finite()) {
            return Err(SelectError::NonPositiveSize { name, size_mb });
        }
        Ok(ModelRecord {
            name,
            accuracy,
            size_mb,
            n_tests,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntervalMethod {
    /// Normal approximation `P ± z·sqrt(P(1−P)/N)`.
    #[default]
    Wald,
    /// Wilson score interval.
    Wilson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub z: f64,
}

impl ConfidenceInterval {
    /// Closed-interval intersection test.
    pub fn overlaps(&self, other: &ConfidenceInterval) -> bool {
        self.lower <= other.upper && other.lower <= self.upper
    }

    pub fn contains(&self, p: f64) -> bool {
        self.lower <= p && p <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    /// `"z95"`, `"z98"` or the quantile itself.
    pub fn level(&self) -> String {
        level_label(self.z)
    }
}

pub fn level_label(z: f64) -> String {
    if z == Z95 {
        "z95".to_string()
    } else if z == Z98 {
        "z98".to_string()
    } else {
        format!("z={z}")
    }
}

/// Wald interval clamped to `[0, 1]`.
pub fn confidence_interval(p: f64, n: u64, z: f64) -> Result<ConfidenceInterval, SelectError> {
    confidence_interval_with(IntervalMethod::Wald, p, n, z)
}

pub fn confidence_interval_with(method: IntervalMethod, p: f64, n: u64, z: f64) -> Result<ConfidenceInterval, SelectError> {
    if n == 0 {
        return Err(SelectError::NoTests);
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(SelectError::AccuracyRange(p));
    }
    if !(z > 0.0 && z.is_finite()) {
        return Err(SelectError::InvalidZ(z));
    }
    let n = n as f64;
    let (center, half) = match method {
        IntervalMethod::Wald => (p, z * (p * (1.0 - p) / n).sqrt()),
        IntervalMethod::Wilson => {
            let z2 = z * z;
            let denom = 1.0 + z2 / n;
            let center = (p + z2 / (2.0 * n)) / denom;
            let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
            (center, half)
        }
    };
    Ok(ConfidenceInterval {
        lower: (center - half).clamp(0.0, 1.0),
        upper: (center + half).clamp(0.0, 1.0),
        z,
    })
}

fn by_accuracy_then_name(a: &ModelRecord, b: &ModelRecord) -> Ordering {
    b.accuracy.total_cmp(&a.accuracy).then_with(|| a.name.cmp(&b.name))
}

/// Pairwise interval overlaps among a set of records.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapMatrix {
    pub records: Vec<ModelRecord>,
    pub intervals: Vec<ConfidenceInterval>,
    /// `overlaps[i][j]` iff intervals `i` and `j` intersect.
    pub overlaps: Vec<Vec<bool>>,
    /// Index of the most accurate record (ties: name order).
    pub top: usize,
}

impl OverlapMatrix {
    /// Indices of records whose interval meets the top record's, the top included.
    pub fn overlapping_top(&self) -> Vec<usize> {
        (0..self.records.len()).filter(|&i| self.overlaps[self.top][i]).collect()
    }
}

pub fn overlap_groups(records: &[ModelRecord], z: f64, method: IntervalMethod) -> Result<OverlapMatrix, SelectError> {
    if records.is_empty() {
        return Err(SelectError::Empty);
    }
    let intervals = records
        .iter()
        .map(|r| confidence_interval_with(method, r.accuracy, r.n_tests, z))
        .collect::<Result<Vec<_>, _>>()?;
    let overlaps = intervals
        .iter()
        .map(|a| intervals.iter().map(|b| a.overlaps(b)).collect())
        .collect();
    let top = (0..records.len())
        .min_by(|&i, &j| by_accuracy_then_name(&records[i], &records[j]))
        .expect("non-empty");
    Ok(OverlapMatrix {
        records: records.to_vec(),
        intervals,
        overlaps,
        top,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub model: ModelRecord,
    pub interval: ConfidenceInterval,
    /// No overlapping model fits the budget; `model` is the smallest overlapping one.
    pub budget_exceeded: bool,
    /// Names of every model whose interval overlaps the top model's.
    pub candidates: Vec<String>,
    pub top: String,
}

/// Smallest model that fits `budget_mb` and is statistically indistinguishable
/// from the most accurate model. Size ties go to higher accuracy, then name.
pub fn select_model(records: &[ModelRecord], z: f64, budget_mb: f64, method: IntervalMethod) -> Result<Selection, SelectError> {
    let matrix = overlap_groups(records, z, method)?;
    let mut candidates = matrix.overlapping_top();
    candidates.sort_by(|&i, &j| {
        let (a, b) = (&records[i], &records[j]);
        a.size_mb.total_cmp(&b.size_mb).then_with(|| by_accuracy_then_name(a, b))
    });
    let within = candidates.iter().copied().find(|&i| records[i].size_mb <= budget_mb);
    let (pick, budget_exceeded) = match within {
        Some(i) => (i, false),
        None => (candidates[0], true),
    };
    let mut names: Vec<String> = candidates.iter().map(|&i| records[i].name.clone()).collect();
    names.sort();
    Ok(Selection {
        model: records[pick].clone(),
        interval: matrix.intervals[pick],
        budget_exceeded,
        candidates: names,
        top: records[matrix.top].name.clone(),
    })
}

#[derive(Debug, Deserialize)]
struct RecordRow {
    name: String,
    accuracy_percent: f64,
    size_mb: f64,
}

/// Reads a `name,accuracy_percent,size_mb` CSV table. Lines starting with
/// `#` are comments. Every record gets `n_tests` test samples.
pub fn read_records(input: impl Read, n_tests: u64) -> Result<Vec<ModelRecord>, SelectError> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(input);
    let mut out = Vec::new();
    for row in reader.deserialize::<RecordRow>() {
        let row = row.map_err(|e| SelectError::Table {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        out.push(ModelRecord::new(row.name, row.accuracy_percent / 100.0, row.size_mb, n_tests)?);
    }
    if out.is_empty() {
        return Err(SelectError::Empty);
    }
    Ok(out)
}
