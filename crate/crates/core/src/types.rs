//! Domain types shared across the pipeline.
//!
//! All times are in snippet units (indices on the feature grid). Intervals
//! are half-open `[start, end)` for length arithmetic; membership tests in
//! the refinement stage use closed bounds explicitly.

use std::fmt;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of an action class in `[0, C)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub usize);

impl ClassId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One annotated snippet plus its one-hot class label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointAnnotation {
    pub epsilon: usize,
    pub label: Vec<u8>,
}

impl PointAnnotation {
    pub fn new(epsilon: usize, class: ClassId, num_classes: usize) -> Self {
        let mut label = vec![0; num_classes];
        label[class.0] = 1;
        Self { epsilon, label }
    }

    /// The encoded class, or `None` if the label is not one-hot.
    pub fn class(&self) -> Option<ClassId> {
        let mut hot = None;
        for (c, &v) in self.label.iter().enumerate() {
            match v {
                0 => {}
                1 if hot.is_none() => hot = Some(ClassId(c)),
                _ => return None,
            }
        }
        hot
    }

    pub(crate) fn checked_class(&self) -> Result<ClassId> {
        self.class().ok_or_else(|| {
            Error::Invalid(format!(
                "point at snippet {} has a label that is not one-hot: {:?}",
                self.epsilon, self.label
            ))
        })
    }
}

/// A scored candidate interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub start: f64,
    pub end: f64,
    pub label: ClassId,
    pub confidence: f64,
}

impl Proposal {
    pub fn new(start: f64, end: f64, label: ClassId, confidence: f64) -> Self {
        Self {
            start,
            end,
            label,
            confidence,
        }
    }

    pub fn interval(&self) -> Interval {
        Interval::new(self.start, self.end)
    }
}

/// Refined interval attached to one annotated point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub point: usize,
    pub start: f64,
    pub end: f64,
    pub label: ClassId,
}

/// Ground-truth action instance. Only synthetic generation and evaluation
/// read these.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtInterval {
    pub start: f64,
    pub end: f64,
    pub label: ClassId,
}

impl GtInterval {
    pub fn interval(&self) -> Interval {
        Interval::new(self.start, self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> f64 {
        (self.end - self.start).max(0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// `T x (C+1)` per-snippet probabilities; the last column is background.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSequence(Array2<f64>);

impl ScoreSequence {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.ncols() < 2 {
            return Err(Error::Shape(format!(
                "score sequence needs at least one class and a background column, got {} columns",
                values.ncols()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Invalid(format!("score {v} outside [0, 1]")));
        }
        Ok(Self(values))
    }

    pub(crate) fn from_raw(values: Array2<f64>) -> Self {
        debug_assert!(values.ncols() >= 2);
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.0.ncols() - 1
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn class_track(&self, class: ClassId) -> ArrayView1<'_, f64> {
        self.0.column(class.0)
    }

    pub fn background(&self) -> ArrayView1<'_, f64> {
        self.0.column(self.num_classes())
    }
}

/// Temporal pyramid geometry: level `l` has length `ceil(T / sigma^l)` for
/// `l = 0..=levels`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pyramid {
    pub sigma: usize,
    pub levels: usize,
}

impl Pyramid {
    pub fn single() -> Self {
        Self { sigma: 2, levels: 0 }
    }

    pub fn num_levels(&self) -> usize {
        self.levels + 1
    }

    pub fn scale(&self, level: usize) -> f64 {
        (self.sigma as f64).powi(level as i32)
    }

    pub fn lengths(&self, length: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.num_levels());
        let mut t = length;
        out.push(t);
        for _ in 0..self.levels {
            t = t.div_ceil(self.sigma);
            out.push(t);
        }
        out
    }
}

/// One untrimmed video: length, optional features, point annotations and,
/// in synthetic or evaluation contexts only, ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub length: usize,
    pub num_classes: usize,
    pub features: Option<Array2<f64>>,
    pub points: Vec<PointAnnotation>,
    pub ground_truth: Option<Vec<GtInterval>>,
}

impl VideoRecord {
    /// Copy of this record with ground truth removed; training stages only
    /// ever see this form.
    pub fn without_ground_truth(&self) -> Self {
        Self {
            ground_truth: None,
            ..self.clone()
        }
    }
}

/// Binary presence vector over classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoLabel {
    pub presence: Vec<u8>,
}

impl VideoLabel {
    pub fn num_classes(&self) -> usize {
        self.presence.len()
    }

    pub fn contains(&self, class: ClassId) -> bool {
        self.presence.get(class.0).copied() == Some(1)
    }
}

/// Video-level labels: class `c` is present iff some point carries it.
/// Points whose labels are not one-hot are ignored.
pub fn derive_video_labels(video: &VideoRecord) -> VideoLabel {
    video_label_from_classes(
        video.num_classes,
        video.points.iter().filter_map(PointAnnotation::class),
    )
}

pub fn video_label_from_classes(
    num_classes: usize,
    classes: impl IntoIterator<Item = ClassId>,
) -> VideoLabel {
    let mut presence = vec![0u8; num_classes];
    for c in classes {
        if let Some(slot) = presence.get_mut(c.0) {
            *slot = 1;
        }
    }
    VideoLabel { presence }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub video_id: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.video_id, self.message)
    }
}

/// Checks every record invariant and returns one entry per violation.
pub fn validate_dataset(videos: &[VideoRecord]) -> Vec<Violation> {
    let mut out = Vec::new();
    for video in videos {
        let mut push = |message: String| {
            out.push(Violation {
                video_id: video.id.clone(),
                message,
            })
        };
        if video.num_classes == 0 {
            push("num_classes must be at least 1".into());
        }
        if video.length == 0 {
            push("video length must be at least 1".into());
        }
        if let Some(features) = &video.features {
            if features.nrows() != video.length {
                push(format!(
                    "features have {} rows, expected {}",
                    features.nrows(),
                    video.length
                ));
            }
            if features.iter().any(|v| !v.is_finite()) {
                push("features contain non-finite values".into());
            }
        }
        for (i, p) in video.points.iter().enumerate() {
            if p.epsilon >= video.length {
                push(format!(
                    "point out of range: point {i} at {} with T = {}",
                    p.epsilon, video.length
                ));
            }
            if p.label.len() != video.num_classes {
                push(format!(
                    "label length mismatch: point {i} has {} entries, expected {}",
                    p.label.len(),
                    video.num_classes
                ));
            } else if p.class().is_none() {
                push(format!("label not one-hot: point {i} has {:?}", p.label));
            }
        }
        for (i, gt) in video.ground_truth.iter().flatten().enumerate() {
            if !(gt.start.is_finite() && gt.end.is_finite()) || gt.start >= gt.end {
                push(format!(
                    "ground truth {i} is not a valid interval: [{}, {})",
                    gt.start, gt.end
                ));
            }
            if gt.start < 0.0 || gt.end > video.length as f64 {
                push(format!(
                    "ground truth {i} outside [0, {}]: [{}, {})",
                    video.length, gt.start, gt.end
                ));
            }
            if gt.label.0 >= video.num_classes {
                push(format!(
                    "ground truth {i} has class {} but C = {}",
                    gt.label, video.num_classes
                ));
            }
        }
    }
    out
}

/// Converts a time in seconds to snippet units.
pub fn seconds_to_snippets(seconds: f64, fps: f64, frames_per_snippet: f64) -> f64 {
    seconds * fps / frames_per_snippet
}

#[cfg(test)]
mod tests {
    use super::*;

    fn video(length: usize, points: Vec<PointAnnotation>) -> VideoRecord {
        VideoRecord {
            id: "v".into(),
            length,
            num_classes: 3,
            features: None,
            points,
            ground_truth: None,
        }
    }

    #[test]
    fn point_at_length_is_out_of_range() {
        let v = video(20, vec![PointAnnotation::new(20, ClassId(0), 3)]);
        let violations = validate_dataset(&[v]);
        assert_eq!(violations.len(), 1);
        assert!(violations[0].message.contains("point out of range"));
    }

    #[test]
    fn zero_label_is_not_one_hot() {
        let mut p = PointAnnotation::new(3, ClassId(0), 3);
        p.label = vec![0, 0, 0];
        let violations = validate_dataset(&[video(20, vec![p])]);
        assert_eq!(violations.len(), 1);
        assert!(violations[0].message.contains("label not one-hot"));
    }

    #[test]
    fn well_formed_set_has_no_violations() {
        let a = video(20, vec![PointAnnotation::new(3, ClassId(1), 3)]);
        let mut b = video(30, vec![PointAnnotation::new(29, ClassId(2), 3)]);
        b.ground_truth = Some(vec![GtInterval {
            start: 25.0,
            end: 30.0,
            label: ClassId(2),
        }]);
        assert!(validate_dataset(&[a, b]).is_empty());
    }

    #[test]
    fn video_labels() {
        let pts = |cs: &[usize]| {
            cs.iter()
                .enumerate()
                .map(|(i, &c)| PointAnnotation::new(i, ClassId(c), 3))
                .collect()
        };
        assert_eq!(derive_video_labels(&video(10, pts(&[0, 0, 1]))).presence, [1, 1, 0]);
        assert_eq!(derive_video_labels(&video(10, vec![])).presence, [0, 0, 0]);
        assert_eq!(derive_video_labels(&video(10, pts(&[2]))).presence, [0, 0, 1]);
    }

    #[test]
    fn one_hot_decoding() {
        let mut p = PointAnnotation::new(0, ClassId(1), 3);
        assert_eq!(p.class(), Some(ClassId(1)));
        p.label = vec![1, 1, 0];
        assert_eq!(p.class(), None);
        p.label = vec![0, 2, 0];
        assert_eq!(p.class(), None);
    }
}
