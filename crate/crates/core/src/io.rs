//! Line-delimited JSON dataset files.
//!
//! Every record carries `video_id`. Reals are written in their shortest
//! round-trip decimal form, so a write followed by a read reproduces each
//! `f64` bit for bit.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ClassId, GtInterval, PointAnnotation, Proposal, PseudoLabel, VideoRecord};

pub const VIDEOS_FILE: &str = "videos.jsonl";
pub const POINTS_FILE: &str = "points.jsonl";
pub const PROPOSALS_FILE: &str = "proposals.jsonl";
pub const PSEUDOLABELS_FILE: &str = "pseudolabels.jsonl";
pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const SCORES_FILE: &str = "scores.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRow {
    pub video_id: String,
    pub length: usize,
    pub num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<Vec<GtInterval>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointRow {
    pub video_id: String,
    pub epsilon: usize,
    pub label: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalRow {
    pub video_id: String,
    pub start: f64,
    pub end: f64,
    pub label: ClassId,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelRow {
    pub video_id: String,
    pub point: usize,
    pub start: f64,
    pub end: f64,
    pub label: ClassId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub video_id: String,
    pub start: f64,
    pub end: f64,
    pub label: ClassId,
    pub score: f64,
}

/// One pyramid level of trained scores, row-major `rows x cols`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub video_id: String,
    pub level: usize,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl ProposalRow {
    pub fn new(video_id: &str, p: &Proposal) -> Self {
        Self {
            video_id: video_id.to_owned(),
            start: p.start,
            end: p.end,
            label: p.label,
            confidence: p.confidence,
        }
    }

    pub fn proposal(&self) -> Proposal {
        Proposal::new(self.start, self.end, self.label, self.confidence)
    }
}

impl DetectionRow {
    pub fn new(video_id: &str, p: &Proposal) -> Self {
        Self {
            video_id: video_id.to_owned(),
            start: p.start,
            end: p.end,
            label: p.label,
            score: p.confidence,
        }
    }

    pub fn proposal(&self) -> Proposal {
        Proposal::new(self.start, self.end, self.label, self.score)
    }
}

impl PseudoLabelRow {
    pub fn new(video_id: &str, p: &PseudoLabel) -> Self {
        Self {
            video_id: video_id.to_owned(),
            point: p.point,
            start: p.start,
            end: p.end,
            label: p.label,
        }
    }

    pub fn pseudo_label(&self) -> PseudoLabel {
        PseudoLabel {
            point: self.point,
            start: self.start,
            end: self.end,
            label: self.label,
        }
    }
}

impl ScoreRow {
    pub fn new(video_id: &str, level: usize, values: &Array2<f64>) -> Self {
        Self {
            video_id: video_id.to_owned(),
            level,
            rows: values.nrows(),
            cols: values.ncols(),
            values: values.iter().copied().collect(),
        }
    }

    pub fn to_array(&self) -> Result<Array2<f64>> {
        Array2::from_shape_vec((self.rows, self.cols), self.values.clone()).map_err(|_| {
            Error::Shape(format!(
                "scores for {} level {}: {} values do not fill {}x{}",
                self.video_id,
                self.level,
                self.values.len(),
                self.rows,
                self.cols
            ))
        })
    }
}

/// Parses JSON lines from `reader`; blank lines are skipped. `origin` names
/// the source in error messages.
pub fn parse_jsonl<T: DeserializeOwned>(reader: impl BufRead, origin: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut de = serde_json::Deserializer::from_str(&line);
        let parse_error = |field: String, message: String| Error::Parse {
            path: origin.to_owned(),
            line: idx + 1,
            field,
            message,
        };
        let record = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let message = e.inner().to_string();
            let path = e.path().to_string();
            let field = if path == "." {
                missing_field(&message).unwrap_or_else(|| "<record>".to_owned())
            } else {
                path
            };
            parse_error(field, message)
        })?;
        de.end()
            .map_err(|e| parse_error("<record>".to_owned(), e.to_string()))?;
        out.push(record);
    }
    Ok(out)
}

fn missing_field(message: &str) -> Option<String> {
    let rest = message.strip_prefix("missing field `")?;
    Some(rest[..rest.find('`')?].to_owned())
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(BufReader::new(file), path)
}

pub fn to_jsonl<T: Serialize>(rows: &[T]) -> String {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// Writes `rows` to a sibling temp file and renames it over `path`.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    write_atomic(path.as_ref(), to_jsonl(rows).as_bytes())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn video_rows(videos: &[VideoRecord]) -> Vec<VideoRow> {
    videos
        .iter()
        .map(|v| VideoRow {
            video_id: v.id.clone(),
            length: v.length,
            num_classes: v.num_classes,
            features: v
                .features
                .as_ref()
                .map(|f| f.rows().into_iter().map(|r| r.to_vec()).collect()),
            ground_truth: v.ground_truth.clone(),
        })
        .collect()
}

pub fn point_rows(videos: &[VideoRecord]) -> Vec<PointRow> {
    videos
        .iter()
        .flat_map(|v| {
            v.points.iter().map(move |p| PointRow {
                video_id: v.id.clone(),
                epsilon: p.epsilon,
                label: p.label.clone(),
            })
        })
        .collect()
}

/// Writes `videos.jsonl` and `points.jsonl` into `dir`.
pub fn write_dataset(dir: impl AsRef<Path>, videos: &[VideoRecord]) -> Result<()> {
    let dir = dir.as_ref();
    write_jsonl(dir.join(VIDEOS_FILE), &video_rows(videos))?;
    write_jsonl(dir.join(POINTS_FILE), &point_rows(videos))
}

/// Reads videos and attaches their points. Ground truth is kept only when
/// `with_ground_truth` is set.
pub fn read_dataset(
    videos_path: impl AsRef<Path>,
    points_path: impl AsRef<Path>,
    with_ground_truth: bool,
) -> Result<Vec<VideoRecord>> {
    let videos_path = videos_path.as_ref();
    let rows: Vec<VideoRow> = read_jsonl(videos_path)?;
    let points: Vec<PointRow> = read_jsonl(points_path.as_ref())?;
    assemble(rows, points, with_ground_truth, videos_path)
}

pub fn assemble(
    rows: Vec<VideoRow>,
    points: Vec<PointRow>,
    with_ground_truth: bool,
    origin: &Path,
) -> Result<Vec<VideoRecord>> {
    let mut videos = Vec::with_capacity(rows.len());
    let mut index = HashMap::new();
    for (line, row) in rows.into_iter().enumerate() {
        let features = match row.features {
            Some(f) => {
                let width = f.first().map_or(0, Vec::len);
                if f.iter().any(|r| r.len() != width) {
                    return Err(Error::Parse {
                        path: origin.to_owned(),
                        line: line + 1,
                        field: "features".into(),
                        message: "ragged feature matrix".into(),
                    });
                }
                let flat = f.into_iter().flatten().collect();
                Some(Array2::from_shape_vec((row.length, width), flat).map_err(
                    |_| Error::Parse {
                        path: origin.to_owned(),
                        line: line + 1,
                        field: "features".into(),
                        message: format!("expected {} feature rows", row.length),
                    },
                )?)
            }
            None => None,
        };
        index.insert(row.video_id.clone(), videos.len());
        videos.push(VideoRecord {
            id: row.video_id,
            length: row.length,
            num_classes: row.num_classes,
            features,
            points: Vec::new(),
            ground_truth: if with_ground_truth {
                row.ground_truth
            } else {
                None
            },
        });
    }
    for p in points {
        let &i = index
            .get(&p.video_id)
            .ok_or_else(|| Error::Invalid(format!("point refers to unknown video {}", p.video_id)))?;
        videos[i].points.push(PointAnnotation {
            epsilon: p.epsilon,
            label: p.label,
        });
    }
    Ok(videos)
}

/// Groups rows by `video_id`, keeping first-seen order within each group.
pub fn group_by_video<T, F>(rows: Vec<T>, key: F) -> HashMap<String, Vec<T>>
where
    F: Fn(&T) -> &str,
{
    let mut out: HashMap<String, Vec<T>> = HashMap::new();
    for row in rows {
        out.entry(key(&row).to_owned()).or_default().push(row);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn origin() -> &'static Path {
        Path::new("test.jsonl")
    }

    #[test]
    fn empty_input_is_empty_list() {
        let rows: Vec<ProposalRow> = parse_jsonl("".as_bytes(), origin()).unwrap();
        assert!(rows.is_empty());
    }

    #[test]
    fn missing_field_reports_line_and_field() {
        let text = "{\"video_id\":\"a\",\"start\":1.0,\"end\":2.0,\"label\":0,\"confidence\":0.5}\n\
                    {\"video_id\":\"a\",\"start\":1.0,\"label\":0,\"confidence\":0.5}\n";
        let err = parse_jsonl::<ProposalRow>(text.as_bytes(), origin()).unwrap_err();
        match err {
            Error::Parse { line, field, .. } => {
                assert_eq!(line, 2);
                assert_eq!(field, "end");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn wrong_type_reports_field() {
        let text = "{\"video_id\":\"a\",\"start\":\"x\",\"end\":2.0,\"label\":0,\"confidence\":0.5}";
        match parse_jsonl::<ProposalRow>(text.as_bytes(), origin()).unwrap_err() {
            Error::Parse { line, field, .. } => assert_eq!((line, field.as_str()), (1, "start")),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn trailing_garbage_is_rejected() {
        let text = "{\"video_id\":\"a\",\"epsilon\":1,\"label\":[1]} x";
        assert!(parse_jsonl::<PointRow>(text.as_bytes(), origin()).is_err());
    }

    proptest! {
        #[test]
        fn proposal_rows_round_trip_bit_exact(
            rows in proptest::collection::vec(
                (any::<f64>(), any::<f64>(), 0usize..20, any::<f64>(), "[a-z0-9_]{1,8}"), 0..100)
        ) {
            let rows: Vec<ProposalRow> = rows
                .into_iter()
                .filter(|(s, e, _, c, _)| s.is_finite() && e.is_finite() && c.is_finite())
                .map(|(start, end, label, confidence, video_id)| ProposalRow {
                    video_id, start, end, label: ClassId(label), confidence,
                })
                .collect();
            let text = to_jsonl(&rows);
            let back: Vec<ProposalRow> = parse_jsonl(text.as_bytes(), origin()).unwrap();
            prop_assert_eq!(back.len(), rows.len());
            for (a, b) in rows.iter().zip(&back) {
                prop_assert_eq!(a.start.to_bits(), b.start.to_bits());
                prop_assert_eq!(a.end.to_bits(), b.end.to_bits());
                prop_assert_eq!(a.confidence.to_bits(), b.confidence.to_bits());
                prop_assert_eq!(&a.video_id, &b.video_id);
                prop_assert_eq!(a.label, b.label);
            }
        }
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let video = VideoRecord {
            id: "v0".into(),
            length: 3,
            num_classes: 2,
            features: Some(ndarray::array![[0.1, 1.0 / 3.0], [2.0, -0.5], [1e-300, 7.0]]),
            points: vec![PointAnnotation::new(1, ClassId(1), 2)],
            ground_truth: Some(vec![GtInterval {
                start: 0.0,
                end: 2.5,
                label: ClassId(1),
            }]),
        };
        write_dataset(dir.path(), std::slice::from_ref(&video)).unwrap();
        let back = read_dataset(dir.path().join(VIDEOS_FILE), dir.path().join(POINTS_FILE), true)
            .unwrap();
        assert_eq!(back, vec![video.clone()]);
        let stripped =
            read_dataset(dir.path().join(VIDEOS_FILE), dir.path().join(POINTS_FILE), false)
                .unwrap();
        assert_eq!(stripped[0].ground_truth, None);
    }
}
