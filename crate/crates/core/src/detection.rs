//! Detection and ground-truth label handling plus the detection metrics
//! (IoU matching, precision-recall curves, average precision).
//!
//! Label interchange is the plain detector format: one record per line,
//! ASCII decimals, space-separated — `class_id cx cy w h` for ground truth
//! and `class_id cx cy w h confidence` for detections. Coordinates are
//! fractions of the image size, box centers plus extents.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{rect_iou, PixelRect};

pub use crate::geometry::iou;

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error("line {line}: expected {expected} fields, found {found}")]
    WrongFieldCount {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: malformed token `{token}`")]
    MalformedToken { line: usize, token: String },
    #[error("line {line}: field {field} = {value} outside its valid range")]
    FieldOutOfRange {
        line: usize,
        field: &'static str,
        value: f64,
    },
    #[error("no detections available for image `{image_id}` (looked in {location})")]
    NoDetectionsAvailable { image_id: String, location: String },
    #[error("detector command `{command}` failed: {detail}")]
    CommandFailed { command: String, detail: String },
    #[error("fixture {path} has no entry for image `{image_id}`")]
    FixtureMiss { path: PathBuf, image_id: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to parse fixture {path}: {source}")]
    FixtureParse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("precision-recall curve requires a non-empty ground truth set")]
    EmptyGroundTruth,
}

/// Box as fractions of the image: center `(cx, cy)`, extent `(w, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl NormalizedBox {
    /// Geometric corners in normalized units (not clipped).
    fn corners(&self) -> [f64; 4] {
        [
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: u32,
    pub box_: NormalizedBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLabel {
    pub class_id: u32,
    pub box_: NormalizedBox,
}

/// Where detections come from: a directory of label files, an external
/// detector process, or a checked-in fixture map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionSource {
    pub kind: DetectionSourceKind,
    /// Directory path, command template (`{image}` placeholder), or fixture
    /// file path depending on `kind`.
    pub location: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectionSourceKind {
    LabelDirectory,
    ExternalCommand,
    Fixture,
}

fn parse_fields(text: &str, fields_per_line: usize) -> Result<Vec<(usize, Vec<f64>)>, DetectionError> {
    let mut rows = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        if tokens.len() != fields_per_line {
            return Err(DetectionError::WrongFieldCount {
                line,
                expected: fields_per_line,
                found: tokens.len(),
            });
        }
        let mut values = Vec::with_capacity(fields_per_line);
        for token in tokens {
            let value: f64 = token.parse().map_err(|_| DetectionError::MalformedToken {
                line,
                token: token.to_string(),
            })?;
            values.push(value);
        }
        rows.push((line, values));
    }
    Ok(rows)
}

fn check_unit(line: usize, field: &'static str, value: f64) -> Result<f64, DetectionError> {
    if !(0.0..=1.0).contains(&value) || !value.is_finite() {
        return Err(DetectionError::FieldOutOfRange { line, field, value });
    }
    Ok(value)
}

fn check_class(line: usize, value: f64) -> Result<u32, DetectionError> {
    if value < 0.0 || value.fract() != 0.0 || value > u32::MAX as f64 {
        return Err(DetectionError::FieldOutOfRange {
            line,
            field: "class_id",
            value,
        });
    }
    Ok(value as u32)
}

fn box_from(line: usize, v: &[f64]) -> Result<NormalizedBox, DetectionError> {
    Ok(NormalizedBox {
        cx: check_unit(line, "cx", v[0])?,
        cy: check_unit(line, "cy", v[1])?,
        // Zero-extent boxes are accepted; they contribute zero area to IoU.
        w: check_unit(line, "w", v[2])?,
        h: check_unit(line, "h", v[3])?,
    })
}

/// Parses ground-truth records (`class cx cy w h` per line).
pub fn parse_ground_truth(text: &str) -> Result<Vec<GroundTruthLabel>, DetectionError> {
    parse_fields(text, 5)?
        .into_iter()
        .map(|(line, v)| {
            Ok(GroundTruthLabel {
                class_id: check_class(line, v[0])?,
                box_: box_from(line, &v[1..5])?,
            })
        })
        .collect()
}

/// Parses detection records (`class cx cy w h confidence` per line).
pub fn parse_detections(text: &str) -> Result<Vec<Detection>, DetectionError> {
    parse_fields(text, 6)?
        .into_iter()
        .map(|(line, v)| {
            Ok(Detection {
                class_id: check_class(line, v[0])?,
                box_: box_from(line, &v[1..5])?,
                confidence: check_unit(line, "confidence", v[5])?,
            })
        })
        .collect()
}

pub fn format_ground_truth(labels: &[GroundTruthLabel]) -> String {
    let mut out = String::new();
    for l in labels {
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            l.class_id, l.box_.cx, l.box_.cy, l.box_.w, l.box_.h
        ));
    }
    out
}

pub fn format_detections(dets: &[Detection]) -> String {
    let mut out = String::new();
    for d in dets {
        out.push_str(&format!(
            "{} {} {} {} {} {}\n",
            d.class_id, d.box_.cx, d.box_.cy, d.box_.w, d.box_.h, d.confidence
        ));
    }
    out
}

/// Converts a normalized box to a pixel rectangle on a `width`×`height`
/// grid: corners are rounded half away from zero and clipped to the image.
pub fn to_pixel_rect(box_: &NormalizedBox, width: u32, height: u32) -> PixelRect {
    let [x0, y0, x1, y1] = box_.corners();
    let clip = |v: f64, hi: u32| -> i64 { (v.round() as i64).clamp(0, hi as i64) };
    let x_min = clip(x0 * width as f64, width);
    let x_max = clip(x1 * width as f64, width);
    let y_min = clip(y0 * height as f64, height);
    let y_max = clip(y1 * height as f64, height);
    PixelRect::new(x_min.min(x_max), y_min.min(y_max), x_min.max(x_max), y_min.max(y_max))
}

/// Result of greedy detection-to-ground-truth matching.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchOutcome {
    /// True-positive flag per detection, aligned with the input order.
    pub tp: Vec<bool>,
    /// Index of the matched ground truth per detection, input-aligned.
    pub matched_gt: Vec<Option<usize>>,
    /// Ground truths left unmatched.
    pub false_negatives: usize,
}

/// Greedy matching: detections in descending confidence, each taking the
/// unmatched same-class ground truth with the highest IoU at or above the
/// threshold. Every ground truth is matched at most once.
pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruthLabel],
    iou_threshold: f64,
) -> MatchOutcome {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .partial_cmp(&dets[a].confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut gt_taken = vec![false; gts.len()];
    let mut tp = vec![false; dets.len()];
    let mut matched_gt = vec![None; dets.len()];

    for &di in &order {
        let det = &dets[di];
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if gt_taken[gi] || gt.class_id != det.class_id {
                continue;
            }
            let overlap = rect_iou(det.box_.corners(), gt.box_.corners());
            if overlap < iou_threshold {
                continue;
            }
            if best.map_or(true, |(_, b)| overlap > b) {
                best = Some((gi, overlap));
            }
        }
        if let Some((gi, _)) = best {
            gt_taken[gi] = true;
            tp[di] = true;
            matched_gt[di] = Some(gi);
        }
    }

    let false_negatives = gt_taken.iter().filter(|&&t| !t).count();
    MatchOutcome {
        tp,
        matched_gt,
        false_negatives,
    }
}

/// One cumulative point on a precision-recall curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// Cumulative precision/recall after each detection in descending-confidence
/// order. Errors if the ground truth set is empty.
pub fn precision_recall_curve(
    dets: &[Detection],
    gts: &[GroundTruthLabel],
    iou_threshold: f64,
) -> Result<Vec<PrPoint>, DetectionError> {
    if gts.is_empty() {
        return Err(DetectionError::EmptyGroundTruth);
    }
    let outcome = match_detections(dets, gts, iou_threshold);

    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .partial_cmp(&dets[a].confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let total_gt = gts.len() as f64;
    let mut tp_cum = 0usize;
    let mut points = Vec::with_capacity(dets.len());
    for (rank, &di) in order.iter().enumerate() {
        if outcome.tp[di] {
            tp_cum += 1;
        }
        points.push(PrPoint {
            recall: tp_cum as f64 / total_gt,
            precision: tp_cum as f64 / (rank + 1) as f64,
        });
    }
    Ok(points)
}

/// All-point interpolated area under the precision envelope. Empty curves
/// score 0.
pub fn average_precision(curve: &[PrPoint]) -> f64 {
    if curve.is_empty() {
        return 0.0;
    }
    let mut points = curve.to_vec();
    points.sort_by(|a, b| {
        a.recall
            .partial_cmp(&b.recall)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    // Monotonic envelope: precision at each point becomes the max to its right.
    for i in (0..points.len() - 1).rev() {
        points[i].precision = points[i].precision.max(points[i + 1].precision);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for p in &points {
        ap += (p.recall - prev_recall) * p.precision;
        prev_recall = p.recall;
    }
    ap
}

/// In-repo fixture map: image id to label-format detection text.
type FixtureMap = HashMap<String, String>;

/// Resolves detections for one image from the configured source.
pub fn provide_detections(
    source: &DetectionSource,
    image_id: &str,
    image_path: &Path,
) -> Result<Vec<Detection>, DetectionError> {
    match source.kind {
        DetectionSourceKind::LabelDirectory => {
            let path = Path::new(&source.location).join(format!("{image_id}.txt"));
            if !path.exists() {
                return Err(DetectionError::NoDetectionsAvailable {
                    image_id: image_id.to_string(),
                    location: source.location.clone(),
                });
            }
            let text = std::fs::read_to_string(&path)
                .map_err(|source| DetectionError::Io { path, source })?;
            parse_detections(&text)
        }
        DetectionSourceKind::ExternalCommand => {
            let image_abs = image_path
                .canonicalize()
                .unwrap_or_else(|_| image_path.to_path_buf());
            let image_str = image_abs.display().to_string();
            let argv: Vec<String> = source
                .location
                .split_whitespace()
                .map(|tok| tok.replace("{image}", &image_str))
                .collect();
            if argv.is_empty() {
                return Err(DetectionError::CommandFailed {
                    command: source.location.clone(),
                    detail: "empty command template".to_string(),
                });
            }
            let output = Command::new(&argv[0]).args(&argv[1..]).output().map_err(|e| {
                DetectionError::CommandFailed {
                    command: source.location.clone(),
                    detail: e.to_string(),
                }
            })?;
            if !output.status.success() {
                return Err(DetectionError::CommandFailed {
                    command: source.location.clone(),
                    detail: format!(
                        "exit {:?}: {}",
                        output.status.code(),
                        String::from_utf8_lossy(&output.stderr).trim()
                    ),
                });
            }
            let stdout = String::from_utf8_lossy(&output.stdout);
            parse_detections(&stdout)
        }
        DetectionSourceKind::Fixture => {
            let path = PathBuf::from(&source.location);
            let text = std::fs::read_to_string(&path).map_err(|source| DetectionError::Io {
                path: path.clone(),
                source,
            })?;
            let map: FixtureMap = serde_json::from_str(&text)
                .map_err(|source| DetectionError::FixtureParse {
                    path: path.clone(),
                    source,
                })?;
            let entry = map.get(image_id).ok_or(DetectionError::FixtureMiss {
                path,
                image_id: image_id.to_string(),
            })?;
            parse_detections(entry)
        }
    }
}

/// Number of detections passing the class and confidence filters.
pub fn count_objects(dets: &[Detection], class_filter: Option<u32>, min_confidence: f64) -> usize {
    dets.iter()
        .filter(|d| class_filter.map_or(true, |c| d.class_id == c))
        .filter(|d| d.confidence >= min_confidence)
        .count()
}
