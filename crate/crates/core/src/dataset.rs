//! Annotation ingestion, RGB↔event homographic alignment, small-box filtering
//! and day/night, class-balanced split construction.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Placeholder eight-class vocabulary; override it through [`ParseOptions`].
pub const DEFAULT_CLASSES: [&str; 8] = ["car", "pedestrian", "truck", "bus", "bicycle", "motorcycle", "rider", "train"];

/// Classes kept by the class-balanced split.
pub const BALANCED_CLASSES: [&str; 2] = ["car", "pedestrian"];

/// Boxes with a shorter diagonal than this many pixels are dropped by default.
pub const DEFAULT_MIN_DIAG: f64 = 30.0;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("homography: {0}")]
    Homography(String),
    #[error("point ({x}, {y}) maps to infinity")]
    PointAtInfinity { x: f64, y: f64 },
    #[error("frame {frame:?} belongs to sequence {sequence:?}, which has no metadata entry")]
    UnknownSequence { frame: String, sequence: String },
    #[error("split metadata: {0}")]
    Metadata(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    #[serde(rename = "frame")]
    pub frame_id: String,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    #[serde(rename = "class")]
    pub class_name: String,
}

impl GroundTruthBox {
    pub fn new(frame_id: impl Into<String>, x: f64, y: f64, w: f64, h: f64, class_name: impl Into<String>) -> Self {
        Self { frame_id: frame_id.into(), x, y, w, h, class_name: class_name.into() }
    }

    pub fn diagonal(&self) -> f64 {
        self.w.hypot(self.h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseOptions {
    /// Accepted class names; `None` accepts any class.
    pub vocabulary: Option<Vec<String>>,
    /// Fail on the first bad record instead of collecting warnings.
    pub strict: bool,
    /// `(width, height)`; when set, boxes must intersect the image.
    pub image_size: Option<(f64, f64)>,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            vocabulary: Some(DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect()),
            strict: true,
            image_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseWarning {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedAnnotations {
    pub boxes: Vec<GroundTruthBox>,
    pub warnings: Vec<ParseWarning>,
}

fn validate_box(b: &GroundTruthBox, opts: &ParseOptions) -> Result<(), String> {
    if ![b.x, b.y, b.w, b.h].iter().all(|v| v.is_finite()) {
        return Err("non-finite coordinate".into());
    }
    if b.w <= 0.0 || b.h <= 0.0 {
        return Err(format!("box size must be positive, got {}x{}", b.w, b.h));
    }
    if let Some(vocab) = &opts.vocabulary {
        if !vocab.iter().any(|c| c == &b.class_name) {
            return Err(format!("unknown class {:?}", b.class_name));
        }
    }
    if let Some((iw, ih)) = opts.image_size {
        if b.x >= iw || b.y >= ih || b.x + b.w <= 0.0 || b.y + b.h <= 0.0 {
            return Err(format!("box ({}, {}, {}, {}) lies outside the {iw}x{ih} image", b.x, b.y, b.w, b.h));
        }
    }
    Ok(())
}

/// Parses JSON-lines annotations. Blank lines are skipped; line numbers are 1-based.
pub fn parse_annotations(text: &str, opts: &ParseOptions) -> Result<ParsedAnnotations, DatasetError> {
    let mut out = ParsedAnnotations::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<GroundTruthBox>(raw)
            .map_err(|e| e.to_string())
            .and_then(|b| validate_box(&b, opts).map(|_| b));
        match parsed {
            Ok(b) => out.boxes.push(b),
            Err(message) if opts.strict => return Err(DatasetError::Record { line, message }),
            Err(message) => out.warnings.push(ParseWarning { line, message }),
        }
    }
    Ok(out)
}

pub fn serialize_annotations(boxes: &[GroundTruthBox]) -> String {
    let mut s = String::new();
    for b in boxes {
        let _ = writeln!(s, "{}", serde_json::to_string(b).expect("boxes serialize"));
    }
    s
}

/// Keeps boxes whose diagonal is at least `min_diag`, preserving order.
pub fn filter_small_boxes(boxes: &[GroundTruthBox], min_diag: f64) -> Vec<GroundTruthBox> {
    boxes.iter().filter(|b| b.diagonal() >= min_diag).cloned().collect()
}

/// Invertible 3×3 projective transform acting on `(x, y, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    pub fn new(m: Matrix3<f64>) -> Result<Self, DatasetError> {
        let det = m.determinant();
        if !det.is_finite() || det.abs() <= 1e-9 {
            return Err(DatasetError::Homography(format!("matrix is singular (det = {det:e})")));
        }
        Ok(Self { m })
    }

    pub fn from_row_major(v: [f64; 9]) -> Result<Self, DatasetError> {
        Self::new(Matrix3::from_row_slice(&v))
    }

    pub fn identity() -> Self {
        Self { m: Matrix3::identity() }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self::from_row_major([1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0]).unwrap()
    }

    /// Nine whitespace-separated numbers in row-major order.
    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        let vals = text
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| DatasetError::Homography(format!("not a number: {t:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let arr: [f64; 9] = vals
            .as_slice()
            .try_into()
            .map_err(|_| DatasetError::Homography(format!("expected 9 numbers, found {}", vals.len())))?;
        Self::from_row_major(arr)
    }

    pub fn to_text(&self) -> String {
        let r = |i: usize| format!("{} {} {}", self.m[(i, 0)], self.m[(i, 1)], self.m[(i, 2)]);
        format!("{}\n{}\n{}\n", r(0), r(1), r(2))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn inverse(&self) -> Self {
        Self { m: self.m.try_inverse().expect("homography is invertible") }
    }

    /// `self ∘ first`: applies `first`, then `self`.
    pub fn compose(&self, first: &Homography) -> Result<Self, DatasetError> {
        Self::new(self.m * first.m)
    }

    pub fn warp_point(&self, x: f64, y: f64) -> Result<(f64, f64), DatasetError> {
        let v = self.m * Vector3::new(x, y, 1.0);
        if v.z.abs() < 1e-12 {
            return Err(DatasetError::PointAtInfinity { x, y });
        }
        Ok((v.x / v.z, v.y / v.z))
    }
}

pub fn warp_points(h: &Homography, points: &[(f64, f64)]) -> Result<Vec<(f64, f64)>, DatasetError> {
    points.iter().map(|&(x, y)| h.warp_point(x, y)).collect()
}

/// Axis-aligned hull of the four warped corners, clamped to `target = (width, height)`.
///
/// Returns `None` when nothing of the hull remains inside the target.
pub fn warp_box(h: &Homography, b: &GroundTruthBox, target: (f64, f64)) -> Result<Option<GroundTruthBox>, DatasetError> {
    let corners = [(b.x, b.y), (b.x + b.w, b.y), (b.x, b.y + b.h), (b.x + b.w, b.y + b.h)];
    let warped = warp_points(h, &corners)?;
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (x, y) in warped {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    Ok(clamp_rect(x0, y0, x1, y1, target).map(|(x, y, w, hh)| GroundTruthBox {
        frame_id: b.frame_id.clone(),
        x,
        y,
        w,
        h: hh,
        class_name: b.class_name.clone(),
    }))
}

fn clamp_rect(x0: f64, y0: f64, x1: f64, y1: f64, (tw, th): (f64, f64)) -> Option<(f64, f64, f64, f64)> {
    let (cx0, cy0) = (x0.clamp(0.0, tw), y0.clamp(0.0, th));
    let (cx1, cy1) = (x1.clamp(0.0, tw), y1.clamp(0.0, th));
    (cx1 > cx0 && cy1 > cy0).then(|| (cx0, cy0, cx1 - cx0, cy1 - cy0))
}

/// Clamps a box to the target rectangle without warping it.
pub fn clamp_box(b: &GroundTruthBox, target: (f64, f64)) -> Option<GroundTruthBox> {
    clamp_rect(b.x, b.y, b.x + b.w, b.y + b.h, target)
        .map(|(x, y, w, h)| GroundTruthBox { x, y, w, h, ..b.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassMode {
    Balanced,
    #[default]
    Imbalanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeMode {
    #[default]
    All,
    Daytime,
    Nighttime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SplitSpec {
    pub class_mode: ClassMode,
    pub time_mode: TimeMode,
}

impl std::str::FromStr for SplitSpec {
    type Err = String;

    /// `"<all|daytime|nighttime>/<balanced|imbalanced>"`, either part optional.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut spec = SplitSpec::default();
        for part in s.split(['/', ',']).map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "all" => spec.time_mode = TimeMode::All,
                "day" | "daytime" => spec.time_mode = TimeMode::Daytime,
                "night" | "nighttime" => spec.time_mode = TimeMode::Nighttime,
                "balanced" => spec.class_mode = ClassMode::Balanced,
                "imbalanced" => spec.class_mode = ClassMode::Imbalanced,
                other => return Err(format!("unknown split component {other:?}")),
            }
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeOfDay {
    Day,
    Night,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceInfo {
    pub time: TimeOfDay,
}

/// Sequence id → lighting tag, read from `{"seq": {"time": "day"}, ...}`.
pub type SplitMetadata = BTreeMap<String, SequenceInfo>;

pub fn parse_split_metadata(text: &str) -> Result<SplitMetadata, DatasetError> {
    serde_json::from_str(text).map_err(|e| DatasetError::Metadata(e.to_string()))
}

/// Sequence id of a frame: everything before the first `/`, or the whole id.
pub fn sequence_of(frame_id: &str) -> &str {
    frame_id.split_once('/').map_or(frame_id, |(s, _)| s)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Split {
    /// Distinct frame ids in first-appearance order.
    pub frames: Vec<String>,
    pub boxes: Vec<GroundTruthBox>,
}

impl Split {
    pub fn contains_frame(&self, frame: &str) -> bool {
        self.frames.iter().any(|f| f == frame)
    }
}

pub fn class_allowed(spec: &SplitSpec, class_name: &str) -> bool {
    match spec.class_mode {
        ClassMode::Imbalanced => true,
        ClassMode::Balanced => BALANCED_CLASSES.contains(&class_name),
    }
}

/// Selects frames by lighting and boxes by class.
///
/// Frames are kept by their sequence's lighting tag even if the class filter
/// removes all of their boxes. Metadata is only consulted for day/night specs.
pub fn build_split(boxes: &[GroundTruthBox], metadata: &SplitMetadata, spec: &SplitSpec) -> Result<Split, DatasetError> {
    let wanted = match spec.time_mode {
        TimeMode::All => None,
        TimeMode::Daytime => Some(TimeOfDay::Day),
        TimeMode::Nighttime => Some(TimeOfDay::Night),
    };
    let mut split = Split::default();
    let mut seen = HashSet::new();
    for b in boxes {
        if let Some(time) = wanted {
            let seq = sequence_of(&b.frame_id);
            let info = metadata.get(seq).ok_or_else(|| DatasetError::UnknownSequence {
                frame: b.frame_id.clone(),
                sequence: seq.to_string(),
            })?;
            if info.time != time {
                continue;
            }
        }
        if seen.insert(b.frame_id.clone()) {
            split.frames.push(b.frame_id.clone());
        }
        if class_allowed(spec, &b.class_name) {
            split.boxes.push(b.clone());
        }
    }
    Ok(split)
}
