//! COCO-style detection scoring: IoU, greedy score-ordered matching,
//! 101-point interpolated AP, mAP50 and mAP50:95.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::GroundTruthBox;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
}

/// Axis-aligned box given by its top-left corner and size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }
}

impl From<&GroundTruthBox> for Rect {
    fn from(b: &GroundTruthBox) -> Self {
        Rect::new(b.x, b.y, b.w, b.h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "frame")]
    pub frame_id: String,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    #[serde(rename = "class")]
    pub class_name: String,
    pub score: f64,
}

impl Detection {
    pub fn new(frame_id: impl Into<String>, rect: Rect, class_name: impl Into<String>, score: f64) -> Self {
        Self { frame_id: frame_id.into(), x: rect.x, y: rect.y, w: rect.w, h: rect.h, class_name: class_name.into(), score }
    }

    pub fn rect(&self) -> Rect {
        Rect::new(self.x, self.y, self.w, self.h)
    }
}

pub fn iou(a: &Rect, b: &Rect) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Indices of `scores` in descending order; equal scores keep input order.
fn rank_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Greedy matching within one frame and class.
///
/// Detections are visited by descending score; each takes the still-unmatched
/// ground truth with the highest IoU, provided that IoU is `>= iou_thr`
/// (ties go to the lower ground-truth index). Returns TP flags in input order.
pub fn match_rects(scores: &[f64], dets: &[Rect], gts: &[Rect], iou_thr: f64) -> Vec<bool> {
    assert_eq!(scores.len(), dets.len());
    let mut taken = vec![false; gts.len()];
    let mut tp = vec![false; dets.len()];
    for d in rank_by_score(scores) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let v = iou(&dets[d], gt);
            if v >= iou_thr && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            tp[d] = true;
        }
    }
    tp
}

pub fn match_detections(dets: &[Detection], gts: &[GroundTruthBox], iou_thr: f64) -> Vec<bool> {
    let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
    let rects: Vec<Rect> = dets.iter().map(Detection::rect).collect();
    let grects: Vec<Rect> = gts.iter().map(Rect::from).collect();
    match_rects(&scores, &rects, &grects, iou_thr)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ApInterpolation {
    /// Precision envelope sampled at recall 0.00, 0.01, ..., 1.00.
    #[default]
    Coco101,
    /// Exact area under the precision envelope.
    AllPoints,
}

/// AP from ranked TP flags. `None` when there is no ground truth.
pub fn ap_from_ranked(tp: &[bool], num_gt: usize, interp: ApInterpolation) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let mut recall = Vec::with_capacity(tp.len());
    let mut precision = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (k, &t) in tp.iter().enumerate() {
        hits += t as usize;
        recall.push(hits as f64 / num_gt as f64);
        precision.push(hits as f64 / (k + 1) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let ap = match interp {
        ApInterpolation::Coco101 => {
            let total: f64 = (0..=100)
                .map(|i| {
                    let r = i as f64 / 100.0;
                    let idx = recall.partition_point(|&rc| rc < r);
                    precision.get(idx).copied().unwrap_or(0.0)
                })
                .sum();
            total / 101.0
        }
        ApInterpolation::AllPoints => {
            let mut prev = 0.0;
            let mut area = 0.0;
            for (r, p) in recall.iter().zip(&precision) {
                area += (r - prev) * p;
                prev = *r;
            }
            area
        }
    };
    Some(ap)
}

fn group_by_frame<'a, T>(items: &'a [T], frame: impl Fn(&'a T) -> &'a str) -> HashMap<&'a str, Vec<usize>> {
    let mut m: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, it) in items.iter().enumerate() {
        m.entry(frame(it)).or_default().push(i);
    }
    m
}

/// TP flags for all detections of one class, matched frame by frame.
fn match_class(dets: &[Detection], gts: &[GroundTruthBox], iou_thr: f64) -> Vec<bool> {
    let gt_by_frame = group_by_frame(gts, |g| g.frame_id.as_str());
    let det_by_frame = group_by_frame(dets, |d| d.frame_id.as_str());
    let mut tp = vec![false; dets.len()];
    for (frame, idx) in det_by_frame {
        let frame_gts: Vec<GroundTruthBox> =
            gt_by_frame.get(frame).map(|g| g.iter().map(|&i| gts[i].clone()).collect()).unwrap_or_default();
        let frame_dets: Vec<Detection> = idx.iter().map(|&i| dets[i].clone()).collect();
        for (k, flag) in match_detections(&frame_dets, &frame_gts, iou_thr).into_iter().enumerate() {
            tp[idx[k]] = flag;
        }
    }
    tp
}

/// AP of a single class over any number of frames.
pub fn average_precision_with(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    iou_thr: f64,
    interp: ApInterpolation,
) -> Option<f64> {
    let tp = match_class(dets, gts, iou_thr);
    let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
    let ranked: Vec<bool> = rank_by_score(&scores).into_iter().map(|i| tp[i]).collect();
    ap_from_ranked(&ranked, gts.len(), interp)
}

pub fn average_precision(dets: &[Detection], gts: &[GroundTruthBox], iou_thr: f64) -> Option<f64> {
    average_precision_with(dets, gts, iou_thr, ApInterpolation::Coco101)
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub ap50: f64,
    pub ap5095: f64,
    pub num_gt: usize,
    pub num_det: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map50: Option<f64>,
    pub map5095: Option<f64>,
    pub per_class: BTreeMap<String, ClassReport>,
}

/// Scores every class that has at least one ground-truth box.
pub fn evaluate(dets: &[Detection], gts: &[GroundTruthBox]) -> EvalReport {
    evaluate_with(dets, gts, ApInterpolation::Coco101)
}

pub fn evaluate_with(dets: &[Detection], gts: &[GroundTruthBox], interp: ApInterpolation) -> EvalReport {
    let classes: Vec<String> = gts.iter().map(|g| g.class_name.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let thresholds = coco_thresholds();
    let reports: Vec<(String, ClassReport)> = classes
        .par_iter()
        .map(|class| {
            let cd: Vec<Detection> = dets.iter().filter(|d| &d.class_name == class).cloned().collect();
            let cg: Vec<GroundTruthBox> = gts.iter().filter(|g| &g.class_name == class).cloned().collect();
            let aps: Vec<f64> = thresholds
                .iter()
                .map(|&t| average_precision_with(&cd, &cg, t, interp).expect("class has ground truth"))
                .collect();
            let report = ClassReport {
                ap50: aps[0],
                ap5095: aps.iter().sum::<f64>() / aps.len() as f64,
                num_gt: cg.len(),
                num_det: cd.len(),
            };
            (class.clone(), report)
        })
        .collect();
    let mean = |f: fn(&ClassReport) -> f64| {
        (!reports.is_empty()).then(|| reports.iter().map(|(_, r)| f(r)).sum::<f64>() / reports.len() as f64)
    };
    EvalReport {
        map50: mean(|r| r.ap50),
        map5095: mean(|r| r.ap5095),
        per_class: reports.into_iter().collect(),
    }
}

pub fn map50(dets: &[Detection], gts: &[GroundTruthBox]) -> Option<f64> {
    evaluate(dets, gts).map50
}

pub fn map5095(dets: &[Detection], gts: &[GroundTruthBox]) -> Option<f64> {
    evaluate(dets, gts).map5095
}

/// Parses JSON-lines detections; scores must lie in `[0, 1]` and sizes be positive.
pub fn parse_detections(text: &str) -> Result<Vec<Detection>, EvalError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let d: Detection =
            serde_json::from_str(raw).map_err(|e| EvalError::Record { line, message: e.to_string() })?;
        if !(0.0..=1.0).contains(&d.score) {
            return Err(EvalError::Record { line, message: format!("score {} outside [0, 1]", d.score) });
        }
        if !(d.w > 0.0 && d.h > 0.0) {
            return Err(EvalError::Record { line, message: format!("box size must be positive, got {}x{}", d.w, d.h) });
        }
        out.push(d);
    }
    Ok(out)
}
