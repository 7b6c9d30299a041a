//! Spatio-temporal control metrics over ground-truth trajectories and
//! externally produced detections.
//!
//! Only frames where the ground truth has a box are evaluated. Per video:
//!
//! * detected fraction: evaluated frames with a detection;
//! * mean IoU: per-frame IoU with missing detections counted as 0, reported
//!   only when more than half the evaluated frames were detected;
//! * AP50: fraction of evaluated frames with IoU >= 0.5;
//! * centroid distance: center offset over the canvas diagonal (or longer
//!   side), averaged over detected frames.
//!
//! Suite level: Coverage is the share of videos passing the detection
//! filter, mIoU averages passing videos, AP50 averages all videos and CD
//! averages videos with at least one detection.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{BBox, BBoxTrajectory, Canvas};

/// Detection filter: a video passes with strictly more than this share of
/// frames detected.
pub const COVERAGE_THRESHOLD: f64 = 0.5;
pub const AP_IOU_THRESHOLD: f64 = 0.5;

/// Intersection over union in exact integer arithmetic.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b).map_or(0, |i| i.area());
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CdNorm {
    #[default]
    Diagonal,
    /// Longer canvas side.
    Side,
}

impl CdNorm {
    pub fn length(self, canvas: &Canvas) -> f64 {
        match self {
            CdNorm::Diagonal => canvas.diagonal(),
            CdNorm::Side => canvas.width.max(canvas.height) as f64,
        }
    }
}

/// Distance between two points divided by the normalization length.
pub fn normalized_distance(p: (f64, f64), q: (f64, f64), canvas: &Canvas, norm: CdNorm) -> f64 {
    (p.0 - q.0).hypot(p.1 - q.1) / norm.length(canvas)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub score: Option<f64>,
}

/// One optional detection per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionTrack(pub Vec<Option<Detection>>);

impl DetectionTrack {
    pub fn empty(frames: usize) -> Self {
        DetectionTrack(vec![None; frames])
    }

    pub fn from_boxes(boxes: &[Option<BBox>]) -> Self {
        DetectionTrack(boxes.iter().map(|b| b.map(|bbox| Detection { bbox, score: None })).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VideoMetrics {
    pub eval_frames: usize,
    pub detected_frames: usize,
    pub detected_frame_fraction: f64,
    pub mean_iou: Option<f64>,
    pub ap50: f64,
    pub centroid_distance: Option<f64>,
}

impl VideoMetrics {
    pub fn passes_filter(&self) -> bool {
        self.detected_frame_fraction > COVERAGE_THRESHOLD
    }
}

pub fn evaluate_video(gt: &BBoxTrajectory, det: &DetectionTrack, norm: CdNorm) -> Result<VideoMetrics> {
    if det.len() != gt.num_frames() {
        return Err(invalid(format!("{} detection frames for {} ground-truth frames", det.len(), gt.num_frames())));
    }
    let canvas = gt.canvas();
    let (mut eval_frames, mut detected, mut hits) = (0usize, 0usize, 0usize);
    let (mut iou_sum, mut cd_sum) = (0.0, 0.0);
    for (g, d) in gt.boxes().iter().zip(&det.0) {
        let Some(g) = g else { continue };
        eval_frames += 1;
        if let Some(d) = d {
            detected += 1;
            let v = iou(g, &d.bbox);
            iou_sum += v;
            if v >= AP_IOU_THRESHOLD {
                hits += 1;
            }
            cd_sum += normalized_distance(g.center(), d.bbox.center(), &canvas, norm);
        }
    }
    if eval_frames == 0 {
        return Err(invalid("ground truth has no boxes to evaluate against"));
    }
    let detected_frame_fraction = detected as f64 / eval_frames as f64;
    let mean_iou = (detected_frame_fraction > COVERAGE_THRESHOLD).then(|| iou_sum / eval_frames as f64);
    Ok(VideoMetrics {
        eval_frames,
        detected_frames: detected,
        detected_frame_fraction,
        mean_iou,
        ap50: hits as f64 / eval_frames as f64,
        centroid_distance: (detected > 0).then(|| cd_sum / detected as f64),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub video_id: String,
    pub gt: BBoxTrajectory,
    pub det: DetectionTrack,
    pub metrics: VideoMetrics,
}

impl EvalRecord {
    pub fn new(video_id: impl Into<String>, gt: BBoxTrajectory, det: DetectionTrack, norm: CdNorm) -> Result<Self> {
        let metrics = evaluate_video(&gt, &det, norm)?;
        Ok(EvalRecord { video_id: video_id.into(), gt, det, metrics })
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn coverage(records: &[EvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(invalid("coverage of an empty record set"));
    }
    Ok(records.iter().filter(|r| r.metrics.passes_filter()).count() as f64 / records.len() as f64)
}

/// Mean over filter-passing videos; `None` when no video passes.
pub fn video_miou(records: &[EvalRecord]) -> Option<f64> {
    mean(records.iter().filter_map(|r| r.metrics.mean_iou))
}

pub fn ap50(records: &[EvalRecord]) -> Result<f64> {
    mean(records.iter().map(|r| r.metrics.ap50)).ok_or_else(|| invalid("AP50 of an empty record set"))
}

/// Mean over videos with at least one detection; `None` when there are none.
pub fn centroid_distance(records: &[EvalRecord]) -> Option<f64> {
    mean(records.iter().filter_map(|r| r.metrics.centroid_distance))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub videos: usize,
    pub filtered_in: usize,
    pub filtered_out: usize,
    pub miou: Option<f64>,
    pub ap50: f64,
    pub coverage: f64,
    pub cd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub methods: Vec<MethodSummary>,
}

pub fn summarize(method: &str, records: &[EvalRecord]) -> Result<MethodSummary> {
    let coverage = coverage(records)?;
    let filtered_in = records.iter().filter(|r| r.metrics.passes_filter()).count();
    Ok(MethodSummary {
        method: method.to_owned(),
        videos: records.len(),
        filtered_in,
        filtered_out: records.len() - filtered_in,
        miou: video_miou(records),
        ap50: ap50(records)?,
        coverage,
        cd: centroid_distance(records),
    })
}

pub fn build_suite_report(groups: &[(String, Vec<EvalRecord>)]) -> Result<SuiteReport> {
    if groups.is_empty() {
        return Err(invalid("no methods to report"));
    }
    let methods = groups.iter().map(|(m, r)| summarize(m, r)).collect::<Result<_>>()?;
    Ok(SuiteReport { methods })
}

impl SuiteReport {
    /// Aligned text table: method, mIoU, AP50, Cov, CD, filter counts.
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "undef".to_owned(), |v| format!("{v:.4}"));
        let width = self.methods.iter().map(|m| m.method.len()).max().unwrap_or(0).max(6);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>8}  {:>8}  {:>8}  {:>6}  {:>6}",
            "method", "mIoU", "AP50", "Cov", "CD", "kept", "total"
        );
        for m in &self.methods {
            let _ = writeln!(
                out,
                "{:<width$}  {:>8}  {:>8}  {:>8}  {:>8}  {:>6}  {:>6}",
                m.method,
                fmt(m.miou),
                fmt(Some(m.ap50)),
                fmt(Some(m.coverage)),
                fmt(m.cd),
                m.filtered_in,
                m.videos
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// One line of a detections file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionLine {
    pub video_id: String,
    pub frame: usize,
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    #[serde(default)]
    pub score: Option<f64>,
}

/// Parse line-delimited JSON detections. Blank lines are skipped.
pub fn parse_detections(text: &str) -> Result<Vec<DetectionLine>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::Validation(format!("detections line {}: {e}", n + 1)))
        })
        .collect()
}

/// Snap a real-valued box to the pixel grid and into the canvas.
fn snap(line: &DetectionLine, canvas: &Canvas) -> Result<BBox> {
    let coords = [line.x0, line.y0, line.x1, line.y1];
    if !coords.iter().all(|v| v.is_finite()) {
        return Err(Error::Validation(format!("non-finite box in {}:{}", line.video_id, line.frame)));
    }
    let clamp = |v: f64, hi: u32| v.round().clamp(0.0, hi as f64) as u32;
    let b = BBox {
        x0: clamp(line.x0, canvas.width),
        y0: clamp(line.y0, canvas.height),
        x1: clamp(line.x1, canvas.width),
        y1: clamp(line.y1, canvas.height),
    };
    if b.x0 >= b.x1 || b.y0 >= b.y1 {
        return Err(Error::Validation(format!(
            "degenerate box {coords:?} in {}:{}",
            line.video_id, line.frame
        )));
    }
    Ok(b)
}

/// Group detections by video and keep the highest-scoring one per frame.
/// Every line must refer to a known video and an in-range frame.
pub fn assemble_tracks(
    lines: &[DetectionLine],
    gts: &BTreeMap<String, BBoxTrajectory>,
) -> Result<BTreeMap<String, DetectionTrack>> {
    let mut tracks: BTreeMap<String, DetectionTrack> =
        gts.iter().map(|(id, g)| (id.clone(), DetectionTrack::empty(g.num_frames()))).collect();
    for line in lines {
        let gt = gts
            .get(&line.video_id)
            .ok_or_else(|| Error::Validation(format!("detection for unknown video {:?}", line.video_id)))?;
        if line.frame >= gt.num_frames() {
            return Err(Error::Validation(format!(
                "detection frame {} outside {} frames of {:?}",
                line.frame,
                gt.num_frames(),
                line.video_id
            )));
        }
        let det = Detection { bbox: snap(line, &gt.canvas())?, score: line.score };
        let slot = &mut tracks.get_mut(&line.video_id).expect("seeded from gts").0[line.frame];
        let better = match slot {
            None => true,
            Some(cur) => det.score.unwrap_or(f64::NEG_INFINITY) > cur.score.unwrap_or(f64::NEG_INFINITY),
        };
        if better {
            *slot = Some(det);
        }
    }
    Ok(tracks)
}
