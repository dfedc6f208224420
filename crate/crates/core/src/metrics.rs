//! Benchmark scoring rules for grounding, area, affordance, trajectory and grasp
//! predictions.
//!
//! Every frame-indexed scorer applies the key-frame gate first: a prediction that
//! targets a frame without ground truth scores zero and is flagged
//! `frame_valid = false`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    box_iou, convex_iou, directed_mean_distance, discrete_frechet, point_in_polygon,
    resample_polyline, BBox, GeometryError, GraspRect, Point, Polygon,
};
use crate::grammar::{GroundedSpan, GroundingKind};

/// Both trajectories are resampled to this many points before the Fréchet distance.
pub const TRAJECTORY_RESAMPLE_POINTS: usize = 15;

/// Acc@0.5 threshold; the IoU must exceed it strictly.
pub const GROUNDING_IOU_THRESHOLD: f64 = 0.5;

pub const DEFAULT_TRAJECTORY_LAMBDA: f64 = 1.0;
pub const DEFAULT_GRASP_IOU_THRESHOLD: f64 = 0.25;
pub const DEFAULT_GRASP_ANGLE_THRESHOLD: f64 = PI / 6.0;

/// Tolerance on the rectangle invariant for predicted grasp corners.
pub const GRASP_RECT_TOLERANCE: f64 = 1e-3;

/// Worst-case change of a side length when both endpoints are snapped to the
/// 1/1000 grid: each endpoint moves at most `√2 · 0.0005`, and two sides are compared.
pub const GRID_SNAP_SLACK: f64 = 4.0 * std::f64::consts::SQRT_2 * 5e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("expected a <{expected}> span, found <{found}>")]
    KindMismatch {
        expected: GroundingKind,
        found: GroundingKind,
    },
    #[error("prediction does not name a frame")]
    MissingFrame,
    #[error("ground truth has no frames")]
    EmptyTruth,
    #[error("ground truth geometry does not match task <{0}>")]
    TruthMismatch(GroundingKind),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Ground-truth geometry attached to one frame.
#[derive(Debug, Clone, PartialEq)]
pub enum FrameGeometry {
    Box(BBox),
    Polygon(Polygon),
    Points(Vec<Point>),
    Polyline(Vec<Point>),
    Grasps(Vec<GraspRect>),
}

impl FrameGeometry {
    pub fn kind(&self) -> GroundingKind {
        match self {
            FrameGeometry::Box(_) => GroundingKind::Object,
            FrameGeometry::Polygon(_) => GroundingKind::Area,
            FrameGeometry::Points(_) => GroundingKind::Affordance,
            FrameGeometry::Polyline(_) => GroundingKind::Trajectory,
            FrameGeometry::Grasps(_) => GroundingKind::GraspPose,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameIndexedTruth {
    task: GroundingKind,
    frames: BTreeMap<u32, FrameGeometry>,
}

impl FrameIndexedTruth {
    pub fn new(
        task: GroundingKind,
        frames: BTreeMap<u32, FrameGeometry>,
    ) -> Result<Self, MetricError> {
        if frames.is_empty() {
            return Err(MetricError::EmptyTruth);
        }
        for geometry in frames.values() {
            let empty = match geometry {
                FrameGeometry::Points(p) | FrameGeometry::Polyline(p) => p.is_empty(),
                FrameGeometry::Grasps(g) => g.is_empty(),
                _ => false,
            };
            if geometry.kind() != task || empty {
                return Err(MetricError::TruthMismatch(task));
            }
        }
        Ok(Self { task, frames })
    }

    /// Single-frame truth, convenient for image tasks.
    pub fn single(frame: u32, geometry: FrameGeometry) -> Result<Self, MetricError> {
        Self::new(geometry.kind(), BTreeMap::from([(frame, geometry)]))
    }

    pub fn task(&self) -> GroundingKind {
        self.task
    }

    pub fn frames(&self) -> &BTreeMap<u32, FrameGeometry> {
        &self.frames
    }

    pub fn get(&self, frame: u32) -> Option<&FrameGeometry> {
        self.frames.get(&frame)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub value: f64,
    pub frame_valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl MetricScore {
    pub fn valid(value: f64) -> Self {
        Self {
            value,
            frame_valid: true,
            detail: None,
        }
    }

    fn frame_miss(frame: u32, value: f64) -> Self {
        Self {
            value,
            frame_valid: false,
            detail: Some(format!("frame {frame} has no ground truth")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryMode {
    /// `exp(-λ·D)`, higher is better.
    #[default]
    Score,
    /// Raw Fréchet distance, lower is better.
    Distance,
}

fn check_kind(span: &GroundedSpan, expected: GroundingKind) -> Result<u32, MetricError> {
    if span.kind != expected {
        return Err(MetricError::KindMismatch {
            expected,
            found: span.kind,
        });
    }
    span.frame.ok_or(MetricError::MissingFrame)
}

fn lookup(
    truth: &FrameIndexedTruth,
    task: GroundingKind,
    frame: u32,
) -> Result<Option<&FrameGeometry>, MetricError> {
    if truth.task != task {
        return Err(MetricError::TruthMismatch(task));
    }
    Ok(truth.get(frame))
}

/// Acc@0.5: 1 when the predicted frame has a truth box and IoU is strictly above 0.5.
pub fn score_grounding(
    pred: &GroundedSpan,
    truth: &FrameIndexedTruth,
) -> Result<MetricScore, MetricError> {
    let frame = check_kind(pred, GroundingKind::Object)?;
    let Some(geometry) = lookup(truth, GroundingKind::Object, frame)? else {
        return Ok(MetricScore::frame_miss(frame, 0.0));
    };
    let FrameGeometry::Box(truth_box) = geometry else {
        return Err(MetricError::TruthMismatch(GroundingKind::Object));
    };
    let points = pred.points();
    let pred_box = BBox::from_corners(points[0], points[1]);
    let iou = box_iou(&pred_box, truth_box);
    let mut score = MetricScore::valid(if iou > GROUNDING_IOU_THRESHOLD {
        1.0
    } else {
        0.0
    });
    score.detail = Some(format!("iou {iou:.4}"));
    Ok(score)
}

/// Fraction of predicted points inside the truth polygon.
pub fn score_area(
    pred: &GroundedSpan,
    truth: &FrameIndexedTruth,
) -> Result<MetricScore, MetricError> {
    let frame = check_kind(pred, GroundingKind::Area)?;
    let Some(geometry) = lookup(truth, GroundingKind::Area, frame)? else {
        return Ok(MetricScore::frame_miss(frame, 0.0));
    };
    let FrameGeometry::Polygon(polygon) = geometry else {
        return Err(MetricError::TruthMismatch(GroundingKind::Area));
    };
    Ok(MetricScore::valid(inside_fraction(
        &pred.points(),
        polygon,
    )?))
}

pub(crate) fn inside_fraction(points: &[Point], polygon: &Polygon) -> Result<f64, GeometryError> {
    if points.is_empty() {
        return Err(GeometryError::EmptyPointSet);
    }
    let inside = points
        .iter()
        .filter(|&&p| point_in_polygon(p, polygon))
        .count();
    Ok(inside as f64 / points.len() as f64)
}

/// `exp(-mean nearest-neighbour distance)` from predicted to truth points.
pub fn score_affordance(
    pred: &GroundedSpan,
    truth: &FrameIndexedTruth,
) -> Result<MetricScore, MetricError> {
    let frame = check_kind(pred, GroundingKind::Affordance)?;
    let Some(geometry) = lookup(truth, GroundingKind::Affordance, frame)? else {
        return Ok(MetricScore::frame_miss(frame, 0.0));
    };
    let FrameGeometry::Points(points) = geometry else {
        return Err(MetricError::TruthMismatch(GroundingKind::Affordance));
    };
    let d = directed_mean_distance(&pred.points(), points)?;
    Ok(MetricScore::valid((-d).exp()))
}

/// Fréchet distance after resampling both paths to 15 points, reported raw or
/// as `exp(-λ·D)`. A frame miss yields 0 in score mode and `+∞` in distance mode.
pub fn score_trajectory(
    pred: &GroundedSpan,
    truth: &FrameIndexedTruth,
    mode: TrajectoryMode,
    lambda: f64,
) -> Result<MetricScore, MetricError> {
    let frame = check_kind(pred, GroundingKind::Trajectory)?;
    let Some(geometry) = lookup(truth, GroundingKind::Trajectory, frame)? else {
        let sentinel = match mode {
            TrajectoryMode::Score => 0.0,
            TrajectoryMode::Distance => f64::INFINITY,
        };
        return Ok(MetricScore::frame_miss(frame, sentinel));
    };
    let FrameGeometry::Polyline(path) = geometry else {
        return Err(MetricError::TruthMismatch(GroundingKind::Trajectory));
    };
    let d = resampled_frechet(&pred.points(), path)?;
    Ok(MetricScore::valid(match mode {
        TrajectoryMode::Score => (-lambda * d).exp(),
        TrajectoryMode::Distance => d,
    }))
}

pub(crate) fn resampled_frechet(pred: &[Point], truth: &[Point]) -> Result<f64, GeometryError> {
    let p = resample_polyline(pred, TRAJECTORY_RESAMPLE_POINTS)?;
    let g = resample_polyline(truth, TRAJECTORY_RESAMPLE_POINTS)?;
    discrete_frechet(&p, &g)
}

/// Rectangle metric: 1 when some truth rectangle is within `angle_threshold`
/// (modulo π) and overlaps with rotated IoU at least `iou_threshold`.
pub fn score_grasp(
    pred: &GroundedSpan,
    truth: &[GraspRect],
    iou_threshold: f64,
    angle_threshold: f64,
) -> Result<MetricScore, MetricError> {
    if pred.kind != GroundingKind::GraspPose {
        return Err(MetricError::KindMismatch {
            expected: GroundingKind::GraspPose,
            found: pred.kind,
        });
    }
    let points = pred.points();
    let corners: [Point; 4] = points
        .try_into()
        .map_err(|p: Vec<Point>| GeometryError::NotARectangle(format!("{} corners", p.len())))?;
    let rect = GraspRect::from_corners(corners, GRASP_RECT_TOLERANCE + GRID_SNAP_SLACK)?;
    let hit = truth.iter().any(|t| {
        angle_gap(rect.angle(), t.angle()) <= angle_threshold
            && convex_iou(&rect.corners, &t.corners) >= iou_threshold
    });
    Ok(MetricScore::valid(if hit { 1.0 } else { 0.0 }))
}

/// Smallest difference between two orientations modulo π.
fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

/// Keeps samples whose score×100 falls in `[low, high]`, plus every sample that
/// missed its key frame.
pub fn filter_by_difficulty<I: Clone>(scores: &[(I, MetricScore)], low: f64, high: f64) -> Vec<I> {
    scores
        .iter()
        .filter(|(_, s)| {
            let pct = s.value * 100.0;
            !s.frame_valid || (low..=high).contains(&pct)
        })
        .map(|(id, _)| id.clone())
        .collect()
}
