//! Corpus scoring: JSONL ingestion, per-record scoring and per-task reports.
//!
//! Truth lines look like
//!
//! ```json
//! {"id": "q1", "task": "area", "frames": {"3": [[100, 100], [400, 100], [250, 300]]}}
//! ```
//!
//! with payloads `[x1, y1, x2, y2]` for `object`, a pair list for `area`
//! (≥3), `affordance` (≥1) and `trajectory` (2–10), and a list of four-corner
//! pair lists for `grasp pose`. Prediction lines carry either the raw model
//! output or an already-parsed frame and coordinate list:
//!
//! ```json
//! {"id": "q1", "raw": "<area> <frame 3>: (200, 150) </area>"}
//! {"id": "q2", "parsed": {"frame": 3, "coords": [[200, 150]]}}
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geometry::{BBox, GraspRect, Point, Polygon};
use crate::grammar::{parse_spans, CoordPair, GroundedSpan, GroundingKind, GRID_MAX};
use crate::metrics::{
    score_affordance, score_area, score_grasp, score_grounding, score_trajectory, FrameGeometry,
    FrameIndexedTruth, MetricError, MetricScore, TrajectoryMode, DEFAULT_GRASP_ANGLE_THRESHOLD,
    DEFAULT_GRASP_IOU_THRESHOLD, DEFAULT_TRAJECTORY_LAMBDA, GRASP_RECT_TOLERANCE, GRID_SNAP_SLACK,
};
use crate::rewards::DEFAULT_LAMBDA_AFF;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("prediction `{0}` has no ground-truth record")]
    UnmatchedId(String),
    #[error("{failures} of {total} predictions failed to parse (allowed fraction {limit})")]
    ParseFailureThresholdExceeded {
        failures: usize,
        total: usize,
        limit: f64,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthRecord {
    pub id: String,
    pub task: GroundingKind,
    pub frames: FrameIndexedTruth,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Prediction {
    Raw(String),
    Parsed {
        frame: Option<u32>,
        coords: Vec<CoordPair>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredRecord {
    pub id: String,
    pub prediction: Prediction,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthLine {
    id: String,
    task: GroundingKind,
    frames: BTreeMap<String, Value>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredLine {
    id: String,
    #[serde(default)]
    raw: Option<String>,
    #[serde(default)]
    parsed: Option<ParsedLine>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ParsedLine {
    #[serde(default)]
    frame: Option<u32>,
    coords: Vec<Value>,
}

#[derive(Deserialize)]
struct ScoreLine {
    id: String,
    score: f64,
    #[serde(default = "default_true")]
    frame_valid: bool,
}

fn default_true() -> bool {
    true
}

fn open(path: &Path) -> Result<BufReader<File>, HarnessError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Yields `(line_number, line)` for every non-blank line.
fn json_lines<'a, R: BufRead + 'a>(
    reader: R,
    path: &'a Path,
) -> impl Iterator<Item = Result<(usize, String), HarnessError>> + 'a {
    reader
        .lines()
        .enumerate()
        .filter_map(move |(i, line)| match line {
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(Ok((i + 1, l))),
            Err(source) => Some(Err(HarnessError::Io {
                path: path.to_path_buf(),
                source,
            })),
        })
}

fn schema(line: usize, message: impl Into<String>) -> HarnessError {
    HarnessError::Schema {
        line,
        message: message.into(),
    }
}

pub fn load_truth(path: &Path) -> Result<Vec<TruthRecord>, HarnessError> {
    read_truth(open(path)?, path)
}

pub fn read_truth<R: BufRead>(reader: R, path: &Path) -> Result<Vec<TruthRecord>, HarnessError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for item in json_lines(reader, path) {
        let (line, text) = item?;
        let raw: TruthLine =
            serde_json::from_str(&text).map_err(|e| schema(line, e.to_string()))?;
        if !seen.insert(raw.id.clone()) {
            return Err(HarnessError::DuplicateId { line, id: raw.id });
        }
        let mut frames = BTreeMap::new();
        for (key, payload) in &raw.frames {
            let frame: u32 = key
                .parse()
                .map_err(|_| schema(line, format!("frame key `{key}` is not a frame index")))?;
            let geometry = truth_geometry(raw.task, payload)
                .map_err(|m| schema(line, format!("frame {frame}: {m}")))?;
            frames.insert(frame, geometry);
        }
        let frames =
            FrameIndexedTruth::new(raw.task, frames).map_err(|e| schema(line, e.to_string()))?;
        out.push(TruthRecord {
            id: raw.id,
            task: raw.task,
            frames,
        });
    }
    Ok(out)
}

fn grid_int(v: &Value) -> Result<u16, String> {
    match v.as_u64() {
        Some(n) if n <= u64::from(GRID_MAX) => Ok(n as u16),
        _ => Err(format!("`{v}` is not an integer in [0, 1000]")),
    }
}

fn grid_pair(v: &Value) -> Result<CoordPair, String> {
    match v.as_array().map(Vec::as_slice) {
        Some([x, y]) => Ok(CoordPair {
            x: grid_int(x)?,
            y: grid_int(y)?,
        }),
        _ => Err(format!("`{v}` is not an [x, y] pair")),
    }
}

fn grid_points(v: &Value, min: usize, max: usize) -> Result<Vec<Point>, String> {
    let items = v.as_array().ok_or("expected a list of [x, y] pairs")?;
    if items.len() < min || items.len() > max {
        return Err(format!(
            "expected between {min} and {max} pairs, found {}",
            items.len()
        ));
    }
    items
        .iter()
        .map(|p| grid_pair(p).map(CoordPair::to_point))
        .collect()
}

fn truth_geometry(task: GroundingKind, payload: &Value) -> Result<FrameGeometry, String> {
    Ok(match task {
        GroundingKind::Object => {
            let values = payload.as_array().ok_or("box must be [x1, y1, x2, y2]")?;
            if values.len() != 4 {
                return Err(format!("box needs 4 integers, found {}", values.len()));
            }
            let v: Vec<u16> = values.iter().map(grid_int).collect::<Result<_, _>>()?;
            let a = CoordPair { x: v[0], y: v[1] }.to_point();
            let b = CoordPair { x: v[2], y: v[3] }.to_point();
            FrameGeometry::Box(BBox::from_corners(a, b))
        }
        GroundingKind::Area => {
            let vertices = grid_points(payload, 3, usize::MAX)?;
            FrameGeometry::Polygon(Polygon::new(vertices).map_err(|e| e.to_string())?)
        }
        GroundingKind::Affordance => FrameGeometry::Points(grid_points(payload, 1, usize::MAX)?),
        GroundingKind::Trajectory => FrameGeometry::Polyline(grid_points(payload, 2, 10)?),
        GroundingKind::GraspPose => {
            let rects = payload
                .as_array()
                .ok_or("expected a list of 4-corner lists")?;
            if rects.is_empty() {
                return Err("no grasp rectangles".into());
            }
            let rects = rects
                .iter()
                .map(|r| {
                    let corners: [Point; 4] = grid_points(r, 4, 4)?
                        .try_into()
                        .expect("exactly four corners");
                    GraspRect::from_corners(corners, GRASP_RECT_TOLERANCE + GRID_SNAP_SLACK)
                        .map_err(|e| e.to_string())
                })
                .collect::<Result<_, _>>()?;
            FrameGeometry::Grasps(rects)
        }
    })
}

pub fn load_pred(path: &Path) -> Result<Vec<PredRecord>, HarnessError> {
    read_pred(open(path)?, path)
}

pub fn read_pred<R: BufRead>(reader: R, path: &Path) -> Result<Vec<PredRecord>, HarnessError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for item in json_lines(reader, path) {
        let (line, text) = item?;
        let raw: PredLine = serde_json::from_str(&text).map_err(|e| schema(line, e.to_string()))?;
        if !seen.insert(raw.id.clone()) {
            return Err(HarnessError::DuplicateId { line, id: raw.id });
        }
        let prediction = match (raw.raw, raw.parsed) {
            (Some(text), None) => Prediction::Raw(text),
            (None, Some(p)) => Prediction::Parsed {
                frame: p.frame,
                coords: p
                    .coords
                    .iter()
                    .map(grid_pair)
                    .collect::<Result<_, _>>()
                    .map_err(|m| schema(line, m))?,
            },
            _ => {
                return Err(schema(
                    line,
                    "exactly one of `raw` and `parsed` is required",
                ))
            }
        };
        out.push(PredRecord {
            id: raw.id,
            prediction,
        });
    }
    Ok(out)
}

/// Reads `{"id", "score", "frame_valid"}` lines with scores on the 0–100 scale.
pub fn load_scores(path: &Path) -> Result<Vec<(String, MetricScore)>, HarnessError> {
    let mut out = Vec::new();
    for item in json_lines(open(path)?, path) {
        let (line, text) = item?;
        let s: ScoreLine = serde_json::from_str(&text).map_err(|e| schema(line, e.to_string()))?;
        out.push((
            s.id,
            MetricScore {
                value: s.score / 100.0,
                frame_valid: s.frame_valid,
                detail: None,
            },
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalConfig {
    /// `None` scores every task.
    pub task: Option<GroundingKind>,
    pub lambda_traj: f64,
    pub lambda_aff: f64,
    pub traj_mode: TrajectoryMode,
    pub grasp_iou_threshold: f64,
    pub grasp_angle_threshold: f64,
    pub strict_parse: bool,
    pub workers: usize,
    /// Ignore predictions whose id has no truth record instead of failing.
    pub skip_unmatched: bool,
    /// Largest tolerated fraction of unparseable predictions.
    pub max_parse_failure_rate: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            task: None,
            lambda_traj: DEFAULT_TRAJECTORY_LAMBDA,
            lambda_aff: DEFAULT_LAMBDA_AFF,
            traj_mode: TrajectoryMode::Score,
            grasp_iou_threshold: DEFAULT_GRASP_IOU_THRESHOLD,
            grasp_angle_threshold: DEFAULT_GRASP_ANGLE_THRESHOLD,
            strict_parse: false,
            workers: 1,
            skip_unmatched: false,
            max_parse_failure_rate: 1.0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.lambda_traj.is_nan()
            || self.lambda_traj <= 0.0
            || self.lambda_aff.is_nan()
            || self.lambda_aff <= 0.0
        {
            return bad("lambda values must be positive");
        }
        if !(0.0..=1.0).contains(&self.grasp_iou_threshold) {
            return bad("iou threshold must lie in [0, 1]");
        }
        if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&self.grasp_angle_threshold) {
            return bad("angle threshold must lie in [0, π/2]");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.max_parse_failure_rate) {
            return bad("parse failure fraction must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Scored,
    FrameMiss,
    ParseFailure,
    /// Parsed but unscoreable, e.g. grasp corners that are not a rectangle.
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub id: String,
    pub task: GroundingKind,
    pub status: RowStatus,
    /// Score in `[0, 1]`, or the raw distance for distance-mode trajectories
    /// (`null` when the prediction cannot be scored).
    pub value: f64,
    pub frame_valid: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreUnit {
    /// Mean score ×100, one decimal.
    Percent,
    /// Mean raw distance over frame-valid rows, four decimals.
    Distance,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskSummary {
    pub unit: ScoreUnit,
    pub mean: Option<f64>,
    /// Unrounded mean of the row values.
    pub mean_raw: Option<f64>,
    pub count: usize,
    pub scored: usize,
    pub frame_misses: usize,
    pub parse_failures: usize,
    pub invalid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub config: EvalConfig,
    pub tasks: BTreeMap<GroundingKind, TaskSummary>,
    pub rows: Vec<Row>,
}

impl Report {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn round_to(x: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    (x * scale).round() / scale
}

/// Scores every in-scope truth record against its prediction.
///
/// Missing or unparseable predictions score zero and are counted as parse
/// failures. Rows are sorted by id so the report does not depend on `workers`.
pub fn run_eval(
    truth: &[TruthRecord],
    preds: &[PredRecord],
    config: &EvalConfig,
) -> Result<Report, HarnessError> {
    config.validate()?;
    let truth_ids: HashSet<&str> = truth.iter().map(|t| t.id.as_str()).collect();
    let mut by_id: HashMap<&str, &PredRecord> = HashMap::with_capacity(preds.len());
    for p in preds {
        if !truth_ids.contains(p.id.as_str()) {
            if config.skip_unmatched {
                continue;
            }
            return Err(HarnessError::UnmatchedId(p.id.clone()));
        }
        if by_id.insert(p.id.as_str(), p).is_some() {
            return Err(HarnessError::DuplicateId {
                line: 0,
                id: p.id.clone(),
            });
        }
    }

    let in_scope: Vec<&TruthRecord> = truth
        .iter()
        .filter(|t| config.task.is_none_or(|k| k == t.task))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut rows: Vec<Row> = pool.install(|| {
        in_scope
            .par_iter()
            .map(|t| score_record(t, by_id.get(t.id.as_str()).copied(), config))
            .collect()
    });
    rows.sort_by(|a, b| a.id.cmp(&b.id));

    let failures = rows
        .iter()
        .filter(|r| r.status == RowStatus::ParseFailure)
        .count();
    if !rows.is_empty() && failures as f64 / rows.len() as f64 > config.max_parse_failure_rate {
        return Err(HarnessError::ParseFailureThresholdExceeded {
            failures,
            total: rows.len(),
            limit: config.max_parse_failure_rate,
        });
    }

    let mut tasks = BTreeMap::new();
    for kind in GroundingKind::ALL {
        let task_rows: Vec<&Row> = rows.iter().filter(|r| r.task == kind).collect();
        if task_rows.is_empty() {
            continue;
        }
        tasks.insert(kind, summarize(kind, &task_rows, config.traj_mode));
    }
    Ok(Report {
        config: config.clone(),
        tasks,
        rows,
    })
}

fn summarize(kind: GroundingKind, rows: &[&Row], mode: TrajectoryMode) -> TaskSummary {
    let count_of = |s: RowStatus| rows.iter().filter(|r| r.status == s).count();
    let distance = kind == GroundingKind::Trajectory && mode == TrajectoryMode::Distance;
    let (unit, mean_raw) = if distance {
        let finite: Vec<f64> = rows
            .iter()
            .map(|r| r.value)
            .filter(|v| v.is_finite())
            .collect();
        let mean = (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64);
        (ScoreUnit::Distance, mean)
    } else {
        let sum: f64 = rows.iter().map(|r| r.value).sum();
        (ScoreUnit::Percent, Some(sum / rows.len() as f64))
    };
    let mean = mean_raw.map(|m| match unit {
        ScoreUnit::Percent => round_to(100.0 * m, 1),
        ScoreUnit::Distance => round_to(m, 4),
    });
    TaskSummary {
        unit,
        mean,
        mean_raw,
        count: rows.len(),
        scored: count_of(RowStatus::Scored),
        frame_misses: count_of(RowStatus::FrameMiss),
        parse_failures: count_of(RowStatus::ParseFailure),
        invalid: count_of(RowStatus::Invalid),
    }
}

fn score_record(truth: &TruthRecord, pred: Option<&PredRecord>, config: &EvalConfig) -> Row {
    let failed_value = match (truth.task, config.traj_mode) {
        (GroundingKind::Trajectory, TrajectoryMode::Distance) => f64::INFINITY,
        _ => 0.0,
    };
    let row = |status, value, frame_valid, detail| Row {
        id: truth.id.clone(),
        task: truth.task,
        status,
        value,
        frame_valid,
        detail,
    };
    let Some(pred) = pred else {
        return row(
            RowStatus::ParseFailure,
            failed_value,
            false,
            Some("no prediction".into()),
        );
    };
    let (span, note) = match select_span(truth.task, &pred.prediction, config.strict_parse) {
        Ok(found) => found,
        Err(message) => return row(RowStatus::ParseFailure, failed_value, false, Some(message)),
    };

    let result = match truth.task {
        GroundingKind::Object => score_grounding(&span, &truth.frames),
        GroundingKind::Area => score_area(&span, &truth.frames),
        GroundingKind::Affordance => score_affordance(&span, &truth.frames),
        GroundingKind::Trajectory => {
            score_trajectory(&span, &truth.frames, config.traj_mode, config.lambda_traj)
        }
        GroundingKind::GraspPose => {
            // image task: unframed predictions refer to frame 0
            let frame = span.frame.unwrap_or(0);
            match truth.frames.get(frame) {
                Some(FrameGeometry::Grasps(rects)) => score_grasp(
                    &span,
                    rects,
                    config.grasp_iou_threshold,
                    config.grasp_angle_threshold,
                ),
                _ => Ok(MetricScore {
                    value: 0.0,
                    frame_valid: false,
                    detail: Some(format!("frame {frame} has no ground truth")),
                }),
            }
        }
    };
    match result {
        Ok(score) => {
            let status = if score.frame_valid {
                RowStatus::Scored
            } else {
                RowStatus::FrameMiss
            };
            let detail = match (note, score.detail) {
                (Some(n), Some(d)) => Some(format!("{n}; {d}")),
                (n, d) => n.or(d),
            };
            row(status, score.value, score.frame_valid, detail)
        }
        Err(MetricError::MissingFrame) => row(
            RowStatus::FrameMiss,
            failed_value,
            false,
            Some("prediction names no frame".into()),
        ),
        Err(e) => row(RowStatus::Invalid, failed_value, true, Some(e.to_string())),
    }
}

/// Picks the first span of the queried kind; extra spans are noted.
fn select_span(
    kind: GroundingKind,
    prediction: &Prediction,
    strict: bool,
) -> Result<(GroundedSpan, Option<String>), String> {
    match prediction {
        Prediction::Parsed { frame, coords } => {
            GroundedSpan::new(kind, *frame, None, coords.clone())
                .map(|s| (s, None))
                .map_err(|e| e.to_string())
        }
        Prediction::Raw(text) => {
            let report = parse_spans(text, strict).map_err(|e| e.to_string())?;
            let mut spans = report.spans_of(kind);
            let first = spans
                .next()
                .cloned()
                .ok_or_else(|| format!("no <{kind}> span in output"))?;
            let extra = spans.count();
            let note = (extra > 0)
                .then(|| format!("{} <{kind}> spans emitted, scored the first", extra + 1));
            Ok((first, note))
        }
    }
}
