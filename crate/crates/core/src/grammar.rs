//! Tagged coordinate grammar.
//!
//! Model outputs embed geometry as
//!
//! ```text
//! <tag> [<frame n>:] [label;] (x, y)[, (x, y)]* </tag>
//! ```
//!
//! where `tag` is one of `object`, `area`, `affordance`, `trajectory` or
//! `grasp pose`, and every coordinate is an integer on the `[0, 1000]` grid.
//! [`parse_spans`] turns free text into typed [`GroundedSpan`]s and
//! [`emit_span`] produces the canonical serialization of one span.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point;

/// Largest value on the coordinate grid.
pub const GRID_MAX: u16 = 1000;

/// Maximum number of key points a trajectory span may carry.
pub const MAX_TRAJECTORY_POINTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrammarError {
    #[error("unclosed <{tag}> tag at offset {offset}")]
    UnclosedTag { tag: &'static str, offset: usize },
    #[error("coordinate {value} at offset {offset} is outside [0, 1000]")]
    CoordinateOutOfRange { offset: usize, value: i64 },
    #[error("<{}> span at offset {offset} carries {count} coordinate pairs", kind.tag_name())]
    CardinalityViolation {
        kind: GroundingKind,
        count: usize,
        offset: usize,
    },
    #[error("malformed frame marker at offset {offset}: {detail}")]
    MalformedFrame { offset: usize, detail: String },
    #[error("malformed coordinates at offset {offset}: {detail}")]
    MalformedCoordinates { offset: usize, detail: String },
    #[error("span violates its invariants: {0}")]
    InvariantViolation(String),
    #[error("value {0} is outside the quantization domain")]
    OutOfRange(f64),
}

/// The five geometry-carrying tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundingKind {
    Object,
    Area,
    Affordance,
    Trajectory,
    #[serde(rename = "grasp pose")]
    GraspPose,
}

impl GroundingKind {
    pub const ALL: [GroundingKind; 5] = [
        GroundingKind::Object,
        GroundingKind::Area,
        GroundingKind::Affordance,
        GroundingKind::Trajectory,
        GroundingKind::GraspPose,
    ];

    pub fn tag_name(self) -> &'static str {
        match self {
            GroundingKind::Object => "object",
            GroundingKind::Area => "area",
            GroundingKind::Affordance => "affordance",
            GroundingKind::Trajectory => "trajectory",
            GroundingKind::GraspPose => "grasp pose",
        }
    }

    pub fn from_tag_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag_name() == name)
    }

    /// Whether `count` coordinate pairs are legal for this kind.
    pub fn accepts_count(self, count: usize, framed: bool) -> bool {
        match self {
            GroundingKind::Object => count == 2,
            GroundingKind::Area => count >= 1,
            GroundingKind::Affordance if framed => count == 1,
            GroundingKind::Affordance => count >= 1,
            GroundingKind::Trajectory => (2..=MAX_TRAJECTORY_POINTS).contains(&count),
            GroundingKind::GraspPose => count == 4,
        }
    }
}

impl fmt::Display for GroundingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag_name())
    }
}

impl FromStr for GroundingKind {
    type Err = String;

    /// Accepts the tag name, plus `grasp_pose` / `grasp-pose` for command lines.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "grasp_pose" | "grasp-pose" => Ok(GroundingKind::GraspPose),
            other => GroundingKind::from_tag_name(other)
                .ok_or_else(|| format!("unknown grounding kind `{other}`")),
        }
    }
}

/// One `(x, y)` pair on the integer grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CoordPair {
    pub x: u16,
    pub y: u16,
}

impl CoordPair {
    pub fn new(x: u16, y: u16) -> Result<Self, GrammarError> {
        for v in [x, y] {
            if v > GRID_MAX {
                return Err(GrammarError::CoordinateOutOfRange {
                    offset: 0,
                    value: i64::from(v),
                });
            }
        }
        Ok(Self { x, y })
    }

    /// Unit-normalized point.
    pub fn to_point(self) -> Point {
        Point::new(f64::from(self.x) / 1000.0, f64::from(self.y) / 1000.0)
    }
}

/// One parsed tag instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundedSpan {
    pub kind: GroundingKind,
    pub frame: Option<u32>,
    pub label: Option<String>,
    pub coords: Vec<CoordPair>,
    /// Byte range of the whole `<tag> ... </tag>` region in the parsed text.
    pub source_range: Range<usize>,
}

impl GroundedSpan {
    /// Builds a validated span with an empty source range.
    pub fn new(
        kind: GroundingKind,
        frame: Option<u32>,
        label: Option<String>,
        coords: Vec<CoordPair>,
    ) -> Result<Self, GrammarError> {
        let span = Self {
            kind,
            frame,
            label,
            coords,
            source_range: 0..0,
        };
        span.validate()?;
        Ok(span)
    }

    pub fn validate(&self) -> Result<(), GrammarError> {
        if !self
            .kind
            .accepts_count(self.coords.len(), self.frame.is_some())
        {
            return Err(GrammarError::InvariantViolation(format!(
                "<{}> cannot carry {} coordinate pairs",
                self.kind,
                self.coords.len()
            )));
        }
        if let Some(c) = self
            .coords
            .iter()
            .find(|c| c.x > GRID_MAX || c.y > GRID_MAX)
        {
            return Err(GrammarError::InvariantViolation(format!(
                "coordinate ({}, {}) is off the grid",
                c.x, c.y
            )));
        }
        if let Some(label) = &self.label {
            if !is_valid_label(label) {
                return Err(GrammarError::InvariantViolation(format!(
                    "label {label:?} cannot be serialized"
                )));
            }
        }
        Ok(())
    }

    /// Coordinates as unit-normalized points.
    pub fn points(&self) -> Vec<Point> {
        self.coords.iter().map(|c| c.to_point()).collect()
    }

    /// Equality ignoring where the span was found.
    pub fn same_content(&self, other: &GroundedSpan) -> bool {
        self.kind == other.kind
            && self.frame == other.frame
            && self.label == other.label
            && self.coords == other.coords
    }
}

/// A label survives a round trip when it is trimmed, non-empty and cannot be
/// confused with a coordinate list or a tag.
fn is_valid_label(label: &str) -> bool {
    !label.is_empty() && label.trim() == label && !label.contains(['(', '<', '>'])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseReport {
    pub spans: Vec<GroundedSpan>,
    /// Text found outside every accepted span, concatenated in order.
    pub residual_text: String,
    pub diagnostics: Vec<Diagnostic>,
}

impl ParseReport {
    pub fn spans_of(&self, kind: GroundingKind) -> impl Iterator<Item = &GroundedSpan> {
        self.spans.iter().filter(move |s| s.kind == kind)
    }
}

/// Parses every well-formed span in `text`.
///
/// In strict mode the first malformed span aborts with an error. Otherwise the
/// malformed region is left in the residual text and reported as one
/// diagnostic; off-grid coordinates are clamped and also reported once per span.
pub fn parse_spans(text: &str, strict: bool) -> Result<ParseReport, GrammarError> {
    let mut report = ParseReport::default();
    let bytes = text.as_bytes();
    let mut pos = 0;
    // start of text not yet copied into the residual
    let mut copied = 0;

    while let Some(rel) = text[pos..].find('<') {
        let lt = pos + rel;
        let Some((kind, open_end)) = match_tag(bytes, lt, false) else {
            pos = lt + 1;
            continue;
        };
        let Some((close_start, close_end)) = find_close(bytes, open_end, kind) else {
            let err = GrammarError::UnclosedTag {
                tag: kind.tag_name(),
                offset: lt,
            };
            if strict {
                return Err(err);
            }
            report.diagnostics.push(Diagnostic {
                offset: lt,
                message: err.to_string(),
            });
            pos = open_end;
            continue;
        };

        match parse_body(text, open_end, close_start, kind, strict) {
            Ok(body) => {
                report.residual_text.push_str(&text[copied..lt]);
                copied = close_end;
                if !body.clamped.is_empty() {
                    report.diagnostics.push(Diagnostic {
                        offset: lt,
                        message: format!(
                            "clamped off-grid coordinates {:?} in <{kind}> span",
                            body.clamped
                        ),
                    });
                }
                report.spans.push(GroundedSpan {
                    kind,
                    frame: body.frame,
                    label: body.label,
                    coords: body.coords,
                    source_range: lt..close_end,
                });
            }
            Err(err) if strict => return Err(err),
            Err(err) => report.diagnostics.push(Diagnostic {
                offset: lt,
                message: err.to_string(),
            }),
        }
        pos = close_end;
    }
    report.residual_text.push_str(&text[copied..]);
    Ok(report)
}

/// Canonical serialization of a span.
pub fn emit_span(span: &GroundedSpan) -> Result<String, GrammarError> {
    span.validate()?;
    let tag = span.kind.tag_name();
    let mut out = format!("<{tag}> ");
    if let Some(frame) = span.frame {
        out.push_str(&format!("<frame {frame}>: "));
    }
    if let Some(label) = &span.label {
        out.push_str(label);
        out.push_str("; ");
    }
    let pairs: Vec<String> = span
        .coords
        .iter()
        .map(|c| format!("({}, {})", c.x, c.y))
        .collect();
    out.push_str(&pairs.join(", "));
    out.push_str(&format!(" </{tag}>"));
    Ok(out)
}

/// Maps a unit coordinate onto the integer grid, rounding half away from zero.
pub fn quantize(x: f64) -> Result<u16, GrammarError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(GrammarError::OutOfRange(x));
    }
    Ok((x * 1000.0).round() as u16)
}

pub fn dequantize(k: u16) -> Result<f64, GrammarError> {
    if k > GRID_MAX {
        return Err(GrammarError::OutOfRange(f64::from(k)));
    }
    Ok(f64::from(k) / 1000.0)
}

fn is_blank(b: u8) -> bool {
    b == b' ' || b == b'\t'
}

fn skip_blanks(bytes: &[u8], mut i: usize) -> usize {
    while i < bytes.len() && is_blank(bytes[i]) {
        i += 1;
    }
    i
}

fn skip_whitespace(bytes: &[u8], mut i: usize) -> usize {
    while i < bytes.len() && bytes[i].is_ascii_whitespace() {
        i += 1;
    }
    i
}

/// Matches `<name>` (or `</name>` when `closing`) at `at`, tolerating blank runs
/// inside the brackets and between `grasp` and `pose`. Returns the kind and the
/// offset just past `>`.
fn match_tag(bytes: &[u8], at: usize, closing: bool) -> Option<(GroundingKind, usize)> {
    let mut i = at + 1;
    if closing {
        if bytes.get(i) != Some(&b'/') {
            return None;
        }
        i += 1;
    }
    i = skip_blanks(bytes, i);
    let word_end = |mut j: usize| {
        while j < bytes.len() && bytes[j].is_ascii_alphabetic() {
            j += 1;
        }
        j
    };
    let end = word_end(i);
    let word = &bytes[i..end];
    let (kind, mut j) = match word {
        b"object" => (GroundingKind::Object, end),
        b"area" => (GroundingKind::Area, end),
        b"affordance" => (GroundingKind::Affordance, end),
        b"trajectory" => (GroundingKind::Trajectory, end),
        b"grasp" => {
            let k = skip_blanks(bytes, end);
            if k == end {
                return None;
            }
            let pose_end = word_end(k);
            if &bytes[k..pose_end] != b"pose" {
                return None;
            }
            (GroundingKind::GraspPose, pose_end)
        }
        _ => return None,
    };
    j = skip_blanks(bytes, j);
    (bytes.get(j) == Some(&b'>')).then_some((kind, j + 1))
}

fn find_close(bytes: &[u8], from: usize, kind: GroundingKind) -> Option<(usize, usize)> {
    let mut i = from;
    while i + 1 < bytes.len() {
        if bytes[i] == b'<' && bytes[i + 1] == b'/' {
            if let Some((k, end)) = match_tag(bytes, i, true) {
                if k == kind {
                    return Some((i, end));
                }
            }
        }
        i += 1;
    }
    None
}

struct Body {
    frame: Option<u32>,
    label: Option<String>,
    coords: Vec<CoordPair>,
    clamped: Vec<i64>,
}

fn parse_body(
    text: &str,
    start: usize,
    end: usize,
    kind: GroundingKind,
    strict: bool,
) -> Result<Body, GrammarError> {
    let bytes = &text.as_bytes()[..end];
    let mut i = skip_whitespace(bytes, start);

    let mut frame = None;
    if bytes[i..].starts_with(b"<frame") {
        let marker = i;
        let inner_start = i + "<frame".len();
        let close = text[inner_start..end]
            .find('>')
            .map(|r| inner_start + r)
            .ok_or_else(|| GrammarError::MalformedFrame {
                offset: marker,
                detail: "missing `>`".into(),
            })?;
        let raw = &text[inner_start..close];
        if !raw.starts_with([' ', '\t']) {
            return Err(GrammarError::MalformedFrame {
                offset: marker,
                detail: format!("expected `<frame n>`, found `<frame{raw}>`"),
            });
        }
        let n = raw.trim();
        if n.is_empty() || !n.bytes().all(|b| b.is_ascii_digit()) {
            return Err(GrammarError::MalformedFrame {
                offset: marker,
                detail: format!("frame index `{n}` is not a non-negative integer"),
            });
        }
        frame = Some(n.parse::<u32>().map_err(|e| GrammarError::MalformedFrame {
            offset: marker,
            detail: e.to_string(),
        })?);
        i = skip_blanks(bytes, close + 1);
        if bytes.get(i) == Some(&b':') {
            i += 1;
        }
    }

    let paren = text[i..end].find('(').map(|r| i + r).ok_or_else(|| {
        GrammarError::MalformedCoordinates {
            offset: i,
            detail: "no coordinate pairs".into(),
        }
    })?;
    let prefix = &text[i..paren];
    let label = match prefix.rfind(';') {
        Some(semi) => {
            if !prefix[semi + 1..].trim().is_empty() {
                return Err(GrammarError::MalformedCoordinates {
                    offset: i + semi + 1,
                    detail: "unexpected text between label and coordinates".into(),
                });
            }
            let label = prefix[..semi].trim();
            (!label.is_empty()).then(|| label.to_string())
        }
        None if prefix.trim().is_empty() => None,
        None => {
            return Err(GrammarError::MalformedCoordinates {
                offset: i,
                detail: format!("unexpected text `{}` before coordinates", prefix.trim()),
            })
        }
    };

    let mut coords = Vec::new();
    let mut clamped = Vec::new();
    let mut j = paren;
    loop {
        let pair_start = j;
        expect(bytes, &mut j, b'(')?;
        let x = parse_int(bytes, &mut j)?;
        expect(bytes, &mut j, b',')?;
        let y = parse_int(bytes, &mut j)?;
        expect(bytes, &mut j, b')')?;
        let mut pair = [0u16; 2];
        for (slot, value) in pair.iter_mut().zip([x, y]) {
            if !(0..=i64::from(GRID_MAX)).contains(&value) {
                if strict {
                    return Err(GrammarError::CoordinateOutOfRange {
                        offset: pair_start,
                        value,
                    });
                }
                clamped.push(value);
            }
            *slot = value.clamp(0, i64::from(GRID_MAX)) as u16;
        }
        coords.push(CoordPair {
            x: pair[0],
            y: pair[1],
        });
        j = skip_whitespace(bytes, j);
        if j >= end {
            break;
        }
        if bytes[j] != b',' {
            return Err(GrammarError::MalformedCoordinates {
                offset: j,
                detail: format!(
                    "unexpected `{}` after coordinate pair",
                    text[j..].chars().next().unwrap_or(' ')
                ),
            });
        }
        j += 1;
    }

    if !kind.accepts_count(coords.len(), frame.is_some()) {
        return Err(GrammarError::CardinalityViolation {
            kind,
            count: coords.len(),
            offset: start,
        });
    }
    Ok(Body {
        frame,
        label,
        coords,
        clamped,
    })
}

fn expect(bytes: &[u8], j: &mut usize, want: u8) -> Result<(), GrammarError> {
    *j = skip_whitespace(bytes, *j);
    if bytes.get(*j) == Some(&want) {
        *j += 1;
        Ok(())
    } else {
        Err(GrammarError::MalformedCoordinates {
            offset: *j,
            detail: format!("expected `{}`", want as char),
        })
    }
}

fn parse_int(bytes: &[u8], j: &mut usize) -> Result<i64, GrammarError> {
    *j = skip_whitespace(bytes, *j);
    let start = *j;
    if matches!(bytes.get(*j), Some(b'-' | b'+')) {
        *j += 1;
    }
    let digits = *j;
    while *j < bytes.len() && bytes[*j].is_ascii_digit() {
        *j += 1;
    }
    if *j == digits {
        return Err(GrammarError::MalformedCoordinates {
            offset: start,
            detail: "expected an integer".into(),
        });
    }
    let literal = std::str::from_utf8(&bytes[start..*j]).expect("ascii digits");
    // Saturate absurdly long literals; they are off the grid either way.
    Ok(literal.parse::<i64>().unwrap_or(if bytes[start] == b'-' {
        i64::MIN
    } else {
        i64::MAX
    }))
}
