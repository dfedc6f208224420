//! Scoring toolkit for the tagged spatio-temporal grounding grammar emitted by
//! embodied vision-language models.
//!
//! The crate is organised bottom-up:
//!
//! - [`grammar`] parses and emits `<tag> <frame n>: label; (x, y), ... </tag>` spans
//!   with integer coordinates on the `[0, 1000]` grid.
//! - [`geometry`] holds the numerical kernels (discrete Fréchet distance, Chamfer-style
//!   point-set distances, point-in-polygon, IoU, arc-length resampling, grasp rectangles).
//! - [`metrics`] composes the kernels into the benchmark scoring rules, including the
//!   key-frame validity gate.
//! - [`rewards`] computes the GRPO rewards, group-relative advantages and the clipped
//!   surrogate objective.
//! - [`balance`] plans longest-first load-balanced batches and evaluates the two loss
//!   reductions used for variable-length sequences.
//! - [`harness`] ingests JSONL truth/prediction files and aggregates per-task reports.

pub mod balance;
pub mod geometry;
pub mod grammar;
pub mod harness;
pub mod metrics;
pub mod rewards;

pub use balance::{BalanceError, BalancePlan, LossBatch, PatchRule, SeqMeta};
pub use geometry::{BBox, GeometryError, GraspParam, GraspRect, Point, Polygon};
pub use grammar::{CoordPair, GrammarError, GroundedSpan, GroundingKind, ParseReport};
pub use harness::{EvalConfig, HarnessError, PredRecord, Report, TruthRecord};
pub use metrics::{FrameGeometry, FrameIndexedTruth, MetricError, MetricScore, TrajectoryMode};
pub use rewards::{RewardError, RewardGroup, SurrogateInputs};
