//! Load-balanced batch planning for variable-length sequences.
//!
//! [`balance`] is the longest-processing-time greedy: sort sequences by
//! estimated length (descending, stable), then hand each to the bucket with the
//! smallest running total, lowest index first on ties. Given the same input
//! order every data-parallel rank computes the same plan without communication.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BalanceError {
    #[error("world size must be at least 1")]
    ZeroWorldSize,
    #[error("sequence `{0}` has a non-positive token estimate")]
    EmptySequenceEstimate(String),
    #[error("image {index} has invalid dimensions {w}x{h}")]
    InvalidDims { index: usize, w: u32, h: u32 },
    #[error("patch size and merge factor must be positive")]
    InvalidPatchRule,
    #[error("loss batch is empty")]
    EmptyBatch,
    #[error("sequence {worker}/{index} has no tokens")]
    EmptySequence { worker: usize, index: usize },
    #[error("global batch size {declared} does not match {actual} sequences")]
    BatchSizeMismatch { declared: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqMeta {
    pub id: String,
    pub est_tokens: u64,
}

impl SeqMeta {
    pub fn new(id: impl Into<String>, est_tokens: u64) -> Result<Self, BalanceError> {
        let id = id.into();
        if est_tokens == 0 {
            return Err(BalanceError::EmptySequenceEstimate(id));
        }
        Ok(Self { id, est_tokens })
    }
}

/// How image pixels turn into visual tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRule {
    pub patch: u32,
    pub merge_factor: u32,
}

impl Default for PatchRule {
    fn default() -> Self {
        Self {
            patch: 32,
            merge_factor: 1,
        }
    }
}

/// `text_tokens + Σ ceil(w/patch)·ceil(h/patch)·merge_factor`.
pub fn estimate_length(
    image_dims: &[(u32, u32)],
    text_tokens: u64,
    rule: &PatchRule,
) -> Result<u64, BalanceError> {
    if rule.patch == 0 || rule.merge_factor == 0 {
        return Err(BalanceError::InvalidPatchRule);
    }
    let mut total = text_tokens;
    for (index, &(w, h)) in image_dims.iter().enumerate() {
        if w == 0 || h == 0 {
            return Err(BalanceError::InvalidDims { index, w, h });
        }
        let patches = u64::from(w.div_ceil(rule.patch)) * u64::from(h.div_ceil(rule.patch));
        total += patches * u64::from(rule.merge_factor);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalancePlan {
    pub buckets: Vec<Vec<String>>,
    pub loads: Vec<u64>,
}

impl BalancePlan {
    pub fn makespan(&self) -> u64 {
        makespan(self)
    }

    pub fn world_size(&self) -> usize {
        self.buckets.len()
    }

    /// JSON export: bucket id arrays, loads and the makespan.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "world_size": self.world_size(),
            "makespan": self.makespan(),
            "loads": self.loads,
            "buckets": self.buckets,
        })
    }
}

pub fn makespan(plan: &BalancePlan) -> u64 {
    plan.loads.iter().copied().max().unwrap_or(0)
}

/// Longest-first greedy assignment of `seqs` to `world_size` buckets.
pub fn balance(seqs: &[SeqMeta], world_size: usize) -> Result<BalancePlan, BalanceError> {
    if world_size == 0 {
        return Err(BalanceError::ZeroWorldSize);
    }
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    // sort_by_key is stable: equal lengths keep input order
    order.sort_by_key(|&i| Reverse(seqs[i].est_tokens));

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); world_size];
    let mut loads = vec![0u64; world_size];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> =
        (0..world_size).map(|b| Reverse((0, b))).collect();
    for i in order {
        let Reverse((load, b)) = heap.pop().expect("world_size >= 1");
        let load = load + seqs[i].est_tokens;
        members[b].push(i);
        loads[b] = load;
        heap.push(Reverse((load, b)));
    }
    // within a bucket, ids are listed in input order
    let buckets = members
        .into_iter()
        .map(|mut m| {
            m.sort_unstable();
            m.into_iter().map(|i| seqs[i].id.clone()).collect()
        })
        .collect();
    Ok(BalancePlan { buckets, loads })
}

/// Naive assignment: sequence `i` goes to bucket `i mod world_size`.
pub fn round_robin(seqs: &[SeqMeta], world_size: usize) -> Result<BalancePlan, BalanceError> {
    if world_size == 0 {
        return Err(BalanceError::ZeroWorldSize);
    }
    let mut buckets = vec![Vec::new(); world_size];
    let mut loads = vec![0u64; world_size];
    for (i, s) in seqs.iter().enumerate() {
        buckets[i % world_size].push(s.id.clone());
        loads[i % world_size] += s.est_tokens;
    }
    Ok(BalancePlan { buckets, loads })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StragglerReport {
    pub round_robin: BalancePlan,
    pub balanced: BalancePlan,
    pub round_robin_time: f64,
    pub balanced_time: f64,
    /// `round_robin_time / balanced_time`; 1 when both are zero.
    pub ratio: f64,
}

/// Compares round-robin and balanced plans under a per-sequence cost model.
/// A worker's time is the sum of the costs of its sequences.
pub fn simulate_straggler_gain(
    seqs: &[SeqMeta],
    world_size: usize,
    cost: impl Fn(u64) -> f64,
) -> Result<StragglerReport, BalanceError> {
    let naive = round_robin(seqs, world_size)?;
    let balanced = balance(seqs, world_size)?;
    let lengths: std::collections::HashMap<&str, u64> =
        seqs.iter().map(|s| (s.id.as_str(), s.est_tokens)).collect();
    let slowest = |plan: &BalancePlan| {
        plan.buckets
            .iter()
            .map(|b| b.iter().map(|id| cost(lengths[id.as_str()])).sum::<f64>())
            .fold(0.0, f64::max)
    };
    let round_robin_time = slowest(&naive);
    let balanced_time = slowest(&balanced);
    let ratio = if balanced_time == 0.0 {
        1.0
    } else {
        round_robin_time / balanced_time
    };
    Ok(StragglerReport {
        round_robin: naive,
        balanced,
        round_robin_time,
        balanced_time,
        ratio,
    })
}

/// Per-token losses grouped by worker, then by sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBatch {
    workers: Vec<Vec<Vec<f64>>>,
    global_batch: usize,
}

impl LossBatch {
    pub fn new(workers: Vec<Vec<Vec<f64>>>, global_batch: usize) -> Result<Self, BalanceError> {
        let actual: usize = workers.iter().map(Vec::len).sum();
        if actual == 0 {
            return Err(BalanceError::EmptyBatch);
        }
        if actual != global_batch {
            return Err(BalanceError::BatchSizeMismatch {
                declared: global_batch,
                actual,
            });
        }
        for (worker, seqs) in workers.iter().enumerate() {
            if let Some(index) = seqs.iter().position(Vec::is_empty) {
                return Err(BalanceError::EmptySequence { worker, index });
            }
        }
        Ok(Self {
            workers,
            global_batch,
        })
    }

    /// Uses the actual sequence count as the global batch size.
    pub fn from_workers(workers: Vec<Vec<Vec<f64>>>) -> Result<Self, BalanceError> {
        let b = workers.iter().map(Vec::len).sum();
        Self::new(workers, b)
    }

    fn sequences(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.workers.iter().flatten()
    }
}

/// Sum of every token loss over the global token count.
pub fn loss_per_token_global(batch: &LossBatch) -> f64 {
    let (sum, count) = batch.sequences().fold((0.0, 0usize), |(s, c), seq| {
        (s + seq.iter().sum::<f64>(), c + seq.len())
    });
    sum / count as f64
}

/// Mean token loss per sequence, averaged over the global batch size.
pub fn loss_per_sample(batch: &LossBatch) -> f64 {
    let total: f64 = batch
        .sequences()
        .map(|seq| seq.iter().sum::<f64>() / seq.len() as f64)
        .sum();
    total / batch.global_batch as f64
}
