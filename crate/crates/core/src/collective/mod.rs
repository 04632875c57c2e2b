//! Ring and tree all-reduce, all-gather and reduce-scatter over secure channels.
//!
//! Each worker keeps its own buffer. Reductions always compute
//! `local += received`, so results are bit-stable for a given worker count.

mod cluster;
pub mod plan;
pub mod trace;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelError, NodeId};

pub use cluster::{Cluster, ClusterConfig, Payload};
pub use plan::{balanced_ranges, Phase, RingPlan, TreePlan};
pub use trace::{count_crypto_ops, CollectiveTrace, CryptoOpCount, EventKind, TraceEvent, TraceError};

use cluster::OpSpec;
use plan::{all_gather_steps, ring_rounds, RingStep};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CollectiveError {
    #[error("{op} aborted at {phase} step {step}: worker {worker} <-> {peer}: {source}")]
    Channel {
        op: &'static str,
        phase: Phase,
        step: usize,
        worker: NodeId,
        peer: NodeId,
        source: ChannelError,
    },
    #[error("expected {expected} buffers, got {got}")]
    WorkerCount { expected: usize, got: usize },
    #[error("buffer lengths differ across workers")]
    ShapeMismatch,
    #[error("shard of worker {0} is empty")]
    EmptyShard(usize),
}

impl CollectiveError {
    pub fn channel_error(&self) -> Option<&ChannelError> {
        match self {
            CollectiveError::Channel { source, .. } => Some(source),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBuffer {
    pub owner: NodeId,
    pub values: Vec<f32>,
}

impl GradientBuffer {
    pub fn new(owner: NodeId, values: Vec<f32>) -> Self {
        Self { owner, values }
    }
}

/// One worker's slice of a reduce-scatter result.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedShard {
    pub owner: NodeId,
    /// Ring chunk id this worker ends up owning.
    pub chunk: usize,
    pub range: Range<usize>,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Ring,
    Tree,
}

fn check_workers(cluster: &Cluster, got: usize) -> Result<(), CollectiveError> {
    if got != cluster.n() {
        return Err(CollectiveError::WorkerCount { expected: cluster.n(), got });
    }
    Ok(())
}

// Copies the buffers and pads them with zeros to at least `n` elements.
fn padded(buffers: &[GradientBuffer], n: usize) -> Result<(Vec<Vec<f32>>, usize), CollectiveError> {
    let len = buffers[0].values.len();
    if buffers.iter().any(|b| b.values.len() != len) {
        return Err(CollectiveError::ShapeMismatch);
    }
    let padded_len = len.max(n);
    let bufs = buffers
        .iter()
        .map(|b| {
            let mut v = b.values.clone();
            v.resize(padded_len, 0.0);
            v
        })
        .collect();
    Ok((bufs, len))
}

fn logical_len(bytes: u64, n: usize) -> usize {
    (bytes.div_ceil(4) as usize).max(n)
}

fn finish(buffers: &[GradientBuffer], bufs: Vec<Vec<f32>>, len: usize) -> Vec<GradientBuffer> {
    buffers
        .iter()
        .zip(bufs)
        .map(|(b, mut v)| {
            v.truncate(len);
            GradientBuffer::new(b.owner, v)
        })
        .collect()
}

impl Cluster {
    /// Ring all-reduce on real or logical payloads.
    pub fn ring_all_reduce_with(&mut self, payload: Payload<'_>) -> Result<CollectiveTrace, CollectiveError> {
        self.ring_op("ring_all_reduce", EventKind::AllReduce, payload, true, true)
    }

    /// Scatter-reduce phase only. Worker `i` ends owning chunk `(i + 1) mod n`.
    pub fn reduce_scatter_with(&mut self, payload: Payload<'_>) -> Result<CollectiveTrace, CollectiveError> {
        self.ring_op("reduce_scatter", EventKind::ReduceScatter, payload, true, false)
    }

    /// Ring all-gather where worker `i` starts with chunk `i` of a balanced split.
    pub fn all_gather_with(&mut self, payload: Payload<'_>) -> Result<CollectiveTrace, CollectiveError> {
        self.ring_op("all_gather", EventKind::AllGather, payload, false, true)
    }

    /// Binary-tree all-reduce, pipelined over `slices` pieces of the buffer.
    pub fn tree_all_reduce_with(&mut self, payload: Payload<'_>, slices: usize) -> Result<CollectiveTrace, CollectiveError> {
        let n = self.n();
        let (len, logical, data) = unpack(payload, n)?;
        let cost_len = logical_len(logical, n);
        let rounds = TreePlan::new(n, len, slices.max(1)).rounds();
        let cost_rounds = TreePlan::new(n, cost_len, slices.max(1)).rounds();
        let spec = OpSpec {
            name: "tree_all_reduce",
            marker: EventKind::AllReduce,
            rounds: &rounds,
            cost_len,
            cost_rounds: &cost_rounds,
            logical_bytes: logical,
            reduction_bytes: logical,
        };
        self.execute(spec, data)
    }

    fn ring_op(
        &mut self,
        name: &'static str,
        marker: EventKind,
        payload: Payload<'_>,
        scatter: bool,
        gather: bool,
    ) -> Result<CollectiveTrace, CollectiveError> {
        let n = self.n();
        let (len, logical, data) = unpack(payload, n)?;
        let cost_len = logical_len(logical, n);
        let plan = RingPlan::new(n, len);
        let steps: Vec<RingStep> = match (scatter, gather) {
            (true, true) => plan.steps.clone(),
            (true, false) => plan.steps[..n - 1].to_vec(),
            _ => all_gather_steps(n, |i| i),
        };
        let rounds = ring_rounds(n, &plan.chunk_boundaries, &steps);
        let cost_rounds = ring_rounds(n, &balanced_ranges(cost_len, n), &steps);
        let spec = OpSpec {
            name,
            marker,
            rounds: &rounds,
            cost_len,
            cost_rounds: &cost_rounds,
            logical_bytes: logical,
            reduction_bytes: logical,
        };
        self.execute(spec, data)
    }
}

type Unpacked<'a> = (usize, u64, Option<&'a mut [Vec<f32>]>);

fn unpack(payload: Payload<'_>, n: usize) -> Result<Unpacked<'_>, CollectiveError> {
    match payload {
        Payload::Logical { bytes } => Ok((logical_len(bytes, n), bytes, None)),
        Payload::Scaled { buffers, logical_bytes } => {
            if buffers.len() != n {
                return Err(CollectiveError::WorkerCount { expected: n, got: buffers.len() });
            }
            let len = buffers[0].len();
            if buffers.iter().any(|b| b.len() != len) {
                return Err(CollectiveError::ShapeMismatch);
            }
            if len < n {
                return Err(CollectiveError::ShapeMismatch);
            }
            Ok((len, logical_bytes, Some(buffers)))
        }
    }
}

/// Every worker ends with the element-wise sum of all inputs.
pub fn ring_all_reduce(
    cluster: &mut Cluster,
    buffers: &[GradientBuffer],
) -> Result<(Vec<GradientBuffer>, CollectiveTrace), CollectiveError> {
    check_workers(cluster, buffers.len())?;
    let (mut bufs, len) = padded(buffers, cluster.n())?;
    let bytes = (bufs[0].len() * 4) as u64;
    let trace = cluster.ring_all_reduce_with(Payload::Scaled { buffers: &mut bufs, logical_bytes: bytes })?;
    Ok((finish(buffers, bufs, len), trace))
}

/// Binary-tree all-reduce (reduce to worker 0, then broadcast).
pub fn tree_all_reduce(
    cluster: &mut Cluster,
    buffers: &[GradientBuffer],
    slices: usize,
) -> Result<(Vec<GradientBuffer>, CollectiveTrace), CollectiveError> {
    check_workers(cluster, buffers.len())?;
    let (mut bufs, len) = padded(buffers, cluster.n())?;
    let bytes = (bufs[0].len() * 4) as u64;
    let trace = cluster.tree_all_reduce_with(Payload::Scaled { buffers: &mut bufs, logical_bytes: bytes }, slices)?;
    Ok((finish(buffers, bufs, len), trace))
}

/// Worker `i` ends with the global sum of ring chunk `(i + 1) mod n`.
pub fn reduce_scatter(
    cluster: &mut Cluster,
    buffers: &[GradientBuffer],
) -> Result<(Vec<ReducedShard>, CollectiveTrace), CollectiveError> {
    check_workers(cluster, buffers.len())?;
    let n = cluster.n();
    let (mut bufs, len) = padded(buffers, n)?;
    let bytes = (bufs[0].len() * 4) as u64;
    let trace = cluster.reduce_scatter_with(Payload::Scaled { buffers: &mut bufs, logical_bytes: bytes })?;
    let plan = RingPlan::new(n, bufs[0].len());
    let shards = buffers
        .iter()
        .zip(bufs)
        .enumerate()
        .map(|(i, (b, v))| {
            let chunk = plan.owned_chunk(i);
            let r = plan.chunk_boundaries[chunk].clone();
            // Padding never belongs to the caller.
            let range = r.start.min(len)..r.end.min(len);
            ReducedShard { owner: b.owner, chunk, values: v[range.clone()].to_vec(), range }
        })
        .collect();
    Ok((shards, trace))
}

/// Every worker ends holding the concatenation of all shards in worker order.
pub fn all_gather(
    cluster: &mut Cluster,
    shards: &[GradientBuffer],
) -> Result<(Vec<GradientBuffer>, CollectiveTrace), CollectiveError> {
    check_workers(cluster, shards.len())?;
    let n = cluster.n();
    if let Some(i) = shards.iter().position(|s| s.values.is_empty()) {
        return Err(CollectiveError::EmptyShard(i));
    }
    let mut bounds = Vec::with_capacity(n);
    let mut at = 0;
    for s in shards {
        bounds.push(at..at + s.values.len());
        at += s.values.len();
    }
    let mut bufs: Vec<Vec<f32>> = shards
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut v = vec![0.0; at];
            v[bounds[i].clone()].copy_from_slice(&s.values);
            v
        })
        .collect();
    let rounds = ring_rounds(n, &bounds, &all_gather_steps(n, |i| i));
    let bytes = (at * 4) as u64;
    let spec = OpSpec {
        name: "all_gather",
        marker: EventKind::AllGather,
        rounds: &rounds,
        cost_len: at,
        cost_rounds: &rounds,
        logical_bytes: bytes,
        reduction_bytes: bytes,
    };
    let trace = cluster.execute(spec, Some(&mut bufs))?;
    let out = shards.iter().zip(bufs).map(|(s, v)| GradientBuffer::new(s.owner, v)).collect();
    Ok((out, trace))
}

/// Reference sums in the exact order the collectives add.
pub mod oracle {
    use super::{balanced_ranges, TreePlan};

    /// Ring order: chunk `c` starts at worker `c` and picks up workers `c+1, c+2, ...`.
    pub fn ring_sum(inputs: &[Vec<f32>]) -> Vec<f32> {
        let n = inputs.len();
        let len = inputs[0].len();
        let padded = len.max(n);
        let mut out = vec![0.0f32; padded];
        for (c, range) in balanced_ranges(padded, n).into_iter().enumerate() {
            for e in range {
                let at = |w: usize| inputs[w].get(e).copied().unwrap_or(0.0);
                let mut acc = at(c);
                for j in 1..n {
                    acc += at((c + j) % n);
                }
                out[e] = acc;
            }
        }
        out.truncate(len);
        out
    }

    /// Tree order: a node adds its left subtree's sum, then its right one.
    pub fn tree_sum(inputs: &[Vec<f32>]) -> Vec<f32> {
        let n = inputs.len();
        let tree = TreePlan::new(n, 1, 1);
        fn subtree(tree: &TreePlan, inputs: &[Vec<f32>], node: usize, e: usize) -> f32 {
            let mut acc = inputs[node][e];
            for c in tree.children(node) {
                acc += subtree(tree, inputs, c, e);
            }
            acc
        }
        (0..inputs[0].len()).map(|e| subtree(&tree, inputs, 0, e)).collect()
    }
}
