//! Static schedules: who sends which index range to whom, round by round.

use std::ops::Range;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    ScatterReduce,
    AllGather,
    Reduce,
    Broadcast,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::ScatterReduce => "scatter_reduce",
            Phase::AllGather => "all_gather",
            Phase::Reduce => "reduce",
            Phase::Broadcast => "broadcast",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    /// `local += received`
    Reduce,
    /// `local = received`
    Copy,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transfer {
    pub from: usize,
    pub to: usize,
    pub range: Range<usize>,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Round {
    pub phase: Phase,
    /// Step number within the phase.
    pub step: usize,
    pub transfers: Vec<Transfer>,
}

/// Splits `len` elements into `parts` contiguous ranges whose sizes differ by at most one.
/// The first `len % parts` ranges get the extra element.
pub fn balanced_ranges(len: usize, parts: usize) -> Vec<Range<usize>> {
    assert!(parts > 0, "at least one part");
    let base = len / parts;
    let extra = len % parts;
    let mut start = 0;
    (0..parts)
        .map(|c| {
            let size = base + usize::from(c < extra);
            let r = start..start + size;
            start += size;
            r
        })
        .collect()
}

/// Send and receive chunk ids for one worker in one ring step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RingMove {
    pub send_chunk: usize,
    pub recv_chunk: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RingStep {
    pub phase: Phase,
    pub step: usize,
    /// Indexed by worker. Worker `i` sends to `i+1` and receives from `i-1`.
    pub moves: Vec<RingMove>,
}

/// Ring all-reduce schedule.
///
/// Scatter-reduce step `s`: worker `i` sends chunk `i-s` and folds the
/// received chunk `i-1-s` into its own. After `n-1` steps worker `i` holds the
/// complete sum of chunk `i+1`, which the all-gather phase then circulates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RingPlan {
    pub n: usize,
    pub chunk_boundaries: Vec<Range<usize>>,
    pub steps: Vec<RingStep>,
}

impl RingPlan {
    pub fn new(n: usize, len: usize) -> Self {
        assert!(n > 0, "ring needs a worker");
        let m = |x: isize| x.rem_euclid(n as isize) as usize;
        let mut steps = Vec::with_capacity(2 * (n - 1));
        for s in 0..n - 1 {
            let moves = (0..n)
                .map(|i| {
                    let (i, s) = (i as isize, s as isize);
                    RingMove { send_chunk: m(i - s), recv_chunk: m(i - 1 - s) }
                })
                .collect();
            steps.push(RingStep { phase: Phase::ScatterReduce, step: s, moves });
        }
        steps.extend(all_gather_steps(n, |i| (i + 1) % n));
        Self { n, chunk_boundaries: balanced_ranges(len, n), steps }
    }

    /// Chunk that worker `i` holds fully reduced after scatter-reduce.
    pub fn owned_chunk(&self, worker: usize) -> usize {
        (worker + 1) % self.n
    }

    pub fn rounds(&self) -> Vec<Round> {
        ring_rounds(self.n, &self.chunk_boundaries, &self.steps)
    }
}

/// Ring all-gather where worker `i` starts out owning chunk `owned(i)`.
pub fn all_gather_steps(n: usize, owned: impl Fn(usize) -> usize) -> Vec<RingStep> {
    (0..n.saturating_sub(1))
        .map(|s| {
            let moves = (0..n)
                .map(|i| {
                    let prev = (i + n - 1) % n;
                    RingMove { send_chunk: (owned(i) + n - s) % n, recv_chunk: (owned(prev) + n - s) % n }
                })
                .collect();
            RingStep { phase: Phase::AllGather, step: s, moves }
        })
        .collect()
}

pub fn ring_rounds(n: usize, chunks: &[Range<usize>], steps: &[RingStep]) -> Vec<Round> {
    steps
        .iter()
        .map(|st| {
            let action = if st.phase == Phase::ScatterReduce { Action::Reduce } else { Action::Copy };
            let transfers = (0..n)
                .map(|i| Transfer {
                    from: i,
                    to: (i + 1) % n,
                    range: chunks[st.moves[i].send_chunk].clone(),
                    action,
                })
                .collect();
            Round { phase: st.phase, step: st.step, transfers }
        })
        .collect()
}

/// Heap-ordered binary tree: node `i` has children `2i+1` and `2i+2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreePlan {
    pub n: usize,
    pub slices: Vec<Range<usize>>,
    pub depth: usize,
}

impl TreePlan {
    pub fn new(n: usize, len: usize, slices: usize) -> Self {
        assert!(n > 0 && slices > 0);
        Self { n, slices: balanced_ranges(len, slices), depth: Self::level(n - 1) }
    }

    pub fn level(node: usize) -> usize {
        (usize::BITS - 1 - (node + 1).leading_zeros()) as usize
    }

    pub fn parent(node: usize) -> Option<usize> {
        (node > 0).then(|| (node - 1) / 2)
    }

    pub fn children(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        [2 * node + 1, 2 * node + 2].into_iter().filter(move |&c| c < self.n)
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        2 * node + 1 >= self.n
    }

    fn level_nodes(&self, level: usize) -> Range<usize> {
        let lo = (1usize << level) - 1;
        lo..((1usize << (level + 1)) - 1).min(self.n)
    }

    /// All reduce rounds for every slice, then all broadcast rounds. A worker's
    /// operations execute in this order, so consecutive slices pipeline.
    pub fn rounds(&self) -> Vec<Round> {
        let mut rounds = Vec::new();
        for (phase, levels) in [
            (Phase::Reduce, (1..=self.depth).rev().collect::<Vec<_>>()),
            (Phase::Broadcast, (1..=self.depth).collect()),
        ] {
            for slice in &self.slices {
                for (step, &level) in levels.iter().enumerate() {
                    let transfers = self
                        .level_nodes(level)
                        .map(|node| {
                            let parent = Self::parent(node).expect("non-root");
                            let (from, to, action) = match phase {
                                Phase::Reduce => (node, parent, Action::Reduce),
                                _ => (parent, node, Action::Copy),
                            };
                            Transfer { from, to, range: slice.clone(), action }
                        })
                        .collect();
                    rounds.push(Round { phase, step, transfers });
                }
            }
        }
        rounds
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_split() {
        assert_eq!(balanced_ranges(10, 3), vec![0..4, 4..7, 7..10]);
        assert_eq!(balanced_ranges(2, 3), vec![0..1, 1..2, 2..2]);
        for len in 0..50 {
            for parts in 1..9 {
                let r = balanced_ranges(len, parts);
                let sizes: Vec<_> = r.iter().map(|r| r.len()).collect();
                assert_eq!(sizes.iter().sum::<usize>(), len);
                assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            }
        }
    }

    #[test]
    fn ring_plan_shape() {
        for n in 1..10 {
            let p = RingPlan::new(n, 100);
            assert_eq!(p.steps.len(), 2 * (n - 1));
            assert_eq!(p.steps.iter().filter(|s| s.phase == Phase::ScatterReduce).count(), n - 1);
            for st in &p.steps {
                // Each worker receives what its left neighbour sends.
                for i in 0..n {
                    assert_eq!(st.moves[i].recv_chunk, st.moves[(i + n - 1) % n].send_chunk);
                }
                let mut sent: Vec<_> = st.moves.iter().map(|m| m.send_chunk).collect();
                sent.sort_unstable();
                assert_eq!(sent, (0..n).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn three_worker_ring_matches_figure() {
        let p = RingPlan::new(3, 3);
        let sends = |s: usize| p.steps[s].moves.iter().map(|m| m.send_chunk).collect::<Vec<_>>();
        assert_eq!(sends(0), vec![0, 1, 2]);
        assert_eq!(sends(1), vec![2, 0, 1]);
        // Worker 2 ends scatter-reduce owning chunk 0.
        assert_eq!(p.owned_chunk(2), 0);
        assert_eq!(sends(2), vec![1, 2, 0]);
    }

    #[test]
    fn tree_shape() {
        assert_eq!(TreePlan::new(1, 4, 1).depth, 0);
        assert_eq!(TreePlan::new(3, 4, 1).depth, 1);
        assert_eq!(TreePlan::new(7, 4, 1).depth, 2);
        assert_eq!(TreePlan::new(8, 4, 1).depth, 3);
        let t = TreePlan::new(7, 8, 2);
        assert_eq!(t.rounds().len(), 2 * 2 * t.depth);
        assert!(t.is_leaf(3) && !t.is_leaf(1));
        assert_eq!(t.children(1).collect::<Vec<_>>(), vec![3, 4]);
        let r = TreePlan::new(3, 4, 1).rounds();
        assert_eq!(r[0].transfers.iter().map(|t| (t.from, t.to)).collect::<Vec<_>>(), vec![(1, 0), (2, 0)]);
        assert_eq!(r[1].transfers.iter().map(|t| (t.from, t.to)).collect::<Vec<_>>(), vec![(0, 1), (0, 2)]);
    }
}
