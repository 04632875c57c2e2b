//! Round executor shared by every collective.
//!
//! A round is a set of point-to-point transfers. All sends of a round are
//! issued first, then all receives, each in plan order. Every worker has one
//! engine that runs its seals, opens and reductions back to back, and every
//! directed link carries one message at a time. Those two rules fix every
//! timestamp, whether or not real bytes are moved.

use std::collections::HashMap;
use std::sync::Arc;

use crate::channel::{
    modeled_recv, modeled_send, Adversary, ChannelError, KeyStore, Network, NodeId, SecureChannel,
    TimingRecord, TransferCost,
};
use crate::crypto::DEFAULT_CHUNK_SIZE;
use crate::timing::{TimingError, TimingModel};

use super::plan::{Action, Round};
use super::trace::{CollectiveTrace, EventKind, TraceEvent};
use super::CollectiveError;

#[derive(Debug, Clone)]
pub struct ClusterConfig {
    pub n: usize,
    pub cc: bool,
    pub timing: TimingModel,
    pub key_seed: u64,
    pub adversary: Option<Adversary>,
    /// Multi-chain chunk size for sealed transfers.
    pub chunk_size: usize,
}

impl ClusterConfig {
    pub fn new(n: usize, cc: bool) -> Self {
        Self {
            n,
            cc,
            timing: TimingModel::default(),
            key_seed: 0,
            adversary: None,
            chunk_size: DEFAULT_CHUNK_SIZE,
        }
    }
}

/// Bytes to move: either real buffers, or only their logical size.
pub enum Payload<'a> {
    /// Timing only. The collective is planned over `bytes / 4` elements.
    Logical { bytes: u64 },
    /// Real buffers standing in for `logical_bytes`; timing is billed at the logical size.
    Scaled { buffers: &'a mut [Vec<f32>], logical_bytes: u64 },
}

pub(super) struct OpSpec<'r> {
    pub name: &'static str,
    pub marker: EventKind,
    pub rounds: &'r [Round],
    /// Same schedule over the logical length; transfer sizes are billed from it.
    pub cost_len: usize,
    pub cost_rounds: &'r [Round],
    pub logical_bytes: u64,
    pub reduction_bytes: u64,
}

pub struct Cluster {
    n: usize,
    cc: bool,
    timing: Arc<TimingModel>,
    keys: KeyStore,
    chunk_size: usize,
    endpoints: HashMap<(NodeId, NodeId), SecureChannel>,
    network: Network,
    free: Vec<f64>,
    link_free: HashMap<(usize, usize), f64>,
}

impl Cluster {
    pub fn new(config: ClusterConfig) -> Result<Self, TimingError> {
        config.timing.validate()?;
        assert!(config.n > 0, "cluster needs at least one worker");
        Ok(Self {
            n: config.n,
            cc: config.cc,
            timing: Arc::new(config.timing),
            keys: KeyStore::new(config.key_seed),
            chunk_size: config.chunk_size,
            endpoints: HashMap::new(),
            network: Network::new(config.adversary),
            free: vec![0.0; config.n],
            link_free: HashMap::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cc(&self) -> bool {
        self.cc
    }

    pub fn timing(&self) -> &TimingModel {
        &self.timing
    }

    /// Time at which `worker`'s engine is next idle.
    pub fn free_at(&self, worker: usize) -> f64 {
        self.free[worker]
    }

    /// Latest idle time over all workers.
    pub fn now(&self) -> f64 {
        self.free.iter().copied().fold(0.0, f64::max)
    }

    /// Holds every worker's engine until `t`.
    pub fn wait_until(&mut self, t: f64) {
        for f in &mut self.free {
            *f = f.max(t);
        }
    }

    /// True once the configured adversary has touched a message.
    pub fn tampered(&self) -> bool {
        self.network.tampered
    }

    fn endpoint(&mut self, local: usize, remote: usize) -> &mut SecureChannel {
        let (keys, timing, cc, chunk) = (&self.keys, &self.timing, self.cc, self.chunk_size);
        self.endpoints.entry((local as NodeId, remote as NodeId)).or_insert_with(|| {
            let mut ch = SecureChannel::new(keys, local as NodeId, remote as NodeId, timing.peer_link, cc, timing.clone());
            ch.chunk_size = chunk;
            ch
        })
    }

    pub(super) fn execute(
        &mut self,
        spec: OpSpec<'_>,
        mut data: Option<&mut [Vec<f32>]>,
    ) -> Result<CollectiveTrace, CollectiveError> {
        let mut trace = CollectiveTrace { events: Vec::new(), rounds: spec.rounds.len() };
        let start: Vec<f64> = self.free.clone();
        let logical = |len: usize| -> u64 {
            if spec.cost_len == 0 {
                0
            } else {
                (spec.logical_bytes as u128 * len as u128 / spec.cost_len as u128) as u64
            }
        };
        let fail = |round: &Round, worker: usize, peer: usize, source: ChannelError| CollectiveError::Channel {
            op: spec.name,
            phase: round.phase,
            step: round.step,
            worker: worker as NodeId,
            peer: peer as NodeId,
            source,
        };

        for (round, billed) in spec.rounds.iter().zip(spec.cost_rounds) {
            let mut arrivals = Vec::with_capacity(round.transfers.len());
            for (t, b) in round.transfers.iter().zip(&billed.transfers) {
                let bytes = logical(b.range.len());
                let cost = TransferCost { logical_bytes: bytes, reduction_bytes: spec.reduction_bytes };
                let t0 = self.free[t.from];
                let rec = match data.as_deref() {
                    Some(bufs) => {
                        let payload = to_wire(&bufs[t.from][t.range.clone()]);
                        let (msg, rec) = self
                            .endpoint(t.from, t.to)
                            .send(&payload, t0, cost)
                            .map_err(|e| fail(round, t.from, t.to, e))?;
                        self.network.transmit(msg);
                        rec
                    }
                    None => modeled_send(&self.timing, &self.timing.peer_link, self.cc, t0, cost),
                };
                arrivals.push(self.record_send(&mut trace, t.from, t.to, bytes, &rec));
            }
            for ((t, b), arrival) in round.transfers.iter().zip(&billed.transfers).zip(arrivals) {
                let bytes = logical(b.range.len());
                let cost = TransferCost { logical_bytes: bytes, reduction_bytes: spec.reduction_bytes };
                let t1 = arrival.max(self.free[t.to]);
                let rec = match data.as_deref_mut() {
                    Some(bufs) => {
                        let msg = self.network.take(t.from as NodeId, t.to as NodeId).map_err(|e| fail(round, t.to, t.from, e))?;
                        let (plain, rec) = self
                            .endpoint(t.to, t.from)
                            .recv(&msg, t1, cost)
                            .map_err(|e| fail(round, t.to, t.from, e))?;
                        let values = from_wire(&plain);
                        if values.len() != t.range.len() {
                            let e = ChannelError::Malformed(format!("expected {} floats, got {}", t.range.len(), values.len()));
                            return Err(fail(round, t.to, t.from, e));
                        }
                        apply(&mut bufs[t.to][t.range.clone()], &values, t.action);
                        rec
                    }
                    None => modeled_recv(&self.timing, self.cc, t1, cost),
                };
                self.record_recv(&mut trace, t.to, arrival, bytes, &rec, t.action);
            }
        }

        for (w, &idle_from) in start.iter().enumerate() {
            let id = w as NodeId;
            let first = trace.worker_events(id).map(|e| e.time_s).fold(f64::INFINITY, f64::min);
            let first = if first.is_finite() { first } else { idle_from };
            let last = trace.worker_events(id).map(TraceEvent::end_s).fold(first, f64::max);
            trace.events.push(TraceEvent {
                time_s: first,
                worker: id,
                kind: spec.marker,
                bytes: spec.logical_bytes,
                duration_s: last - first,
            });
        }
        trace.sort();
        Ok(trace)
    }

    // Returns the arrival time at the receiver.
    fn record_send(&mut self, trace: &mut CollectiveTrace, from: usize, to: usize, bytes: u64, rec: &TimingRecord) -> f64 {
        let w = from as NodeId;
        let t0 = rec.start_s;
        let sealed_at = t0 + rec.encrypt_s + rec.mac_s;
        if self.cc {
            trace.events.push(TraceEvent { time_s: t0, worker: w, kind: EventKind::Encrypt, bytes, duration_s: rec.encrypt_s });
            trace.events.push(TraceEvent {
                time_s: t0 + rec.encrypt_s,
                worker: w,
                kind: EventKind::Mac,
                bytes,
                duration_s: rec.mac_s,
            });
        }
        let link_free = self.link_free.entry((from, to)).or_insert(0.0);
        let link_start = sealed_at.max(*link_free);
        let arrival = link_start + rec.link_s;
        *link_free = arrival;
        trace.events.push(TraceEvent { time_s: link_start, worker: w, kind: EventKind::Send, bytes, duration_s: rec.link_s });
        self.free[from] = sealed_at;
        arrival
    }

    fn record_recv(&mut self, trace: &mut CollectiveTrace, to: usize, arrival: f64, bytes: u64, rec: &TimingRecord, action: Action) {
        let w = to as NodeId;
        trace.events.push(TraceEvent { time_s: arrival, worker: w, kind: EventKind::Recv, bytes, duration_s: 0.0 });
        let t1 = rec.start_s;
        if self.cc {
            trace.events.push(TraceEvent { time_s: t1, worker: w, kind: EventKind::Decrypt, bytes, duration_s: rec.decrypt_s });
            trace.events.push(TraceEvent {
                time_s: t1 + rec.decrypt_s,
                worker: w,
                kind: EventKind::Verify,
                bytes,
                duration_s: rec.verify_s,
            });
        }
        let t2 = t1 + rec.decrypt_s + rec.verify_s;
        let kind = match action {
            Action::Reduce => EventKind::Reduce,
            Action::Copy => EventKind::Copy,
        };
        let dur = self.timing.reduce_time(bytes);
        trace.events.push(TraceEvent { time_s: t2, worker: w, kind, bytes, duration_s: dur });
        self.free[to] = t2 + dur;
    }
}

pub(super) fn to_wire(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub(super) fn from_wire(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect()
}

fn apply(local: &mut [f32], received: &[f32], action: Action) {
    match action {
        Action::Reduce => {
            for (l, r) in local.iter_mut().zip(received) {
                *l += r;
            }
        }
        Action::Copy => local.copy_from_slice(received),
    }
}
