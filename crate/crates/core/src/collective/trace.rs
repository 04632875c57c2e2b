//! Event log with simulated timestamps, plus CSV/JSON export and op counting.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::channel::{NodeId, HOST};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Encrypt,
    Mac,
    Send,
    Recv,
    Decrypt,
    Verify,
    Reduce,
    Copy,
    // Span markers, one per worker per collective.
    AllReduce,
    AllGather,
    ReduceScatter,
    // Iteration phases.
    HostEncrypt,
    Pcie,
    DeviceDecrypt,
    Forward,
    Backward,
}

impl EventKind {
    pub fn is_crypto(self) -> bool {
        matches!(self, EventKind::Encrypt | EventKind::Mac | EventKind::Decrypt | EventKind::Verify)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time_s: f64,
    #[serde(with = "worker_name")]
    pub worker: NodeId,
    pub kind: EventKind,
    pub bytes: u64,
    pub duration_s: f64,
}

impl TraceEvent {
    pub fn end_s(&self) -> f64 {
        self.time_s + self.duration_s
    }
}

// The host shows up as "host" rather than u32::MAX.
mod worker_name {
    use super::{NodeId, HOST};
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(w: &NodeId, s: S) -> Result<S::Ok, S::Error> {
        if *w == HOST {
            s.serialize_str("host")
        } else {
            s.serialize_u32(*w)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NodeId, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Id(u32),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Id(id) => Ok(id),
            Raw::Name(n) if n == "host" => Ok(HOST),
            Raw::Name(n) => n.parse().map_err(|_| D::Error::custom(format!("bad worker `{n}`"))),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("trace json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("trace io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CollectiveTrace {
    pub events: Vec<TraceEvent>,
    /// Communication rounds executed.
    pub rounds: usize,
}

impl CollectiveTrace {
    /// Stable sort by time, so each worker's events are non-decreasing.
    pub fn sort(&mut self) {
        self.events.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
    }

    pub fn extend(&mut self, other: CollectiveTrace) {
        self.events.extend(other.events);
        self.rounds += other.rounds;
    }

    pub fn end_s(&self) -> f64 {
        self.events.iter().map(TraceEvent::end_s).fold(0.0, f64::max)
    }

    pub fn worker_events(&self, worker: NodeId) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(move |e| e.worker == worker)
    }

    pub fn count(&self, worker: NodeId, kind: EventKind) -> usize {
        self.worker_events(worker).filter(|e| e.kind == kind).count()
    }

    pub fn busy_s(&self, worker: NodeId, pred: impl Fn(EventKind) -> bool) -> f64 {
        self.worker_events(worker).filter(|e| pred(e.kind)).map(|e| e.duration_s).sum()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), TraceError> {
        let mut out = csv::Writer::from_writer(w);
        for e in &self.events {
            out.serialize(e)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, TraceError> {
        let mut rdr = csv::Reader::from_reader(r);
        let events = rdr.deserialize().collect::<Result<Vec<TraceEvent>, _>>()?;
        Ok(Self { events, rounds: 0 })
    }

    pub fn to_json(&self) -> Result<String, TraceError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, TraceError> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CryptoOpCount {
    pub seals: usize,
    pub opens: usize,
    /// `worker -> (seals, opens)`
    pub per_worker: BTreeMap<NodeId, (usize, usize)>,
}

impl CryptoOpCount {
    pub fn worker_total(&self, worker: NodeId) -> usize {
        self.per_worker.get(&worker).map_or(0, |(s, o)| s + o)
    }

    pub fn max_worker_total(&self) -> usize {
        self.per_worker.values().map(|(s, o)| s + o).max().unwrap_or(0)
    }
}

/// A seal is one `encrypt` event, an open one `decrypt` event.
pub fn count_crypto_ops(trace: &CollectiveTrace) -> CryptoOpCount {
    let mut c = CryptoOpCount::default();
    for e in &trace.events {
        let slot = match e.kind {
            EventKind::Encrypt => 0,
            EventKind::Decrypt => 1,
            _ => continue,
        };
        let entry = c.per_worker.entry(e.worker).or_default();
        if slot == 0 {
            entry.0 += 1;
            c.seals += 1;
        } else {
            entry.1 += 1;
            c.opens += 1;
        }
    }
    c
}
