use std::hash::{DefaultHasher, Hash, Hasher};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::channel::{Adversary, KeyStore, NodeId, SecureChannel, TransferCost, HOST};
use crate::collective::{Algo, Cluster, ClusterConfig, CollectiveTrace, EventKind, Payload, TraceEvent};
use crate::crypto::DEFAULT_CHUNK_SIZE;
use crate::timing::TimingModel;

use super::profile::{bucketize, ModelProfile, MIB};
use super::report::CostReport;
use super::SimError;

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n: usize,
    pub cc: bool,
    /// `None` uses the model's framework default.
    pub cap_bytes: Option<u64>,
    pub algo: Algo,
    pub timing: TimingModel,
    /// Run the data path on real buffers of this fraction of the true sizes.
    /// `None` computes timing only.
    pub scale: Option<f64>,
    pub seed: u64,
    pub adversary: Option<Adversary>,
    pub chunk_size: usize,
}

impl SimConfig {
    pub fn new(n: usize, cc: bool) -> Self {
        Self {
            n,
            cc,
            cap_bytes: None,
            algo: Algo::Ring,
            timing: TimingModel::default(),
            scale: None,
            seed: 0,
            adversary: None,
            chunk_size: DEFAULT_CHUNK_SIZE,
        }
    }

    pub fn with_cap_mb(mut self, cap_mb: f64) -> Self {
        self.cap_bytes = Some((cap_mb * MIB as f64).round() as u64);
        self
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.n == 0 {
            return Err(SimError::InvalidParameter("at least one worker is required".into()));
        }
        self.timing.validate()?;
        if let Some(s) = self.scale {
            if !(s > 0.0 && s <= 1.0) {
                return Err(SimError::InvalidParameter(format!("scale must be in (0, 1], got {s}")));
            }
        }
        if self.adversary.is_some() && self.scale.is_none() {
            return Err(SimError::InvalidParameter("an adversary needs a data run (set a scale)".into()));
        }
        if self.chunk_size == 0 || !self.chunk_size.is_multiple_of(16) {
            return Err(SimError::InvalidParameter("chunk size must be a positive multiple of 16".into()));
        }
        Ok(())
    }

    fn cluster(&self) -> Result<Cluster, SimError> {
        let mut c = ClusterConfig::new(self.n, self.cc);
        c.timing = self.timing.clone();
        c.key_seed = self.seed;
        c.adversary = self.adversary;
        c.chunk_size = self.chunk_size;
        Ok(Cluster::new(c)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Span {
    pub start_s: f64,
    pub end_s: f64,
}

impl Span {
    fn at(start_s: f64, len: f64) -> Self {
        Self { start_s, end_s: start_s + len }
    }

    pub fn len(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn is_empty(&self) -> bool {
        self.len() <= 0.0
    }

    fn overlap(&self, other: &Span) -> f64 {
        (self.end_s.min(other.end_s) - self.start_s.max(other.start_s)).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollectiveSpan {
    pub kind: EventKind,
    pub bytes: u64,
    /// When its inputs were available.
    pub ready_s: f64,
    /// Worker 0's span, from its first to its last event.
    pub span: Span,
    /// Worker 0's seal and open time inside the span.
    pub crypto_s: f64,
}

/// Per-phase timeline of one iteration. Phases before the first collective
/// are the same on every worker.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationTimeline {
    pub host_encrypt: Span,
    pub pcie: Span,
    pub device_decrypt: Span,
    pub forward: Span,
    pub backward: Span,
    pub collectives: Vec<CollectiveSpan>,
    /// Collective time on worker 0 that runs while backward compute is still going.
    pub overlap_s: f64,
    pub exposed_comm_s: f64,
    pub total_s: f64,
    /// Digest of every worker's final buffers, for data runs.
    pub result_digest: Option<u64>,
    #[serde(skip)]
    pub trace: CollectiveTrace,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub timeline: IterationTimeline,
    pub report: CostReport,
}

// Host encryption, PCIe copy and on-device decryption of the input batch.
struct Prologue {
    host_encrypt: Span,
    pcie: Span,
    device_decrypt: Span,
}

fn prologue(model: &ModelProfile, cfg: &SimConfig, trace: &mut CollectiveTrace) -> Result<Prologue, SimError> {
    let t = &cfg.timing;
    let global = model.batch_bytes() * cfg.n as u64;
    let host_encrypt = Span::at(0.0, if cfg.cc { t.host_encrypt_time(global) } else { 0.0 });
    let pcie = Span::at(host_encrypt.end_s, t.host_link.transfer_time(global));
    let dec = if cfg.cc { t.device_input_decrypt_time(model.batch_bytes()) } else { 0.0 };
    let device_decrypt = Span::at(pcie.end_s, dec);

    if cfg.cc {
        trace.events.push(ev(HOST, EventKind::HostEncrypt, global, host_encrypt));
    }
    trace.events.push(ev(HOST, EventKind::Pcie, global, pcie));
    if cfg.cc {
        for w in 0..cfg.n {
            trace.events.push(ev(w as NodeId, EventKind::DeviceDecrypt, model.batch_bytes(), device_decrypt));
        }
    }
    if let Some(scale) = cfg.scale {
        move_input(model, cfg, scale)?;
    }
    Ok(Prologue { host_encrypt, pcie, device_decrypt })
}

// Seals each worker's scaled input batch on the host and opens it on the device.
fn move_input(model: &ModelProfile, cfg: &SimConfig, scale: f64) -> Result<(), SimError> {
    let keys = KeyStore::new(cfg.seed);
    let timing = Arc::new(cfg.timing.clone());
    let len = ((model.batch_bytes() as f64 * scale) as usize).max(1);
    let cost = TransferCost { logical_bytes: model.batch_bytes(), reduction_bytes: model.batch_bytes() };
    for w in 0..cfg.n {
        let (mut host, mut dev) = SecureChannel::pair(&keys, HOST, w as NodeId, cfg.timing.host_link, cfg.cc, timing.clone());
        host.chunk_size = cfg.chunk_size;
        let mut input = vec![0u8; len];
        ChaCha8Rng::seed_from_u64(cfg.seed ^ (w as u64) << 32).fill(input.as_mut_slice());
        let (msg, _) = host.send(&input, 0.0, cost)?;
        let (plain, _) = dev.recv(&msg, 0.0, cost)?;
        if plain != input {
            return Err(SimError::Internal(format!("input batch of worker {w} changed in transit")));
        }
    }
    Ok(())
}

fn ev(worker: NodeId, kind: EventKind, bytes: u64, span: Span) -> TraceEvent {
    TraceEvent { time_s: span.start_s, worker, kind, bytes, duration_s: span.len() }
}

fn compute_events(trace: &mut CollectiveTrace, n: usize, kind: EventKind, bytes: u64, span: Span) {
    for w in 0..n {
        trace.events.push(ev(w as NodeId, kind, bytes, span));
    }
}

// Real buffers for one collective of `bytes` logical bytes.
struct DataPath {
    scale: f64,
    seed: u64,
    hasher: DefaultHasher,
}

impl DataPath {
    fn new(scale: f64, seed: u64) -> Self {
        Self { scale, seed, hasher: DefaultHasher::new() }
    }

    // Small integers, so every summation order gives the same exact result.
    fn buffers(&self, n: usize, bytes: u64, tag: u64) -> Vec<Vec<f32>> {
        let len = ((bytes as f64 * self.scale / 4.0) as usize).max(n);
        (0..n)
            .map(|w| {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(0x9E37_79B9).wrapping_add(tag << 8 | w as u64));
                (0..len).map(|_| rng.gen_range(-64i32..=64) as f32).collect()
            })
            .collect()
    }

    fn absorb(&mut self, bufs: &[Vec<f32>]) {
        for b in bufs {
            for v in b {
                v.to_bits().hash(&mut self.hasher);
            }
        }
    }
}

fn summed(bufs: &[Vec<f32>]) -> Vec<f32> {
    let mut out = vec![0.0f32; bufs[0].len()];
    for b in bufs {
        for (o, v) in out.iter_mut().zip(b) {
            *o += v;
        }
    }
    out
}

// Worker 0's marker and crypto time for the collective just run.
fn span_of(trace: &CollectiveTrace, marker: EventKind, ready_s: f64, bytes: u64) -> CollectiveSpan {
    let m = trace
        .worker_events(0)
        .find(|e| e.kind == marker)
        .expect("every collective marks worker 0");
    CollectiveSpan {
        kind: marker,
        bytes,
        ready_s,
        span: Span::at(m.time_s, m.duration_s),
        crypto_s: trace.busy_s(0, |k| k.is_crypto()),
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    model: &ModelProfile,
    cfg: &SimConfig,
    cap_mb: f64,
    pro: Prologue,
    forward: Span,
    backward: Span,
    collectives: Vec<CollectiveSpan>,
    mut trace: CollectiveTrace,
    data: Option<DataPath>,
) -> Simulation {
    trace.sort();
    let total_s = trace.end_s();
    let overlap_s = collectives.iter().map(|c| c.span.overlap(&backward)).sum();
    let timeline = IterationTimeline {
        host_encrypt: pro.host_encrypt,
        pcie: pro.pcie,
        device_decrypt: pro.device_decrypt,
        forward,
        backward,
        collectives,
        overlap_s,
        exposed_comm_s: (total_s - backward.end_s).max(0.0),
        total_s,
        result_digest: data.map(|d| d.hasher.finish()),
        trace,
    };
    let report = CostReport::from_trace(&model.name, cfg.n, cfg.cc, cap_mb, &timeline.trace);
    Simulation { timeline, report }
}

/// One data-parallel iteration: input path, forward, backward with bucketed
/// gradient all-reduces launched as buckets fill.
pub fn simulate_iteration(model: &ModelProfile, cfg: &SimConfig) -> Result<Simulation, SimError> {
    model.validate()?;
    cfg.validate()?;
    let cap = cfg.cap_bytes.unwrap_or(model.framework_bucket_default_bytes);
    let plan = bucketize(model, cap)?;
    let mut cluster = cfg.cluster()?;
    let mut trace = CollectiveTrace::default();
    let pro = prologue(model, cfg, &mut trace)?;

    let forward = Span::at(pro.device_decrypt.end_s, model.forward_time_s);
    let backward = Span::at(forward.end_s, model.backward_time_s);
    compute_events(&mut trace, cfg.n, EventKind::Forward, 0, forward);
    compute_events(&mut trace, cfg.n, EventKind::Backward, model.gradient_bytes(), backward);

    let mut data = cfg.scale.map(|s| DataPath::new(s, cfg.seed));
    let mut collectives = Vec::with_capacity(plan.k());
    for (j, (bucket, frac)) in plan.buckets.iter().zip(plan.ready_fractions()).enumerate() {
        let ready = backward.start_s + backward.len() * frac;
        cluster.wait_until(ready);
        let bytes = bucket.total_bytes;
        let t = match data.as_mut() {
            Some(d) => {
                let mut bufs = d.buffers(cfg.n, bytes, j as u64);
                let expected = summed(&bufs);
                let payload = Payload::Scaled { buffers: &mut bufs, logical_bytes: bytes };
                let t = run_all_reduce(&mut cluster, cfg, payload)?;
                if bufs.iter().any(|b| *b != expected) {
                    return Err(SimError::Internal(format!("bucket {j} did not reduce to the element-wise sum")));
                }
                d.absorb(&bufs);
                t
            }
            None => run_all_reduce(&mut cluster, cfg, Payload::Logical { bytes })?,
        };
        collectives.push(span_of(&t, EventKind::AllReduce, ready, bytes));
        trace.extend(t);
    }
    let cap_mb = cap as f64 / MIB as f64;
    Ok(finish(model, cfg, cap_mb, pro, forward, backward, collectives, trace, data))
}

fn run_all_reduce(cluster: &mut Cluster, cfg: &SimConfig, payload: Payload<'_>) -> Result<CollectiveTrace, SimError> {
    Ok(match cfg.algo {
        Algo::Ring => cluster.ring_all_reduce_with(payload)?,
        Algo::Tree => cluster.tree_all_reduce_with(payload, cfg.n)?,
    })
}

/// Layer ranges of the two sharded units, split by gradient bytes.
pub fn fsdp_units(model: &ModelProfile) -> [std::ops::Range<usize>; 2] {
    let half = model.gradient_bytes().div_ceil(2);
    let mut acc = 0;
    let mut cut = model.layer_gradient_bytes.len();
    for (i, b) in model.layer_gradient_bytes.iter().enumerate() {
        acc += b;
        if acc >= half {
            cut = i + 1;
            break;
        }
    }
    let cut = cut.min(model.layer_gradient_bytes.len() - 1).max(1);
    [0..cut, cut..model.layer_gradient_bytes.len()]
}

/// Fully sharded iteration with two units. Forward gathers both units; backward
/// re-gathers the first unit and reduce-scatters each unit's gradients once its
/// backward pass is done. Compute of a unit waits for its parameters.
pub fn simulate_fsdp_iteration(model: &ModelProfile, cfg: &SimConfig) -> Result<Simulation, SimError> {
    model.validate()?;
    cfg.validate()?;
    if cfg.n < 2 {
        return Err(SimError::InvalidParameter("a sharded run needs at least two workers".into()));
    }
    if model.layer_gradient_bytes.len() < 2 {
        return Err(SimError::InvalidParameter("a sharded run needs at least two layers".into()));
    }
    let units = fsdp_units(model);
    let unit_bytes: Vec<u64> = units.iter().map(|r| model.layer_gradient_bytes[r.clone()].iter().sum()).collect();
    let total = model.gradient_bytes() as f64;
    let share = |u: usize| unit_bytes[u] as f64 / total;

    let mut cluster = cfg.cluster()?;
    let mut trace = CollectiveTrace::default();
    let pro = prologue(model, cfg, &mut trace)?;
    let mut data = cfg.scale.map(|s| DataPath::new(s, cfg.seed));
    let mut collectives = Vec::new();
    let mut tag = 0u64;

    let mut run = |cluster: &mut Cluster, kind: EventKind, u: usize, ready: f64| -> Result<f64, SimError> {
        cluster.wait_until(ready);
        let bytes = unit_bytes[u];
        let go = |cluster: &mut Cluster, payload: Payload<'_>| -> Result<CollectiveTrace, SimError> {
            Ok(match kind {
                EventKind::AllGather => cluster.all_gather_with(payload)?,
                _ => cluster.reduce_scatter_with(payload)?,
            })
        };
        let t = match data.as_mut() {
            Some(d) => {
                let mut bufs = d.buffers(cfg.n, bytes, tag);
                let t = go(cluster, Payload::Scaled { buffers: &mut bufs, logical_bytes: bytes })?;
                d.absorb(&bufs);
                t
            }
            None => go(cluster, Payload::Logical { bytes })?,
        };
        tag += 1;
        collectives.push(span_of(&t, kind, ready, bytes));
        trace.extend(t);
        Ok(cluster.now())
    };

    let start = pro.device_decrypt.end_s;
    let ag0 = run(&mut cluster, EventKind::AllGather, 0, start)?;
    let ag1 = run(&mut cluster, EventKind::AllGather, 1, start)?;
    let f0 = Span::at(start.max(ag0), model.forward_time_s * share(0));
    let f1 = Span::at(f0.end_s.max(ag1), model.forward_time_s * share(1));

    // The last unit's parameters are still resident; the first is re-gathered.
    let b1 = Span::at(f1.end_s, model.backward_time_s * share(1));
    let ag0b = run(&mut cluster, EventKind::AllGather, 0, b1.start_s)?;
    run(&mut cluster, EventKind::ReduceScatter, 1, b1.end_s)?;
    let b0 = Span::at(b1.end_s.max(ag0b), model.backward_time_s * share(0));
    run(&mut cluster, EventKind::ReduceScatter, 0, b0.end_s)?;

    for (span, kind, u) in [(f0, EventKind::Forward, 0), (f1, EventKind::Forward, 1), (b1, EventKind::Backward, 1), (b0, EventKind::Backward, 0)] {
        compute_events(&mut trace, cfg.n, kind, unit_bytes[u], span);
    }
    let forward = Span { start_s: f0.start_s, end_s: f1.end_s };
    let backward = Span { start_s: b1.start_s, end_s: b0.end_s };
    Ok(finish(model, cfg, 0.0, pro, forward, backward, collectives, trace, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::AdversaryMode;
    use crate::ddp_sim::profile::preset;

    fn small() -> ModelProfile {
        ModelProfile {
            name: "small".into(),
            layer_gradient_bytes: vec![4 * MIB; 16],
            total_params: 16 * MIB,
            per_device_batch: 8,
            input_bytes_per_sample: 4096,
            forward_time_s: 0.1,
            backward_time_s: 0.2,
            framework_bucket_default_bytes: 10 * MIB,
            first_bucket_bytes: 0,
            notes: String::new(),
        }
    }

    #[test]
    fn crypto_event_law_on_presets() {
        let r50 = preset("resnet50").unwrap();
        let rep = simulate_iteration(&r50, &SimConfig::new(4, true)).unwrap().report;
        assert_eq!((rep.k, rep.crypto_events), (5, 60));
        for n in [2, 3, 5] {
            let rep = simulate_iteration(&small(), &SimConfig::new(n, true)).unwrap().report;
            assert_eq!(rep.crypto_events, 4 * rep.k * (n - 1));
        }
    }

    #[test]
    fn cc_off_has_no_crypto() {
        let sim = simulate_iteration(&small(), &SimConfig::new(4, false)).unwrap();
        let r = &sim.report;
        assert_eq!((r.crypto_events, r.t_crypto_s, r.t_host_crypto_s), (0, 0.0, 0.0));
        assert!(sim.timeline.overlap_s > 0.0);
    }

    #[test]
    fn host_encrypt_time() {
        let m = small();
        let cfg = SimConfig::new(2, true);
        let r = simulate_iteration(&m, &cfg).unwrap().report;
        assert_eq!(r.t_host_crypto_s, (2 * m.batch_bytes()) as f64 / cfg.timing.host_crypto_bw);
    }

    #[test]
    fn single_worker_is_host_path_plus_compute() {
        let m = small();
        let sim = simulate_iteration(&m, &SimConfig::new(1, true)).unwrap();
        let r = &sim.report;
        assert_eq!(r.crypto_events, 0);
        assert_eq!(r.t_comm_exposed_s, 0.0);
        let tl = &sim.timeline;
        assert!((r.t_total_s - (tl.device_decrypt.end_s + m.compute_time_s())).abs() < 1e-12);
    }

    #[test]
    fn data_run_matches_timing_run() {
        let m = small();
        let mut cfg = SimConfig::new(3, true);
        let logical = simulate_iteration(&m, &cfg).unwrap();
        cfg.scale = Some(1.0 / 256.0);
        let data = simulate_iteration(&m, &cfg).unwrap();
        assert_eq!(logical.report, data.report);
        cfg.cc = false;
        let off = simulate_iteration(&m, &cfg).unwrap();
        assert_eq!(off.timeline.result_digest, data.timeline.result_digest);
        assert!(data.timeline.result_digest.is_some());
    }

    #[test]
    fn tampered_bucket_aborts() {
        let mut cfg = SimConfig::new(3, true);
        cfg.scale = Some(1.0 / 256.0);
        cfg.adversary = Some(Adversary { mode: AdversaryMode::FlipBit { bit: 29 * 8 + 3 }, from: 0, to: 1, message_index: 5 });
        match simulate_iteration(&small(), &cfg) {
            Err(SimError::Aborted(e)) => assert!(e.to_string().contains("chunk 0"), "{e}"),
            other => panic!("expected abort, got {other:?}"),
        }
        cfg.scale = None;
        assert!(matches!(simulate_iteration(&small(), &cfg), Err(SimError::InvalidParameter(_))));
    }

    #[test]
    fn fsdp_schedule() {
        let xl = preset("gpt2-xl").unwrap();
        let sim = simulate_fsdp_iteration(&xl, &SimConfig::new(2, true)).unwrap();
        let kinds: Vec<_> = sim.timeline.collectives.iter().map(|c| c.kind).collect();
        use EventKind::*;
        assert_eq!(kinds, vec![AllGather, AllGather, AllGather, ReduceScatter, ReduceScatter]);
        let order: Vec<_> = sim
            .timeline
            .trace
            .worker_events(0)
            .filter(|e| matches!(e.kind, AllGather | ReduceScatter))
            .map(|e| e.kind)
            .collect();
        assert_eq!(order, kinds);
        assert_eq!(sim.report.k, 5);
        assert!(simulate_fsdp_iteration(&xl, &SimConfig::new(1, true)).is_err());
    }

    #[test]
    fn fsdp_data_is_crypto_transparent() {
        let mut cfg = SimConfig::new(2, true);
        cfg.scale = Some(1.0 / 1024.0);
        let on = simulate_fsdp_iteration(&small(), &cfg).unwrap();
        cfg.cc = false;
        let off = simulate_fsdp_iteration(&small(), &cfg).unwrap();
        assert_eq!(on.timeline.result_digest, off.timeline.result_digest);
        assert!(on.report.t_total_s > off.report.t_total_s);
    }

    #[test]
    fn deterministic_report() {
        let xl = preset("gpt2-xl").unwrap();
        let a = simulate_iteration(&xl, &SimConfig::new(4, true)).unwrap().report.to_json();
        let b = simulate_iteration(&xl, &SimConfig::new(4, true)).unwrap().report.to_json();
        assert_eq!(a, b);
    }
}
