use serde::{Deserialize, Serialize};

use crate::channel::HOST;
use crate::collective::{count_crypto_ops, CollectiveTrace, EventKind};

/// Per-iteration cost breakdown. Every field can be recomputed from the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostReport {
    pub model: String,
    pub n: usize,
    pub cc: bool,
    pub cap_mb: f64,
    /// Collectives launched per iteration.
    pub k: usize,
    /// Seals plus opens on the busiest worker.
    pub crypto_events: usize,
    pub t_host_crypto_s: f64,
    pub t_pcie_s: f64,
    pub t_compute_s: f64,
    pub t_comm_exposed_s: f64,
    /// Device-side crypto on the busiest worker, input decryption included.
    pub t_crypto_s: f64,
    pub t_total_s: f64,
    /// `(t_host_crypto_s + t_crypto_s) / t_total_s`
    pub tee_share: f64,
}

fn is_collective(k: EventKind) -> bool {
    matches!(k, EventKind::AllReduce | EventKind::AllGather | EventKind::ReduceScatter)
}

fn is_device_crypto(k: EventKind) -> bool {
    k.is_crypto() || k == EventKind::DeviceDecrypt
}

impl CostReport {
    pub fn from_trace(model: &str, n: usize, cc: bool, cap_mb: f64, trace: &CollectiveTrace) -> Self {
        let host_sum = |kind: EventKind| trace.busy_s(HOST, |k| k == kind);
        let t_host_crypto_s = host_sum(EventKind::HostEncrypt);
        let t_pcie_s = host_sum(EventKind::Pcie);
        let t_compute_s = trace.busy_s(0, |k| matches!(k, EventKind::Forward | EventKind::Backward));
        let t_input_decrypt = trace.busy_s(0, |k| k == EventKind::DeviceDecrypt);
        let t_crypto_s = (0..n as u32).map(|w| trace.busy_s(w, is_device_crypto)).fold(0.0, f64::max);
        let t_total_s = trace.end_s();
        let t_comm_exposed_s = (t_total_s - t_host_crypto_s - t_pcie_s - t_input_decrypt - t_compute_s).max(0.0);
        let k = trace.worker_events(0).filter(|e| is_collective(e.kind)).count();
        let tee_share = if t_total_s > 0.0 { (t_host_crypto_s + t_crypto_s) / t_total_s } else { 0.0 };
        Self {
            model: model.to_string(),
            n,
            cc,
            cap_mb,
            k,
            crypto_events: count_crypto_ops(trace).max_worker_total(),
            t_host_crypto_s,
            t_pcie_s,
            t_compute_s,
            t_comm_exposed_s,
            t_crypto_s,
            t_total_s,
            tee_share,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
