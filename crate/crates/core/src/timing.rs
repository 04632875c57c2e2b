//! Simulated time: link transfer, device seal/open cost and host-side crypto.
//!
//! Nothing here sleeps or reads a clock. All durations are seconds computed
//! from byte counts, so a run is reproducible bit for bit.

use serde::{Deserialize, Serialize};

/// Relative seal+open cost per transfer, keyed by reduction size in MB (1e6 bytes).
pub const PER_TRANSFER_COST_POINTS: [(f64, f64); 5] =
    [(44.0, 1.0), (123.0, 1.08), (245.9, 1.24), (430.4, 1.60), (860.7, 2.69)];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TimingError {
    #[error("invalid timing parameter {name}: {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("cost curve needs at least two points with strictly increasing sizes")]
    BadCurve,
    #[error("cost curve must be non-decreasing (point {0})")]
    DecreasingCurve(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    /// CPU to accelerator over PCIe.
    HostLink,
    /// Accelerator to accelerator over NVLink.
    PeerLink,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub kind: LinkKind,
    /// Bytes per second.
    pub bandwidth: f64,
    /// Seconds.
    pub latency: f64,
}

impl LinkSpec {
    pub fn new(kind: LinkKind, bandwidth: f64, latency: f64) -> Result<Self, TimingError> {
        let spec = Self { kind, bandwidth, latency };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), TimingError> {
        positive("bandwidth", self.bandwidth)?;
        if !(self.latency >= 0.0 && self.latency.is_finite()) {
            return Err(TimingError::InvalidParameter { name: "latency", value: self.latency });
        }
        Ok(())
    }

    pub fn transfer_time(&self, bytes: u64) -> f64 {
        self.latency + bytes as f64 / self.bandwidth
    }
}

fn positive(name: &'static str, value: f64) -> Result<(), TimingError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(TimingError::InvalidParameter { name, value })
    }
}

/// Piecewise-linear curve through measured points, extended linearly past both ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostCurve {
    /// `(size_mb, relative_cost)`, sizes strictly increasing.
    pub points: Vec<(f64, f64)>,
    /// Below the first point the curve never drops under this fraction of its first value.
    pub floor_fraction: f64,
}

impl Default for CostCurve {
    fn default() -> Self {
        Self { points: PER_TRANSFER_COST_POINTS.to_vec(), floor_fraction: 0.1 }
    }
}

impl CostCurve {
    pub fn new(points: Vec<(f64, f64)>, floor_fraction: f64) -> Result<Self, TimingError> {
        let c = Self { points, floor_fraction };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), TimingError> {
        if self.points.len() < 2 || self.points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(TimingError::BadCurve);
        }
        for (i, &(x, y)) in self.points.iter().enumerate() {
            positive("curve size", x)?;
            positive("curve cost", y)?;
            if i > 0 && y < self.points[i - 1].1 {
                return Err(TimingError::DecreasingCurve(i));
            }
        }
        positive("floor_fraction", self.floor_fraction)?;
        Ok(())
    }

    /// Flat curve, every transfer costs the same.
    pub fn flat() -> Self {
        Self { points: vec![(1.0, 1.0), (2.0, 1.0)], floor_fraction: 1.0 }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            points: self.points.iter().map(|&(x, y)| (x, y * factor)).collect(),
            floor_fraction: self.floor_fraction,
        }
    }

    pub fn eval(&self, size_mb: f64) -> f64 {
        let p = &self.points;
        let seg = |i: usize| {
            let (x0, y0) = p[i];
            let (x1, y1) = p[i + 1];
            y0 + (y1 - y0) * (size_mb - x0) / (x1 - x0)
        };
        if size_mb <= p[0].0 {
            return seg(0).max(p[0].1 * self.floor_fraction);
        }
        match p.iter().position(|&(x, _)| size_mb <= x) {
            Some(i) => seg(i - 1),
            None => seg(p.len() - 2),
        }
    }

    pub fn eval_bytes(&self, bytes: u64) -> f64 {
        self.eval(bytes as f64 / 1e6)
    }
}

/// Where crypto durations come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingMode {
    /// Durations from the cost curve. Deterministic.
    #[default]
    Modeled,
    /// Wall time of the real seal/open calls, scaled up to logical size.
    Measured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingModel {
    /// CPU-side AES-GCM throughput for input batches, bytes/s.
    pub host_crypto_bw: f64,
    /// Device-side decrypt of the input batch, bytes/s.
    pub device_input_decrypt_bw: f64,
    /// Seconds for one seal plus one open of a transfer at cost 1.0.
    pub seal_open_unit_s: f64,
    /// Relative seal+open cost as a function of the reduction (bucket) size.
    pub auth_curve: CostCurve,
    /// Share of a seal spent in CTR encryption; the rest is MAC. Same split for open.
    pub enc_fraction: f64,
    /// Element-wise reduction throughput, bytes/s.
    pub reduce_bw: f64,
    pub host_link: LinkSpec,
    pub peer_link: LinkSpec,
    pub mode: TimingMode,
}

impl Default for TimingModel {
    fn default() -> Self {
        Self {
            host_crypto_bw: 1.82e9,
            device_input_decrypt_bw: 50e9,
            seal_open_unit_s: 8e-3,
            auth_curve: CostCurve::default(),
            enc_fraction: 0.25,
            reduce_bw: 1e12,
            host_link: LinkSpec { kind: LinkKind::HostLink, bandwidth: 25e9, latency: 2e-6 },
            peer_link: LinkSpec { kind: LinkKind::PeerLink, bandwidth: 150e9, latency: 5e-6 },
            mode: TimingMode::Modeled,
        }
    }
}

impl TimingModel {
    pub fn validate(&self) -> Result<(), TimingError> {
        positive("host_crypto_bw", self.host_crypto_bw)?;
        positive("device_input_decrypt_bw", self.device_input_decrypt_bw)?;
        positive("seal_open_unit_s", self.seal_open_unit_s)?;
        positive("reduce_bw", self.reduce_bw)?;
        if !(self.enc_fraction > 0.0 && self.enc_fraction < 1.0) {
            return Err(TimingError::InvalidParameter { name: "enc_fraction", value: self.enc_fraction });
        }
        self.auth_curve.validate()?;
        self.host_link.validate()?;
        self.peer_link.validate()
    }

    /// Seconds for one seal on a transfer that belongs to a reduction of `reduction_bytes`.
    /// An open costs the same.
    pub fn seal_time(&self, reduction_bytes: u64) -> f64 {
        0.5 * self.seal_open_unit_s * self.auth_curve.eval_bytes(reduction_bytes)
    }

    pub fn open_time(&self, reduction_bytes: u64) -> f64 {
        self.seal_time(reduction_bytes)
    }

    /// Splits one seal or open into (cipher, mac) parts.
    pub fn split(&self, op_s: f64) -> (f64, f64) {
        let enc = op_s * self.enc_fraction;
        (enc, op_s - enc)
    }

    pub fn reduce_time(&self, bytes: u64) -> f64 {
        bytes as f64 / self.reduce_bw
    }

    pub fn host_encrypt_time(&self, bytes: u64) -> f64 {
        bytes as f64 / self.host_crypto_bw
    }

    pub fn device_input_decrypt_time(&self, bytes: u64) -> f64 {
        bytes as f64 / self.device_input_decrypt_bw
    }

    pub fn link(&self, kind: LinkKind) -> &LinkSpec {
        match kind {
            LinkKind::HostLink => &self.host_link,
            LinkKind::PeerLink => &self.peer_link,
        }
    }
}
