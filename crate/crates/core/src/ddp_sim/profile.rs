use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{arch, SimError};

pub const MIB: u64 = 1 << 20;

/// Environment variable naming a directory of `<name>.json` profiles that
/// take precedence over the built-in ones.
pub const PRESET_DIR_ENV: &str = "TEESIM_PRESET_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelProfile {
    pub name: String,
    /// Gradient bytes per parameter tensor, front to back.
    pub layer_gradient_bytes: Vec<u64>,
    pub total_params: u64,
    pub per_device_batch: u64,
    pub input_bytes_per_sample: u64,
    pub forward_time_s: f64,
    pub backward_time_s: f64,
    /// Bucket cap the framework uses when none is given.
    pub framework_bucket_default_bytes: u64,
    /// Cap of the first bucket filled (the one holding the last layers).
    /// Zero means the regular cap applies to every bucket.
    #[serde(default)]
    pub first_bucket_bytes: u64,
    #[serde(default)]
    pub notes: String,
}

impl ModelProfile {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidProfile { name: self.name.clone(), reason: m });
        if self.layer_gradient_bytes.is_empty() {
            return bad("no layers".into());
        }
        let sum: u64 = self.layer_gradient_bytes.iter().sum();
        if sum != 4 * self.total_params {
            return bad(format!("gradient bytes {sum} != 4 x {} params", self.total_params));
        }
        if self.per_device_batch == 0 {
            return bad("per_device_batch must be at least 1".into());
        }
        for (what, v) in [("forward_time_s", self.forward_time_s), ("backward_time_s", self.backward_time_s)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{what} must be finite and non-negative, got {v}"));
            }
        }
        if self.framework_bucket_default_bytes == 0 {
            return bad("framework_bucket_default_bytes must be positive".into());
        }
        Ok(())
    }

    pub fn gradient_bytes(&self) -> u64 {
        self.layer_gradient_bytes.iter().sum()
    }

    /// Input bytes one worker consumes per iteration.
    pub fn batch_bytes(&self) -> u64 {
        self.per_device_batch * self.input_bytes_per_sample
    }

    pub fn compute_time_s(&self) -> f64 {
        self.forward_time_s + self.backward_time_s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, SimError> {
        let p: Self = serde_json::from_str(s).map_err(|e| SimError::Parse(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Per-model facts the presets are derived from.
#[derive(Debug, Clone, Copy)]
pub struct PresetSpec {
    pub name: &'static str,
    pub per_device_batch: u64,
    pub input_bytes_per_sample: u64,
}

pub const PRESETS: [PresetSpec; 6] = [
    // 3x224x224 fp32 images
    PresetSpec { name: "resnet50", per_device_batch: 1024, input_bytes_per_sample: 602_112 },
    PresetSpec { name: "resnet101", per_device_batch: 1024, input_bytes_per_sample: 602_112 },
    // input ids, token types and attention mask, 128 tokens of int64
    PresetSpec { name: "bert-base", per_device_batch: 128, input_bytes_per_sample: 3 * 128 * 8 },
    PresetSpec { name: "bert-large", per_device_batch: 128, input_bytes_per_sample: 3 * 128 * 8 },
    // input ids and attention mask, 1024 tokens of int64
    PresetSpec { name: "gpt2-large", per_device_batch: 1, input_bytes_per_sample: 2 * 1024 * 8 },
    PresetSpec { name: "gpt2-xl", per_device_batch: 1, input_bytes_per_sample: 2 * 1024 * 8 },
];

const EMBEDDED: [(&str, &str); 6] = [
    ("resnet50", include_str!("../../presets/resnet50.json")),
    ("resnet101", include_str!("../../presets/resnet101.json")),
    ("bert-base", include_str!("../../presets/bert-base.json")),
    ("bert-large", include_str!("../../presets/bert-large.json")),
    ("gpt2-large", include_str!("../../presets/gpt2-large.json")),
    ("gpt2-xl", include_str!("../../presets/gpt2-xl.json")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.name).collect()
}

/// Profile from the architecture alone, with the given compute times.
pub fn derive_profile(spec: &PresetSpec, forward_time_s: f64, backward_time_s: f64) -> ModelProfile {
    let tensors = arch::tensors(spec.name).expect("every preset has an architecture");
    ModelProfile {
        name: spec.name.to_string(),
        total_params: tensors.iter().sum(),
        layer_gradient_bytes: tensors.iter().map(|t| 4 * t).collect(),
        per_device_batch: spec.per_device_batch,
        input_bytes_per_sample: spec.input_bytes_per_sample,
        forward_time_s,
        backward_time_s,
        framework_bucket_default_bytes: 25 * MIB,
        first_bucket_bytes: MIB,
        notes: String::new(),
    }
}

/// Looks `name` up in `$TEESIM_PRESET_DIR` first, then among the built-in presets.
pub fn preset(name: &str) -> Result<ModelProfile, SimError> {
    if let Some(dir) = std::env::var_os(PRESET_DIR_ENV) {
        let path = PathBuf::from(dir).join(format!("{name}.json"));
        if path.is_file() {
            return ModelProfile::load(&path);
        }
    }
    match EMBEDDED.iter().find(|(n, _)| *n == name) {
        Some((_, text)) => ModelProfile::from_json(text),
        None => Err(SimError::UnknownModel(name.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    /// Layer indices in the order they were added (back to front).
    pub layers: Vec<usize>,
    pub total_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketPlan {
    pub cap_bytes: u64,
    pub buckets: Vec<Bucket>,
}

impl BucketPlan {
    pub fn k(&self) -> usize {
        self.buckets.len()
    }

    pub fn sizes(&self) -> Vec<u64> {
        self.buckets.iter().map(|b| b.total_bytes).collect()
    }

    /// Fraction of all gradient bytes produced once each bucket is complete.
    pub fn ready_fractions(&self) -> Vec<f64> {
        let total: u64 = self.buckets.iter().map(|b| b.total_bytes).sum();
        let mut acc = 0u64;
        self.buckets
            .iter()
            .map(|b| {
                acc += b.total_bytes;
                if total == 0 {
                    1.0
                } else {
                    acc as f64 / total as f64
                }
            })
            .collect()
    }
}

/// Greedy fill in reverse layer order. A bucket closes as soon as it holds
/// at least the cap, so it overshoots by at most its last layer. The first
/// bucket uses `first_bucket_bytes` as its cap when that is set.
pub fn bucketize(model: &ModelProfile, cap_bytes: u64) -> Result<BucketPlan, SimError> {
    if cap_bytes == 0 {
        return Err(SimError::InvalidParameter("bucket cap must be positive".into()));
    }
    let mut buckets = Vec::new();
    let mut cur = Bucket { layers: Vec::new(), total_bytes: 0 };
    for (i, &bytes) in model.layer_gradient_bytes.iter().enumerate().rev() {
        cur.layers.push(i);
        cur.total_bytes += bytes;
        let limit = if buckets.is_empty() && model.first_bucket_bytes > 0 {
            model.first_bucket_bytes.min(cap_bytes)
        } else {
            cap_bytes
        };
        if cur.total_bytes >= limit {
            buckets.push(std::mem::replace(&mut cur, Bucket { layers: Vec::new(), total_bytes: 0 }));
        }
    }
    if !cur.layers.is_empty() {
        buckets.push(cur);
    }
    Ok(BucketPlan { cap_bytes, buckets })
}
