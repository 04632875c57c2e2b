//! Scenario files and the adversary spec syntax.
//!
//! Sizes given in MB are binary megabytes (MiB).

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use teesim::channel::{Adversary, AdversaryMode, NodeId};
use teesim::ddp_sim::{preset, ModelProfile, MIB};
use teesim::timing::TimingModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AlgoChoice {
    Ring,
    Tree,
    Fsdp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Toggle {
    On,
    Off,
}

/// `"default"` or a size in MiB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cap {
    Mb(f64),
    Named(DefaultCap),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefaultCap {
    Default,
}

impl Cap {
    pub fn parse(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("default") {
            return Ok(Cap::Named(DefaultCap::Default));
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(Cap::Mb(v)),
            _ => Err(format!("bad bucket cap `{s}`; expected `default` or a positive size in MB")),
        }
    }

    /// Size in MiB, with `default` resolved against the model.
    pub fn resolve(self, model: &ModelProfile) -> f64 {
        match self {
            Cap::Mb(v) => v,
            Cap::Named(_) => model.framework_bucket_default_bytes as f64 / MIB as f64,
        }
    }

    pub fn label(self) -> String {
        match self {
            Cap::Mb(v) => format!("{v}"),
            Cap::Named(_) => "default".into(),
        }
    }
}

/// Everything a run or sweep needs. Every field may come from a JSON file;
/// command-line flags override the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Preset name.
    pub model: Option<String>,
    /// Path to a profile JSON; takes precedence over `model`.
    pub profile: Option<PathBuf>,
    pub n_workers: usize,
    pub cc: Toggle,
    pub algo: AlgoChoice,
    pub cap_mb: Cap,
    /// Candidate caps for `sweep`.
    pub caps: Vec<Cap>,
    pub timing: TimingModel,
    /// Adversary spec, see [`parse_adversary`].
    pub adversary: Option<String>,
    pub seed: u64,
    /// Fraction of the true buffer sizes moved through real crypto. Zero runs timing only.
    pub scale_factor: f64,
    pub report_path: Option<PathBuf>,
    pub trace_path: Option<PathBuf>,
    pub trace_json_path: Option<PathBuf>,
    pub sweep_path: Option<PathBuf>,
    /// Calibration table for the tuner; the bundled one when absent.
    pub calibration: Option<PathBuf>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            model: Some("gpt2-xl".into()),
            profile: None,
            n_workers: 2,
            cc: Toggle::On,
            algo: AlgoChoice::Ring,
            cap_mb: Cap::Named(DefaultCap::Default),
            caps: ["default", "100", "200", "400", "800"].iter().map(|c| Cap::parse(c).unwrap()).collect(),
            timing: TimingModel::default(),
            adversary: None,
            seed: 0,
            scale_factor: 1.0 / 64.0,
            report_path: None,
            trace_path: None,
            trace_json_path: None,
            sweep_path: None,
            calibration: None,
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("scenario config: {e}"))
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_workers == 0 {
            return Err("n_workers must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.scale_factor) {
            return Err(format!("scale_factor must be in [0, 1], got {}", self.scale_factor));
        }
        if self.model.is_none() && self.profile.is_none() {
            return Err("either model or profile is required".into());
        }
        if let Cap::Mb(v) = self.cap_mb {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("cap_mb must be positive, got {v}"));
            }
        }
        self.timing.validate().map_err(|e| e.to_string())?;
        if let Some(a) = &self.adversary {
            parse_adversary(a)?;
            if self.scale_factor == 0.0 {
                return Err("an adversary acts on real bytes; scale_factor must be positive".into());
            }
        }
        Ok(())
    }

    pub fn load_model(&self) -> Result<ModelProfile, String> {
        match (&self.profile, &self.model) {
            (Some(path), _) => ModelProfile::load(path).map_err(|e| e.to_string()),
            (None, Some(name)) => preset(name).map_err(|e| e.to_string()),
            (None, None) => Err("either model or profile is required".into()),
        }
    }

    pub fn parsed_adversary(&self) -> Result<Option<Adversary>, String> {
        self.adversary.as_deref().map(parse_adversary).transpose()
    }

    pub fn scale(&self) -> Option<f64> {
        (self.scale_factor > 0.0).then_some(self.scale_factor)
    }
}

/// `flip:<from>-<to>:<msg>:<bit>`, `replay:<from>-<to>:<msg>` or
/// `reorder:<from>-<to>:<msg>`. `<msg>` is the zero-based message index on
/// the `from -> to` link and `<bit>` the bit offset into the wire message.
pub fn parse_adversary(spec: &str) -> Result<Adversary, String> {
    let bad = || format!("bad adversary `{spec}`; expected flip:A-B:MSG:BIT, replay:A-B:MSG or reorder:A-B:MSG");
    let parts: Vec<&str> = spec.split(':').collect();
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad());
    let link = |s: &str| -> Result<(NodeId, NodeId), String> {
        let (a, b) = s.split_once('-').ok_or_else(bad)?;
        let id = |x: &str| x.trim().parse::<NodeId>().map_err(|_| bad());
        Ok((id(a)?, id(b)?))
    };
    let (mode, (from, to), msg) = match parts.as_slice() {
        ["flip", l, m, b] => (AdversaryMode::FlipBit { bit: num(b)? }, link(l)?, num(m)?),
        ["replay", l, m] => (AdversaryMode::Replay, link(l)?, num(m)?),
        ["reorder", l, m] => (AdversaryMode::Reorder, link(l)?, num(m)?),
        _ => return Err(bad()),
    };
    Ok(Adversary { mode, from, to, message_index: msg })
}
