//! Closed-form crypto cost, the bucket-cap tuner, slowdown tables and the
//! compute-time back-solve used to build the presets.

use serde::{Deserialize, Serialize};

use crate::ddp_sim::{
    bucketize, derive_profile, simulate_iteration, ModelProfile, PresetSpec, SimConfig, SimError, MIB, PRESETS,
};
use crate::timing::{CostCurve, TimingError, TimingModel};

pub const CALIBRATION_JSON: &str = include_str!("../../data/calibration.json");

#[derive(Debug, thiserror::Error)]
pub enum CostError {
    #[error("no candidate caps given")]
    EmptyCandidates,
    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),
    #[error("calibration parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Timing(#[from] TimingError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationRow {
    pub label: String,
    pub cap_mb: f64,
    pub mean_reduction_mb: f64,
    pub num_transfers: usize,
    /// Relative to the default row.
    pub per_transfer_cost: f64,
}

/// Measured transfer counts and per-transfer costs for one model, per cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationTable {
    pub model: String,
    /// Worker count the rows were measured at.
    pub n: usize,
    pub rows: Vec<CalibrationRow>,
}

impl Default for CalibrationTable {
    fn default() -> Self {
        Self::from_json(CALIBRATION_JSON).expect("bundled calibration is valid")
    }
}

impl CalibrationTable {
    pub fn from_json(s: &str) -> Result<Self, CostError> {
        let t: Self = serde_json::from_str(s)?;
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), CostError> {
        let bad = |m: &str| Err(CostError::InvalidCalibration(m.to_string()));
        if self.rows.len() < 2 {
            return bad("need at least two rows");
        }
        for w in self.rows.windows(2) {
            if w[1].cap_mb <= w[0].cap_mb {
                return bad("caps must be strictly increasing");
            }
            if w[1].num_transfers >= w[0].num_transfers {
                return bad("transfer counts must strictly decrease as the cap grows");
            }
            if w[1].mean_reduction_mb <= w[0].mean_reduction_mb {
                return bad("mean reduction sizes must increase with the cap");
            }
            if w[1].per_transfer_cost < w[0].per_transfer_cost {
                return bad("per-transfer cost must not decrease with size");
            }
        }
        if self.rows.iter().any(|r| !(r.per_transfer_cost > 0.0 && r.mean_reduction_mb > 0.0)) {
            return bad("sizes and costs must be positive");
        }
        Ok(())
    }

    /// Per-transfer cost as a function of reduction size in MB.
    pub fn curve(&self) -> CostCurve {
        CostCurve {
            points: self.rows.iter().map(|r| (r.mean_reduction_mb, r.per_transfer_cost)).collect(),
            floor_fraction: 0.1,
        }
    }

    pub fn row(&self, cap_mb: f64) -> Option<&CalibrationRow> {
        self.rows.iter().find(|r| (r.cap_mb - cap_mb).abs() < 1e-9)
    }

    /// Relative crypto cost of each row for `n` workers.
    pub fn row_cost(&self, row: &CalibrationRow, n: usize) -> f64 {
        predict_cc_cost(n, &vec![row.mean_reduction_mb; row.num_transfers], |_| row.per_transfer_cost)
    }
}

/// Relative crypto cost of one iteration: every bucket pays its per-transfer
/// cost for a seal and an open in each of the `2(n-1)` ring steps.
pub fn predict_cc_cost(n: usize, bucket_mb: &[f64], per_transfer_cost: impl Fn(f64) -> f64) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let steps = 2.0 * (n - 1) as f64;
    bucket_mb.iter().map(|&mb| per_transfer_cost(mb) * steps * 2.0).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateCost {
    pub cap_mb: f64,
    pub k: usize,
    pub predicted_cc_cost: f64,
    pub predicted_total_s: f64,
    /// True when `k` and sizes came from the calibration table.
    pub calibrated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneResult {
    pub best_cap_mb: f64,
    pub candidates: Vec<CandidateCost>,
    /// Predicted crypto cost at the framework default cap over the best cap's.
    pub cost_reduction_vs_default: f64,
}

/// Predicted cost of one cap: `(k, relative crypto cost, seconds, calibrated)`.
fn candidate(
    model: &ModelProfile,
    n: usize,
    cap_mb: f64,
    calibration: &CalibrationTable,
    timing: &TimingModel,
) -> Result<CandidateCost, CostError> {
    let (k, cc, calibrated) = match calibration.row(cap_mb).filter(|_| calibration.model == model.name) {
        Some(row) => (row.num_transfers, calibration.row_cost(row, n), true),
        None => {
            let plan = bucketize(model, (cap_mb * MIB as f64).round() as u64)?;
            let mb: Vec<f64> = plan.sizes().iter().map(|&b| b as f64 / 1e6).collect();
            (plan.k(), predict_cc_cost(n, &mb, |x| timing.auth_curve.eval(x)), false)
        }
    };
    let link = if n > 1 {
        2.0 * (n - 1) as f64 / n as f64 * model.gradient_bytes() as f64 / timing.peer_link.bandwidth
    } else {
        0.0
    };
    let total = model.compute_time_s() + link + timing.seal_open_unit_s / 2.0 * cc;
    Ok(CandidateCost { cap_mb, k, predicted_cc_cost: cc, predicted_total_s: total, calibrated })
}

/// Picks the cap with the lowest predicted iteration time. Ties go to the smaller cap.
pub fn tune_bucket(
    model: &ModelProfile,
    n: usize,
    candidate_caps_mb: &[f64],
    calibration: &CalibrationTable,
    timing: &TimingModel,
) -> Result<TuneResult, CostError> {
    if candidate_caps_mb.is_empty() {
        return Err(CostError::EmptyCandidates);
    }
    timing.validate()?;
    let mut caps = candidate_caps_mb.to_vec();
    caps.sort_by(f64::total_cmp);
    caps.dedup();
    let candidates = caps
        .iter()
        .map(|&c| candidate(model, n, c, calibration, timing))
        .collect::<Result<Vec<_>, _>>()?;
    let mut best = &candidates[0];
    for c in &candidates[1..] {
        if c.predicted_total_s < best.predicted_total_s * (1.0 - 1e-12) {
            best = c;
        }
    }
    let default_mb = model.framework_bucket_default_bytes as f64 / MIB as f64;
    let default = candidate(model, n, default_mb, calibration, timing)?;
    let cost_reduction_vs_default = if best.predicted_cc_cost > 0.0 {
        default.predicted_cc_cost / best.predicted_cc_cost
    } else {
        1.0
    };
    Ok(TuneResult { best_cap_mb: best.cap_mb, candidates: candidates.clone(), cost_reduction_vs_default })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlowdownRow {
    pub model: String,
    pub n: usize,
    pub cap_mb: f64,
    pub t_cc_on_s: f64,
    pub t_cc_off_s: f64,
    pub ratio: f64,
    pub tee_share: f64,
}

/// cc-on over cc-off iteration time for every `(n, cap)` pair. A cap of
/// `None` is the framework default.
pub fn predict_slowdown(
    model: &ModelProfile,
    ns: &[usize],
    caps_mb: &[Option<f64>],
    timing: &TimingModel,
) -> Result<Vec<SlowdownRow>, CostError> {
    let mut rows = Vec::new();
    for &n in ns {
        for &cap in caps_mb {
            let cfg = |cc: bool| {
                let mut c = SimConfig::new(n, cc);
                c.timing = timing.clone();
                match cap {
                    Some(mb) => c.with_cap_mb(mb),
                    None => c,
                }
            };
            let on = simulate_iteration(model, &cfg(true))?.report;
            let off = simulate_iteration(model, &cfg(false))?.report;
            rows.push(SlowdownRow {
                model: model.name.clone(),
                n,
                cap_mb: on.cap_mb,
                t_cc_on_s: on.t_total_s,
                t_cc_off_s: off.t_total_s,
                ratio: on.t_total_s / off.t_total_s,
                tee_share: on.tee_share,
            });
        }
    }
    Ok(rows)
}

/// Share of compute spent in the forward pass; backward is the rest.
pub const FORWARD_SHARE: f64 = 1.0 / 3.0;

fn with_compute(model: &ModelProfile, compute_s: f64) -> ModelProfile {
    let mut m = model.clone();
    m.forward_time_s = compute_s * FORWARD_SHARE;
    m.backward_time_s = compute_s - m.forward_time_s;
    m
}

fn ratio_at(model: &ModelProfile, n: usize, compute_s: f64, timing: &TimingModel) -> Result<f64, CostError> {
    let m = with_compute(model, compute_s);
    let rows = predict_slowdown(&m, &[n], &[None], timing)?;
    Ok(rows[0].ratio)
}

/// Per-iteration compute time whose simulated default-cap slowdowns best
/// match `targets` (`(n, ratio)` pairs) in log space.
pub fn calibrate_compute_time(
    model: &ModelProfile,
    targets: &[(usize, f64)],
    timing: &TimingModel,
) -> Result<f64, CostError> {
    let loss = |t: f64| -> Result<f64, CostError> {
        let mut s = 0.0;
        for &(n, target) in targets {
            let r = ratio_at(model, n, t, timing)?;
            s += (r.ln() - target.ln()).powi(2);
        }
        Ok(s)
    };
    // Coarse log grid, then golden-section search on ln(t) around the best point.
    let grid: Vec<f64> = (0..=60).map(|i| -4.0 + 7.0 * i as f64 / 60.0).collect();
    let mut best = 0;
    let mut best_loss = f64::INFINITY;
    for (i, &x) in grid.iter().enumerate() {
        let l = loss(10f64.powf(x))?;
        if l < best_loss {
            best_loss = l;
            best = i;
        }
    }
    let ln10 = std::f64::consts::LN_10;
    let mut lo = grid[best.saturating_sub(1)] * ln10;
    let mut hi = grid[(best + 1).min(grid.len() - 1)] * ln10;
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - g * (hi - lo);
    let mut b = lo + g * (hi - lo);
    let mut la = loss(a.exp())?;
    let mut lb = loss(b.exp())?;
    for _ in 0..60 {
        if la <= lb {
            hi = b;
            b = a;
            lb = la;
            a = hi - g * (hi - lo);
            la = loss(a.exp())?;
        } else {
            lo = a;
            a = b;
            la = lb;
            b = lo + g * (hi - lo);
            lb = loss(b.exp())?;
        }
    }
    Ok(((lo + hi) / 2.0).exp())
}

/// Slowdown targets the presets are fitted to.
pub fn preset_targets(name: &str) -> &'static [(usize, f64)] {
    match name {
        "resnet50" => &[(2, 1.97), (4, 3.29)],
        "gpt2-large" => &[(2, 16.78), (4, 42.36)],
        "gpt2-xl" => &[(4, 41.64), (8, 81.8)],
        _ => &[],
    }
}

// Forward GFLOPs per 224x224 image.
const RESNET101_OVER_RESNET50: f64 = 7.8 / 4.1;
const BERT_SEQ_LEN: f64 = 128.0;
const GPT2_SEQ_LEN: f64 = 1024.0;

fn spec(name: &str) -> &'static PresetSpec {
    PRESETS.iter().find(|p| p.name == name).expect("known preset")
}

fn fitted(name: &str, timing: &TimingModel) -> Result<(ModelProfile, f64), CostError> {
    let base = derive_profile(spec(name), 0.0, 0.0);
    let t = calibrate_compute_time(&base, preset_targets(name), timing)?;
    Ok((base, t))
}

fn finish_preset(base: ModelProfile, compute_s: f64, note: String) -> ModelProfile {
    let mut m = with_compute(&base, compute_s);
    m.notes = note;
    m
}

/// Builds every preset: layer sizes from the architecture, compute times
/// back-solved against the target slowdowns.
pub fn calibrate_presets(timing: &TimingModel) -> Result<Vec<ModelProfile>, CostError> {
    let arch_note = "layer_gradient_bytes: 4 bytes per parameter of each tensor of the standard architecture, \
                     front to back; forward/backward times are a calibration, not a measurement";
    let fit_note = |name: &str| {
        let t: Vec<String> = preset_targets(name).iter().map(|(n, r)| format!("{r}x at n={n}")).collect();
        format!("{arch_note}. Compute time fitted so cc-on/cc-off slowdown at the default cap matches {}.", t.join(", "))
    };

    let (r50, t50) = fitted("resnet50", timing)?;
    let (gl, tgl) = fitted("gpt2-large", timing)?;
    let (gx, tgx) = fitted("gpt2-xl", timing)?;
    // Effective training throughput, 6 flops per parameter per token.
    let tokens = |m: &ModelProfile| m.per_device_batch as f64 * GPT2_SEQ_LEN;
    let rate = |m: &ModelProfile, t: f64| 6.0 * m.total_params as f64 * tokens(m) / t;
    let flops_per_s = (rate(&gl, tgl) * rate(&gx, tgx)).sqrt();

    let mut out = Vec::new();
    out.push(finish_preset(r50.clone(), t50, fit_note("resnet50")));
    let r101 = derive_profile(spec("resnet101"), 0.0, 0.0);
    out.push(finish_preset(
        r101,
        t50 * RESNET101_OVER_RESNET50,
        format!("{arch_note}. Compute time is the resnet50 fit scaled by the forward FLOP ratio 7.8/4.1."),
    ));
    for name in ["bert-base", "bert-large"] {
        let b = derive_profile(spec(name), 0.0, 0.0);
        let t = 6.0 * b.total_params as f64 * b.per_device_batch as f64 * BERT_SEQ_LEN / flops_per_s;
        out.push(finish_preset(
            b,
            t,
            format!("{arch_note}. Compute time from 6 x params x tokens at the throughput of the GPT-2 fits."),
        ));
    }
    out.push(finish_preset(gl, tgl, fit_note("gpt2-large")));
    out.push(finish_preset(gx, tgx, fit_note("gpt2-xl")));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ddp_sim::preset;

    const CANDIDATE_CAPS: [f64; 5] = [25.0, 100.0, 200.0, 400.0, 800.0];

    #[test]
    fn table_is_valid_and_interpolates_its_own_points() {
        let t = CalibrationTable::default();
        let c = t.curve();
        for r in &t.rows {
            assert!((c.eval(r.mean_reduction_mb) - r.per_transfer_cost).abs() / r.per_transfer_cost <= 0.05);
        }
        let mut broken = t.clone();
        broken.rows[3].num_transfers = 60;
        assert!(broken.validate().is_err());
        let mut broken = t.clone();
        broken.rows[3].per_transfer_cost = 1.0;
        assert!(broken.validate().is_err());
    }

    #[test]
    fn formula() {
        assert_eq!(predict_cc_cost(4, &vec![44.0; 142], |_| 1.0), 1704.0);
        assert_eq!(predict_cc_cost(4, &[], |_| 1.0), 0.0);
        assert_eq!(predict_cc_cost(1, &[44.0], |_| 1.0), 0.0);
        let t = CalibrationTable::default();
        let ratio = t.row_cost(t.row(400.0).unwrap(), 2) / t.row_cost(t.row(25.0).unwrap(), 2);
        assert!((ratio - 0.10).abs() <= 0.03, "{ratio}");
    }

    #[test]
    fn tuner_picks_400() {
        let xl = preset("gpt2-xl").unwrap();
        let t = CalibrationTable::default();
        for n in [2, 4] {
            let r = tune_bucket(&xl, n, &CANDIDATE_CAPS, &t, &TimingModel::default()).unwrap();
            assert_eq!(r.best_cap_mb, 400.0);
            assert!(r.candidates.iter().all(|c| c.calibrated));
        }
        let one = tune_bucket(&xl, 2, &[200.0], &t, &TimingModel::default()).unwrap();
        assert_eq!(one.best_cap_mb, 200.0);
        assert!(matches!(tune_bucket(&xl, 2, &[], &t, &TimingModel::default()), Err(CostError::EmptyCandidates)));
    }

    #[test]
    fn flat_cost_prefers_fewest_transfers() {
        let xl = preset("gpt2-xl").unwrap();
        let mut t = CalibrationTable::default();
        for r in &mut t.rows {
            r.per_transfer_cost = 1.0;
        }
        let r = tune_bucket(&xl, 4, &CANDIDATE_CAPS, &t, &TimingModel::default()).unwrap();
        assert_eq!(r.best_cap_mb, 800.0);
    }

    #[test]
    fn argmin_survives_uniform_scaling() {
        let xl = preset("gpt2-xl").unwrap();
        let base = CalibrationTable::default();
        for f in [0.01, 0.5, 3.0, 100.0] {
            let mut t = base.clone();
            for r in &mut t.rows {
                r.per_transfer_cost *= f;
            }
            let mut timing = TimingModel::default();
            timing.auth_curve = timing.auth_curve.scaled(f);
            let r = tune_bucket(&xl, 2, &CANDIDATE_CAPS, &t, &timing).unwrap();
            assert_eq!(r.best_cap_mb, 400.0);
            // Caps not in the table go through the bucketizer and the timing curve.
            let r = tune_bucket(&xl, 2, &[30.0, 150.0, 300.0], &t, &timing).unwrap();
            let r1 = tune_bucket(&xl, 2, &[30.0, 150.0, 300.0], &base, &TimingModel::default()).unwrap();
            assert_eq!(r.best_cap_mb, r1.best_cap_mb);
        }
    }

    #[test]
    fn ties_break_to_smaller_cap() {
        let xl = preset("gpt2-xl").unwrap();
        let r = tune_bucket(&xl, 1, &CANDIDATE_CAPS, &CalibrationTable::default(), &TimingModel::default()).unwrap();
        assert_eq!(r.best_cap_mb, 25.0);
    }

    #[test]
    fn single_worker_slowdown_is_host_path_only() {
        let xl = preset("gpt2-xl").unwrap();
        let rows = predict_slowdown(&xl, &[1], &[None], &TimingModel::default()).unwrap();
        assert!(rows[0].ratio > 1.0 && rows[0].ratio < 1.01, "{}", rows[0].ratio);
    }

    #[test]
    fn back_solve_recovers_a_known_time() {
        let base = preset("resnet50").unwrap();
        let timing = TimingModel::default();
        let r = ratio_at(&base, 2, 0.05, &timing).unwrap();
        let t = calibrate_compute_time(&base, &[(2, r)], &timing).unwrap();
        assert!((t / 0.05 - 1.0).abs() < 1e-6, "{t}");
    }
}
