mod config;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use teesim::channel::{Adversary, AdversaryMode, HOST};
use teesim::collective::{
    all_gather, oracle, reduce_scatter, ring_all_reduce, tree_all_reduce, Algo, Cluster, ClusterConfig,
    CollectiveTrace, EventKind, GradientBuffer,
};
use teesim::cost_model::{tune_bucket, CalibrationTable};
use teesim::crypto::vectors::crypto_self_test;
use teesim::ddp_sim::{simulate_fsdp_iteration, simulate_iteration, CostReport, SimConfig, SimError, Simulation};

use config::{AlgoChoice, Cap, ScenarioConfig, Toggle};

#[derive(Parser)]
#[command(name = "teesim", version, about = "Confidential-computing overhead simulator for data-parallel training")]
#[command(after_help = "Sizes in MB are MiB. Presets are looked up in $TEESIM_PRESET_DIR before the built-in set.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one training iteration and write its cost report.
    Run(ScenarioArgs),
    /// Run every candidate bucket cap with cc on and off, and mark the tuner's pick.
    Sweep(ScenarioArgs),
    /// Check the crypto against NIST vectors and small collectives against their oracles.
    Selftest {
        /// NIST CAVP response file instead of the bundled one.
        #[arg(long)]
        vectors: Option<PathBuf>,
    },
    /// Recompute a cost report from a trace file (CSV or .json).
    TraceDump {
        trace: PathBuf,
        #[arg(long, default_value = "unknown")]
        model: String,
        #[arg(long, default_value_t = 0.0)]
        cap_mb: f64,
        /// Print per-kind totals as CSV instead of the report.
        #[arg(long)]
        by_kind: bool,
    },
}

#[derive(Args, Default)]
struct ScenarioArgs {
    /// Scenario JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    /// Profile JSON instead of a preset.
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long)]
    gpus: Option<usize>,
    #[arg(long, value_enum)]
    cc: Option<Toggle>,
    #[arg(long, value_enum)]
    algo: Option<AlgoChoice>,
    /// `default` or MiB.
    #[arg(long, value_parser = Cap::parse)]
    bucket_cap_mb: Option<Cap>,
    /// Comma-separated candidate caps for sweep.
    #[arg(long, value_delimiter = ',', value_parser = Cap::parse)]
    caps: Option<Vec<Cap>>,
    /// Timing model JSON; missing fields keep their defaults.
    #[arg(long)]
    timing: Option<PathBuf>,
    /// flip:A-B:MSG:BIT, replay:A-B:MSG or reorder:A-B:MSG
    #[arg(long)]
    adversary: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Data-path scale, e.g. 1/64 or 0.015625. 0 runs timing only.
    #[arg(long, value_parser = parse_fraction)]
    scale: Option<f64>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    trace_json: Option<PathBuf>,
    /// Sweep CSV output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    calibration: Option<PathBuf>,
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| format!("bad fraction `{s}`"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("bad fraction `{s}`"))?;
            a / b
        }
        None => s.trim().parse().map_err(|_| format!("bad number `{s}`"))?,
    };
    if v.is_finite() && (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("scale must be in [0, 1], got {s}"))
    }
}

enum Failure {
    Config(String),
    Abort(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Abort(_) => 3,
            Failure::Other(_) => 1,
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Aborted(_) | SimError::Input(_) => Failure::Abort(format!("aborted: {e}")),
            SimError::Internal(_) => Failure::Other(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Other(format!("{}: {e}", path.display()))
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn scenario(args: &ScenarioArgs) -> Result<ScenarioConfig, Failure> {
    let mut c = match &args.config {
        Some(p) => ScenarioConfig::from_json(&read(p)?).map_err(Failure::Config)?,
        None => ScenarioConfig::default(),
    };
    if let Some(m) = &args.model {
        c.model = Some(m.clone());
        c.profile = None;
    }
    if let Some(p) = &args.profile {
        c.profile = Some(p.clone());
    }
    if let Some(t) = &args.timing {
        c.timing = serde_json::from_str(&read(t)?).map_err(|e| Failure::Config(format!("timing: {e}")))?;
    }
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$(
            if let Some(v) = args.$flag.clone() {
                c.$field = v;
            }
        )*};
    }
    set!(gpus => n_workers, cc => cc, algo => algo, bucket_cap_mb => cap_mb, caps => caps, seed => seed, scale => scale_factor);
    macro_rules! set_opt {
        ($($flag:ident => $field:ident),*) => {$(
            if args.$flag.is_some() {
                c.$field = args.$flag.clone();
            }
        )*};
    }
    set_opt!(adversary => adversary, report => report_path, trace => trace_path, trace_json => trace_json_path,
        out => sweep_path, calibration => calibration);
    c.validate().map_err(Failure::Config)?;
    Ok(c)
}

fn sim_config(c: &ScenarioConfig, cc: bool, cap_mb: Option<f64>) -> Result<SimConfig, Failure> {
    let mut s = SimConfig::new(c.n_workers, cc);
    s.timing = c.timing.clone();
    s.seed = c.seed;
    s.scale = c.scale();
    s.adversary = c.parsed_adversary().map_err(Failure::Config)?;
    s.algo = if c.algo == AlgoChoice::Tree { Algo::Tree } else { Algo::Ring };
    if let Some(mb) = cap_mb {
        s = s.with_cap_mb(mb);
    }
    Ok(s)
}

fn simulate(c: &ScenarioConfig, cc: bool, cap: Cap) -> Result<Simulation, Failure> {
    let model = c.load_model().map_err(Failure::Config)?;
    let cfg = sim_config(c, cc, Some(cap.resolve(&model)))?;
    Ok(match c.algo {
        AlgoChoice::Fsdp => simulate_fsdp_iteration(&model, &cfg)?,
        _ => simulate_iteration(&model, &cfg)?,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn write_text(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => {
            let mut w = create(p)?;
            w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| io_err(p, e))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_run(args: &ScenarioArgs) -> Result<(), Failure> {
    let c = scenario(args)?;
    let sim = simulate(&c, c.cc == Toggle::On, c.cap_mb)?;
    if let Some(p) = &c.trace_path {
        sim.timeline.trace.write_csv(create(p)?).map_err(|e| io_err(p, e))?;
    }
    if let Some(p) = &c.trace_json_path {
        let json = sim.timeline.trace.to_json().map_err(|e| io_err(p, e))?;
        write_text(Some(p), &(json + "\n"))?;
    }
    write_text(c.report_path.as_deref(), &(sim.report.to_json() + "\n"))
}

fn cmd_sweep(args: &ScenarioArgs) -> Result<(), Failure> {
    let c = scenario(args)?;
    if c.algo == AlgoChoice::Fsdp {
        return Err(Failure::Config("sweep varies the bucket cap, which a sharded run does not use".into()));
    }
    if c.caps.is_empty() {
        return Err(Failure::Config("sweep needs at least one cap".into()));
    }
    let model = c.load_model().map_err(Failure::Config)?;
    let calibration = match &c.calibration {
        Some(p) => CalibrationTable::from_json(&read(p)?).map_err(|e| Failure::Config(e.to_string()))?,
        None => CalibrationTable::default(),
    };
    let caps_mb: Vec<f64> = c.caps.iter().map(|cap| cap.resolve(&model)).collect();
    let tune = tune_bucket(&model, c.n_workers, &caps_mb, &calibration, &c.timing)
        .map_err(|e| Failure::Config(e.to_string()))?;

    let mut csv = String::from("cap_mb,k,crypto_events,t_total_s,ratio_vs_ccoff,tuner_pick\n");
    let mut totals = Vec::new();
    for (cap, mb) in c.caps.iter().zip(&caps_mb) {
        let on = simulate(&c, true, *cap)?.report;
        let off = simulate(&c, false, *cap)?.report;
        let pick = *mb == tune.best_cap_mb;
        csv += &format!(
            "{},{},{},{},{},{}\n",
            cap.label(),
            on.k,
            on.crypto_events,
            on.t_total_s,
            on.t_total_s / off.t_total_s,
            if pick { "*" } else { "" }
        );
        totals.push((cap.label(), pick, on.t_total_s));
    }
    write_text(c.sweep_path.as_deref(), &csv)?;
    let base = totals.iter().find(|(l, _, _)| l == "default").unwrap_or(&totals[0]);
    if let Some(best) = totals.iter().find(|(_, p, _)| *p) {
        eprintln!(
            "tuner pick: {} MB; simulated runtime reduction vs {}: {:.2}x",
            best.0,
            base.0,
            base.2 / best.2
        );
    }
    Ok(())
}

fn selftest_collectives() -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut ok, mut total) = (0, 0);
    for n in 1..=8usize {
        let cluster = || Cluster::new(ClusterConfig::new(n, true)).expect("default timing is valid");
        let len = rng.gen_range(1..100);
        let inputs: Vec<Vec<f32>> = (0..n).map(|_| (0..len).map(|_| rng.gen_range(-8.0f32..8.0)).collect()).collect();
        let bufs: Vec<GradientBuffer> =
            inputs.iter().enumerate().map(|(i, v)| GradientBuffer::new(i as u32, v.clone())).collect();
        let ring = oracle::ring_sum(&inputs);
        let tree = oracle::tree_sum(&inputs);
        let concat: Vec<f32> = inputs.concat();
        let checks = [
            ring_all_reduce(&mut cluster(), &bufs).is_ok_and(|(o, _)| o.iter().all(|b| b.values == ring)),
            tree_all_reduce(&mut cluster(), &bufs, 2).is_ok_and(|(o, _)| o.iter().all(|b| b.values == tree)),
            reduce_scatter(&mut cluster(), &bufs).is_ok_and(|(o, _)| o.iter().all(|s| s.values == ring[s.range.clone()])),
            all_gather(&mut cluster(), &bufs).is_ok_and(|(o, _)| o.iter().all(|b| b.values == concat)),
        ];
        total += checks.len();
        ok += checks.iter().filter(|&&c| c).count();
        if n >= 2 {
            let mut cfg = ClusterConfig::new(n, true);
            cfg.adversary = Some(Adversary { mode: AdversaryMode::FlipBit { bit: rng.gen() }, from: 0, to: 1, message_index: 0 });
            total += 1;
            ok += usize::from(ring_all_reduce(&mut Cluster::new(cfg).expect("valid"), &bufs).is_err());
        }
    }
    (ok, total)
}

fn cmd_selftest(vectors: Option<&Path>) -> Result<(), Failure> {
    let report = crypto_self_test(vectors).map_err(|e| Failure::Config(e.to_string()))?;
    println!("crypto: {}/{} vectors passed", report.passed.len(), report.total());
    for f in &report.failed {
        println!("  FAIL {}: expected tag {}, got {} (ciphertext {})", f.name, f.expected_tag, f.actual_tag,
            if f.ciphertext_matches { "matches" } else { "differs" });
    }
    let (ok, total) = selftest_collectives();
    println!("collectives: {ok}/{total} checks passed (n = 1..8, oracle sums and tamper detection)");
    if report.all_passed() && report.total() > 0 && ok == total {
        println!("selftest: PASS");
        Ok(())
    } else {
        println!("selftest: FAIL");
        Err(Failure::Other("selftest failed".into()))
    }
}

fn cmd_trace_dump(path: &Path, model: &str, cap_mb: f64, by_kind: bool) -> Result<(), Failure> {
    let trace = if path.extension().is_some_and(|e| e == "json") {
        CollectiveTrace::from_json(&read(path)?).map_err(|e| Failure::Config(e.to_string()))?
    } else {
        let f = File::open(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        CollectiveTrace::read_csv(f).map_err(|e| Failure::Config(e.to_string()))?
    };
    if by_kind {
        let mut kinds: BTreeMap<EventKind, (usize, u64, f64)> = BTreeMap::new();
        for e in &trace.events {
            let k = kinds.entry(e.kind).or_default();
            k.0 += 1;
            k.1 += e.bytes;
            k.2 += e.duration_s;
        }
        let mut out = String::from("kind,count,bytes,busy_s\n");
        for (kind, (count, bytes, busy)) in kinds {
            let name = serde_json::to_value(kind).expect("kind serializes");
            out += &format!("{},{count},{bytes},{busy}\n", name.as_str().unwrap_or_default());
        }
        return write_text(None, &out);
    }
    let n = trace.events.iter().filter(|e| e.worker != HOST).map(|e| e.worker as usize + 1).max().unwrap_or(0);
    let cc = trace.events.iter().any(|e| e.kind.is_crypto() || e.kind == EventKind::HostEncrypt);
    let report = CostReport::from_trace(model, n, cc, cap_mb, &trace);
    write_text(None, &(report.to_json() + "\n"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Selftest { vectors } => cmd_selftest(vectors.as_deref()),
        Command::TraceDump { trace, model, cap_mb, by_kind } => cmd_trace_dump(trace, model, *cap_mb, *by_kind),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(m) => eprintln!("config error: {m}"),
                Failure::Abort(m) | Failure::Other(m) => eprintln!("{m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
