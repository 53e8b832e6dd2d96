//! Command-line front end: detect / attribute / simulate / eval.
//!
//! Exit codes: 0 = clean (no cascade), 2 = cascade detected, 1 = error.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use mas_sentinel::config::RunConfig;
use mas_sentinel::error::ConfigError;
use mas_sentinel::metrics::{
    attribution_metrics, auroc, benign_declaration_rate, bootstrap_ci, edr_at_k, tpr_at_fpr,
    ConfidenceInterval, TraceResult,
};
use mas_sentinel::pipeline::{run_trace, TraceRun};
use mas_sentinel::simulator::{expand_scenarios, generate_trace, GroundTruth, ScenarioConfig};

#[derive(Parser)]
#[command(name = "mas-sentinel", version, about = "Online cascade detection and attribution for multi-agent traces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Run configuration file (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for streams and reports.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Spine count override for attribution.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run online detection over a trace ("-" reads stdin).
    Detect {
        trace: PathBuf,
        #[command(flatten)]
        opts: CommonOpts,
        /// Print per-turn timing to stderr.
        #[arg(long)]
        timing: bool,
    },
    /// Run detection and report attribution for the first cascade.
    Attribute {
        trace: PathBuf,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Generate labeled synthetic traces from a scenario file.
    Simulate {
        scenario: PathBuf,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Score detection and attribution over a trace/truth corpus.
    Eval {
        /// Directory of *.trace.jsonl files.
        traces: PathBuf,
        /// Directory of *.truth.json files.
        truths: PathBuf,
        #[command(flatten)]
        opts: CommonOpts,
        /// Bootstrap resample count.
        #[arg(long, default_value_t = 1000)]
        resamples: usize,
    },
}

fn load_config(opts: &CommonOpts) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &opts.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if let Some(k) = opts.k {
        cfg.k = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn open_trace(path: &Path) -> io::Result<Box<dyn BufRead>> {
    if path.as_os_str() == "-" {
        Ok(Box::new(BufReader::new(io::stdin())))
    } else {
        Ok(Box::new(BufReader::new(File::open(path)?)))
    }
}

fn write_streams(out: &Path, run: &TraceRun) -> io::Result<()> {
    fs::create_dir_all(out)?;
    let mut diag = File::create(out.join("diagnostics.jsonl"))?;
    for record in &run.records {
        writeln!(diag, "{}", serde_json::to_string(record).expect("record json"))?;
    }
    let mut alerts = File::create(out.join("alerts.jsonl"))?;
    for (alert, _) in &run.alerts {
        writeln!(alerts, "{}", serde_json::to_string(alert).expect("alert json"))?;
    }
    Ok(())
}

fn cmd_detect(trace: &Path, opts: &CommonOpts, timing: bool) -> Result<ExitCode, String> {
    let cfg = load_config(opts).map_err(|e| e.to_string())?;
    let reader = open_trace(trace).map_err(|e| format!("{}: {e}", trace.display()))?;
    let run = run_trace(reader, cfg).map_err(|e| e.to_string())?;
    let stdout = io::stdout();
    let mut w = stdout.lock();
    for (alert, _) in &run.alerts {
        writeln!(w, "{}", serde_json::to_string(alert).expect("alert json"))
            .map_err(|e| e.to_string())?;
    }
    if let Some(out) = &opts.out {
        write_streams(out, &run).map_err(|e| e.to_string())?;
    }
    if timing {
        eprintln!("median turn cost: {:.1} us", run.median_turn_us);
    }
    if run.alerts.is_empty() {
        eprintln!("clean: no cascade declared over {} turns", run.records.len());
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "cascade detected: {} alert(s), first at turn {}",
            run.alerts.len(),
            run.alerts[0].0.turn
        );
        Ok(ExitCode::from(2))
    }
}

fn cmd_attribute(trace: &Path, opts: &CommonOpts) -> Result<ExitCode, String> {
    let cfg = load_config(opts).map_err(|e| e.to_string())?;
    let reader = open_trace(trace).map_err(|e| format!("{}: {e}", trace.display()))?;
    let run = run_trace(reader, cfg).map_err(|e| e.to_string())?;
    let report = match run.alerts.first() {
        Some((alert, report)) => serde_json::json!({
            "cascade": {
                "turn": alert.turn,
                "kind": alert.kind,
                "t_w": alert.t_w,
                "t0": alert.t0,
                "w": alert.w,
            },
            "attribution": report,
        }),
        None => serde_json::json!({ "cascade": null, "attribution": null }),
    };
    let text = serde_json::to_string_pretty(&report).expect("report json");
    println!("{text}");
    if let Some(out) = &opts.out {
        fs::create_dir_all(out).map_err(|e| e.to_string())?;
        fs::write(out.join("attribution.json"), format!("{text}\n")).map_err(|e| e.to_string())?;
        write_streams(out, &run).map_err(|e| e.to_string())?;
    }
    if run.alerts.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(2))
    }
}

fn cmd_simulate(scenario_path: &Path, opts: &CommonOpts) -> Result<ExitCode, String> {
    let out = opts
        .out
        .clone()
        .ok_or_else(|| "simulate requires --out".to_string())?;
    let text = fs::read_to_string(scenario_path)
        .map_err(|e| format!("{}: {e}", scenario_path.display()))?;
    let entries: Vec<ScenarioConfig> = if text.trim_start().starts_with('[') {
        serde_json::from_str(&text).map_err(|e| e.to_string())?
    } else {
        vec![serde_json::from_str(&text).map_err(|e| e.to_string())?]
    };
    let mut scenarios = Vec::new();
    for entry in &entries {
        if let Some(seed) = opts.seed {
            let mut e = entry.clone();
            e.seed = seed;
            scenarios.extend(expand_scenarios(&e));
        } else {
            scenarios.extend(expand_scenarios(entry));
        }
    }
    fs::create_dir_all(&out).map_err(|e| e.to_string())?;
    let mut written = 0usize;
    for (idx, scenario) in scenarios.iter().enumerate() {
        let trace = generate_trace(scenario).map_err(|e| e.to_string())?;
        let stem = scenario
            .name
            .clone()
            .unwrap_or_else(|| format!("{}-{idx:04}", scenario.attack.label()));
        fs::write(
            out.join(format!("{stem}.trace.jsonl")),
            trace.lines.join("\n") + "\n",
        )
        .map_err(|e| e.to_string())?;
        let truth = serde_json::to_string_pretty(&trace.truth).expect("truth json");
        fs::write(out.join(format!("{stem}.truth.json")), truth + "\n")
            .map_err(|e| e.to_string())?;
        written += 1;
    }
    println!("wrote {written} trace/truth pairs to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn run_one_trace(path: &Path, cfg: RunConfig) -> Result<(f64, TraceRun), String> {
    let reader = open_trace(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let run = run_trace(reader, cfg).map_err(|e| format!("{}: {e}", path.display()))?;
    let evidence: Vec<_> = run.records.iter().map(|r| r.evidence()).collect();
    let score = mas_sentinel::metrics::trace_score(&evidence);
    Ok((score, run))
}

fn ci_json(ci: &ConfidenceInterval) -> serde_json::Value {
    serde_json::json!({ "point": ci.point, "lo": ci.lo, "hi": ci.hi })
}

fn cmd_eval(
    traces_dir: &Path,
    truths_dir: &Path,
    opts: &CommonOpts,
    resamples: usize,
) -> Result<ExitCode, String> {
    let cfg = load_config(opts).map_err(|e| e.to_string())?;
    let mut trace_files: Vec<PathBuf> = fs::read_dir(traces_dir)
        .map_err(|e| format!("{}: {e}", traces_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().map_or(false, |n| n.to_string_lossy().ends_with(".trace.jsonl")))
        .collect();
    trace_files.sort();
    if trace_files.is_empty() {
        return Err(format!("no *.trace.jsonl files in {}", traces_dir.display()));
    }
    let mut unmatched = Vec::new();
    let mut pairs: Vec<(String, PathBuf, PathBuf)> = Vec::new();
    for trace in &trace_files {
        let stem = trace
            .file_name()
            .unwrap()
            .to_string_lossy()
            .trim_end_matches(".trace.jsonl")
            .to_string();
        let truth = truths_dir.join(format!("{stem}.truth.json"));
        if truth.exists() {
            pairs.push((stem, trace.clone(), truth));
        } else {
            unmatched.push(stem);
        }
    }
    if !unmatched.is_empty() {
        return Err(format!("traces without matching truth files: {unmatched:?}"));
    }

    let mut results: Vec<TraceResult> = pairs
        .par_iter()
        .map(|(id, trace_path, truth_path)| {
            let truth_text = fs::read_to_string(truth_path)
                .map_err(|e| format!("{}: {e}", truth_path.display()))?;
            let truth: GroundTruth =
                serde_json::from_str(&truth_text).map_err(|e| e.to_string())?;
            let (score, run) = run_one_trace(trace_path, cfg.clone())?;
            let first = run.alerts.first();
            Ok(TraceResult {
                id: id.clone(),
                score,
                first_alert_turn: first.map(|(a, _)| a.turn),
                alert_kind: first.map(|(a, _)| a.kind),
                report: first.map(|(_, r)| r.clone()),
                truth,
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    results.sort_by(|a, b| a.id.cmp(&b.id));

    let seed = cfg.seed;
    let boot = |f: fn(&[TraceResult]) -> Result<f64, mas_sentinel::error::MetricError>,
                tag: u64|
     -> Result<ConfidenceInterval, String> {
        bootstrap_ci(f, &results, resamples, 0.95, seed ^ tag)
            .map(|(ci, _)| ci)
            .map_err(|e| e.to_string())
    };
    let auroc_ci = boot(auroc, 0x01)?;
    let tpr_ci = boot(|r| tpr_at_fpr(r, 0.05), 0x02)?;
    let edr_ci = boot(|r| Ok(edr_at_k(r, 5)), 0x03)?;
    let origin_ci = boot(|r| Ok(attribution_metrics(r).origin.acc1), 0x04)?;
    let amp_ci = boot(|r| Ok(attribution_metrics(r).amplifier.acc1), 0x05)?;
    let bridge_ci = boot(|r| Ok(attribution_metrics(r).bridge.acc1), 0x06)?;
    let joint_ci = boot(|r| Ok(attribution_metrics(r).joint_acc1), 0x07)?;
    let jaccard_ci = boot(|r| Ok(attribution_metrics(r).spine_jaccard_at_3), 0x08)?;
    let chan_ci = boot(|r| Ok(attribution_metrics(r).channel_acc), 0x09)?;
    let lag_ci = boot(|r| Ok(attribution_metrics(r).attribution_lag), 0x0a)?;
    let attr = attribution_metrics(&results);

    let per_trace: Vec<serde_json::Value> = results
        .iter()
        .map(|r| {
            serde_json::json!({
                "id": r.id,
                "scenario": r.truth.scenario,
                "is_attack": r.truth.is_attack,
                "score": r.score,
                "first_alert_turn": r.first_alert_turn,
                "alert_kind": r.alert_kind,
            })
        })
        .collect();
    let report = serde_json::json!({
        "traces": results.len(),
        "resamples": resamples,
        "detection": {
            "auroc": ci_json(&auroc_ci),
            "tpr_at_5pct_fpr": ci_json(&tpr_ci),
            "edr_at_5": ci_json(&edr_ci),
            "benign_declaration_rate": benign_declaration_rate(&results),
        },
        "attribution": {
            "origin_acc1": ci_json(&origin_ci),
            "origin_mrr": attr.origin.mrr,
            "amplifier_acc1": ci_json(&amp_ci),
            "amplifier_mrr": attr.amplifier.mrr,
            "bridge_acc1": ci_json(&bridge_ci),
            "bridge_mrr": attr.bridge.mrr,
            "joint_acc1": ci_json(&joint_ci),
            "spine_jaccard_at_3": ci_json(&jaccard_ci),
            "channel_acc": ci_json(&chan_ci),
            "attribution_lag": ci_json(&lag_ci),
            "declared_attacks": attr.declared_attacks,
            "undeclared_attacks": attr.undeclared_attacks,
        },
        "per_trace": per_trace,
    });
    let text = serde_json::to_string_pretty(&report).expect("report json");
    if let Some(out) = &opts.out {
        fs::create_dir_all(out).map_err(|e| e.to_string())?;
        fs::write(out.join("report.json"), format!("{text}\n")).map_err(|e| e.to_string())?;
    }
    println!(
        "auroc={:.4} tpr@5%fpr={:.4} edr@5={:.4} benign_decl={:.4} origin_acc1={:.4} channel_acc={:.4}",
        auroc_ci.point,
        tpr_ci.point,
        edr_ci.point,
        benign_declaration_rate(&results),
        origin_ci.point,
        chan_ci.point,
    );
    if opts.out.is_none() {
        println!("{text}");
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Detect { trace, opts, timing } => cmd_detect(trace, opts, *timing),
        Command::Attribute { trace, opts } => cmd_attribute(trace, opts),
        Command::Simulate { scenario, opts } => cmd_simulate(scenario, opts),
        Command::Eval {
            traces,
            truths,
            opts,
            resamples,
        } => cmd_eval(traces, truths, opts, *resamples),
    };
    match result {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
