//! Command-line front end: analyze -> understand -> optimize -> report,
//! each stage consuming the previous stage's file.
//!
//! Exit codes: 0 success, 1 operational error, 2 unconverged understanding.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use amsizer::advisor::{Advisor, HttpAdvisor, RecordingAdvisor, ScriptedAdvisor, Transcript};
use amsizer::eval::{mock_model, Evaluator, ExternEvaluator, MockModel};
use amsizer::hierarchy::{Hierarchy, IoNets};
use amsizer::opt::OptConfig;
use amsizer::pipeline::{
    advisor_pruning, analyze, build_space, builtin_benchmark, run_seeds, run_understanding,
    structural_tying, AnalyzeOptions, PruningPlan,
};
use amsizer::report::{
    aggregate, format_table, plot_svg, write_history_csv, write_meta_json, write_report_json,
};
use amsizer::score::{ScoreMode, SpecSet};
use amsizer::space::{RatioConstraint, TyingPlan, VarSpec};
use amsizer::templates::parse_library;
use amsizer::understand::LoopConfig;

#[derive(Parser)]
#[command(name = "amsizer", version, about = "Netlist analysis and sizing optimization")]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Parse a netlist and write the device-module-stage hierarchy.
    Analyze(AnalyzeArgs),
    /// Run the advisor understanding loop over a hierarchy file.
    Understand(UnderstandArgs),
    /// Run the sizing optimization end to end.
    Optimize(OptimizeArgs),
    /// Re-aggregate and print the summary table of a finished run.
    Report(ReportArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Netlist path or `builtin:<ota|fcota|sacmp|ldo>`.
    #[arg(long)]
    netlist: String,
    /// Primary input nets (comma separated).
    #[arg(long, value_delimiter = ',')]
    inputs: Vec<String>,
    /// Primary output nets (comma separated).
    #[arg(long, value_delimiter = ',')]
    outputs: Vec<String>,
    /// Template library JSON (defaults to the built-in six).
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct UnderstandArgs {
    /// hierarchy.json produced by `analyze`.
    #[arg(long)]
    hierarchy: PathBuf,
    /// Advisor: `builtin:<name>` | `stub:<fixture.json>` | `http:<url>[#model]`
    /// | `record:<url>[#model]><fixture.json>`.
    #[arg(long)]
    advisor: String,
    /// Accept an unconverged understanding (exit 0 instead of 2).
    #[arg(long)]
    best_effort: bool,
    #[arg(long, default_value_t = 0.8)]
    threshold: f64,
    #[arg(long, default_value_t = 5)]
    max_rounds: u32,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct OptimizeArgs {
    /// Run configuration (TOML or JSON); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    netlist: Option<String>,
    /// Spec path or `builtin:<name>`.
    #[arg(long)]
    spec: Option<String>,
    /// `mock:<name>` or `extern:<command>` (requires [extern] in the config).
    #[arg(long)]
    evaluator: Option<String>,
    #[arg(long)]
    advisor: Option<String>,
    /// Seeds (comma separated).
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// `feas` or `single:<metric>`.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also emit a best-FoM-vs-samples SVG.
    #[arg(long)]
    plot: bool,
    #[arg(long)]
    best_effort: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Output directory of a finished `optimize` run.
    #[arg(long)]
    run: PathBuf,
}

// ---------------------------------------------------------------------------
// Run configuration file

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct RunFile {
    netlist: Option<String>,
    spec: Option<String>,
    evaluator: Option<String>,
    advisor: Option<String>,
    mode: Option<String>,
    seeds: Option<Vec<u64>>,
    out: Option<PathBuf>,
    #[serde(default)]
    plot: bool,
    #[serde(default)]
    best_effort: bool,
    #[serde(default)]
    io: IoNets,
    #[serde(default)]
    optimizer: OptSection,
    #[serde(default)]
    understanding: UnderstandSection,
    #[serde(default)]
    pruning: PruningSection,
    #[serde(rename = "extern")]
    extern_cfg: Option<ExternSection>,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct OptSection {
    n_init: Option<usize>,
    n_iter: Option<usize>,
    stagnation_k: Option<u32>,
    batch: Option<usize>,
    alpha: Option<f64>,
    r_init: Option<f64>,
    r_min: Option<f64>,
    r_max: Option<f64>,
    alpha_inc: Option<f64>,
    alpha_dec: Option<f64>,
    candidates: Option<usize>,
    regions: Option<usize>,
    max_gp_points: Option<usize>,
    failure_penalty: Option<f64>,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct UnderstandSection {
    confidence_threshold: Option<f64>,
    max_rounds: Option<u32>,
    retries: Option<u32>,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct PruningSection {
    /// Ask the advisor for pruning (default true when an advisor is set).
    from_advisor: Option<bool>,
    #[serde(default)]
    boxes: BTreeMap<String, (f64, f64)>,
    #[serde(default)]
    ratios: Vec<RatioConstraint>,
}

#[derive(Debug, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct ExternSection {
    metrics: Vec<String>,
    vars: Vec<VarSpec>,
    workdir: Option<PathBuf>,
    timeout_seconds: Option<u64>,
}

fn load_run_file(path: &Path) -> Result<RunFile> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        Ok(serde_json::from_str(&text)?)
    } else {
        Ok(toml::from_str(&text)?)
    }
}

// ---------------------------------------------------------------------------
// Shared resolution helpers

fn resolve_netlist(spec: &str) -> Result<(String, Option<IoNets>)> {
    if let Some(name) = spec.strip_prefix("builtin:") {
        let bench = builtin_benchmark(name)
            .ok_or_else(|| anyhow!("no builtin netlist `{name}` (ota|fcota|sacmp|ldo)"))?;
        return Ok((bench.netlist.to_string(), Some(bench.io)));
    }
    let text = std::fs::read_to_string(spec)
        .with_context(|| format!("cannot read netlist {spec}"))?;
    Ok((text, None))
}

fn resolve_spec(spec: &str) -> Result<SpecSet> {
    if let Some(name) = spec.strip_prefix("builtin:") {
        return Ok(amsizer::pipeline::builtin_spec(name)?);
    }
    let text =
        std::fs::read_to_string(spec).with_context(|| format!("cannot read spec {spec}"))?;
    Ok(SpecSet::from_json(&text)?)
}

fn resolve_advisor(spec: &str) -> Result<Option<Box<dyn Advisor>>> {
    if spec == "none" {
        return Ok(None);
    }
    if let Some(name) = spec.strip_prefix("builtin:") {
        let bench = builtin_benchmark(name)
            .ok_or_else(|| anyhow!("no builtin advisor fixture `{name}`"))?;
        return Ok(Some(Box::new(ScriptedAdvisor::from_json(
            name,
            bench.advisor_fixture,
        )?)));
    }
    if let Some(path) = spec.strip_prefix("stub:") {
        return Ok(Some(Box::new(ScriptedAdvisor::from_path(Path::new(path))?)));
    }
    if let Some(rest) = spec.strip_prefix("http:") {
        let (url, model) = split_model(rest);
        return Ok(Some(Box::new(HttpAdvisor::new(&url, &model, 0.5))));
    }
    if let Some(rest) = spec.strip_prefix("record:") {
        let (endpoint, path) = rest
            .split_once('>')
            .ok_or_else(|| anyhow!("record advisor needs `record:<url>[#model]><path>`"))?;
        let (url, model) = split_model(endpoint);
        return Ok(Some(Box::new(RecordingAdvisor::new(
            HttpAdvisor::new(&url, &model, 0.5),
            path,
        ))));
    }
    bail!("unrecognized advisor `{spec}` (none|builtin:|stub:|http:|record:)")
}

fn split_model(rest: &str) -> (String, String) {
    match rest.split_once('#') {
        Some((url, model)) => (url.to_string(), model.to_string()),
        None => (rest.to_string(), "gpt-4o".to_string()),
    }
}

enum Backend {
    Mock(MockModel),
    Extern(ExternEvaluator),
}

impl Backend {
    fn as_dyn(&self) -> &dyn Evaluator {
        match self {
            Backend::Mock(m) => m,
            Backend::Extern(e) => e,
        }
    }
}

fn resolve_evaluator(spec: &str, cfg: &RunFile, out: &Path) -> Result<Backend> {
    if let Some(name) = spec.strip_prefix("mock:") {
        return Ok(Backend::Mock(mock_model(name)?));
    }
    if let Some(cmd) = spec.strip_prefix("extern:") {
        let section = cfg
            .extern_cfg
            .as_ref()
            .ok_or_else(|| anyhow!("extern evaluator requires an [extern] config section"))?;
        let space = amsizer::space::DesignSpace::new(section.vars.clone())?;
        let workdir = section
            .workdir
            .clone()
            .unwrap_or_else(|| out.join("extern"));
        return Ok(Backend::Extern(ExternEvaluator::new(
            cmd,
            space,
            section.metrics.clone(),
            workdir,
            std::time::Duration::from_secs(section.timeout_seconds.unwrap_or(300)),
        )));
    }
    bail!("unrecognized evaluator `{spec}` (mock:<name>|extern:<command>)")
}

fn parse_mode(text: &str, spec: SpecSet) -> Result<(ScoreMode, SpecSet)> {
    if text == "feas" {
        return Ok((ScoreMode::Feasibility, spec));
    }
    if let Some(metric) = text.strip_prefix("single:") {
        return Ok((ScoreMode::SingleObjective, spec.with_target(metric)?));
    }
    bail!("unrecognized mode `{text}` (feas|single:<metric>)")
}

// ---------------------------------------------------------------------------
// Commands

fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    let (text, builtin_io) = resolve_netlist(&args.netlist)?;
    let io = if args.inputs.is_empty() && args.outputs.is_empty() {
        builtin_io.unwrap_or_default()
    } else {
        IoNets {
            inputs: args.inputs.clone(),
            outputs: args.outputs.clone(),
        }
    };
    let templates = match &args.templates {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read templates {}", path.display()))?;
            Some(parse_library(&text)?)
        }
        None => None,
    };
    let opts = AnalyzeOptions {
        io,
        templates,
        ..AnalyzeOptions::default()
    };
    let output = analyze(&text, &opts)?;
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(
        args.out.join("hierarchy.json"),
        output.hierarchy.to_json_string(),
    )?;
    std::fs::write(args.out.join("hierarchy.txt"), output.hierarchy.to_text())?;
    std::fs::write(
        args.out.join("graph.json"),
        serde_json::to_string_pretty(&output.raw_graph.to_json())?,
    )?;
    println!(
        "analyzed: {} components, {} modules, {} stages -> {}",
        output.hierarchy.components.len(),
        output.hierarchy.modules.len(),
        output.hierarchy.stages.len(),
        args.out.display()
    );
    for warning in &output.hierarchy.warnings {
        eprintln!("warning: {warning}");
    }
    Ok(())
}

/// Marker error for exit code 2.
#[derive(Debug)]
struct Unconverged;
impl std::fmt::Display for Unconverged {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "understanding did not converge (rerun with --best-effort to accept)")
    }
}
impl std::error::Error for Unconverged {}

fn cmd_understand(args: &UnderstandArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.hierarchy)
        .with_context(|| format!("cannot read {}", args.hierarchy.display()))?;
    let hierarchy = Hierarchy::from_json(&text)?;
    let advisor = resolve_advisor(&args.advisor)?
        .ok_or_else(|| anyhow!("`understand` needs an advisor (not `none`)"))?;
    let cfg = LoopConfig {
        confidence_threshold: args.threshold,
        max_rounds: args.max_rounds,
        ..LoopConfig::default()
    };
    let result = run_understanding(hierarchy, advisor.as_ref(), &cfg)?;
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(
        args.out.join("hierarchy.json"),
        result.hierarchy.to_json_string(),
    )?;
    std::fs::write(
        args.out.join("checklist.json"),
        serde_json::to_string_pretty(&result.outcome.report)?,
    )?;
    std::fs::write(
        args.out.join("tying.json"),
        serde_json::to_string_pretty(&result.tying)?,
    )?;
    std::fs::write(
        args.out.join("transcript.json"),
        serde_json::to_string_pretty(&result.outcome.transcript)?,
    )?;
    println!(
        "understanding: converged={} rounds={} advisor_calls={} checklist_pass={} reduced_dim={}",
        result.outcome.converged,
        result.outcome.rounds,
        result.outcome.transcript.call_count(),
        result.outcome.report.pass(),
        result.tying.reduced_dimension,
    );
    if !result.outcome.converged && !args.best_effort {
        return Err(Unconverged.into());
    }
    Ok(())
}

fn cmd_optimize(args: &OptimizeArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => load_run_file(path)?,
        None => RunFile::default(),
    };
    // flag overrides
    if let Some(n) = &args.netlist {
        cfg.netlist = Some(n.clone());
    }
    if let Some(s) = &args.spec {
        cfg.spec = Some(s.clone());
    }
    if let Some(e) = &args.evaluator {
        cfg.evaluator = Some(e.clone());
    }
    if let Some(a) = &args.advisor {
        cfg.advisor = Some(a.clone());
    }
    if !args.seed.is_empty() {
        cfg.seeds = Some(args.seed.clone());
    }
    if let Some(m) = &args.mode {
        cfg.mode = Some(m.clone());
    }
    if let Some(o) = &args.out {
        cfg.out = Some(o.clone());
    }
    cfg.plot |= args.plot;
    cfg.best_effort |= args.best_effort;

    let netlist_ref = cfg
        .netlist
        .clone()
        .ok_or_else(|| anyhow!("optimize needs --netlist (or `netlist` in the config)"))?;
    let evaluator_ref = cfg
        .evaluator
        .clone()
        .ok_or_else(|| anyhow!("optimize needs --evaluator"))?;
    let spec_ref = cfg.spec.clone().unwrap_or_else(|| {
        evaluator_ref
            .strip_prefix("mock:")
            .map(|n| format!("builtin:{n}"))
            .unwrap_or_default()
    });
    if spec_ref.is_empty() {
        bail!("optimize needs --spec");
    }
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("runs"));
    let seeds = cfg.seeds.clone().unwrap_or_else(|| vec![1]);
    if seeds.is_empty() {
        bail!("seed list is empty");
    }

    // Stage 1: analyze.
    let (netlist_text, builtin_io) = resolve_netlist(&netlist_ref)?;
    let io = if cfg.io.inputs.is_empty() && cfg.io.outputs.is_empty() {
        builtin_io.unwrap_or_default()
    } else {
        cfg.io.clone()
    };
    let analysis = analyze(
        &netlist_text,
        &AnalyzeOptions {
            io,
            ..AnalyzeOptions::default()
        },
    )?;

    // Stage 2: understand (when an advisor is configured).
    let advisor = match &cfg.advisor {
        Some(spec) => resolve_advisor(spec)?,
        None => None,
    };
    let loop_cfg = LoopConfig {
        confidence_threshold: cfg.understanding.confidence_threshold.unwrap_or(0.8),
        max_rounds: cfg.understanding.max_rounds.unwrap_or(5),
        retries: cfg.understanding.retries.unwrap_or(1),
    };
    let (hierarchy, tying): (Hierarchy, TyingPlan) = match &advisor {
        Some(advisor) => {
            let result = run_understanding(analysis.hierarchy, advisor.as_ref(), &loop_cfg)?;
            if !result.outcome.converged && !cfg.best_effort {
                return Err(Unconverged.into());
            }
            (result.hierarchy, result.tying)
        }
        None => {
            let tying = structural_tying(&analysis.hierarchy);
            (analysis.hierarchy, tying)
        }
    };

    // Stage 3: evaluator, spec, pruning, space.
    let backend = resolve_evaluator(&evaluator_ref, &cfg, &out)?;
    let evaluator = backend.as_dyn();
    let spec = resolve_spec(&spec_ref)?;
    let (mode, spec) = parse_mode(cfg.mode.as_deref().unwrap_or("feas"), spec)?;

    let mut pruning = PruningPlan {
        boxes: cfg.pruning.boxes.clone(),
        ratios: cfg.pruning.ratios.clone(),
    };
    let ask_advisor = cfg.pruning.from_advisor.unwrap_or(true);
    if ask_advisor {
        if let Some(advisor) = &advisor {
            let mut transcript = Transcript::default();
            let plan = advisor_pruning(&hierarchy, evaluator.space(), advisor.as_ref(), &mut transcript);
            for (k, v) in plan.boxes {
                pruning.boxes.entry(k).or_insert(v);
            }
            pruning.ratios.extend(plan.ratios);
        }
    }
    let space = build_space(evaluator, Some(&tying), Some(&pruning))?;

    let opt_cfg = OptConfig {
        n_init: cfg.optimizer.n_init,
        n_iter: cfg.optimizer.n_iter.unwrap_or(60),
        stagnation_k: cfg.optimizer.stagnation_k.unwrap_or(5),
        batch: cfg.optimizer.batch.unwrap_or(1),
        alpha: cfg.optimizer.alpha.unwrap_or(0.8),
        r_init: cfg.optimizer.r_init.unwrap_or(0.4),
        r_min: cfg.optimizer.r_min.unwrap_or(0.015625),
        r_max: cfg.optimizer.r_max.unwrap_or(0.8),
        alpha_inc: cfg.optimizer.alpha_inc.unwrap_or(1.5),
        alpha_dec: cfg.optimizer.alpha_dec.unwrap_or(0.75),
        candidates: cfg.optimizer.candidates.unwrap_or(2000),
        regions: cfg.optimizer.regions.unwrap_or(1),
        max_gp_points: cfg.optimizer.max_gp_points.unwrap_or(256),
        failure_penalty: cfg.optimizer.failure_penalty.unwrap_or(1.0),
        mode,
        ..OptConfig::default()
    };

    // Stage 4: optimize per seed and write artifacts.
    let reports = run_seeds(
        &space,
        &spec,
        evaluator,
        advisor.as_deref(),
        Some(&hierarchy),
        &opt_cfg,
        &seeds,
    )?;

    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("hierarchy.json"), hierarchy.to_json_string())?;
    std::fs::write(out.join("tying.json"), serde_json::to_string_pretty(&tying)?)?;
    for report in &reports {
        let dir = out.join(format!("seed_{}", report.seed));
        std::fs::create_dir_all(&dir)?;
        write_report_json(report, &dir.join("report.json"))?;
        write_history_csv(report, &dir.join("history.csv"))?;
        write_meta_json(report, &dir.join("meta.json"))?;
    }
    let agg = aggregate(&reports);
    std::fs::write(
        out.join("aggregate.json"),
        serde_json::to_string_pretty(&agg)?,
    )?;
    if cfg.plot {
        std::fs::write(out.join("plot.svg"), plot_svg(&reports))?;
    }
    print!("{}", format_table(evaluator.id(), &agg));
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let mut reports = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(&args.run)
        .with_context(|| format!("cannot read {}", args.run.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("seed_"))
        })
        .collect();
    entries.sort();
    for dir in entries {
        let path = dir.join("report.json");
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        reports.push(serde_json::from_str(&text)?);
    }
    if reports.is_empty() {
        bail!("no seed_*/report.json found under {}", args.run.display());
    }
    let label = reports
        .first()
        .map(|r: &amsizer::opt::OptReport| r.evaluator_id.clone())
        .unwrap_or_default();
    print!("{}", format_table(&label, &aggregate(&reports)));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Commands::Analyze(args) => cmd_analyze(args),
        Commands::Understand(args) => cmd_understand(args),
        Commands::Optimize(args) => cmd_optimize(args),
        Commands::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) if err.is::<Unconverged>() => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
