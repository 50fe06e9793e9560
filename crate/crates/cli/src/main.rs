//! `editflow`: run one edit, a batch, a pilot comparison or an ablation
//! sweep, or inspect a trace.
//!
//! Exit status: 0 on success, 1 on a usage or load error, 2 when an edit
//! session fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use editflow::backends::{Backend, CallLedger, MockBackend, MockScript};
use editflow::config::AppConfig;
use editflow::harness::{render_comparison, render_pilot_table, render_summary, CaseSet, Harness, Strategy};
use editflow::planner::{EditRequest, Engine, EngineConfig, Route, Trace};
use editflow::raster::ImageBuffer;

/// Script used by `--mock` when the config names none.
const DEFAULT_MOCK: &str = include_str!("../../../fixtures/default_mock.json");

#[derive(Parser)]
#[command(name = "editflow", version, about = "Routed, tool-using image editing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Edit one image.
    Edit(EditArgs),
    /// Run one strategy over a case set.
    Batch(BatchArgs),
    /// Score the four pilot strategies per failure category.
    Pilot(SetArgs),
    /// Run a family of ablation presets over a case set.
    Ablate(AblateArgs),
    /// List the steps of a trace file.
    Trace(TraceArgs),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the mock backend (the config's script, or a built-in one).
    #[arg(long)]
    mock: bool,
    /// Directory receiving every output file.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct EditArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    instruction: String,
    /// Force a route: A, A2, B or C.
    #[arg(long)]
    route: Option<Route>,
    #[arg(long)]
    budget: Option<u32>,
    /// Best-of-two baseline.
    #[arg(long)]
    bo2: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SetArgs {
    /// Case-set directory.
    #[arg(long)]
    cases: PathBuf,
    #[arg(long)]
    repeats: Option<u32>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct BatchArgs {
    /// atr, direct, bo2, rewrite, spatial, local or fixed:<route>.
    #[arg(long, default_value = "atr")]
    strategy: Strategy,
    /// Report name; defaults to the strategy.
    #[arg(long)]
    label: Option<String>,
    #[command(flatten)]
    set: SetArgs,
}

#[derive(Args)]
struct AblateArgs {
    /// Preset family: `components` (routing and agentic parts, a-g) or
    /// `reformulation` (a-e).
    #[arg(long, value_enum, default_value = "components")]
    presets: Presets,
    /// Comma-separated preset labels; all by default.
    #[arg(long, value_delimiter = ',')]
    labels: Vec<String>,
    /// Extra configuration `label=path`, taking the file's [engine] section.
    #[arg(long = "engine", value_name = "LABEL=PATH")]
    engines: Vec<String>,
    #[command(flatten)]
    set: SetArgs,
}

#[derive(Clone, Copy, PartialEq, clap::ValueEnum)]
enum Presets {
    Components,
    Reformulation,
}

#[derive(Args)]
struct TraceArgs {
    path: PathBuf,
    /// Show only this step.
    #[arg(long)]
    step: Option<u32>,
}

enum Failure {
    Load(String),
    Session(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Load(e.to_string())
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_env("EDITFLOW_LOG").unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let result = match cli.command {
        Command::Edit(a) => edit(a),
        Command::Batch(a) => batch(a),
        Command::Pilot(a) => pilot(a),
        Command::Ablate(a) => ablate(a),
        Command::Trace(a) => trace(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Load(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Session(msg)) => {
            eprintln!("session failed: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_config(common: &Common) -> Result<AppConfig, Failure> {
    let mut app = match &common.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    app.apply_process_env();
    Ok(app)
}

fn backend(app: &AppConfig, mock: bool) -> Result<Arc<dyn Backend>, Failure> {
    if mock && app.backend.mock_script.is_none() {
        let script: MockScript = serde_json::from_str(DEFAULT_MOCK)?;
        return Ok(Arc::new(MockBackend::new(script)));
    }
    let mut config = app.backend.clone();
    if mock {
        config.mode = editflow::backends::BackendMode::Mock;
    }
    config.validate().map_err(|e| Failure::Load(format!("{e} (pass --mock for the built-in script)")))?;
    Ok(config.build()?)
}

fn create_out(out: &Path) -> Result<(), Failure> {
    fs::create_dir_all(out).map_err(|e| Failure::Load(format!("cannot create {}: {e}", out.display())))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::Load(format!("cannot write {}: {e}", path.display())))
}

fn ledger_text(l: &CallLedger) -> String {
    format!("editor={} segmenter={} mllm={}", l.editor_calls, l.segmenter_calls, l.mllm_calls)
}

fn edit(a: EditArgs) -> CliResult {
    let app = load_config(&a.common)?;
    let mut config = app.engine.clone();
    if let Some(b) = a.budget {
        config.budget = b;
    }
    config.bo2 |= a.bo2;
    if a.route.is_some() {
        config.oracle_route = a.route;
    }
    let bytes = fs::read(&a.image).map_err(|e| Failure::Load(format!("cannot read {}: {e}", a.image.display())))?;
    let image = ImageBuffer::decode_png(&bytes).map_err(|e| Failure::Load(format!("{}: {e}", a.image.display())))?;
    let request = EditRequest::new(image, a.instruction)?;
    let case_id = a.image.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();

    let engine = Engine::new(backend(&app, a.common.mock)?, config)?.with_retry_limit(app.backend.retry_limit);
    create_out(&a.common.out)?;
    let trace_path = a.common.out.join(format!("{case_id}.trace.jsonl"));
    match engine.run_session(&case_id, &request) {
        Ok(out) => {
            let image_path = a.common.out.join(format!("{case_id}.edited.png"));
            write(&image_path, out.image.encode_png())?;
            write(&trace_path, out.trace.to_jsonl())?;
            println!("route: {}", out.route().map_or("none", Route::as_str));
            println!("calls: {}", ledger_text(&out.ledger));
            println!("fallback: {}", out.fallback());
            println!("image: {}", image_path.display());
            println!("trace: {}", trace_path.display());
            Ok(())
        }
        Err(failed) => {
            write(&trace_path, failed.trace.to_jsonl())?;
            println!("calls: {}", ledger_text(&failed.ledger));
            println!("fallback: {}", failed.trace.fallback());
            println!("trace: {}", trace_path.display());
            Err(Failure::Session(failed.to_string()))
        }
    }
}

/// Loads the config, the cases and the harness shared by the set commands.
fn set_up(s: &SetArgs, want_judge: bool) -> Result<(AppConfig, CaseSet, Harness), Failure> {
    let mut app = load_config(&s.common)?;
    if let Some(r) = s.repeats {
        app.harness.repeats = r;
    }
    if let Some(p) = s.parallelism {
        app.harness.parallelism = p;
    }
    app.harness.trace_dir = Some(s.common.out.join("traces"));
    let cases = CaseSet::load(&s.cases)?;
    let main = backend(&app, s.common.mock)?;
    let judge = match app.build_judge(&main)? {
        Some(j) => Some(j),
        // Mock scripts carry their own `score` replies.
        None if want_judge && (s.common.mock || app.is_mock()) => Some(main.clone()),
        None => None,
    };
    let mut harness = Harness::new(main, app.harness.clone());
    if let Some(j) = judge {
        harness = harness.with_judge(j);
    }
    create_out(&s.common.out)?;
    Ok((app, cases, harness))
}

fn batch(a: BatchArgs) -> CliResult {
    let (app, cases, harness) = set_up(&a.set, false)?;
    let label = a.label.unwrap_or_else(|| a.strategy.label().to_string());
    let report = harness.run_batch(&label, &cases, &app.engine, a.strategy)?;
    let path = a.set.common.out.join(format!("{label}.report.json"));
    write(&path, report.to_json())?;
    print!("{}", render_summary(&report));
    println!("report: {}", path.display());
    Ok(())
}

fn pilot(s: SetArgs) -> CliResult {
    let (app, cases, harness) = set_up(&s, true)?;
    let report = harness.pilot_compare(&cases, &app.engine)?;
    let table = render_pilot_table(&report.table);
    write(&s.common.out.join("pilot.json"), serde_json::to_string_pretty(&report)?)?;
    write(&s.common.out.join("pilot.txt"), &table)?;
    print!("{table}");
    Ok(())
}

/// The presets, overlaid with the loaded engine's budget and verify cap.
fn presets(family: Presets, labels: &[String], base: &EngineConfig) -> Result<Vec<(String, EngineConfig)>, Failure> {
    let all: &[&str] = match family {
        Presets::Components => &EngineConfig::COMPONENT_PRESETS,
        Presets::Reformulation => &EngineConfig::REFORMULATION_PRESETS,
    };
    let chosen: Vec<String> = if labels.is_empty() { all.iter().map(|s| s.to_string()).collect() } else { labels.to_vec() };
    chosen
        .into_iter()
        .map(|label| {
            let preset = match family {
                Presets::Components => EngineConfig::component_preset(&label),
                Presets::Reformulation => EngineConfig::reformulation_preset(&label),
            };
            let preset = preset.ok_or_else(|| Failure::Load(format!("no preset '{label}' in this family")))?;
            Ok((label, EngineConfig { budget: base.budget, verify_retry_limit: base.verify_retry_limit, ..preset }))
        })
        .collect()
}

fn ablate(a: AblateArgs) -> CliResult {
    let (app, cases, harness) = set_up(&a.set, false)?;
    let mut configs = presets(a.presets, &a.labels, &app.engine)?;
    for spec in &a.engines {
        let (label, path) = spec.split_once('=').ok_or_else(|| Failure::Load(format!("--engine expects LABEL=PATH, got '{spec}'")))?;
        configs.push((label.to_string(), AppConfig::load(Path::new(path))?.engine));
    }
    let reports = harness.ablation_sweep(&cases, &configs)?;
    let table = render_comparison(&reports);
    write(&a.set.common.out.join("ablation.json"), serde_json::to_string_pretty(&reports)?)?;
    write(&a.set.common.out.join("ablation.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn trace(a: TraceArgs) -> CliResult {
    let text = fs::read_to_string(&a.path).map_err(|e| Failure::Load(format!("cannot read {}: {e}", a.path.display())))?;
    let trace = Trace::parse_jsonl(&text).map_err(|e| Failure::Load(format!("{}: {e}", a.path.display())))?;
    if let Some(n) = a.step {
        if n as usize >= trace.steps.len() {
            return Err(Failure::Load(format!("step {n} out of range (trace has {} steps)", trace.steps.len())));
        }
    }
    let h = &trace.header;
    println!("case {} mode {:?} route {} prompts {}", h.case_id, h.mode, h.route.map_or("none", Route::as_str), h.prompt_version);
    // Step 0's delta includes the profile and routing calls made before it.
    let mut prev = CallLedger::default();
    for s in &trace.steps {
        let l = &s.ledger;
        if a.step.is_none_or(|n| n == s.index) {
            println!(
                "{:>3}  {:<15} {:<17} {:<6} +editor {} +segmenter {} +mllm {}{}",
                s.index,
                s.action.as_str(),
                s.tool().unwrap_or("-"),
                format!("{:?}", s.status).to_lowercase(),
                l.editor_calls - prev.editor_calls,
                l.segmenter_calls - prev.segmenter_calls,
                l.mllm_calls - prev.mllm_calls,
                s.error_kind.as_deref().map(|k| format!("  [{k}]")).unwrap_or_default(),
            );
        }
        prev = l.clone();
    }
    if a.step.is_none() {
        let f = &trace.footer;
        println!("outcome {:?} fallback {} steps {} calls {}", f.outcome, f.fallback, f.steps, ledger_text(&f.ledger));
    }
    Ok(())
}
