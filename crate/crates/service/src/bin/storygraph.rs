use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use storygraph_core::pipeline::{parse_log, replay, state_hash, Engine, PipelineState, StorySpec, Verdict};
use storygraph_core::textgen::{GenerationParams, GeneratorBackend, TemplateSet};
use storygraph_service::config::{build_backend, load_templates, scripted_backend, BackendSettings, ServiceConfig};
use storygraph_service::headless::{run_story, write_outputs};
use storygraph_service::{router, AppState, SessionStore};
use storygraph_stats::{
    compare_conditions, load_dataset, paired_subset, render_report, report_rows, run_comparison, ComparisonSpec,
    ConditionGroup, GroupSpec, Measure, Method, RatingRecord, SdDenominator, Subgroup,
};

#[derive(Parser)]
#[command(name = "storygraph", version, about = "Knowledge-graph guided story generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a whole story without stopping for edits.
    Run(RunArgs),
    /// Re-execute a session log and check it reproduces the recorded state.
    Replay {
        /// events.jsonl, or a directory holding one.
        log: PathBuf,
        #[arg(long)]
        templates: Option<PathBuf>,
    },
    /// Survey statistics.
    Stats {
        #[command(subcommand)]
        command: StatsCommand,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Scripted,
    Http,
}

#[derive(Args)]
struct RunArgs {
    /// Story spec JSON.
    spec: PathBuf,
    #[arg(long, value_enum, default_value = "on")]
    kg: Switch,
    /// Defaults to scripted when --script is given, else to the config's backend.
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Scripted replies: a JSON array, or an object keyed by template id.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Service config TOML supplying the backend, templates and sampling settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Number of scenes; the spec's value (5 unless set) when omitted.
    #[arg(long)]
    scenes: Option<u32>,
}

#[derive(Subcommand)]
enum StatsCommand {
    /// Mean (SD) table per group, with optional Wilcoxon comparisons.
    Report {
        /// Ratings as CSV or JSON.
        data: PathBuf,
        /// LABEL=CONDITION[@GENRE]; one row per flag. Default: one row per condition.
        #[arg(long = "group")]
        groups: Vec<String>,
        /// A:B:MEASURE[@GENRE]
        #[arg(long = "compare")]
        comparisons: Vec<String>,
        /// Use the n-1 denominator for standard deviations.
        #[arg(long)]
        sample_sd: bool,
        #[arg(long)]
        json: bool,
    },
    /// Wilcoxon signed-rank test between two conditions.
    Compare {
        data: PathBuf,
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
        /// Restrict to participants in this genre group.
        #[arg(long)]
        group: Option<String>,
        #[arg(long, default_value = "aggregate")]
        measure: String,
        #[arg(long)]
        json: bool,
    },
}

/// Exit codes: 1 pipeline failure or mismatch, 2 bad input, 3 corrupt log.
#[derive(Debug)]
struct Exit(u8, anyhow::Error);

fn input<E: Into<anyhow::Error>>(e: E) -> Exit {
    Exit(2, e.into())
}

fn failure<E: Into<anyhow::Error>>(e: E) -> Exit {
    Exit(1, e.into())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Replay { log, templates } => cmd_replay(&log, templates.as_deref()),
        Command::Stats { command } => cmd_stats(command),
        Command::Serve { config } => cmd_serve(&config).map_err(failure),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Exit(code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<(), Exit> {
    let text = std::fs::read_to_string(&args.spec)
        .with_context(|| format!("reading spec {}", args.spec.display()))
        .map_err(input)?;
    let mut spec: StorySpec = serde_json::from_str(&text)
        .with_context(|| format!("parsing spec {}", args.spec.display()))
        .map_err(input)?;
    if let Some(n) = args.scenes {
        spec.scene_count = n;
    }
    spec.edit_mode = false;
    let input_spec = spec.clone();
    spec.kg_enabled = args.kg == Switch::On;
    spec.validate().map_err(input)?;

    let config = args
        .config
        .as_deref()
        .map(ServiceConfig::load)
        .transpose()
        .map_err(input)?;
    let backend: Arc<dyn GeneratorBackend> = match (args.backend, &args.script, &config) {
        (None | Some(BackendKind::Scripted), Some(script), _) => scripted_backend(script).map_err(input)?,
        (Some(BackendKind::Scripted), None, _) => return Err(input(anyhow!("--backend scripted needs --script"))),
        (Some(BackendKind::Http), _, Some(c)) if !matches!(c.backend, BackendSettings::Http(_)) => {
            return Err(input(anyhow!("--backend http needs a config with an http backend")))
        }
        (_, _, Some(c)) => build_backend(&c.backend).map_err(input)?,
        (Some(BackendKind::Http), _, None) => return Err(input(anyhow!("--backend http needs --config"))),
        (None, None, None) => return Err(input(anyhow!("give --script or --config to choose a backend"))),
    };
    let template_dir = args
        .templates
        .clone()
        .or_else(|| config.as_ref().and_then(|c| c.template_dir.clone()));
    let templates = load_templates(template_dir.as_deref()).map_err(input)?;
    let params = config.map(|c| c.generation).unwrap_or_default();
    let engine = Engine::new(backend.as_ref(), &templates).with_params(params);

    let outputs = run_story(&engine, spec).map_err(failure)?;
    for d in &outputs.diagnostics {
        eprintln!("note: {}: {}", d.step, d.message);
    }
    let written = write_outputs(&args.out, &input_spec, &outputs)
        .with_context(|| format!("writing to {}", args.out.display()))
        .map_err(failure)?;
    println!(
        "{} scenes, {} graph entries, {} log records",
        outputs.state.scenes.len(),
        outputs.state.graph.len(),
        outputs.records.len()
    );
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_replay(path: &Path, templates: Option<&Path>) -> Result<(), Exit> {
    let (log_path, state_path) = if path.is_dir() {
        (path.join("events.jsonl"), Some(path.join("state.json")))
    } else {
        (path.to_path_buf(), None)
    };
    let text = std::fs::read_to_string(&log_path)
        .with_context(|| format!("reading {}", log_path.display()))
        .map_err(input)?;
    let templates: TemplateSet = load_templates(templates).map_err(input)?;
    let records = parse_log(&text).map_err(|e| Exit(3, e.into()))?;
    let report = replay(&records, &templates).map_err(|e| Exit(3, e.into()))?;
    if let Verdict::Mismatch { seq, reason } = &report.verdict {
        println!("MISMATCH at record {seq}: {reason}");
        return Err(Exit(1, anyhow!("replay does not reproduce the log")));
    }
    if let Some(state_path) = state_path.filter(|p| p.is_file()) {
        let stored: PipelineState = std::fs::read_to_string(&state_path)
            .map_err(anyhow::Error::from)
            .and_then(|t| serde_json::from_str(&t).map_err(Into::into))
            .with_context(|| format!("reading {}", state_path.display()))
            .map_err(input)?;
        let stored_hash = state_hash(&stored);
        if report.final_hash.as_deref() != Some(stored_hash.as_str()) {
            println!("MISMATCH: {} does not match the replayed state", state_path.display());
            return Err(Exit(1, anyhow!("stored state differs from replay")));
        }
    }
    println!(
        "MATCH: {} commands replayed, final state {}",
        report.applied,
        report.final_hash.as_deref().unwrap_or("(none)")
    );
    if report.pending > 0 {
        println!("note: {} trailing records belong to an uncommitted operation", report.pending);
    }
    Ok(())
}

fn parse_comparison(s: &str) -> Result<ComparisonSpec> {
    let (body, genre) = match s.split_once('@') {
        Some((b, g)) => (b, Some(g.trim().to_string())),
        None => (s, None),
    };
    let parts: Vec<&str> = body.split(':').map(str::trim).collect();
    let (a, b, measure) = match parts.as_slice() {
        [a, b] => (*a, *b, Measure::Aggregate),
        [a, b, m] => (*a, *b, m.parse::<Measure>()?),
        _ => bail!("comparison {s:?} must look like A:B[:MEASURE][@GENRE]"),
    };
    Ok(ComparisonSpec {
        condition_a: a.to_string(),
        condition_b: b.to_string(),
        genre_group: genre,
        measure,
    })
}

fn default_groups(data: &[RatingRecord]) -> Vec<GroupSpec> {
    let mut seen: Vec<String> = Vec::new();
    for r in data {
        if !seen.contains(&r.condition) {
            seen.push(r.condition.clone());
        }
    }
    seen.into_iter()
        .map(|c| GroupSpec {
            label: c.clone(),
            condition: c,
            genre_group: None,
        })
        .collect()
}

fn cmd_stats(command: StatsCommand) -> Result<(), Exit> {
    match command {
        StatsCommand::Report {
            data,
            groups,
            comparisons,
            sample_sd,
            json,
        } => {
            let dataset = load_dataset(&data).map_err(input)?;
            let groups = if groups.is_empty() {
                default_groups(&dataset)
            } else {
                groups
                    .iter()
                    .map(|g| g.parse::<GroupSpec>())
                    .collect::<Result<_, _>>()
                    .map_err(input)?
            };
            let comparisons: Vec<ComparisonSpec> = comparisons
                .iter()
                .map(|c| parse_comparison(c))
                .collect::<Result<_>>()
                .map_err(input)?;
            let denom = if sample_sd {
                SdDenominator::Sample
            } else {
                SdDenominator::Population
            };
            if json {
                let rows = report_rows(&dataset, &groups, denom).map_err(failure)?;
                let tests: Vec<serde_json::Value> = comparisons
                    .iter()
                    .map(|c| match run_comparison(&dataset, c) {
                        Ok(r) => serde_json::json!({ "comparison": c, "result": r }),
                        Err(e) => serde_json::json!({ "comparison": c, "error": e.to_string() }),
                    })
                    .collect();
                let out = serde_json::json!({ "rows": rows, "comparisons": tests });
                println!("{}", serde_json::to_string_pretty(&out).expect("report serializes"));
            } else {
                print!(
                    "{}",
                    render_report(&dataset, &groups, &comparisons, denom).map_err(failure)?
                );
            }
            Ok(())
        }
        StatsCommand::Compare {
            data,
            a,
            b,
            group,
            measure,
            json,
        } => {
            let dataset = load_dataset(&data).map_err(input)?;
            let measure: Measure = measure.parse().map_err(input)?;
            let ga = ConditionGroup::select(&dataset, &a, None).map_err(failure)?;
            let gb = ConditionGroup::select(&dataset, &b, None).map_err(failure)?;
            let sub = group.as_deref().map(|g| Subgroup::genre(&dataset, g));
            let cmp = paired_subset(&ga, &gb, sub.as_ref());
            let result = compare_conditions(&cmp, measure).map_err(failure)?;
            if json {
                let out = serde_json::json!({ "a": a, "b": b, "group": group, "measure": measure, "pairs": cmp.pairs.len(), "result": result });
                println!("{}", serde_json::to_string_pretty(&out).expect("result serializes"));
            } else {
                println!(
                    "{a} vs {b}{}, {measure}: pairs = {}, n = {}, W+ = {}, W- = {}, W = {}, p = {:.3} ({})",
                    group.as_deref().map(|g| format!(" [{g}]")).unwrap_or_default(),
                    cmp.pairs.len(),
                    result.n_used,
                    result.w_plus,
                    result.w_minus,
                    result.w,
                    result.p_two_sided,
                    match result.method {
                        Method::Exact => "exact",
                        Method::NormalApprox => "normal approx.",
                    }
                );
            }
            Ok(())
        }
    }
}

fn cmd_serve(config_path: &Path) -> Result<()> {
    let config = ServiceConfig::load(config_path)?;
    let store = SessionStore::open(&config.session_dir)
        .with_context(|| "refusing to start: the session directory must be writable")?;
    let templates = config.templates()?;
    let backend = build_backend(&config.backend)?;
    let params: GenerationParams = config.generation.clone();
    let app = AppState::new(store, backend, templates, params, config.defaults.clone());
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let unfinished = app.restore()?;
        for session in unfinished {
            if let Some(guard) = session.try_claim() {
                tracing::info!(session = %session.id, "resuming generation");
                app.spawn_job(session, storygraph_service::session::Job::Drive, guard);
            }
        }
        let listener = tokio::net::TcpListener::bind(config.listen)
            .await
            .with_context(|| format!("binding {}", config.listen))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(app))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
