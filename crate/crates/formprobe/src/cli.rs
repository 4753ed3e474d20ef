//! Command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chrono::{Local, NaiveDateTime};
use clap::{Parser, Subcommand};
use formprobe_core::dom::{classify_nodes, extract_form_model, parse_document, DomError, ElementKind, FormSelector, NodeId};
use formprobe_core::embed::{build_embedding_space, EmbedError, TextEmbedProvider};
use formprobe_core::ferg::{build_ferg, describe_edges, EdgeKind, Ferg, FergBuilder, FergError};
use formprobe_core::llm::{CompletionBackend, OracleMock, ScriptEntry, ScriptedMock};
use formprobe_core::pipeline::{
    coverage_report, observations_from_records, observations_from_tests, run_test, CoverageReport, ExpectedState,
    Pipeline, PipelineError, TestOutcome,
};
use formprobe_core::simulator::{Coverage, FormSpec, SimExecutor};
use formprobe_core::submission::Executor;
use rayon::prelude::*;
use serde::Serialize;

use crate::cache::SpaceCache;
use crate::config::{BackendKind, CliConfig, ConfigError, PipelineFlags};
use crate::io::{load_spec, read_json, read_plan, read_run_db, read_text, write_json, write_run_db, write_text, IoError};
use crate::remote::{RemoteChat, RemoteExecutor};
use crate::server::{BindError, SimServer};

pub mod exit {
    pub const OK: i32 = 0;
    /// IO, parse or pipeline failure.
    pub const ERROR: i32 = 1;
    /// Bad flags or configuration.
    pub const CONFIG: i32 = 2;
    /// Generation finished without a passing assignment for some target.
    pub const NO_PASSING: i32 = 3;
    /// Some replayed test did not reproduce its expected state.
    pub const TESTS_FAILED: i32 = 4;
}

#[derive(Debug, Parser)]
#[command(name = "formprobe", version, about = "Generate and replay tests for web forms")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a form's entity relation graph and write it as JSON (and DOT).
    Analyze {
        html: PathBuf,
        /// Form to analyse: `#id`, `name`, or a 0-based index.
        #[arg(long)]
        form: Option<String>,
        #[arg(long)]
        dot: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for cached embedding spaces.
        #[arg(long)]
        cache: Option<PathBuf>,
        #[command(flatten)]
        flags: PipelineFlags,
    },
    /// Run the pipeline on each target and write its test plan and run
    /// database.
    Generate {
        /// A simulator spec (JSON) or a remote executor endpoint (http URL).
        #[arg(long = "target", required = true)]
        targets: Vec<String>,
        /// Form page URL, for remote executor targets.
        #[arg(long)]
        url: Option<String>,
        #[arg(long)]
        form: Option<String>,
        /// Targets processed in parallel.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        flags: PipelineFlags,
    },
    /// Score a test plan or run database against a spec's submission
    /// states.
    Report {
        /// A `.jsonl` run database or a test plan.
        input: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Replay a test plan and compare observed with expected states.
    RunTests {
        plan: PathBuf,
        /// A simulator spec (JSON) or a remote executor endpoint (http URL).
        #[arg(long)]
        target: String,
        #[command(flatten)]
        flags: PipelineFlags,
    },
    /// Serve a simulator spec over the executor protocol.
    Simulate {
        spec: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{path}: {source}")]
    Dom { path: PathBuf, source: DomError },
    #[error("{path}: {message}")]
    Analysis { path: PathBuf, message: String },
    #[error("{target}: {source}")]
    Pipeline { target: String, source: PipelineError },
    #[error("{0}: the plan has no tests")]
    EmptyPlan(PathBuf),
    #[error(transparent)]
    Bind(#[from] BindError),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => exit::CONFIG,
            _ => exit::ERROR,
        }
    }
}

/// Where a pipeline submits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Target {
    Spec(PathBuf),
    Remote(String),
}

impl Target {
    pub fn parse(s: &str) -> Target {
        if s.starts_with("http://") || s.starts_with("https://") {
            Target::Remote(s.to_string())
        } else {
            Target::Spec(PathBuf::from(s))
        }
    }
}

fn env_var(name: &str) -> Option<String> {
    std::env::var(name).ok()
}

fn slug(s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.is_empty() && !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_end_matches('-').to_string()
}

#[derive(Debug, Serialize)]
struct ClassifiedNode<'a> {
    id: NodeId,
    tag: &'a str,
    kind: ElementKind,
}

#[derive(Debug, Serialize)]
struct AnalysisDump<'a, F: Serialize, T: Serialize> {
    source: String,
    provider: String,
    fields: F,
    texts: T,
    nodes: Vec<ClassifiedNode<'a>>,
    ferg: &'a Ferg,
    edges: Vec<String>,
}

fn analyze(
    html_path: &Path,
    form: Option<&str>,
    dot: bool,
    out: &Path,
    cache: Option<&Path>,
    cfg: &CliConfig,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let html = read_text(html_path)?;
    let dom_err = |source| CliError::Dom { path: html_path.into(), source };
    let tree = parse_document(&html).map_err(dom_err)?;
    let selector = form.map(FormSelector::parse);
    let model = extract_form_model(&tree, selector.as_ref()).map_err(dom_err)?;
    let provider = cfg.text_provider()?;
    let params = cfg.node2vec_params();
    let analysis_err = |message: String| CliError::Analysis { path: html_path.into(), message };
    let cache = cache.map(SpaceCache::new);
    let key = SpaceCache::key(&tree, &provider.id(), &params);
    let space = match cache.as_ref().and_then(|c| c.get(&key)) {
        Some(s) => s,
        None => {
            let s = build_embedding_space(&model, &tree, &*provider, &params)
                .map_err(|e: EmbedError| analysis_err(e.to_string()))?;
            if let Some(c) = &cache {
                c.put(&key, &s)?;
            }
            s
        }
    };
    let ferg = build_ferg(&model, &space, &cfg.hints, &cfg.pruning).map_err(|e: FergError| analysis_err(e.to_string()))?;
    let classes = classify_nodes(&tree);
    let dump = AnalysisDump {
        source: html_path.display().to_string(),
        provider: provider.id(),
        fields: &model.fields,
        texts: &model.texts,
        nodes: tree.nodes().iter().map(|n| ClassifiedNode { id: n.id, tag: &n.tag, kind: classes.kind(n.id) }).collect(),
        ferg: &ferg,
        edges: describe_edges(&ferg),
    };
    let stem = html_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "form".into());
    let json_path = out.join(format!("{stem}.ferg.json"));
    write_json(&json_path, &dump)?;
    let count = |k: EdgeKind| ferg.edges().iter().filter(|e| e.kind == k).count();
    let _ = writeln!(
        stdout,
        "{}: {} fields, {} texts, {} local edges, {} relevant-input edges -> {}",
        html_path.display(),
        model.fields.len(),
        model.texts.len(),
        count(EdgeKind::LocalTextual),
        count(EdgeKind::RelevantInput),
        json_path.display()
    );
    if dot {
        let dot_path = out.join(format!("{stem}.dot"));
        write_text(&dot_path, &ferg.to_dot())?;
        let _ = writeln!(stdout, "{}", dot_path.display());
    }
    Ok(())
}

/// What one `generate` target produced.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetSummary {
    pub id: String,
    pub plan: PathBuf,
    pub runs: PathBuf,
    pub iterations: usize,
    pub passing: bool,
    pub tests: usize,
    pub coverage: Option<Coverage>,
}

fn load_script(path: &Path) -> Result<Vec<ScriptEntry>, CliError> {
    Ok(read_json(path)?)
}

fn generate_one(
    cfg: &CliConfig,
    target: &Target,
    url: Option<&str>,
    form: Option<&str>,
    session: usize,
) -> Result<TargetSummary, CliError> {
    let provider = cfg.text_provider()?;
    let label = match target {
        Target::Spec(p) => p.display().to_string(),
        Target::Remote(e) => e.clone(),
    };
    let (spec, id, page_url, now): (Option<Arc<FormSpec>>, String, String, NaiveDateTime) = match target {
        Target::Spec(p) => {
            let spec = Arc::new(load_spec(p)?);
            let now = cfg.now.unwrap_or_else(|| spec.reference_date.and_hms_opt(9, 0, 0).expect("valid time"));
            let url = url.map(String::from).unwrap_or_else(|| spec.url().to_string());
            (Some(spec.clone()), spec.id().to_string(), url, now)
        }
        Target::Remote(_) => {
            let url = url.ok_or_else(|| CliError::Usage("remote targets need --url".into()))?;
            (None, slug(url), url.to_string(), cfg.now.unwrap_or_else(|| Local::now().naive_local()))
        }
    };
    let backend: Box<dyn CompletionBackend> = match (cfg.backend, &spec) {
        (BackendKind::OracleMock, Some(s)) => Box::new(OracleMock::new(s.clone())),
        (BackendKind::OracleMock, None) => {
            return Err(CliError::Usage("the oracle mock answers from a simulator spec; use a spec target".into()))
        }
        (BackendKind::ScriptedMock, s) => {
            let path = cfg.script.as_deref().ok_or_else(|| CliError::Usage("the scripted mock needs --script".into()))?;
            let mock = ScriptedMock::new(load_script(path)?);
            // Unscripted prompts fall through to the oracle when there is one.
            Box::new(match s {
                Some(s) => mock.with_fallback(Arc::new(OracleMock::new(s.clone()))),
                None => mock,
            })
        }
        (BackendKind::Remote, _) => Box::new(RemoteChat::new(cfg.chat_settings()?)),
    };
    let mut executor: Box<dyn Executor + '_> = match (&spec, target) {
        (Some(s), _) => Box::new(SimExecutor::new(s)),
        (None, Target::Remote(endpoint)) => {
            Box::new(RemoteExecutor::new(endpoint, &format!("formprobe-{session}"), cfg.remote.timeout))
        }
        (None, Target::Spec(_)) => unreachable!("spec targets always load a spec"),
    };
    let mut pc = cfg.pipeline(now);
    pc.form = form.map(FormSelector::parse);
    let pipeline_err = |source| CliError::Pipeline { target: label.clone(), source };
    let run = Pipeline::open(&mut *executor, &*backend, provider, &page_url, pc)
        .and_then(Pipeline::run)
        .map_err(pipeline_err)?;
    let plan = run.plan(cfg.seed);
    let plan_path = cfg.out.join(format!("{id}.plan.json"));
    let runs_path = cfg.out.join(format!("{id}.runs.jsonl"));
    write_json(&plan_path, &plan)?;
    write_run_db(&runs_path, &run.records)?;
    let coverage = spec
        .as_deref()
        .and_then(|s| coverage_report(&observations_from_records(&run.records), Some(s)).coverage);
    Ok(TargetSummary {
        id,
        plan: plan_path,
        runs: runs_path,
        iterations: run.iterations,
        passing: run.passing.is_some(),
        tests: run.tests.len(),
        coverage,
    })
}

/// Runs every target, `cfg.jobs` at a time. Results keep target order.
pub fn generate(
    cfg: &CliConfig,
    targets: &[Target],
    url: Option<&str>,
    form: Option<&str>,
) -> Result<Vec<Result<TargetSummary, CliError>>, CliError> {
    cfg.require_backend()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} worker(s): {e}", cfg.jobs)))?;
    Ok(pool.install(|| {
        targets.par_iter().enumerate().map(|(i, t)| generate_one(cfg, t, url, form, i)).collect()
    }))
}

fn print_report(report: &CoverageReport, stdout: &mut dyn Write) {
    match &report.coverage {
        Some(c) => {
            let _ = writeln!(stdout, "coverage: {c}");
            let _ = writeln!(stdout, "passing: {}", report.passing);
            for r in &report.rows {
                let mark = if r.covered { "x" } else { " " };
                let _ = writeln!(stdout, "  [{mark}] {} ({})", r.feedback, r.inputs.join(", "));
            }
        }
        None => {
            let _ = writeln!(stdout, "passing: {}", report.passing);
            let _ = writeln!(stdout, "observed states:");
            for o in &report.observed {
                let _ = writeln!(stdout, "  {:>4}  {}", o.count, o.feedback);
            }
        }
    }
}

fn report(input: &Path, truth: Option<&Path>, json: bool, stdout: &mut dyn Write) -> Result<(), CliError> {
    let observed = if input.extension().is_some_and(|e| e == "jsonl") {
        observations_from_records(&read_run_db(input)?)
    } else {
        observations_from_tests(&read_plan(input)?.tests)
    };
    let spec = truth.map(load_spec).transpose()?;
    let r = coverage_report(&observed, spec.as_ref());
    if json {
        let _ = writeln!(stdout, "{}", serde_json::to_string_pretty(&r).expect("report serializes"));
    } else {
        print_report(&r, stdout);
    }
    Ok(())
}

fn describe(e: &ExpectedState) -> String {
    match e {
        ExpectedState::Success { url } => format!("success at {url}"),
        ExpectedState::Failure { feedback } => {
            let texts: Vec<String> = feedback.iter().map(|f| format!("{:?}", f.text)).collect();
            format!("failure [{}]", texts.join(", "))
        }
    }
}

/// Replays a plan; returns one outcome per test.
pub fn run_tests(cfg: &CliConfig, plan_path: &Path, target: &Target) -> Result<Vec<TestOutcome>, CliError> {
    let plan = read_plan(plan_path)?;
    if plan.tests.is_empty() {
        return Err(CliError::EmptyPlan(plan_path.into()));
    }
    let spec = match target {
        Target::Spec(p) => Some(load_spec(p)?),
        Target::Remote(_) => None,
    };
    let mut executor: Box<dyn Executor + '_> = match (&spec, target) {
        (Some(s), _) => Box::new(SimExecutor::new(s)),
        (None, Target::Remote(e)) => Box::new(RemoteExecutor::new(e, "formprobe-replay", Duration::from_secs(60))),
        (None, Target::Spec(_)) => unreachable!("spec targets always load a spec"),
    };
    let provider: Arc<dyn TextEmbedProvider> = cfg.text_provider()?;
    let mut builder = FergBuilder::new(provider, cfg.node2vec_params(), cfg.pruning.clone());
    builder.hints = cfg.hints.clone();
    Ok(plan.tests.iter().map(|t| run_test(&mut *executor, t, &mut builder, &cfg.keywords)).collect())
}

fn simulate(spec_path: &Path, bind: &str, stdout: &mut dyn Write) -> Result<(), CliError> {
    let spec = Arc::new(load_spec(spec_path)?);
    let url = spec.url().to_string();
    let server = SimServer::start(spec, bind)?;
    let _ = writeln!(stdout, "serving {} at {} (form page: {url})", spec_path.display(), server.endpoint());
    let _ = stdout.flush();
    server.wait();
    Ok(())
}

/// Runs a parsed command line; returns the process exit code.
pub fn execute(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    match dispatch(cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli, stdout: &mut dyn Write) -> Result<i32, CliError> {
    match cli.command {
        Command::Analyze { html, form, dot, out, cache, flags } => {
            let cfg = CliConfig::from_flags(&flags, None, out, env_var)?;
            analyze(&html, form.as_deref(), dot, &cfg.out, cache.as_deref(), &cfg, stdout)?;
            Ok(exit::OK)
        }
        Command::Generate { targets, url, form, jobs, out, flags } => {
            let cfg = CliConfig::from_flags(&flags, jobs, out, env_var)?;
            let targets: Vec<Target> = targets.iter().map(|t| Target::parse(t)).collect();
            let results = generate(&cfg, &targets, url.as_deref(), form.as_deref())?;
            let mut code = exit::OK;
            let mut first_err = None;
            for r in results {
                match r {
                    Ok(s) => {
                        let cov = s.coverage.as_ref().map(|c| format!(", coverage {c}")).unwrap_or_default();
                        let _ = writeln!(
                            stdout,
                            "{}: {} iteration(s), passing {}, {} test(s){cov} -> {}",
                            s.id,
                            s.iterations,
                            s.passing,
                            s.tests,
                            s.plan.display()
                        );
                        if !s.passing && code == exit::OK {
                            code = exit::NO_PASSING;
                        }
                    }
                    Err(e) => {
                        let _ = writeln!(stdout, "error: {e}");
                        first_err.get_or_insert(e);
                    }
                }
            }
            match first_err {
                Some(e) => Err(e),
                None => Ok(code),
            }
        }
        Command::Report { input, truth, json } => {
            report(&input, truth.as_deref(), json, stdout)?;
            Ok(exit::OK)
        }
        Command::RunTests { plan, target, flags } => {
            let cfg = CliConfig::from_flags(&flags, None, None, env_var)?;
            let outcomes = run_tests(&cfg, &plan, &Target::parse(&target))?;
            let failed = outcomes.iter().filter(|o| !o.passed).count();
            for o in &outcomes {
                if o.passed {
                    let _ = writeln!(stdout, "PASS {}", o.id);
                } else {
                    let why = match (&o.error, &o.observed) {
                        (Some(e), _) => e.clone(),
                        (None, Some(obs)) => format!("observed {}", describe(obs)),
                        (None, None) => "no observation".into(),
                    };
                    let _ = writeln!(stdout, "FAIL {}: {why}", o.id);
                }
            }
            let _ = writeln!(stdout, "{} passed, {failed} failed", outcomes.len() - failed);
            Ok(if failed == 0 { exit::OK } else { exit::TESTS_FAILED })
        }
        Command::Simulate { spec, bind } => {
            simulate(&spec, &bind, stdout)?;
            Ok(exit::OK)
        }
    }
}
