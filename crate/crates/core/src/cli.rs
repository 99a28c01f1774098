//! The `ila` command line: ingest, run, replay, analyze, stats.
//!
//! Exit codes: 0 success, 1 infrastructure error, 2 configuration error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use crate::agent::{self, write_log, write_run_meta, AgentConfig, Resources, Step};
use crate::analysis::{self, Selection};
use crate::bench::{self, BenchConfig, BenchResources, Mode, ProviderSource, SharedProvider};
use crate::docstore::DocStore;
use crate::par::ExecMode;
use crate::policy::{OpenAiProvider, PolicyConfig, ScriptBook};
use crate::retrieval::{Embedder, HashingEmbedder, HttpEmbedder, VectorIndex, DEFAULT_TOP_K};
use crate::sandbox::{Sandbox, ToolchainConfig};
use crate::typeindex::{self, HeuristicConfig, TypeIndex};

pub const STORE_FILE: &str = "store.json";
pub const INDEX_FILE: &str = "index.json";
pub const TYPES_FILE: &str = "types.json";

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Infra(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Infra(_) => 1,
            CliError::Config(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Infra(m) => write!(f, "error: {m}"),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn infra_err(e: impl std::fmt::Display) -> CliError {
    CliError::Infra(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "ila", version, about = "Documentation-exploring coding agents and their benchmark harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the document store, vector index and (optionally) type index.
    Ingest(IngestArgs),
    /// Run one mode over a problem set and grade it.
    Run(RunArgs),
    /// Re-dispatch the actions of a trajectory log and compare observations.
    Replay(ReplayArgs),
    /// Stage profiles and transition matrices from a trajectory log.
    Analyze(AnalyzeArgs),
    /// Problem corpus statistics.
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Hash,
    Http,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub provider: Option<EmbedderKind>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
    pub max_retries: Option<u32>,
}

impl EmbeddingConfig {
    fn build(&self) -> Result<Box<dyn Embedder>, CliError> {
        match self.provider.unwrap_or(EmbedderKind::Hash) {
            EmbedderKind::Hash => Ok(Box::new(HashingEmbedder::default())),
            EmbedderKind::Http => {
                let endpoint = self.endpoint.clone().ok_or_else(|| config_err("embedding endpoint is not set"))?;
                let model = self.model.clone().ok_or_else(|| config_err("embedding model is not set"))?;
                let key = std::env::var(self.api_key_env.as_deref().unwrap_or("ILA_EMBED_API_KEY")).ok();
                Ok(Box::new(HttpEmbedder::new(endpoint, model, key, self.max_retries.unwrap_or(3))))
            }
        }
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Documentation root containing manifest.txt.
    #[arg(long)]
    pub docs: PathBuf,
    /// Output directory for store.json, index.json and types.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Explicit type manifest (JSON).
    #[arg(long)]
    pub type_manifest: Option<PathBuf>,
    /// Derive type entries from headings such as `## class Name`.
    #[arg(long)]
    pub type_heuristic: bool,
    #[arg(long, value_enum, default_value = "hash")]
    pub embedder: EmbedderKind,
    #[arg(long)]
    pub embed_endpoint: Option<String>,
    #[arg(long)]
    pub embed_model: Option<String>,
    /// Embed sequentially instead of in parallel.
    #[arg(long)]
    pub sequential: bool,
}

/// `ila run` settings from a TOML file; command-line flags override them.
#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Option<String>,
    pub problems: Option<PathBuf>,
    /// Directory written by `ila ingest`.
    pub index_dir: Option<PathBuf>,
    pub toolchain: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub max_turns: Option<usize>,
    pub top_k: Option<usize>,
    pub parallelism: Option<usize>,
    pub seed: Option<u64>,
    /// Scripted replies keyed by problem id; replaces the live provider.
    pub script: Option<PathBuf>,
    pub use_type_index: Option<bool>,
    pub policy: PolicyConfig,
    pub embedding: EmbeddingConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let mut config: Self = toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut config.problems,
            &mut config.index_dir,
            &mut config.toolchain,
            &mut config.out,
            &mut config.script,
            &mut config.policy.transcript,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }
}

#[derive(Debug, Args, Clone, Default)]
pub struct RunOverrides {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub problems: Option<PathBuf>,
    #[arg(long)]
    pub index_dir: Option<PathBuf>,
    #[arg(long)]
    pub toolchain: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub max_turns: Option<usize>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub script: Option<PathBuf>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Disable TypeLookup even when a type index exists.
    #[arg(long)]
    pub no_type_lookup: bool,
    /// Run problems one at a time.
    #[arg(long)]
    pub sequential: bool,
}

impl RunOverrides {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! take {
            ($($field:ident),*) => { $( if let Some(v) = &self.$field { c.$field = Some(v.clone()); } )* };
        }
        take!(mode, problems, index_dir, toolchain, out, max_turns, top_k, parallelism, seed, script);
        if let Some(e) = &self.endpoint {
            c.policy.endpoint = Some(e.clone());
        }
        if let Some(m) = &self.model {
            c.policy.model = Some(m.clone());
        }
        if let Some(t) = self.temperature {
            c.policy.temperature = t;
        }
        if self.no_type_lookup {
            c.use_type_index = Some(false);
        }
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub run: RunOverrides,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Trajectory log to replay.
    #[arg(long)]
    pub log: PathBuf,
    /// Where to write the replayed log.
    #[arg(long)]
    pub replayed: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunOverrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FilterArg {
    All,
    Success,
}

impl From<FilterArg> for Selection {
    fn from(f: FilterArg) -> Self {
        match f {
            FilterArg::All => Selection::All,
            FilterArg::Success => Selection::SuccessOnly,
        }
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = analysis::DEFAULT_STAGES)]
    pub stages: usize,
    /// Trajectories used for the stage profile.
    #[arg(long, value_enum, default_value = "success")]
    pub profile_filter: FilterArg,
    /// Trajectories used for the transition matrix.
    #[arg(long, value_enum, default_value = "all")]
    pub transition_filter: FilterArg,
    /// Comma-separated label order.
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub problems: PathBuf,
    /// Also check that every repair source compiles under this toolchain.
    #[arg(long)]
    pub toolchain: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .try_init();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<i32, CliError> {
    match command {
        Command::Ingest(a) => cmd_ingest(&a),
        Command::Run(a) => cmd_run(&a.run),
        Command::Replay(a) => cmd_replay(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Stats(a) => cmd_stats(&a),
    }
}

pub fn cmd_ingest(a: &IngestArgs) -> Result<i32, CliError> {
    let embedding = EmbeddingConfig {
        provider: Some(a.embedder),
        endpoint: a.embed_endpoint.clone(),
        model: a.embed_model.clone(),
        ..Default::default()
    };
    let embedder = embedding.build()?;
    let manifest = match &a.type_manifest {
        Some(p) if !p.is_file() => return Err(config_err(format!("type manifest not found: {}", p.display()))),
        Some(p) => Some(typeindex::load_manifest(p).map_err(config_err)?),
        None => None,
    };
    let store = DocStore::ingest(&a.docs).map_err(config_err)?;
    let mode = if a.sequential { ExecMode::Sequential } else { ExecMode::Parallel };
    let index = VectorIndex::build(&store, embedder.as_ref(), mode).map_err(infra_err)?;
    fs::create_dir_all(&a.out).map_err(|e| infra_err(format!("cannot create {}: {e}", a.out.display())))?;
    store.save(&a.out.join(STORE_FILE)).map_err(infra_err)?;
    index.save(&a.out.join(INDEX_FILE)).map_err(infra_err)?;
    println!("sections: {}", store.section_count());
    println!("chunks: {}", store.chunks().len());
    println!("index entries: {} (dim {}, {})", index.len(), index.dim, index.provider_tag);
    if manifest.is_some() || a.type_heuristic {
        let heuristic = a.type_heuristic.then(HeuristicConfig::default);
        let types = TypeIndex::build(&store, manifest.as_ref(), heuristic.as_ref()).map_err(config_err)?;
        types.save(&a.out.join(TYPES_FILE)).map_err(infra_err)?;
        println!("type entries: {}", types.len());
    }
    Ok(0)
}

/// Everything a run needs, loaded and checked up front.
struct Loaded {
    config: RunConfig,
    mode: Mode,
    problems: Vec<bench::Problem>,
    store: Option<DocStore>,
    index: Option<VectorIndex>,
    types: Option<TypeIndex>,
    embedder: Box<dyn Embedder>,
    sandbox: Sandbox,
}

fn require<'a>(value: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf, CliError> {
    value.as_ref().ok_or_else(|| config_err(format!("{what} is not set")))
}

fn load_run(overrides: &RunOverrides, need_index: Option<bool>) -> Result<Loaded, CliError> {
    let config = overrides.resolve()?;
    let mode_name = config.mode.clone().unwrap_or_else(|| "ila-agent".into());
    let mode = Mode::parse(&mode_name).ok_or_else(|| config_err(format!("unknown mode `{mode_name}`")))?;
    config.policy.validate().map_err(config_err)?;
    let problems_path = require(&config.problems, "problems")?;
    if !problems_path.exists() {
        return Err(config_err(format!("problems not found: {}", problems_path.display())));
    }
    let toolchain_path = require(&config.toolchain, "toolchain")?;
    let toolchain = ToolchainConfig::load(toolchain_path).map_err(config_err)?;
    let sandbox = Sandbox::new(toolchain).map_err(config_err)?;
    let problems = bench::load_problems(problems_path).map_err(config_err)?;
    let bad = bench::uncompilable_repair_sources(&problems, &sandbox);
    if !bad.is_empty() {
        return Err(config_err(format!("repair sources do not compile: {}", bad.join(", "))));
    }
    if config.max_turns == Some(0) || config.top_k == Some(0) || config.parallelism == Some(0) {
        return Err(config_err("max_turns, top_k and parallelism must be positive"));
    }
    let embedder = config.embedding.build()?;
    let (mut store, mut index, mut types) = (None, None, None);
    if need_index.unwrap_or(mode.needs_index()) {
        let dir = config.index_dir.as_ref().ok_or_else(|| {
            config_err(format!("mode {} needs the vector index: index_dir is not set", mode.as_str()))
        })?;
        let store_path = dir.join(STORE_FILE);
        let index_path = dir.join(INDEX_FILE);
        if !store_path.is_file() {
            return Err(config_err(format!("document store not found: {}", store_path.display())));
        }
        if !index_path.is_file() {
            return Err(config_err(format!("vector index not found: {}", index_path.display())));
        }
        let s = DocStore::load(&store_path).map_err(config_err)?;
        let i = VectorIndex::load(&index_path, &embedder.tag()).map_err(config_err)?;
        i.check_against(&s).map_err(config_err)?;
        let types_path = dir.join(TYPES_FILE);
        if config.use_type_index != Some(false) && types_path.is_file() {
            types = Some(TypeIndex::load(&types_path).map_err(config_err)?);
        }
        store = Some(s);
        index = Some(i);
    }
    Ok(Loaded { config, mode, problems, store, index, types, embedder, sandbox })
}

fn providers(config: &RunConfig) -> Result<Box<dyn ProviderSource>, CliError> {
    if let Some(script) = &config.script {
        return Ok(Box::new(ScriptBook::load(script).map_err(config_err)?));
    }
    let provider = OpenAiProvider::from_config(&config.policy)
        .map_err(|e| config_err(format!("{e} (set a script or a policy endpoint)")))?;
    Ok(Box::new(SharedProvider(provider)))
}

fn bench_config(config: &RunConfig, sequential: bool) -> BenchConfig {
    BenchConfig {
        agent: AgentConfig {
            max_turns: config.max_turns.unwrap_or(agent::DEFAULT_MAX_TURNS),
            policy: config.policy.clone(),
        },
        top_k: config.top_k.unwrap_or(DEFAULT_TOP_K),
        parallelism: if sequential { 1 } else { config.parallelism.unwrap_or(4) },
        exec: if sequential { ExecMode::Sequential } else { ExecMode::Parallel },
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| infra_err(format!("cannot write {}: {e}", path.display())))
}

pub fn cmd_run(overrides: &RunOverrides) -> Result<i32, CliError> {
    let loaded = load_run(overrides, None)?;
    let out = require(&loaded.config.out, "out")?.clone();
    let providers = providers(&loaded.config)?;
    let res = BenchResources {
        store: loaded.store.as_ref(),
        index: loaded.index.as_ref(),
        embedder: Some(loaded.embedder.as_ref()),
        types: loaded.types.as_ref(),
        sandbox: &loaded.sandbox,
    };
    let config = bench_config(&loaded.config, overrides.sequential);
    let output =
        bench::run_mode(&loaded.problems, loaded.mode, res, providers.as_ref(), &config).map_err(config_err)?;
    fs::create_dir_all(&out).map_err(|e| infra_err(format!("cannot create {}: {e}", out.display())))?;
    let report_json = serde_json::to_string_pretty(&output.report).map_err(infra_err)?;
    write_file(&out.join("report.json"), &(report_json + "\n"))?;
    let table = output.report.render();
    write_file(&out.join("report.txt"), &table)?;
    write_log(&out.join("trajectories.jsonl"), &output.trajectories).map_err(infra_err)?;
    let meta = json!({
        "mode": loaded.mode.as_str(),
        "seed": loaded.config.seed.unwrap_or(0),
        "problems": loaded.problems.len(),
        "system_prompt": crate::policy::SYSTEM_PROMPT_VERSION,
    });
    write_run_meta(&out.join("run_meta.json"), &output.trajectories, meta).map_err(infra_err)?;
    print!("{table}");
    for r in output.report.records.iter().filter(|r| r.infra_error.is_some()) {
        eprintln!("{}: {}", r.id, r.infra_error.as_deref().unwrap_or_default());
    }
    Ok(if output.report.has_infra_failures() { 1 } else { 0 })
}

pub fn cmd_replay(a: &ReplayArgs) -> Result<i32, CliError> {
    let loaded = load_run(&a.run, Some(true))?;
    let log = agent::read_log(&a.log).map_err(|e| config_err(format!("cannot read {}: {e}", a.log.display())))?;
    if log.corrupt_lines > 0 {
        return Err(config_err(format!("{} corrupt lines in {}", log.corrupt_lines, a.log.display())));
    }
    let res = Resources::new(
        loaded.store.as_ref().expect("loaded"),
        loaded.index.as_ref().expect("loaded"),
        loaded.embedder.as_ref(),
        loaded.types.as_ref(),
        &loaded.sandbox,
    );
    let res = Resources { top_k: loaded.config.top_k.unwrap_or(DEFAULT_TOP_K), ..res };
    let mut replayed = Vec::with_capacity(log.trajectories.len());
    let (mut steps, mut mismatches) = (0, 0);
    for traj in &log.trajectories {
        let problem = loaded
            .problems
            .iter()
            .find(|p| p.id == traj.problem_id)
            .ok_or_else(|| config_err(format!("log refers to unknown problem `{}`", traj.problem_id)))?;
        let fresh = agent::replay(traj, problem, &res);
        let mut copy = traj.clone();
        copy.steps = traj
            .steps
            .iter()
            .zip(fresh)
            .map(|(old, observation)| {
                steps += 1;
                if observation != old.observation {
                    mismatches += 1;
                    eprintln!("{} turn {}: observation differs", traj.problem_id, old.action.turn_index);
                }
                Step { action: old.action.clone(), observation }
            })
            .collect();
        replayed.push(copy);
    }
    if let Some(path) = &a.replayed {
        write_log(path, &replayed).map_err(infra_err)?;
    }
    println!("replayed {} trajectories, {steps} steps, {mismatches} mismatches", replayed.len());
    Ok(if mismatches == 0 { 0 } else { 1 })
}

pub fn cmd_analyze(a: &AnalyzeArgs) -> Result<i32, CliError> {
    if !a.log.is_file() {
        return Err(config_err(format!("log not found: {}", a.log.display())));
    }
    let labels = match &a.labels {
        Some(l) => analysis::label_order(l).map_err(config_err)?,
        None => analysis::default_labels(),
    };
    let log = analysis::load_log(&a.log).map_err(infra_err)?;
    let for_profile = analysis::select(&log.trajectories, a.profile_filter.into());
    let for_matrix = analysis::select(&log.trajectories, a.transition_filter.into());
    let profile = analysis::stage_profile(&for_profile, a.stages, &labels).map_err(analysis_err)?;
    let matrix = analysis::transition_matrix(&for_matrix, &labels).map_err(analysis_err)?;
    let emitted = analysis::emit_all(&a.out, &profile, &matrix).map_err(infra_err)?;
    println!(
        "trajectories: {} (profile {}, transitions {}), corrupt lines skipped: {}",
        log.trajectories.len(),
        for_profile.len(),
        for_matrix.len(),
        log.corrupt_lines
    );
    println!("actions profiled: {}, transitions counted: {}", profile.total(), matrix.total());
    for p in [&emitted.profile_csv, &emitted.transitions_csv, &emitted.profile_svg, &emitted.transitions_svg] {
        println!("wrote {}", p.display());
    }
    Ok(0)
}

fn analysis_err(e: analysis::AnalysisError) -> CliError {
    use analysis::AnalysisError::*;
    match e {
        NoStages | UnknownLabel(_) | DuplicateLabel(_) => config_err(e),
        other => infra_err(other),
    }
}

pub fn cmd_stats(a: &StatsArgs) -> Result<i32, CliError> {
    let problems = bench::load_problems(&a.problems).map_err(config_err)?;
    let stats = bench::corpus_stats(&problems);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&stats).map_err(infra_err)?);
    } else {
        print!("{}", stats.render());
    }
    if let Some(tc) = &a.toolchain {
        let sandbox = Sandbox::new(ToolchainConfig::load(tc).map_err(config_err)?).map_err(config_err)?;
        let bad = bench::uncompilable_repair_sources(&problems, &sandbox);
        if !bad.is_empty() {
            return Err(config_err(format!("repair sources do not compile: {}", bad.join(", "))));
        }
        println!("repair sources compile: ok");
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "mode = \"zero-shot\"\nmax_turns = 3\nproblems = \"p\"\n[policy]\ntemperature = 0.5\n")
            .unwrap();
        let o = RunOverrides { config: Some(path), max_turns: Some(7), ..Default::default() };
        let c = o.resolve().unwrap();
        assert_eq!(c.mode.as_deref(), Some("zero-shot"));
        assert_eq!(c.max_turns, Some(7));
        assert_eq!(c.policy.temperature, 0.5);
        assert_eq!(c.problems.unwrap(), dir.path().join("p"));
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "mood = \"x\"\n").unwrap();
        let err = RunConfig::load(&path).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["ila", "frobnicate"]), 2);
        assert_eq!(run(["ila", "analyze", "--log", "/nonexistent.jsonl", "--out", "/tmp/x"]), 2);
    }
}
