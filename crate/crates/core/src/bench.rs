//! Problem corpora, the baseline modes, benchmark runs and the ACC/CR
//! metrics.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{self, last_code_block, AgentConfig, RagRound, Resources, TerminalReason, Trajectory};
use crate::docstore::{estimate_tokens, DocStore};
use crate::par::{self, ExecMode};
use crate::policy::{ChatMessage, ChatProvider, ChatRequest, PolicyError, ScriptBook};
use crate::retrieval::{Embedder, VectorIndex, DEFAULT_TOP_K};
use crate::sandbox::{Sandbox, TestSpec};
use crate::typeindex::TypeIndex;

pub const MAX_RAG_QUERIES: usize = 5;
pub const MAX_RAG_ROUNDS: usize = 5;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{file}: {message}")]
    Schema { file: String, message: String },
    #[error("duplicate problem id `{id}` ({first} and {second})")]
    DuplicateId { id: String, first: String, second: String },
    #[error("no problems found in {0}")]
    Empty(String),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("mode {mode} needs a {resource}")]
    MissingResource { mode: &'static str, resource: &'static str },
    #[error("cannot compute metrics over zero records")]
    NoRecords,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Generate,
    Translate,
    Repair,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Generate => "generate",
            TaskKind::Translate => "translate",
            TaskKind::Repair => "repair",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem {
    pub id: String,
    pub task_kind: TaskKind,
    pub prompt: String,
    /// Program to translate (translate) or fix (repair).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_code: Option<String>,
    /// Language of `source_code` when translating.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_language: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<String>,
    /// Failing behaviour for repair tasks, shown only when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symptom: Option<String>,
    pub public_tests: Vec<TestSpec>,
    pub private_tests: Vec<TestSpec>,
}

impl Problem {
    fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("field `id` is empty".into());
        }
        if self.prompt.trim().is_empty() {
            return Err("field `prompt` is empty".into());
        }
        if self.public_tests.is_empty() {
            return Err("field `public_tests` is empty".into());
        }
        if self.private_tests.is_empty() {
            return Err("field `private_tests` is empty".into());
        }
        if matches!(self.task_kind, TaskKind::Translate | TaskKind::Repair)
            && self.source_code.as_deref().is_none_or(|s| s.trim().is_empty())
        {
            return Err(format!("field `source_code` is required for {} problems", self.task_kind.as_str()));
        }
        for (field, suite) in [("public_tests", &self.public_tests), ("private_tests", &self.private_tests)] {
            let mut seen = HashSet::new();
            for t in suite {
                if !seen.insert(&t.test_id) {
                    return Err(format!("field `{field}` repeats test id `{}`", t.test_id));
                }
            }
        }
        Ok(())
    }

    /// The task as shown to a model: statement, signature and any source
    /// program. Never includes tests.
    pub fn query(&self) -> String {
        let mut q = format!("Task ({}):\n{}\n", self.task_kind.as_str(), self.prompt.trim_end());
        if let Some(sig) = &self.signature {
            let _ = write!(q, "\nRequired signature:\n{sig}\n");
        }
        match (self.task_kind, &self.source_code) {
            (TaskKind::Translate, Some(src)) => {
                let lang = self.source_language.as_deref().unwrap_or("source");
                let _ = write!(
                    q,
                    "\nProgram to translate ({lang}):\n```{}\n{}\n```\n",
                    lang.to_lowercase(),
                    src.trim_end()
                );
            }
            (TaskKind::Repair, Some(src)) => {
                let _ = write!(q, "\nBuggy program:\n```\n{}\n```\n", src.trim_end());
                if let Some(symptom) = &self.symptom {
                    let _ = write!(q, "\nObserved symptom:\n{symptom}\n");
                }
            }
            (_, Some(src)) => {
                let _ = write!(q, "\nStarter code:\n```\n{}\n```\n", src.trim_end());
            }
            _ => {}
        }
        q.push_str("\nWrite a complete program in the target language.\n");
        q
    }
}

/// Loads a directory of `*.json` problem files (sorted by name) or a single
/// JSONL file.
pub fn load_problems(path: &Path) -> Result<Vec<Problem>, BenchError> {
    let io = |source| BenchError::Io { path: path.display().to_string(), source };
    let mut loaded: Vec<(String, Problem)> = Vec::new();
    let parse = |origin: String, text: &str| -> Result<Problem, BenchError> {
        let p: Problem = serde_json::from_str(text)
            .map_err(|e| BenchError::Schema { file: origin.clone(), message: e.to_string() })?;
        p.validate().map_err(|message| BenchError::Schema { file: origin, message })?;
        Ok(p)
    };
    if path.is_dir() {
        let mut files: Vec<_> = fs::read_dir(path)
            .map_err(io)?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        files.sort();
        for file in files {
            let text = fs::read_to_string(&file)
                .map_err(|source| BenchError::Io { path: file.display().to_string(), source })?;
            let origin = file.display().to_string();
            loaded.push((origin.clone(), parse(origin, &text)?));
        }
    } else {
        let text = fs::read_to_string(path).map_err(io)?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let origin = format!("{}:{}", path.display(), i + 1);
            loaded.push((origin.clone(), parse(origin, line)?));
        }
    }
    if loaded.is_empty() {
        return Err(BenchError::Empty(path.display().to_string()));
    }
    let mut origins: BTreeMap<&str, &str> = BTreeMap::new();
    for (origin, p) in &loaded {
        if let Some(first) = origins.insert(&p.id, origin) {
            return Err(BenchError::DuplicateId { id: p.id.clone(), first: first.into(), second: origin.clone() });
        }
    }
    Ok(loaded.into_iter().map(|(_, p)| p).collect())
}

/// Repair problems whose buggy source does not compile.
pub fn uncompilable_repair_sources(problems: &[Problem], sandbox: &Sandbox) -> Vec<String> {
    problems
        .iter()
        .filter(|p| p.task_kind == TaskKind::Repair)
        .filter(|p| !matches!(sandbox.compiles(p.source_code.as_deref().unwrap_or("")), Ok(true)))
        .map(|p| p.id.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KindStats {
    pub problems: usize,
    pub mean_public_tests: f64,
    pub mean_private_tests: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub problems: usize,
    pub per_kind: BTreeMap<TaskKind, KindStats>,
}

pub fn corpus_stats(problems: &[Problem]) -> CorpusStats {
    let mut per_kind = BTreeMap::new();
    for kind in [TaskKind::Generate, TaskKind::Translate, TaskKind::Repair] {
        let of_kind: Vec<_> = problems.iter().filter(|p| p.task_kind == kind).collect();
        if of_kind.is_empty() {
            continue;
        }
        let n = of_kind.len() as f64;
        per_kind.insert(
            kind,
            KindStats {
                problems: of_kind.len(),
                mean_public_tests: of_kind.iter().map(|p| p.public_tests.len()).sum::<usize>() as f64 / n,
                mean_private_tests: of_kind.iter().map(|p| p.private_tests.len()).sum::<usize>() as f64 / n,
            },
        );
    }
    CorpusStats { problems: problems.len(), per_kind }
}

impl CorpusStats {
    pub fn render(&self) -> String {
        let mut out = format!("{:<10} {:>8} {:>12} {:>13}\n", "kind", "problems", "avg public", "avg private");
        for (kind, s) in &self.per_kind {
            let _ = writeln!(
                out,
                "{:<10} {:>8} {:>12.2} {:>13.2}",
                kind.as_str(),
                s.problems,
                s.mean_public_tests,
                s.mean_private_tests
            );
        }
        let _ = writeln!(out, "{:<10} {:>8}", "total", self.problems);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    ZeroShot,
    SingleRag,
    IterativeRag,
    IlaAgent,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::ZeroShot => "zero-shot",
            Mode::SingleRag => "single-rag",
            Mode::IterativeRag => "iterative-rag",
            Mode::IlaAgent => "ila-agent",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Mode::ZeroShot, Mode::SingleRag, Mode::IterativeRag, Mode::IlaAgent].into_iter().find(|m| m.as_str() == s)
    }

    pub fn needs_index(self) -> bool {
        self != Mode::ZeroShot
    }
}

/// Percentage held in hundredths so rounding is exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Percent(pub u64);

impl Percent {
    /// `100 * num / den`, rounded half-up to 2 decimals.
    pub fn of(num: usize, den: usize) -> Self {
        assert!(den > 0 && num <= den);
        let (num, den) = (num as u64, den as u64);
        Percent((20_000 * num + den) / (2 * den))
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 100.0
    }
}

impl std::fmt::Display for Percent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(&format!("{}.{:02}", self.0 / 100, self.0 % 100))
    }
}

impl Serialize for Percent {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.value())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemRecord {
    pub id: String,
    pub task_kind: TaskKind,
    pub accepted: bool,
    pub compiled: bool,
    pub terminal_reason: TerminalReason,
    pub turns_used: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub infra_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KindMetrics {
    pub total: usize,
    pub accepted: usize,
    pub compiled: usize,
    pub acc: Percent,
    pub cr: Percent,
}

impl KindMetrics {
    fn from_records<'a>(records: impl Iterator<Item = &'a ProblemRecord>) -> Option<Self> {
        let (mut total, mut accepted, mut compiled) = (0, 0, 0);
        for r in records {
            total += 1;
            accepted += usize::from(r.accepted);
            compiled += usize::from(r.compiled);
        }
        (total > 0).then(|| KindMetrics {
            total,
            accepted,
            compiled,
            acc: Percent::of(accepted, total),
            cr: Percent::of(compiled, total),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub mode: String,
    pub overall: KindMetrics,
    pub per_kind: BTreeMap<TaskKind, KindMetrics>,
    pub provider_errors: usize,
    pub infra_errors: usize,
    pub records: Vec<ProblemRecord>,
}

/// ACC and CR over `records`. A record that is accepted but not compiled is
/// counted as not accepted.
pub fn compute_metrics(mode: &str, records: &[ProblemRecord]) -> Result<MetricsReport, BenchError> {
    if records.is_empty() {
        return Err(BenchError::NoRecords);
    }
    let records: Vec<ProblemRecord> = records
        .iter()
        .cloned()
        .map(|mut r| {
            r.accepted &= r.compiled;
            r
        })
        .collect();
    let overall = KindMetrics::from_records(records.iter()).expect("non-empty");
    let mut per_kind = BTreeMap::new();
    for kind in [TaskKind::Generate, TaskKind::Translate, TaskKind::Repair] {
        if let Some(m) = KindMetrics::from_records(records.iter().filter(|r| r.task_kind == kind)) {
            per_kind.insert(kind, m);
        }
    }
    Ok(MetricsReport {
        mode: mode.into(),
        overall,
        per_kind,
        provider_errors: records.iter().filter(|r| r.terminal_reason == TerminalReason::ProviderError).count(),
        infra_errors: records.iter().filter(|r| r.infra_error.is_some()).count(),
        records,
    })
}

impl MetricsReport {
    pub fn render(&self) -> String {
        let mut out = format!("mode: {}\n", self.mode);
        let _ =
            writeln!(out, "{:<10} {:>6} {:>9} {:>9} {:>8} {:>8}", "kind", "total", "accepted", "compiled", "ACC", "CR");
        let row = |out: &mut String, name: &str, m: &KindMetrics| {
            let _ = writeln!(
                out,
                "{:<10} {:>6} {:>9} {:>9} {:>8} {:>8}",
                name, m.total, m.accepted, m.compiled, m.acc, m.cr
            );
        };
        for (kind, m) in &self.per_kind {
            row(&mut out, kind.as_str(), m);
        }
        row(&mut out, "all", &self.overall);
        let _ =
            writeln!(out, "provider errors: {}  infrastructure errors: {}", self.provider_errors, self.infra_errors);
        out
    }

    /// Whether the run should exit nonzero.
    pub fn has_infra_failures(&self) -> bool {
        self.infra_errors > 0 || self.provider_errors > 0
    }
}

/// Hands each problem its own provider (scripted runs need per-problem
/// state; live providers are shared).
pub trait ProviderSource: Sync {
    fn provider_for(&self, problem_id: &str) -> Box<dyn ChatProvider + '_>;
}

impl ProviderSource for ScriptBook {
    fn provider_for(&self, problem_id: &str) -> Box<dyn ChatProvider + '_> {
        Box::new(ScriptBook::provider_for(self, problem_id))
    }
}

/// One provider shared by every problem.
pub struct SharedProvider<P>(pub P);

struct Borrowed<'a>(&'a dyn ChatProvider);

impl ChatProvider for Borrowed<'_> {
    fn complete(&self, request: &ChatRequest) -> Result<crate::policy::ChatResponse, PolicyError> {
        self.0.complete(request)
    }
}

impl<P: ChatProvider> ProviderSource for SharedProvider<P> {
    fn provider_for(&self, _problem_id: &str) -> Box<dyn ChatProvider + '_> {
        Box::new(Borrowed(&self.0))
    }
}

/// Resources for a run; which ones are required depends on the mode.
#[derive(Clone, Copy)]
pub struct BenchResources<'a> {
    pub store: Option<&'a DocStore>,
    pub index: Option<&'a VectorIndex>,
    pub embedder: Option<&'a dyn Embedder>,
    pub types: Option<&'a TypeIndex>,
    pub sandbox: &'a Sandbox,
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub agent: AgentConfig,
    pub top_k: usize,
    pub parallelism: usize,
    pub exec: ExecMode,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { agent: AgentConfig::default(), top_k: DEFAULT_TOP_K, parallelism: 4, exec: ExecMode::default() }
    }
}

pub struct RunOutput {
    pub report: MetricsReport,
    pub trajectories: Vec<Trajectory>,
}

const BASELINE_SYSTEM: &str = "You are an expert programmer writing code in a language you may not know well. \
Answer with the complete program in a single fenced code block.";

const FORMULATE: &str = "Before solving the task below, list up to 5 distinct search queries for the \
language documentation that would help you solve it. Reply with a JSON array of strings only.";

const ASSESS: &str = "Here is the documentation retrieved so far. Decide whether it is sufficient to solve \
the task. Reply with JSON only: {\"sufficient\": true|false, \"queries\": [up to 5 new search queries]}.";

const GENERATE: &str = "Solve the task. Reply with the complete program in one fenced code block.";

fn ask(provider: &dyn ChatProvider, user: String, temperature: f64) -> Result<String, PolicyError> {
    let request = ChatRequest {
        messages: vec![ChatMessage::system(BASELINE_SYSTEM), ChatMessage::user(user)],
        tools: Vec::new(),
        temperature,
    };
    let reply = provider.complete(&request)?;
    Ok(reply.content.unwrap_or_default())
}

/// Queries from a model reply: a JSON array (or `{"queries": [...]}`),
/// else one query per line. Deduplicated, capped at [`MAX_RAG_QUERIES`].
pub fn parse_queries(text: &str) -> Vec<String> {
    let from_json =
        json_slice(text, '[', ']').and_then(|s| serde_json::from_str::<Vec<String>>(s).ok()).or_else(|| {
            json_slice(text, '{', '}')
                .and_then(|s| serde_json::from_str::<serde_json::Value>(s).ok())
                .and_then(|v| serde_json::from_value::<Vec<String>>(v.get("queries")?.clone()).ok())
        });
    let candidates = from_json.unwrap_or_else(|| {
        text.lines()
            .map(|l| l.trim().trim_start_matches(['-', '*', '•']).trim())
            .map(|l| l.trim_start_matches(|c: char| c.is_ascii_digit()).trim_start_matches(['.', ')']).trim())
            .filter(|l| !l.is_empty() && !l.starts_with("```"))
            .map(str::to_string)
            .collect()
    });
    let mut seen = HashSet::new();
    candidates
        .into_iter()
        .map(|q| q.trim().to_string())
        .filter(|q| !q.is_empty() && seen.insert(q.clone()))
        .take(MAX_RAG_QUERIES)
        .collect()
}

fn json_slice(text: &str, open: char, close: char) -> Option<&str> {
    let start = text.find(open)?;
    let end = text.rfind(close)?;
    (end > start).then(|| &text[start..=end])
}

/// The controller's verdict: sufficient, plus any new queries.
pub fn parse_assessment(text: &str) -> (bool, Vec<String>) {
    if let Some(v) = json_slice(text, '{', '}').and_then(|s| serde_json::from_str::<serde_json::Value>(s).ok()) {
        if let Some(sufficient) = v.get("sufficient").and_then(serde_json::Value::as_bool) {
            let queries = v.get("queries").map(|q| parse_queries(&q.to_string())).unwrap_or_default();
            return (sufficient, queries);
        }
    }
    let lower = text.to_lowercase();
    let insufficient = lower.contains("insufficient") || lower.contains("not sufficient");
    if !insufficient {
        return (true, Vec::new());
    }
    let rest: String = text.lines().filter(|l| !l.to_lowercase().contains("sufficient")).collect::<Vec<_>>().join("\n");
    (false, parse_queries(&rest))
}

/// Retrieved chunks in first-retrieved order, deduplicated on chunk id.
struct RagContext<'a> {
    store: &'a DocStore,
    seen: HashSet<String>,
    chunk_ids: Vec<String>,
}

impl<'a> RagContext<'a> {
    fn new(store: &'a DocStore) -> Self {
        Self { store, seen: HashSet::new(), chunk_ids: Vec::new() }
    }

    fn retrieve(&mut self, res: &BenchResources<'_>, queries: &[String], k: usize) -> Result<RagRound, String> {
        let (index, embedder) = (res.index.expect("checked"), res.embedder.expect("checked"));
        let mut round = RagRound { queries: queries.to_vec(), chunk_ids: Vec::new() };
        if queries.is_empty() {
            return Ok(round);
        }
        let results = index.search_many(embedder, queries, k, ExecMode::Sequential).map_err(|e| e.to_string())?;
        for hit in results.union {
            round.chunk_ids.push(hit.chunk_id.clone());
            if self.seen.insert(hit.chunk_id.clone()) {
                self.chunk_ids.push(hit.chunk_id);
            }
        }
        Ok(round)
    }

    /// Chunks that fit in `budget` tokens, each prefixed with its section id.
    fn render(&self, budget: usize) -> String {
        let mut out = String::new();
        let mut used = 0;
        for id in &self.chunk_ids {
            let Some(chunk) = self.store.chunk(id) else { continue };
            let block = format!("[{}]\n{}\n\n", chunk.section_id, chunk.text.trim_end());
            let cost = estimate_tokens(&block);
            if used + cost > budget {
                break;
            }
            used += cost;
            out.push_str(&block);
        }
        out
    }
}

fn with_context(query: &str, context: &str) -> String {
    format!("{query}\nDocumentation:\n{context}")
}

fn run_baseline(
    mode: Mode,
    problem: &Problem,
    res: &BenchResources<'_>,
    provider: &dyn ChatProvider,
    config: &BenchConfig,
) -> Trajectory {
    let started = std::time::Instant::now();
    let mut traj = Trajectory::new(&problem.id, mode.as_str());
    let temperature = config.agent.policy.temperature;
    let budget = config.agent.policy.context_budget_tokens;
    let query = problem.query();
    let outcome: Result<String, String> = (|| {
        let reply = match mode {
            Mode::ZeroShot => ask(provider, format!("{query}\n{GENERATE}"), temperature).map_err(|e| e.to_string())?,
            Mode::SingleRag | Mode::IterativeRag => {
                let store = res.store.expect("checked");
                let mut ctx = RagContext::new(store);
                let formulated =
                    ask(provider, format!("{FORMULATE}\n\n{query}"), temperature).map_err(|e| e.to_string())?;
                let mut issued: HashSet<String> = HashSet::new();
                let queries = parse_queries(&formulated);
                issued.extend(queries.iter().cloned());
                traj.rag_rounds.push(ctx.retrieve(res, &queries, config.top_k)?);
                if mode == Mode::IterativeRag {
                    while traj.rag_rounds.len() < MAX_RAG_ROUNDS {
                        let so_far = ctx.render(budget.saturating_sub(estimate_tokens(&query)));
                        let verdict =
                            ask(provider, format!("{ASSESS}\n\n{}", with_context(&query, &so_far)), temperature)
                                .map_err(|e| e.to_string())?;
                        let (sufficient, proposed) = parse_assessment(&verdict);
                        let fresh: Vec<String> = proposed.into_iter().filter(|q| issued.insert(q.clone())).collect();
                        if sufficient || fresh.is_empty() {
                            break;
                        }
                        traj.rag_rounds.push(ctx.retrieve(res, &fresh, config.top_k)?);
                    }
                }
                let context = ctx.render(budget.saturating_sub(estimate_tokens(&query) + 200));
                ask(provider, format!("{}\n{GENERATE}", with_context(&query, &context)), temperature)
                    .map_err(|e| e.to_string())?
            }
            Mode::IlaAgent => unreachable!("agent runs do not use the baseline path"),
        };
        Ok(last_code_block(&reply).unwrap_or_default())
    })();
    match outcome {
        Ok(solution) => {
            traj.terminal_reason = TerminalReason::Generated;
            traj.final_solution = solution;
        }
        Err(e) => {
            traj.terminal_reason = TerminalReason::ProviderError;
            traj.error = Some(e);
        }
    }
    traj.wall_time_ms = started.elapsed().as_millis() as u64;
    traj
}

fn check_resources(mode: Mode, res: &BenchResources<'_>) -> Result<(), BenchError> {
    let missing = |resource| Err(BenchError::MissingResource { mode: mode.as_str(), resource });
    if mode.needs_index() {
        if res.store.is_none() {
            return missing("documentation store");
        }
        if res.index.is_none() {
            return missing("vector index");
        }
        if res.embedder.is_none() {
            return missing("embedder");
        }
    }
    Ok(())
}

/// Runs one mode over every problem, grades each final solution against
/// the private tests and aggregates the metrics. Trajectories come back in
/// problem order.
pub fn run_mode(
    problems: &[Problem],
    mode: Mode,
    res: BenchResources<'_>,
    providers: &dyn ProviderSource,
    config: &BenchConfig,
) -> Result<RunOutput, BenchError> {
    check_resources(mode, &res)?;
    if problems.is_empty() {
        return Err(BenchError::NoRecords);
    }
    let results = par::map_bounded(config.exec, config.parallelism, problems, |problem| {
        let provider = providers.provider_for(&problem.id);
        let mut traj = match mode {
            Mode::IlaAgent => {
                let agent_res = Resources::new(
                    res.store.expect("checked"),
                    res.index.expect("checked"),
                    res.embedder.expect("checked"),
                    res.types,
                    res.sandbox,
                );
                let agent_res = Resources { top_k: config.top_k, ..agent_res };
                agent::run_trajectory(problem, &agent_res, provider.as_ref(), &config.agent)
            }
            baseline => run_baseline(baseline, problem, &res, provider.as_ref(), config),
        };
        let record = grade(problem, &mut traj, res.sandbox);
        (traj, record)
    });
    let (trajectories, records): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let report = compute_metrics(mode.as_str(), &records)?;
    Ok(RunOutput { report, trajectories })
}

/// Grades a final solution with the private tests and stamps the result
/// onto the trajectory.
pub fn grade(problem: &Problem, traj: &mut Trajectory, sandbox: &Sandbox) -> ProblemRecord {
    let (accepted, compiled, infra_error) = match sandbox.grade(&traj.final_solution, &problem.private_tests) {
        Ok(g) => (g.accepted, g.compiled, g.infra_error.map(|e| format!("toolchain failure: {e}"))),
        Err(e) => (false, false, Some(format!("grading failed: {e}"))),
    };
    traj.accepted = Some(accepted);
    traj.compiled = Some(compiled);
    ProblemRecord {
        id: problem.id.clone(),
        task_kind: problem.task_kind,
        accepted,
        compiled,
        terminal_reason: traj.terminal_reason,
        turns_used: traj.steps.len(),
        infra_error,
    }
}
