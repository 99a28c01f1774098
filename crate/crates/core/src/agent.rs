//! The interaction loop: ask the policy for an action, dispatch it to the
//! documentation, search, type index or sandbox, append the pair, repeat
//! until a Submit passes or the turn budget runs out.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::Problem;
use crate::docstore::DocStore;
use crate::par::ExecMode;
use crate::policy::{self, ActionKind, ChatProvider, PolicyConfig, ToolSpec, DEFAULT_VIEW_DEPTH};
use crate::retrieval::{sem_search, Embedder, SearchResults, VectorIndex, DEFAULT_TOP_K};
use crate::sandbox::{truncate_output, Sandbox, TestSpec};
use crate::typeindex::{LookupResult, TypeIndex};

pub const LOG_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_MAX_TURNS: usize = 15;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub turn_index: usize,
    #[serde(flatten)]
    pub kind: ActionKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservationKind {
    ToolResult,
    Miss,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub text: String,
    pub kind: ObservationKind,
    pub produced_by: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub action: Action,
    pub observation: Observation,
}

/// The query plus every action/observation pair so far. Only grows.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AgentState {
    pub query: String,
    pub history: Vec<Step>,
}

impl AgentState {
    pub fn new(query: impl Into<String>) -> Self {
        Self { query: query.into(), history: Vec::new() }
    }

    pub fn push(&mut self, step: Step) {
        debug_assert!(self.history.last().is_none_or(|last| last.action.turn_index < step.action.turn_index));
        self.history.push(step);
    }

    pub fn turns(&self) -> usize {
        self.history.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminalReason {
    SubmitPass,
    BudgetExhausted,
    ProviderError,
    /// A baseline produced its answer in one pass.
    Generated,
}

impl TerminalReason {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminalReason::SubmitPass => "submit-pass",
            TerminalReason::BudgetExhausted => "budget-exhausted",
            TerminalReason::ProviderError => "provider-error",
            TerminalReason::Generated => "generated",
        }
    }
}

/// One retrieval round of a RAG baseline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RagRound {
    pub queries: Vec<String>,
    pub chunk_ids: Vec<String>,
}

/// A full run on one problem, as written to the trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub schema_version: u32,
    pub problem_id: String,
    #[serde(default)]
    pub mode: String,
    pub steps: Vec<Step>,
    pub terminal_reason: TerminalReason,
    pub final_solution: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rag_rounds: Vec<RagRound>,
    /// Filled in after offline grading.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accepted: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compiled: Option<bool>,
    /// Kept out of the log so logs stay byte-reproducible.
    #[serde(skip)]
    pub wall_time_ms: u64,
}

impl Trajectory {
    pub fn new(problem_id: &str, mode: &str) -> Self {
        Self {
            schema_version: LOG_SCHEMA_VERSION,
            problem_id: problem_id.into(),
            mode: mode.into(),
            steps: Vec::new(),
            terminal_reason: TerminalReason::BudgetExhausted,
            final_solution: String::new(),
            error: None,
            rag_rounds: Vec::new(),
            accepted: None,
            compiled: None,
            wall_time_ms: 0,
        }
    }

    pub fn labels(&self) -> Vec<&'static str> {
        self.steps.iter().map(|s| s.action.kind.label()).collect()
    }
}

/// Read-only resources shared by every trajectory of a run.
pub struct Resources<'a> {
    pub store: &'a DocStore,
    pub index: &'a VectorIndex,
    pub embedder: &'a dyn Embedder,
    pub types: Option<&'a TypeIndex>,
    pub sandbox: &'a Sandbox,
    pub top_k: usize,
    /// Observations longer than this are truncated with a marker.
    pub observation_cap: usize,
}

impl<'a> Resources<'a> {
    pub fn new(
        store: &'a DocStore,
        index: &'a VectorIndex,
        embedder: &'a dyn Embedder,
        types: Option<&'a TypeIndex>,
        sandbox: &'a Sandbox,
    ) -> Self {
        let observation_cap = sandbox.config().max_output_chars;
        Self { store, index, embedder, types, sandbox, top_k: DEFAULT_TOP_K, observation_cap }
    }

    pub fn tools(&self) -> Vec<ToolSpec> {
        policy::tool_specs(self.types.is_some())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub max_turns: usize,
    pub policy: PolicyConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self { max_turns: DEFAULT_MAX_TURNS, policy: PolicyConfig::default() }
    }
}

/// Result of dispatching one action.
#[derive(Debug, Clone, PartialEq)]
pub struct Dispatched {
    pub observation: Observation,
    /// Some(true) when the action was a Submit that passed every public test.
    pub submit_passed: Option<bool>,
}

fn observe(kind: ObservationKind, produced_by: &str, text: String) -> Observation {
    Observation { text, kind, produced_by: produced_by.into() }
}

/// Routes one action to the matching resource. Only public tests are ever
/// handed in here.
pub fn dispatch(kind: &ActionKind, public_tests: &[TestSpec], res: &Resources<'_>) -> Dispatched {
    let label = kind.label();
    let mut submit_passed = None;
    let mut observation = match kind {
        ActionKind::ViewStruct { section_id, depth } => {
            match res.store.view_struct(section_id.as_deref(), depth.unwrap_or(DEFAULT_VIEW_DEPTH)) {
                Ok(text) => observe(ObservationKind::ToolResult, label, text),
                Err(e) => observe(ObservationKind::Miss, label, e.to_string()),
            }
        }
        ActionKind::ViewDetail { section_id } => match res.store.view_detail(section_id) {
            Ok(text) => observe(ObservationKind::ToolResult, label, text),
            Err(e) => observe(ObservationKind::Miss, label, e.to_string()),
        },
        ActionKind::SemSearch { queries } => {
            match sem_search(res.index, res.embedder, queries, res.top_k, ExecMode::Sequential) {
                Ok(Ok(results)) => observe(ObservationKind::ToolResult, label, render_search(&results, res.store)),
                Ok(Err(rejected)) => observe(ObservationKind::Error, label, rejected.to_string()),
                Err(e) => observe(ObservationKind::Error, label, format!("search failed: {e}")),
            }
        }
        ActionKind::TypeLookup { name } => match res.types {
            None => observe(ObservationKind::Error, label, "TypeLookup is not available in this run".into()),
            Some(types) => match types.lookup(res.store, name) {
                hit @ LookupResult::Hit { .. } => observe(ObservationKind::ToolResult, label, hit.render()),
                miss => observe(ObservationKind::Miss, label, miss.render()),
            },
        },
        ActionKind::Execute { code } => match res.sandbox.execute(code) {
            Ok(results) => {
                let text: String = results.iter().map(|r| r.render()).collect();
                observe(ObservationKind::ToolResult, label, text)
            }
            Err(e) => observe(ObservationKind::Error, label, format!("execution failed: {e}")),
        },
        ActionKind::Submit { code } => match res.sandbox.submit(code, public_tests) {
            Ok(result) => {
                submit_passed = Some(result.all_passed);
                observe(ObservationKind::ToolResult, label, result.render())
            }
            Err(e) => observe(ObservationKind::Error, label, format!("submission failed: {e}")),
        },
        ActionKind::Invalid { message, .. } => {
            let names: Vec<&str> = res.tools().iter().map(|t| t.name.as_str()).collect();
            observe(
                ObservationKind::Error,
                label,
                format!("Invalid action: {message}. Call exactly one of: {}.", names.join(", ")),
            )
        }
    };
    observation.text = truncate_output(&observation.text, res.observation_cap);
    Dispatched { observation, submit_passed }
}

/// Search results as shown to the agent: per query, each hit's section id,
/// score and chunk text (repeated chunks are referenced, not repeated).
pub fn render_search(results: &SearchResults, store: &DocStore) -> String {
    let mut out = String::new();
    if let Some(note) = &results.note {
        out.push_str(note);
        out.push('\n');
    }
    let mut shown = std::collections::HashSet::new();
    for q in &results.per_query {
        out.push_str(&format!("Query: {:?}\n", q.query));
        if q.hits.is_empty() {
            out.push_str("  no results\n");
        }
        for (rank, hit) in q.hits.iter().enumerate() {
            let Some(chunk) = store.chunk(&hit.chunk_id) else { continue };
            out.push_str(&format!("{}. [{}] score {:.4} ({})\n", rank + 1, chunk.section_id, hit.score, hit.chunk_id));
            if shown.insert(hit.chunk_id.as_str()) {
                for line in chunk.text.lines() {
                    out.push_str("   ");
                    out.push_str(line);
                    out.push('\n');
                }
            } else {
                out.push_str("   (same chunk as above)\n");
            }
        }
    }
    out
}

/// The last fenced code block of a text, without its fences.
pub fn last_code_block(text: &str) -> Option<String> {
    let mut blocks = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in text.lines() {
        if line.trim_start().starts_with("```") {
            match current.take() {
                Some(body) => blocks.push(body.join("\n")),
                None => current = Some(Vec::new()),
            }
        } else if let Some(body) = current.as_mut() {
            body.push(line);
        }
    }
    blocks.pop().map(|mut b| {
        if !b.is_empty() {
            b.push('\n');
        }
        b
    })
}

/// Payload of the last Submit, else the last fenced block of the last
/// invalid action, else empty.
pub fn final_solution(steps: &[Step]) -> String {
    if let Some(code) = steps.iter().rev().find_map(|s| match &s.action.kind {
        ActionKind::Submit { code } => Some(code.clone()),
        _ => None,
    }) {
        return code;
    }
    steps
        .iter()
        .rev()
        .find_map(|s| match &s.action.kind {
            ActionKind::Invalid { raw, .. } => Some(last_code_block(raw).unwrap_or_default()),
            _ => None,
        })
        .unwrap_or_default()
}

/// Runs the loop on one problem.
pub fn run_trajectory(
    problem: &Problem,
    res: &Resources<'_>,
    provider: &dyn ChatProvider,
    config: &AgentConfig,
) -> Trajectory {
    let started = std::time::Instant::now();
    let tools = res.tools();
    let mut state = AgentState::new(problem.query());
    let mut traj = Trajectory::new(&problem.id, "ila-agent");
    for turn in 0..config.max_turns {
        let kind = match policy::decide(provider, &state, &tools, &config.policy) {
            Ok(kind) => kind,
            Err(e) => {
                traj.terminal_reason = TerminalReason::ProviderError;
                traj.error = Some(e.to_string());
                break;
            }
        };
        let out = dispatch(&kind, &problem.public_tests, res);
        state.push(Step { action: Action { turn_index: turn, kind }, observation: out.observation });
        if out.submit_passed == Some(true) {
            traj.terminal_reason = TerminalReason::SubmitPass;
            break;
        }
    }
    traj.steps = state.history;
    if traj.terminal_reason != TerminalReason::ProviderError {
        traj.final_solution = final_solution(&traj.steps);
    }
    traj.wall_time_ms = started.elapsed().as_millis() as u64;
    traj
}

/// Re-dispatches every logged action, returning the fresh observations.
pub fn replay(traj: &Trajectory, problem: &Problem, res: &Resources<'_>) -> Vec<Observation> {
    traj.steps.iter().map(|s| dispatch(&s.action.kind, &problem.public_tests, res).observation).collect()
}

pub fn write_log(path: &Path, trajectories: &[Trajectory]) -> std::io::Result<()> {
    let mut out = Vec::new();
    for t in trajectories {
        serde_json::to_writer(&mut out, t)?;
        out.push(b'\n');
    }
    fs::write(path, out)
}

/// Parsed log plus the number of lines that failed to parse.
#[derive(Debug, Clone, Default)]
pub struct LogContents {
    pub trajectories: Vec<Trajectory>,
    pub corrupt_lines: usize,
    pub total_lines: usize,
}

pub fn read_log(path: &Path) -> std::io::Result<LogContents> {
    let file = fs::File::open(path)?;
    let mut contents = LogContents::default();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        contents.total_lines += 1;
        match serde_json::from_str::<Trajectory>(&line) {
            Ok(t) => contents.trajectories.push(t),
            Err(_) => contents.corrupt_lines += 1,
        }
    }
    Ok(contents)
}

/// Per-run timing data kept apart from the log.
pub fn write_run_meta(path: &Path, trajectories: &[Trajectory], extra: serde_json::Value) -> std::io::Result<()> {
    let wall: Vec<_> = trajectories
        .iter()
        .map(|t| serde_json::json!({"problem_id": t.problem_id, "wall_time_ms": t.wall_time_ms}))
        .collect();
    let unix = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let meta = serde_json::json!({"finished_unix_s": unix, "trajectories": wall, "run": extra});
    let mut f = fs::File::create(path)?;
    writeln!(f, "{}", serde_json::to_string_pretty(&meta)?)
}
