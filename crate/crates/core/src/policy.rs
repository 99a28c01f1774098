//! The decision function: renders agent state into chat messages, asks a
//! provider for the next tool call and validates it.
//!
//! Scripted and live providers go through the same response parser, so a
//! script that emits a bad call produces exactly the `invalid` action a live
//! model would.

use std::collections::{BTreeMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::agent::AgentState;
use crate::docstore::estimate_tokens;
use crate::http::JsonClient;
use crate::retrieval::MAX_SEMSEARCH_QUERIES;

pub const SYSTEM_PROMPT_VERSION: &str = "ila-system-v1";
pub const KEEP_RECENT_PAIRS: usize = 3;
pub const DEFAULT_VIEW_DEPTH: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ToolName {
    ViewStruct,
    ViewDetail,
    SemSearch,
    TypeLookup,
    Execute,
    Submit,
}

impl ToolName {
    pub const ALL: [ToolName; 6] = [
        ToolName::ViewStruct,
        ToolName::ViewDetail,
        ToolName::SemSearch,
        ToolName::TypeLookup,
        ToolName::Execute,
        ToolName::Submit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ToolName::ViewStruct => "ViewStruct",
            ToolName::ViewDetail => "ViewDetail",
            ToolName::SemSearch => "SemSearch",
            ToolName::TypeLookup => "TypeLookup",
            ToolName::Execute => "Execute",
            ToolName::Submit => "Submit",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolSpec {
    pub name: ToolName,
    pub description: String,
    pub parameters: Value,
}

/// The action space for a run. TypeLookup is offered only when a type index
/// is available.
pub fn tool_specs(with_type_lookup: bool) -> Vec<ToolSpec> {
    let spec = |name, description: &str, parameters| ToolSpec { name, description: description.into(), parameters };
    let code = json!({
        "type": "object",
        "properties": {"code": {"type": "string", "description": "Complete program source."}},
        "required": ["code"],
        "additionalProperties": false
    });
    let mut specs = vec![
        spec(
            ToolName::ViewStruct,
            "Show the documentation outline below a section (the whole table of contents when section_id is omitted).",
            json!({
                "type": "object",
                "properties": {
                    "section_id": {"type": "string", "description": "Section id from an earlier outline or search."},
                    "depth": {"type": "integer", "minimum": 1, "description": "Levels to expand (default 2)."}
                },
                "additionalProperties": false
            }),
        ),
        spec(
            ToolName::ViewDetail,
            "Read the full text of one documentation section.",
            json!({
                "type": "object",
                "properties": {"section_id": {"type": "string"}},
                "required": ["section_id"],
                "additionalProperties": false
            }),
        ),
        spec(
            ToolName::SemSearch,
            "Semantic search over the documentation. Returns the best matching chunks with their section ids.",
            json!({
                "type": "object",
                "properties": {
                    "queries": {
                        "type": "array",
                        "items": {"type": "string"},
                        "minItems": 1,
                        "maxItems": MAX_SEMSEARCH_QUERIES
                    }
                },
                "required": ["queries"],
                "additionalProperties": false
            }),
        ),
    ];
    if with_type_lookup {
        specs.push(spec(
            ToolName::TypeLookup,
            "Look up a type or class by name and show its documentation and members.",
            json!({
                "type": "object",
                "properties": {"name": {"type": "string"}},
                "required": ["name"],
                "additionalProperties": false
            }),
        ));
    }
    specs.push(spec(
        ToolName::Execute,
        "Compile and run a program, returning its exit status and output.",
        code.clone(),
    ));
    specs.push(spec(
        ToolName::Submit,
        "Submit a solution. It is run against the public tests; passing all of them ends the task.",
        code,
    ));
    specs
}

/// One decision of the policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "tool", content = "arguments")]
pub enum ActionKind {
    ViewStruct {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        section_id: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        depth: Option<usize>,
    },
    ViewDetail {
        section_id: String,
    },
    SemSearch {
        queries: Vec<String>,
    },
    TypeLookup {
        name: String,
    },
    Execute {
        code: String,
    },
    Submit {
        code: String,
    },
    /// Output that could not be turned into a valid tool call.
    #[serde(rename = "invalid")]
    Invalid {
        message: String,
        raw: String,
    },
}

impl ActionKind {
    /// Label used in logs and analytics.
    pub fn label(&self) -> &'static str {
        match self.tool() {
            Some(t) => t.as_str(),
            None => "invalid",
        }
    }

    pub fn tool(&self) -> Option<ToolName> {
        Some(match self {
            ActionKind::ViewStruct { .. } => ToolName::ViewStruct,
            ActionKind::ViewDetail { .. } => ToolName::ViewDetail,
            ActionKind::SemSearch { .. } => ToolName::SemSearch,
            ActionKind::TypeLookup { .. } => ToolName::TypeLookup,
            ActionKind::Execute { .. } => ToolName::Execute,
            ActionKind::Submit { .. } => ToolName::Submit,
            ActionKind::Invalid { .. } => return None,
        })
    }

    pub fn invalid(message: impl Into<String>, raw: impl Into<String>) -> Self {
        ActionKind::Invalid { message: message.into(), raw: raw.into() }
    }

    /// Arguments as sent on the wire.
    pub fn arguments_json(&self) -> String {
        match serde_json::to_value(self) {
            Ok(Value::Object(mut map)) => map.remove("arguments").unwrap_or(json!({})).to_string(),
            _ => "{}".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    /// JSON-encoded argument object.
    pub arguments: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call: Option<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into(), tool_call: None, tool_call_id: None }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into(), tool_call: None, tool_call_id: None }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into(), tool_call: None, tool_call_id: None }
    }

    fn estimate(&self) -> usize {
        estimate_tokens(&self.content)
            + self.tool_call.as_ref().map_or(0, |c| estimate_tokens(&c.name) + estimate_tokens(&c.arguments))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub tools: Vec<ToolSpec>,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChatResponse {
    #[serde(default)]
    pub content: Option<String>,
    #[serde(default)]
    pub tool_calls: Vec<ToolCall>,
}

impl ChatResponse {
    pub fn text(content: impl Into<String>) -> Self {
        Self { content: Some(content.into()), tool_calls: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("provider error: {0}")]
    Provider(String),
    #[error("context overflow: {needed} estimated tokens that cannot be elided exceed the budget of {budget}")]
    ContextOverflow { needed: usize, budget: usize },
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, PolicyError>;
}

impl<T: ChatProvider + ?Sized> ChatProvider for &T {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, PolicyError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub temperature: f64,
    pub context_budget_tokens: usize,
    pub max_retries: u32,
    /// Full chat-completions URL.
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_s: u64,
    /// When set, request/response pairs are appended here as JSONL.
    pub transcript: Option<PathBuf>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            context_budget_tokens: 128_000,
            max_retries: 3,
            endpoint: None,
            model: None,
            api_key_env: "ILA_API_KEY".into(),
            timeout_s: 120,
            transcript: None,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err("temperature must be >= 0".into());
        }
        if self.context_budget_tokens == 0 {
            return Err("context_budget_tokens must be positive".into());
        }
        Ok(())
    }
}

const SYSTEM_PROMPT: &str = "\
You are solving a programming task in a language you may not know well. \
Its official documentation and a compiler/interpreter are available through tools.

Work in small steps and call exactly one tool per turn:
- ViewStruct shows the documentation outline; start there to find where things live.
- ViewDetail reads one section in full. Use section ids from outlines or search results.
- SemSearch finds relevant chunks for up to three short queries at once.
- TypeLookup (when offered) shows the documentation of a named type and its members.
- Execute compiles and runs a program so you can check syntax and behaviour.
- Submit runs your solution against the public tests. Passing all of them finishes the task.

Do not guess syntax: confirm it in the documentation or with Execute. \
Every tool call uses up one of your limited turns.";

pub fn system_prompt() -> &'static str {
    SYSTEM_PROMPT
}

fn elision_stub(chars: usize) -> String {
    format!("(observation elided, {chars} chars)")
}

/// Renders the state as chat messages within `budget` estimated tokens.
///
/// Oldest observations are replaced by stubs first; the system prompt, the
/// query and the newest [`KEEP_RECENT_PAIRS`] pairs are never elided.
pub fn render_state(state: &AgentState, budget: usize) -> Result<Vec<ChatMessage>, PolicyError> {
    let mut messages = vec![ChatMessage::system(SYSTEM_PROMPT), ChatMessage::user(&state.query)];
    // Index in `messages` of each pair's observation.
    let mut observation_at = Vec::with_capacity(state.history.len());
    for step in &state.history {
        let action = &step.action;
        match &action.kind {
            ActionKind::Invalid { raw, .. } => {
                messages.push(ChatMessage::assistant(raw.clone()));
                observation_at.push(messages.len());
                messages.push(ChatMessage::user(step.observation.text.clone()));
            }
            kind => {
                let id = format!("call_{}", action.turn_index);
                messages.push(ChatMessage {
                    role: Role::Assistant,
                    content: String::new(),
                    tool_call: Some(ToolCall {
                        id: id.clone(),
                        name: kind.label().into(),
                        arguments: kind.arguments_json(),
                    }),
                    tool_call_id: None,
                });
                observation_at.push(messages.len());
                messages.push(ChatMessage {
                    role: Role::Tool,
                    content: step.observation.text.clone(),
                    tool_call: None,
                    tool_call_id: Some(id),
                });
            }
        }
    }
    let mut total: usize = messages.iter().map(ChatMessage::estimate).sum();
    let elidable = observation_at.len().saturating_sub(KEEP_RECENT_PAIRS);
    for &at in &observation_at[..elidable] {
        if total <= budget {
            break;
        }
        let msg = &mut messages[at];
        let before = msg.estimate();
        msg.content = elision_stub(msg.content.chars().count());
        total = total - before + msg.estimate();
    }
    if total > budget {
        return Err(PolicyError::ContextOverflow { needed: total, budget });
    }
    Ok(messages)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ViewStructArgs {
    #[serde(default)]
    section_id: Option<String>,
    #[serde(default)]
    depth: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SectionArgs {
    section_id: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QueriesArgs {
    queries: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NameArgs {
    name: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CodeArgs {
    code: String,
}

/// Validates one tool call against the offered tools.
pub fn parse_tool_call(call: &ToolCall, tools: &[ToolSpec], raw: &str) -> ActionKind {
    let Some(tool) = ToolName::parse(&call.name) else {
        return ActionKind::invalid(format!("unknown tool {}", call.name), raw);
    };
    if !tools.iter().any(|t| t.name == tool) {
        return ActionKind::invalid(format!("tool {} is not available in this run", call.name), raw);
    }
    let text = if call.arguments.trim().is_empty() { "{}" } else { call.arguments.as_str() };
    let args: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => return ActionKind::invalid(format!("arguments for {} are not valid JSON: {e}", call.name), raw),
    };
    let bad = |e: serde_json::Error| ActionKind::invalid(format!("invalid arguments for {}: {e}", call.name), raw);
    match tool {
        ToolName::ViewStruct => match serde_json::from_value::<ViewStructArgs>(args) {
            Ok(ViewStructArgs { depth: Some(0), .. }) => {
                ActionKind::invalid("ViewStruct depth must be at least 1", raw)
            }
            Ok(a) => ActionKind::ViewStruct { section_id: a.section_id, depth: a.depth },
            Err(e) => bad(e),
        },
        ToolName::ViewDetail => match serde_json::from_value::<SectionArgs>(args) {
            Ok(a) => ActionKind::ViewDetail { section_id: a.section_id },
            Err(e) => bad(e),
        },
        ToolName::SemSearch => match serde_json::from_value::<QueriesArgs>(args) {
            Ok(a) if a.queries.is_empty() || a.queries.len() > MAX_SEMSEARCH_QUERIES => ActionKind::invalid(
                format!("SemSearch accepts 1 to {MAX_SEMSEARCH_QUERIES} queries per call, got {}", a.queries.len()),
                raw,
            ),
            Ok(a) => ActionKind::SemSearch { queries: a.queries },
            Err(e) => bad(e),
        },
        ToolName::TypeLookup => match serde_json::from_value::<NameArgs>(args) {
            Ok(a) => ActionKind::TypeLookup { name: a.name },
            Err(e) => bad(e),
        },
        ToolName::Execute | ToolName::Submit => match serde_json::from_value::<CodeArgs>(args) {
            Ok(a) if a.code.trim().is_empty() => {
                ActionKind::invalid(format!("{} needs non-empty code", call.name), raw)
            }
            Ok(a) if tool == ToolName::Execute => ActionKind::Execute { code: a.code },
            Ok(a) => ActionKind::Submit { code: a.code },
            Err(e) => bad(e),
        },
    }
}

/// Turns a provider response into exactly one action.
pub fn parse_response(response: &ChatResponse, tools: &[ToolSpec]) -> ActionKind {
    let raw = raw_text(response);
    match response.tool_calls.as_slice() {
        [] => ActionKind::invalid("no tool call in response; call exactly one tool per turn", raw),
        [call] => parse_tool_call(call, tools, &raw),
        calls => ActionKind::invalid(format!("expected exactly one tool call per turn, got {}", calls.len()), raw),
    }
}

fn raw_text(response: &ChatResponse) -> String {
    let mut raw = response.content.clone().unwrap_or_default();
    for call in &response.tool_calls {
        if !raw.is_empty() {
            raw.push('\n');
        }
        raw.push_str(&format!("{}({})", call.name, call.arguments));
    }
    raw
}

/// Chooses the next action for a state.
pub fn decide(
    provider: &dyn ChatProvider,
    state: &AgentState,
    tools: &[ToolSpec],
    config: &PolicyConfig,
) -> Result<ActionKind, PolicyError> {
    assert!(!tools.is_empty(), "decide needs at least one tool");
    let messages = render_state(state, config.context_budget_tokens)?;
    let request = ChatRequest { messages, tools: tools.to_vec(), temperature: config.temperature };
    let response = provider.complete(&request)?;
    Ok(parse_response(&response, tools))
}

/// Provider for OpenAI-compatible chat-completions endpoints.
pub struct OpenAiProvider {
    client: JsonClient,
    endpoint: String,
    model: String,
    transcript: Option<Mutex<File>>,
}

impl OpenAiProvider {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        config: &PolicyConfig,
    ) -> Self {
        Self {
            client: JsonClient::new(api_key, Duration::from_secs(config.timeout_s), config.max_retries),
            endpoint: endpoint.into(),
            model: model.into(),
            transcript: None,
        }
    }

    /// Builds a provider from config, reading the key from the configured
    /// environment variable.
    pub fn from_config(config: &PolicyConfig) -> Result<Self, String> {
        let endpoint = config.endpoint.clone().ok_or("policy endpoint is not configured")?;
        let model = config.model.clone().ok_or("policy model is not configured")?;
        let key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        let mut provider = Self::new(endpoint, model, key, config);
        if let Some(path) = &config.transcript {
            provider = provider
                .with_transcript(path)
                .map_err(|e| format!("cannot open transcript {}: {e}", path.display()))?;
        }
        Ok(provider)
    }

    pub fn with_transcript(mut self, path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        self.transcript = Some(Mutex::new(file));
        Ok(self)
    }

    pub fn request_body(&self, request: &ChatRequest) -> Value {
        let messages: Vec<Value> = request.messages.iter().map(wire_message).collect();
        let mut body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
        });
        if !request.tools.is_empty() {
            body["tools"] = request
                .tools
                .iter()
                .map(|t| {
                    json!({"type": "function", "function": {
                        "name": t.name.as_str(), "description": t.description, "parameters": t.parameters
                    }})
                })
                .collect();
        }
        body
    }
}

fn wire_message(m: &ChatMessage) -> Value {
    let mut v = json!({"role": m.role, "content": m.content});
    if let Some(call) = &m.tool_call {
        v["tool_calls"] = json!([{
            "id": call.id, "type": "function",
            "function": {"name": call.name, "arguments": call.arguments}
        }]);
    }
    if let Some(id) = &m.tool_call_id {
        v["tool_call_id"] = json!(id);
    }
    v
}

/// Extracts the first choice's message from a chat-completions reply.
pub fn parse_completion(reply: &Value) -> Result<ChatResponse, String> {
    let message = reply.pointer("/choices/0/message").ok_or_else(|| "reply has no choices[0].message".to_string())?;
    let content = message.get("content").and_then(Value::as_str).map(str::to_string);
    let mut tool_calls = Vec::new();
    if let Some(calls) = message.get("tool_calls").and_then(Value::as_array) {
        for (i, call) in calls.iter().enumerate() {
            let function = call.get("function").ok_or("tool call without function")?;
            let name = function.get("name").and_then(Value::as_str).ok_or("tool call without name")?;
            let arguments = match function.get("arguments") {
                Some(Value::String(s)) => s.clone(),
                Some(other) => other.to_string(),
                None => String::new(),
            };
            let id = call.get("id").and_then(Value::as_str).map_or_else(|| format!("call_{i}"), str::to_string);
            tool_calls.push(ToolCall { id, name: name.to_string(), arguments });
        }
    }
    Ok(ChatResponse { content, tool_calls })
}

impl ChatProvider for OpenAiProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, PolicyError> {
        let body = self.request_body(request);
        let reply = self.client.post(&self.endpoint, &body);
        if let Some(file) = &self.transcript {
            let entry = match &reply {
                Ok(v) => json!({"request": body, "response": v}),
                Err(e) => json!({"request": body, "error": e.to_string()}),
            };
            if let Ok(mut f) = file.lock() {
                let _ = writeln!(f, "{entry}");
            }
        }
        let reply = reply.map_err(|e| PolicyError::Provider(e.to_string()))?;
        parse_completion(&reply).map_err(PolicyError::Provider)
    }
}

/// One scripted provider reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptStep {
    Call {
        tool: String,
        #[serde(default)]
        arguments: Value,
    },
    Calls {
        calls: Vec<ScriptCall>,
    },
    Text {
        text: String,
    },
    Fail {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptCall {
    pub tool: String,
    #[serde(default)]
    pub arguments: Value,
}

impl ScriptStep {
    pub fn call(tool: &str, arguments: Value) -> Self {
        ScriptStep::Call { tool: tool.into(), arguments }
    }

    pub fn text(text: impl Into<String>) -> Self {
        ScriptStep::Text { text: text.into() }
    }

    fn to_response(&self, turn: usize) -> Result<ChatResponse, PolicyError> {
        let wire = |i: usize, tool: &str, arguments: &Value| ToolCall {
            id: format!("call_{turn}_{i}"),
            name: tool.to_string(),
            arguments: match arguments {
                Value::Null => "{}".into(),
                Value::String(s) => s.clone(),
                v => v.to_string(),
            },
        };
        Ok(match self {
            ScriptStep::Call { tool, arguments } => {
                ChatResponse { content: None, tool_calls: vec![wire(0, tool, arguments)] }
            }
            ScriptStep::Calls { calls } => ChatResponse {
                content: None,
                tool_calls: calls.iter().enumerate().map(|(i, c)| wire(i, &c.tool, &c.arguments)).collect(),
            },
            ScriptStep::Text { text } => ChatResponse::text(text.clone()),
            ScriptStep::Fail { error } => return Err(PolicyError::Provider(error.clone())),
        })
    }
}

/// Replays a fixed list of replies, one per call. Running past the end is a
/// provider error.
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    steps: Mutex<VecDeque<ScriptStep>>,
    served: Mutex<usize>,
}

impl ScriptedProvider {
    pub fn new(steps: Vec<ScriptStep>) -> Self {
        Self { steps: Mutex::new(steps.into()), served: Mutex::new(0) }
    }

    pub fn remaining(&self) -> usize {
        self.steps.lock().map(|s| s.len()).unwrap_or(0)
    }
}

impl ChatProvider for ScriptedProvider {
    fn complete(&self, _request: &ChatRequest) -> Result<ChatResponse, PolicyError> {
        let step = self.steps.lock().expect("script lock").pop_front();
        let mut served = self.served.lock().expect("script lock");
        *served += 1;
        match step {
            Some(step) => step.to_response(*served),
            None => Err(PolicyError::Provider("script exhausted".into())),
        }
    }
}

/// Scripts keyed by problem id, with an optional fallback for unlisted
/// problems.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptBook {
    #[serde(default)]
    pub default: Vec<ScriptStep>,
    #[serde(default)]
    pub problems: BTreeMap<String, Vec<ScriptStep>>,
}

impl ScriptBook {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read script {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("invalid script {}: {e}", path.display()))
    }

    pub fn provider_for(&self, problem_id: &str) -> ScriptedProvider {
        ScriptedProvider::new(self.problems.get(problem_id).unwrap_or(&self.default).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{Action, Observation, ObservationKind, Step};

    fn call(name: &str, args: &str) -> ChatResponse {
        ChatResponse {
            content: None,
            tool_calls: vec![ToolCall { id: "c".into(), name: name.into(), arguments: args.into() }],
        }
    }

    #[test]
    fn validation_paths() {
        let tools = tool_specs(false);
        let kind = parse_response(&call("Foo", "{}"), &tools);
        assert_eq!(kind.label(), "invalid");
        assert!(matches!(&kind, ActionKind::Invalid { message, .. } if message == "unknown tool Foo"));

        let kind = parse_response(&call("TypeLookup", r#"{"name":"List"}"#), &tools);
        assert!(matches!(&kind, ActionKind::Invalid { message, .. } if message.contains("not available")));

        let four = r#"{"queries":["a","b","c","d"]}"#;
        let kind = parse_response(&call("SemSearch", four), &tools);
        assert!(matches!(&kind, ActionKind::Invalid { message, .. } if message.contains("got 4")));

        let kind = parse_response(&call("ViewDetail", "{not json"), &tools);
        assert!(matches!(&kind, ActionKind::Invalid { message, .. } if message.contains("not valid JSON")));

        let kind = parse_response(&call("ViewDetail", r#"{"section":"x"}"#), &tools);
        assert!(matches!(&kind, ActionKind::Invalid { message, .. } if message.contains("invalid arguments")));

        let kind = parse_response(&ChatResponse::text("I think the answer is 4"), &tools);
        assert!(matches!(&kind, ActionKind::Invalid { raw, .. } if raw == "I think the answer is 4"));

        let two = ChatResponse { content: None, tool_calls: vec![call("ViewStruct", "{}").tool_calls[0].clone(); 2] };
        assert!(
            matches!(parse_response(&two, &tools), ActionKind::Invalid { message, .. } if message.contains("got 2"))
        );

        assert_eq!(
            parse_response(&call("ViewStruct", ""), &tools),
            ActionKind::ViewStruct { section_id: None, depth: None }
        );
    }

    #[test]
    fn type_lookup_is_offered_only_with_an_index() {
        assert_eq!(tool_specs(false).len(), 5);
        let with = tool_specs(true);
        assert_eq!(with.len(), 6);
        assert!(with.iter().any(|t| t.name == ToolName::TypeLookup));
    }

    #[test]
    fn action_serde_shape() {
        let kind = ActionKind::SemSearch { queries: vec!["q".into()] };
        let v = serde_json::to_value(&kind).unwrap();
        assert_eq!(v, json!({"tool": "SemSearch", "arguments": {"queries": ["q"]}}));
        assert_eq!(kind.arguments_json(), r#"{"queries":["q"]}"#);
        let back: ActionKind = serde_json::from_value(v).unwrap();
        assert_eq!(back, kind);
    }

    fn state_with(observations: &[usize]) -> AgentState {
        let mut state = AgentState::new("solve it");
        for (i, n) in observations.iter().enumerate() {
            state.push(Step {
                action: Action { turn_index: i, kind: ActionKind::ViewStruct { section_id: None, depth: None } },
                observation: Observation {
                    text: "x".repeat(*n),
                    kind: ObservationKind::ToolResult,
                    produced_by: "ViewStruct".into(),
                },
            });
        }
        state
    }

    fn stubs(messages: &[ChatMessage]) -> usize {
        messages.iter().filter(|m| m.content.starts_with("(observation elided")).count()
    }

    #[test]
    fn short_state_renders_verbatim() {
        let state = state_with(&[10, 10]);
        let m = render_state(&state, 128_000).unwrap();
        assert_eq!(m.len(), 2 + 4);
        assert_eq!(stubs(&m), 0);
        assert_eq!(m[1].content, "solve it");
    }

    #[test]
    fn oldest_observations_are_elided_first() {
        let state = state_with(&[40_000; 10]);
        // Room for the three newest observations plus overhead, not a fourth.
        let m = render_state(&state, 3 * 10_000 + 2_000).unwrap();
        assert_eq!(stubs(&m), 7);
        let tool_msgs: Vec<_> = m.iter().filter(|m| m.role == Role::Tool).collect();
        assert!(tool_msgs[..7].iter().all(|m| m.content == "(observation elided, 40000 chars)"));
        assert!(tool_msgs[7..].iter().all(|m| m.content.len() == 40_000));
        assert_eq!(render_state(&state, 32_000).unwrap(), m);
    }

    #[test]
    fn unelidable_content_overflows() {
        let state = state_with(&[40_000; 3]);
        assert!(matches!(render_state(&state, 1_000), Err(PolicyError::ContextOverflow { .. })));
    }

    #[test]
    fn scripted_provider_replays_then_fails() {
        let p = ScriptedProvider::new(vec![ScriptStep::call("ViewStruct", json!({})), ScriptStep::text("hi")]);
        let state = AgentState::new("q");
        let tools = tool_specs(false);
        let config = PolicyConfig::default();
        assert_eq!(decide(&p, &state, &tools, &config).unwrap().label(), "ViewStruct");
        assert_eq!(decide(&p, &state, &tools, &config).unwrap().label(), "invalid");
        assert!(matches!(decide(&p, &state, &tools, &config), Err(PolicyError::Provider(_))));
    }

    #[test]
    fn script_steps_parse_from_json() {
        let book: ScriptBook = serde_json::from_str(
            r#"{"default":[{"tool":"Submit","arguments":{"code":"x"}},{"text":"t"},{"error":"boom"},
                {"calls":[{"tool":"ViewStruct"},{"tool":"ViewStruct"}]}]}"#,
        )
        .unwrap();
        assert!(matches!(book.default[0], ScriptStep::Call { .. }));
        assert!(matches!(book.default[1], ScriptStep::Text { .. }));
        assert!(matches!(book.default[2], ScriptStep::Fail { .. }));
        assert!(matches!(book.default[3], ScriptStep::Calls { .. }));
    }

    #[test]
    fn completion_reply_parsing() {
        let reply = json!({"choices": [{"message": {"content": null, "tool_calls": [
            {"id": "a", "type": "function", "function": {"name": "ViewDetail", "arguments": "{\"section_id\":\"x\"}"}}
        ]}}]});
        let r = parse_completion(&reply).unwrap();
        assert_eq!(r.tool_calls[0].name, "ViewDetail");
        assert_eq!(parse_response(&r, &tool_specs(false)), ActionKind::ViewDetail { section_id: "x".into() });
        assert!(parse_completion(&json!({"choices": []})).is_err());
    }

    #[test]
    fn wire_body_has_tools_and_messages() {
        let p = OpenAiProvider::new(
            "http://localhost/v1/chat/completions",
            "m",
            Some("secret".into()),
            &PolicyConfig::default(),
        );
        let state = state_with(&[5]);
        let req =
            ChatRequest { messages: render_state(&state, 1000).unwrap(), tools: tool_specs(false), temperature: 1.0 };
        let body = p.request_body(&req);
        assert_eq!(body["tools"].as_array().unwrap().len(), 5);
        assert_eq!(body["messages"][2]["tool_calls"][0]["function"]["name"], "ViewStruct");
        assert_eq!(body["messages"][3]["role"], "tool");
        assert!(!body.to_string().contains("secret"));
    }
}
