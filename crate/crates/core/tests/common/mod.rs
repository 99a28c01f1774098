#![allow(dead_code)]

pub mod oracle;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use ila_core::bench::{self, Problem};
use ila_core::docstore::DocStore;
use ila_core::par::ExecMode;
use ila_core::retrieval::{HashingEmbedder, VectorIndex};
use ila_core::sandbox::{Sandbox, ToolchainConfig};
use ila_core::typeindex::{self, HeuristicConfig, TypeIndex};
use serde::Deserialize;
use serde_json::{json, Value};

pub const SENTINEL: &str = "PRIVATE-SENTINEL-7f3a";

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn docs_dir() -> PathBuf {
    fixtures().join("docs")
}

#[derive(Debug, Clone, Deserialize)]
pub struct Solutions {
    pub correct: String,
    pub wrong: String,
    #[serde(default)]
    pub overfit: Option<String>,
}

pub fn solutions() -> BTreeMap<String, Solutions> {
    let text = std::fs::read_to_string(fixtures().join("solutions.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub fn problems() -> Vec<Problem> {
    bench::load_problems(&fixtures().join("problems")).unwrap()
}

pub fn mini_problems() -> Vec<Problem> {
    bench::load_problems(&fixtures().join("mini.jsonl")).unwrap()
}

pub fn sandbox() -> Sandbox {
    Sandbox::new(ToolchainConfig::load(&fixtures().join("toolchain.toml")).unwrap()).unwrap()
}

pub struct Fixture {
    pub store: DocStore,
    pub index: VectorIndex,
    pub embedder: HashingEmbedder,
    pub types: TypeIndex,
    pub sandbox: Sandbox,
    pub problems: Vec<Problem>,
}

impl Fixture {
    pub fn load() -> Self {
        let store = DocStore::ingest(&docs_dir()).unwrap();
        let embedder = HashingEmbedder::default();
        let index = VectorIndex::build(&store, &embedder, ExecMode::Parallel).unwrap();
        let manifest = typeindex::load_manifest(&fixtures().join("types.json")).unwrap();
        let types = TypeIndex::build(&store, Some(&manifest), Some(&HeuristicConfig::default())).unwrap();
        Self { store, index, embedder, types, sandbox: sandbox(), problems: problems() }
    }

    pub fn resources(&self) -> ila_core::agent::Resources<'_> {
        ila_core::agent::Resources::new(&self.store, &self.index, &self.embedder, Some(&self.types), &self.sandbox)
    }

    pub fn bench_resources(&self) -> bench::BenchResources<'_> {
        bench::BenchResources {
            store: Some(&self.store),
            index: Some(&self.index),
            embedder: Some(&self.embedder),
            types: Some(&self.types),
            sandbox: &self.sandbox,
        }
    }
}

pub fn ila_bin() -> &'static str {
    env!("CARGO_BIN_EXE_ila")
}

/// Minimal HTTP/1.1 server answering chat-completions requests with
/// `reply(request_body)`. Serves until the test process exits.
pub fn spawn_chat_server<F>(reply: F) -> String
where
    F: Fn(&Value) -> Value + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut content_length = 0usize;
            let mut line = String::new();
            loop {
                line.clear();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                let trimmed = line.trim_end();
                if trimmed.is_empty() {
                    break;
                }
                if let Some((name, value)) = trimmed.split_once(':') {
                    if name.eq_ignore_ascii_case("content-length") {
                        content_length = value.trim().parse().unwrap_or(0);
                    }
                }
            }
            let mut body = vec![0u8; content_length];
            if reader.read_exact(&mut body).is_err() {
                continue;
            }
            let request: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
            let payload = reply(&request).to_string();
            let response = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                payload.len(),
                payload
            );
            let _ = stream.write_all(response.as_bytes());
        }
    });
    format!("http://{addr}/v1/chat/completions")
}

pub fn tool_call_reply(name: &str, arguments: Value) -> Value {
    json!({
        "id": "mock",
        "object": "chat.completion",
        "choices": [{
            "index": 0,
            "finish_reason": "tool_calls",
            "message": {
                "role": "assistant",
                "content": null,
                "tool_calls": [{
                    "id": "call_mock",
                    "type": "function",
                    "function": {"name": name, "arguments": arguments.to_string()}
                }]
            }
        }]
    })
}

/// A script that touches every tool, including failing lookups, an
/// over-long SemSearch, a wrong Submit and a reply without a tool call,
/// before submitting the reference solution.
pub fn tour_script(problem: &Problem, sols: &Solutions) -> Vec<ila_core::policy::ScriptStep> {
    use ila_core::policy::ScriptStep;
    let first_words: String = problem.prompt.split_whitespace().take(6).collect::<Vec<_>>().join(" ");
    vec![
        ScriptStep::call("ViewStruct", json!({})),
        ScriptStep::call("ViewStruct", json!({"section_id": "lists", "depth": 1})),
        ScriptStep::call("ViewDetail", json!({"section_id": "strings/class-str/split-s-and-split-s-sep"})),
        ScriptStep::call("ViewDetail", json!({"section_id": "no/such/section"})),
        ScriptStep::call("SemSearch", json!({"queries": [first_words, "read_line end of input"]})),
        ScriptStep::call("SemSearch", json!({"queries": ["a", "b", "c", "d"]})),
        ScriptStep::call("TypeLookup", json!({"name": "List"})),
        ScriptStep::call("TypeLookup", json!({"name": "Lst"})),
        ScriptStep::call("Execute", json!({"code": sols.wrong})),
        ScriptStep::call("Submit", json!({"code": sols.wrong})),
        ScriptStep::text(format!("Let me try this.\n```pebble\n{}```\n", sols.correct)),
        ScriptStep::call("Submit", json!({"code": sols.correct})),
    ]
}
