//! Execution environment: compile-and-run snippets, grade solutions against
//! test suites.
//!
//! Every invocation gets a fresh temporary working directory, a cleared
//! environment (plus an allowlist), wall-clock timeouts and capped output.
//! There is no jailing beyond that; deploy inside a container when running
//! untrusted code.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

pub const TRUNCATION_MARKER: &str = "\n[... output truncated ...]";
const FEEDBACK_CHARS: usize = 1200;
const DEFAULT_ENV: [&str; 4] = ["PATH", "LANG", "LC_ALL", "SYSTEMROOT"];

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("invalid toolchain config: {0}")]
    Config(String),
    #[error("cannot read toolchain config {path}: {reason}")]
    ConfigFile { path: PathBuf, reason: String },
    #[error("source is empty")]
    EmptySource,
    #[error("test suite is empty")]
    EmptySuite,
    #[error("sandbox i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

fn default_compile_timeout() -> f64 {
    60.0
}
fn default_run_timeout() -> f64 {
    10.0
}
fn default_max_output() -> usize {
    8000
}
fn default_harness_template() -> String {
    "{solution}\n\n{test}\n".into()
}
fn default_name() -> String {
    "toolchain".into()
}

/// How to build and run programs of the target language.
///
/// Command templates are split shell-style and may use `{src}` (the source
/// file), `{bin}` (output path for compiled languages) and `{workdir}`.
/// A bare program name is looked up next to the running executable first,
/// then on `PATH`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolchainConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub compile_cmd: Option<String>,
    pub run_cmd: String,
    pub file_extension: String,
    #[serde(default = "default_compile_timeout")]
    pub compile_timeout_s: f64,
    #[serde(default = "default_run_timeout")]
    pub run_timeout_s: f64,
    #[serde(default = "default_max_output")]
    pub max_output_chars: usize,
    /// For toolchains without a compile step: the exit code the interpreter
    /// uses when the program fails to parse. Such runs count as "did not
    /// compile".
    #[serde(default)]
    pub startup_error_exit_code: Option<i32>,
    /// How a harness test is combined with the solution.
    #[serde(default = "default_harness_template")]
    pub harness_template: String,
    /// Extra environment variables passed through to spawned commands.
    #[serde(default)]
    pub env_allowlist: Vec<String>,
    #[serde(default)]
    pub keep_artifacts: bool,
}

impl ToolchainConfig {
    pub fn interpreted(run_cmd: &str, file_extension: &str) -> Self {
        Self {
            name: default_name(),
            compile_cmd: None,
            run_cmd: run_cmd.into(),
            file_extension: file_extension.into(),
            compile_timeout_s: default_compile_timeout(),
            run_timeout_s: default_run_timeout(),
            max_output_chars: default_max_output(),
            startup_error_exit_code: None,
            harness_template: default_harness_template(),
            env_allowlist: Vec::new(),
            keep_artifacts: false,
        }
    }

    pub fn validate(&self) -> Result<(), SandboxError> {
        let check_template = |t: &str, what: &str| -> Result<(), SandboxError> {
            match shlex::split(t) {
                Some(args) if !args.is_empty() => Ok(()),
                _ => Err(SandboxError::Config(format!("{what} is empty or not parseable: `{t}`"))),
            }
        };
        check_template(&self.run_cmd, "run_cmd")?;
        if let Some(c) = &self.compile_cmd {
            check_template(c, "compile_cmd")?;
        }
        if !(self.compile_timeout_s > 0.0 && self.run_timeout_s > 0.0) {
            return Err(SandboxError::Config("timeouts must be positive".into()));
        }
        if self.max_output_chars == 0 {
            return Err(SandboxError::Config("max_output_chars must be positive".into()));
        }
        if self.file_extension.is_empty() || self.file_extension.contains(['/', '\\']) {
            return Err(SandboxError::Config("file_extension must be a plain extension".into()));
        }
        if !self.harness_template.contains("{solution}") || !self.harness_template.contains("{test}") {
            return Err(SandboxError::Config("harness_template needs {solution} and {test}".into()));
        }
        Ok(())
    }

    /// Loads a TOML or JSON (by extension) config. Relative program paths
    /// containing a `/` are resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self, SandboxError> {
        let err = |reason: String| SandboxError::ConfigFile { path: path.to_path_buf(), reason };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let mut config: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| err(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| err(e.to_string()))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        config.run_cmd = anchor_program(&config.run_cmd, base);
        config.compile_cmd = config.compile_cmd.map(|c| anchor_program(&c, base));
        config.validate()?;
        Ok(config)
    }
}

fn anchor_program(template: &str, base: &Path) -> String {
    let Some(mut args) = shlex::split(template) else { return template.to_string() };
    if let Some(program) = args.first_mut() {
        if program.contains('/') && Path::new(program.as_str()).is_relative() {
            *program = base.join(&*program).display().to_string();
        }
    }
    shlex::try_join(args.iter().map(String::as_str)).unwrap_or_else(|_| template.to_string())
}

fn resolve_program(program: &str) -> PathBuf {
    if program.contains('/') {
        return PathBuf::from(program);
    }
    if let Ok(exe) = std::env::current_exe() {
        let mut dir = exe.parent().map(Path::to_path_buf);
        for _ in 0..2 {
            let Some(d) = dir else { break };
            let candidate = d.join(program);
            if candidate.is_file() {
                return candidate;
            }
            dir = d.parent().map(Path::to_path_buf);
        }
    }
    PathBuf::from(program)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Compile,
    Run,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExitStatus {
    Code(i32),
    Timeout,
    SpawnFailure,
}

impl ExitStatus {
    pub fn success(self) -> bool {
        self == ExitStatus::Code(0)
    }
}

impl std::fmt::Display for ExitStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExitStatus::Code(c) => write!(f, "exit {c}"),
            ExitStatus::Timeout => f.write_str("timeout"),
            ExitStatus::SpawnFailure => f.write_str("spawn-failure"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecResult {
    pub phase: Phase,
    pub exit: ExitStatus,
    pub stdout: String,
    pub stderr: String,
    pub wall_time_ms: u64,
    /// The argv that was spawned, after placeholder substitution.
    pub command: Vec<String>,
    pub workdir: PathBuf,
}

impl ExecResult {
    pub fn render(&self) -> String {
        let phase = match self.phase {
            Phase::Compile => "compile",
            Phase::Run => "run",
        };
        let mut out = format!("[{phase}] {}\n", self.exit);
        if !self.stdout.is_empty() {
            out.push_str("stdout:\n");
            out.push_str(&self.stdout);
            if !self.stdout.ends_with('\n') {
                out.push('\n');
            }
        }
        if !self.stderr.is_empty() {
            out.push_str("stderr:\n");
            out.push_str(&self.stderr);
            if !self.stderr.ends_with('\n') {
                out.push('\n');
            }
        }
        out
    }
}

/// Truncates to `max_chars` characters, appending [`TRUNCATION_MARKER`].
pub fn truncate_output(text: &str, max_chars: usize) -> String {
    match text.char_indices().nth(max_chars) {
        None => text.to_string(),
        Some((byte, _)) => format!("{}{TRUNCATION_MARKER}", &text[..byte]),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TestBody {
    /// Test program combined with the solution; passes when it exits 0.
    Harness { program: String },
    /// Feeds `stdin`, compares stdout ignoring trailing whitespace.
    Io { stdin: String, expected_stdout: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestSpec {
    pub test_id: String,
    #[serde(flatten)]
    pub body: TestBody,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub test_id: String,
    pub passed: bool,
    pub feedback: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitResult {
    pub outcomes: Vec<TestOutcome>,
    pub all_passed: bool,
    pub compiled: bool,
}

impl SubmitResult {
    pub fn passed_count(&self) -> usize {
        self.outcomes.iter().filter(|o| o.passed).count()
    }

    pub fn render(&self) -> String {
        let total = self.outcomes.len();
        let mut out = if self.all_passed {
            format!("Submit: all {total} public tests passed.\n")
        } else if !self.compiled {
            format!("Submit: compilation failed; 0/{total} public tests passed.\n")
        } else {
            format!("Submit: {}/{total} public tests passed.\n", self.passed_count())
        };
        for o in &self.outcomes {
            match (&o.feedback, o.passed) {
                (_, true) => out.push_str(&format!("[PASS] {}\n", o.test_id)),
                (Some(fb), false) => out.push_str(&format!("[FAIL] {}: {}\n", o.test_id, fb)),
                (None, false) => out.push_str(&format!("[FAIL] {}\n", o.test_id)),
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradeResult {
    pub accepted: bool,
    pub compiled: bool,
    pub outcomes: Vec<TestOutcome>,
    /// Set when a toolchain program could not be spawned.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub infra_error: Option<String>,
}

/// Compares program output the way judges usually do: trailing whitespace on
/// each line and trailing blank lines are ignored. Returns the first
/// divergence as a message.
pub fn compare_output(expected: &str, actual: &str) -> Result<(), String> {
    fn normalize(s: &str) -> Vec<&str> {
        let mut lines: Vec<&str> = s.lines().map(str::trim_end).collect();
        while lines.last().is_some_and(|l| l.is_empty()) {
            lines.pop();
        }
        lines
    }
    let want = normalize(expected);
    let got = normalize(actual);
    for i in 0..want.len().max(got.len()) {
        match (want.get(i), got.get(i)) {
            (Some(w), Some(g)) if w == g => continue,
            (Some(w), Some(g)) => {
                return Err(format!("line {}: expected {:?}, got {:?}", i + 1, clip(w, 200), clip(g, 200)))
            }
            (Some(w), None) => return Err(format!("line {}: expected {:?}, got end of output", i + 1, clip(w, 200))),
            (None, Some(g)) => return Err(format!("line {}: unexpected extra output {:?}", i + 1, clip(g, 200))),
            (None, None) => unreachable!(),
        }
    }
    Ok(())
}

fn clip(s: &str, n: usize) -> String {
    match s.char_indices().nth(n) {
        None => s.to_string(),
        Some((b, _)) => format!("{}...", &s[..b]),
    }
}

/// A fresh working directory holding one source file.
struct Workdir<'a> {
    config: &'a ToolchainConfig,
    dir: Option<tempfile::TempDir>,
    path: PathBuf,
    src: PathBuf,
    bin: PathBuf,
}

impl<'a> Workdir<'a> {
    fn new(config: &'a ToolchainConfig, source: &str) -> Result<Self, SandboxError> {
        let dir = tempfile::Builder::new().prefix("ila-sandbox-").tempdir()?;
        let path = dir.path().to_path_buf();
        let src = path.join(format!("main.{}", config.file_extension));
        let bin = path.join("main");
        fs::write(&src, source)?;
        Ok(Self { config, dir: Some(dir), path, src, bin })
    }

    fn argv(&self, template: &str) -> Vec<String> {
        let args = shlex::split(template).unwrap_or_default();
        args.into_iter()
            .map(|a| {
                a.replace("{src}", &self.src.display().to_string())
                    .replace("{bin}", &self.bin.display().to_string())
                    .replace("{workdir}", &self.path.display().to_string())
            })
            .collect()
    }

    fn compile(&self) -> Option<ExecResult> {
        let template = self.config.compile_cmd.as_deref()?;
        Some(self.spawn(Phase::Compile, template, "", self.config.compile_timeout_s))
    }

    fn run(&self, stdin: &str) -> ExecResult {
        self.spawn(Phase::Run, &self.config.run_cmd, stdin, self.config.run_timeout_s)
    }

    fn spawn(&self, phase: Phase, template: &str, stdin: &str, timeout_s: f64) -> ExecResult {
        let argv = self.argv(template);
        let max = self.config.max_output_chars;
        let mut result = ExecResult {
            phase,
            exit: ExitStatus::SpawnFailure,
            stdout: String::new(),
            stderr: String::new(),
            wall_time_ms: 0,
            command: argv.clone(),
            workdir: self.path.clone(),
        };
        let Some((program, args)) = argv.split_first() else {
            result.stderr = "empty command template".into();
            return result;
        };
        let mut cmd = Command::new(resolve_program(program));
        cmd.args(args)
            .current_dir(&self.path)
            .env_clear()
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        for key in DEFAULT_ENV.iter().copied().chain(self.config.env_allowlist.iter().map(String::as_str)) {
            if let Ok(v) = std::env::var(key) {
                cmd.env(key, v);
            }
        }
        let started = Instant::now();
        let mut child = match cmd.spawn() {
            Ok(c) => c,
            Err(e) => {
                result.stderr = format!("could not start `{program}`: {e} (is the toolchain installed?)");
                return result;
            }
        };
        let input = stdin.as_bytes().to_vec();
        if let Some(mut pipe) = child.stdin.take() {
            thread::spawn(move || {
                let _ = pipe.write_all(&input);
            });
        }
        // Keep a little more than the cap so truncation is detectable.
        let byte_cap = max.saturating_mul(4).saturating_add(16);
        let out_rx = drain(child.stdout.take(), byte_cap);
        let err_rx = drain(child.stderr.take(), byte_cap);
        let timeout = Duration::from_secs_f64(timeout_s);
        result.exit = match child.wait_timeout(timeout) {
            Ok(Some(status)) => ExitStatus::Code(exit_code(status)),
            Ok(None) => {
                let _ = child.kill();
                let _ = child.wait();
                ExitStatus::Timeout
            }
            Err(e) => {
                let _ = child.kill();
                result.stderr = format!("wait failed: {e}");
                ExitStatus::SpawnFailure
            }
        };
        result.wall_time_ms = started.elapsed().as_millis() as u64;
        let grace = Duration::from_secs(1);
        let stdout = out_rx.recv_timeout(grace).unwrap_or_default();
        let stderr = err_rx.recv_timeout(grace).unwrap_or_default();
        result.stdout = truncate_output(&String::from_utf8_lossy(&stdout), max);
        let mut stderr = String::from_utf8_lossy(&stderr).into_owned();
        if result.exit == ExitStatus::Timeout {
            stderr.push_str(&format!("\n[killed after {timeout_s}s wall-clock timeout]"));
        }
        result.stderr = truncate_output(stderr.trim_start_matches('\n'), max);
        result
    }
}

impl Drop for Workdir<'_> {
    fn drop(&mut self) {
        if self.config.keep_artifacts {
            if let Some(dir) = self.dir.take() {
                let _ = dir.keep();
            }
        }
    }
}

fn drain<R: Read + Send + 'static>(pipe: Option<R>, cap: usize) -> mpsc::Receiver<Vec<u8>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut kept = Vec::new();
        if let Some(mut pipe) = pipe {
            let mut buf = [0u8; 8192];
            while let Ok(n) = pipe.read(&mut buf) {
                if n == 0 {
                    break;
                }
                let room = cap.saturating_sub(kept.len());
                kept.extend_from_slice(&buf[..n.min(room)]);
            }
        }
        let _ = tx.send(kept);
    });
    rx
}

#[cfg(unix)]
fn exit_code(status: std::process::ExitStatus) -> i32 {
    use std::os::unix::process::ExitStatusExt;
    status.code().unwrap_or_else(|| 128 + status.signal().unwrap_or(0))
}

#[cfg(not(unix))]
fn exit_code(status: std::process::ExitStatus) -> i32 {
    status.code().unwrap_or(-1)
}

/// Outcome of building (or parse-checking) one source.
struct Build {
    ok: bool,
    failure: Option<String>,
    spawn_failed: bool,
}

#[derive(Debug, Clone)]
pub struct Sandbox {
    config: ToolchainConfig,
}

impl Sandbox {
    pub fn new(config: ToolchainConfig) -> Result<Self, SandboxError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &ToolchainConfig {
        &self.config
    }

    /// Compiles (if configured) and runs a snippet. The run phase is present
    /// only when compilation succeeded.
    pub fn execute(&self, snippet: &str) -> Result<Vec<ExecResult>, SandboxError> {
        if snippet.trim().is_empty() {
            return Err(SandboxError::EmptySource);
        }
        let work = Workdir::new(&self.config, snippet)?;
        let mut results = Vec::new();
        if let Some(compiled) = work.compile() {
            let ok = compiled.exit.success();
            results.push(compiled);
            if !ok {
                return Ok(results);
            }
        }
        results.push(work.run(""));
        Ok(results)
    }

    fn startup_failed(&self, run: &ExecResult) -> bool {
        self.config.compile_cmd.is_none()
            && self.config.startup_error_exit_code.is_some_and(|c| run.exit == ExitStatus::Code(c))
    }

    fn build(&self, work: &Workdir<'_>) -> Build {
        match work.compile() {
            None => Build { ok: true, failure: None, spawn_failed: false },
            Some(r) if r.exit.success() => Build { ok: true, failure: None, spawn_failed: false },
            Some(r) => Build {
                ok: false,
                spawn_failed: r.exit == ExitStatus::SpawnFailure,
                failure: Some(format!("compilation failed ({}): {}", r.exit, clip(r.stderr.trim(), FEEDBACK_CHARS))),
            },
        }
    }

    fn judge_run(&self, run: &ExecResult, expected: Option<&str>) -> (bool, Option<String>) {
        if run.exit != ExitStatus::Code(0) {
            let what = match run.exit {
                ExitStatus::Timeout => "timed out".to_string(),
                other => other.to_string(),
            };
            let detail = if run.stderr.trim().is_empty() { run.stdout.trim() } else { run.stderr.trim() };
            return (false, Some(format!("{what}: {}", clip(detail, FEEDBACK_CHARS))));
        }
        match expected {
            None => (true, None),
            Some(want) => match compare_output(want, &run.stdout) {
                Ok(()) => (true, None),
                Err(diff) => (false, Some(diff)),
            },
        }
    }

    /// Runs `solution` against `suite`. Shared by Submit (public tests) and
    /// grading (private tests).
    fn evaluate(
        &self,
        solution: &str,
        suite: &[TestSpec],
    ) -> Result<(Vec<TestOutcome>, bool, Option<String>), SandboxError> {
        if suite.is_empty() {
            return Err(SandboxError::EmptySuite);
        }
        if solution.trim().is_empty() {
            let outcomes = suite
                .iter()
                .map(|t| TestOutcome {
                    test_id: t.test_id.clone(),
                    passed: false,
                    feedback: Some("empty solution".into()),
                })
                .collect();
            return Ok((outcomes, false, None));
        }
        let mut compiled = true;
        let mut infra = None;
        let mut outcomes = Vec::with_capacity(suite.len());

        // io tests share one build of the bare solution.
        let io_work = if suite.iter().any(|t| matches!(t.body, TestBody::Io { .. })) {
            let work = Workdir::new(&self.config, solution)?;
            let build = self.build(&work);
            Some((work, build))
        } else {
            None
        };

        for test in suite {
            let (passed, feedback) = match &test.body {
                TestBody::Io { stdin, expected_stdout } => {
                    let (work, build) = io_work.as_ref().expect("built above");
                    if !build.ok {
                        compiled = false;
                        if build.spawn_failed {
                            infra.get_or_insert_with(|| build.failure.clone().unwrap_or_default());
                        }
                        (false, build.failure.clone())
                    } else {
                        let run = work.run(stdin);
                        self.note_run(&run, &mut compiled, &mut infra);
                        self.judge_run(&run, Some(expected_stdout))
                    }
                }
                TestBody::Harness { program } => {
                    let combined =
                        self.config.harness_template.replace("{solution}", solution).replace("{test}", program);
                    let work = Workdir::new(&self.config, &combined)?;
                    let build = self.build(&work);
                    if !build.ok {
                        compiled = false;
                        if build.spawn_failed {
                            infra.get_or_insert_with(|| build.failure.clone().unwrap_or_default());
                        }
                        (false, build.failure)
                    } else {
                        let run = work.run("");
                        self.note_run(&run, &mut compiled, &mut infra);
                        self.judge_run(&run, None)
                    }
                }
            };
            outcomes.push(TestOutcome { test_id: test.test_id.clone(), passed, feedback });
        }
        Ok((outcomes, compiled, infra))
    }

    fn note_run(&self, run: &ExecResult, compiled: &mut bool, infra: &mut Option<String>) {
        if self.startup_failed(run) {
            *compiled = false;
        }
        if run.exit == ExitStatus::SpawnFailure {
            *compiled = false;
            infra.get_or_insert_with(|| run.stderr.clone());
        }
    }

    /// The Submit primitive: public tests, per-test feedback.
    pub fn submit(&self, solution: &str, public_suite: &[TestSpec]) -> Result<SubmitResult, SandboxError> {
        let (outcomes, compiled, _) = self.evaluate(solution, public_suite)?;
        let all_passed = compiled && outcomes.iter().all(|o| o.passed);
        Ok(SubmitResult { outcomes, all_passed, compiled })
    }

    /// Offline grading against the private suite. Never exposed to agents.
    pub fn grade(&self, solution: &str, private_suite: &[TestSpec]) -> Result<GradeResult, SandboxError> {
        let (outcomes, compiled, infra_error) = self.evaluate(solution, private_suite)?;
        let accepted = compiled && outcomes.iter().all(|o| o.passed);
        Ok(GradeResult { accepted, compiled, outcomes, infra_error })
    }

    /// Whether `source` compiles (or, for interpreted toolchains, parses).
    pub fn compiles(&self, source: &str) -> Result<bool, SandboxError> {
        if source.trim().is_empty() {
            return Ok(false);
        }
        let work = Workdir::new(&self.config, source)?;
        if self.config.compile_cmd.is_some() {
            return Ok(self.build(&work).ok);
        }
        let run = work.run("");
        Ok(run.exit != ExitStatus::SpawnFailure && !self.startup_failed(&run))
    }
}
