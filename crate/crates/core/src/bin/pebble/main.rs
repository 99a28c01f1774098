//! `pebble`: interpreter for the small fixture language used by the test
//! corpus and the bundled toolchain config.
//!
//! ```text
//! pebble check <file>   parse only; exit 0 or 2
//! pebble run <file>     parse and execute
//! ```
//!
//! Exit codes: 0 success, 1 runtime error or failed assertion, 2 parse
//! error, 64 usage error. `exit(n)` exits with `n`.

mod interp;
mod lexer;
mod parser;

use std::io::{self, Write};
use std::process::ExitCode;

const PARSE_ERROR: u8 = 2;
const USAGE_ERROR: u8 = 64;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (mode, path) = match args.as_slice() {
        [mode, path] if mode == "check" || mode == "run" => (mode.clone(), path.clone()),
        _ => {
            eprintln!("usage: pebble (check|run) <file>");
            return ExitCode::from(USAGE_ERROR);
        }
    };
    // Deeply recursive programs need more than the default main-thread stack.
    let worker = std::thread::Builder::new()
        .stack_size(256 * 1024 * 1024)
        .spawn(move || execute(&mode, &path))
        .expect("spawn interpreter thread");
    ExitCode::from(worker.join().unwrap_or(1))
}

fn execute(mode: &str, path: &str) -> u8 {
    let source = match std::fs::read_to_string(path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: cannot read {path}: {e}");
            return USAGE_ERROR;
        }
    };
    let tokens = match lexer::tokenize(&source) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("parse error at line {}: {}", e.line, e.message);
            return PARSE_ERROR;
        }
    };
    let program = match parser::parse(tokens) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("parse error at line {}: {}", e.line, e.message);
            return PARSE_ERROR;
        }
    };
    if mode == "check" {
        return 0;
    }
    let stdin = io::stdin();
    let mut input = stdin.lock();
    let stdout = io::stdout();
    let mut output = stdout.lock();
    let result = interp::Interpreter::new(&mut input, &mut output).run(&program);
    let _ = output.flush();
    match result {
        Ok(()) => 0,
        Err(interp::Halt::Exit(code)) => code as u8,
        Err(interp::Halt::Error { line, message }) => {
            eprintln!("runtime error at line {line}: {message}");
            1
        }
    }
}
