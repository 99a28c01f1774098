use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::rc::Rc;

use crate::parser::{BinOp, Expr, FnDef, Stmt};

const MAX_CALL_DEPTH: usize = 1000;

#[derive(Debug, Clone)]
pub enum Value {
    Int(i64),
    Str(Rc<str>),
    Bool(bool),
    Nil,
    List(Rc<RefCell<Vec<Value>>>),
}

impl Value {
    fn type_name(&self) -> &'static str {
        match self {
            Value::Int(_) => "Int",
            Value::Str(_) => "Str",
            Value::Bool(_) => "Bool",
            Value::Nil => "Nil",
            Value::List(_) => "List",
        }
    }

    fn list(items: Vec<Value>) -> Value {
        Value::List(Rc::new(RefCell::new(items)))
    }

    fn str(s: impl Into<Rc<str>>) -> Value {
        Value::Str(s.into())
    }

    fn repr(&self, out: &mut String) {
        match self {
            Value::Str(s) => {
                out.push('"');
                out.push_str(s);
                out.push('"');
            }
            other => out.push_str(&other.to_string()),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Str(s) => f.write_str(s),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Nil => f.write_str("nil"),
            Value::List(items) => {
                let mut s = String::from("[");
                for (i, item) in items.borrow().iter().enumerate() {
                    if i > 0 {
                        s.push_str(", ");
                    }
                    item.repr(&mut s);
                }
                s.push(']');
                f.write_str(&s)
            }
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a == b,
            (Value::Str(a), Value::Str(b)) => a == b,
            (Value::Bool(a), Value::Bool(b)) => a == b,
            (Value::Nil, Value::Nil) => true,
            (Value::List(a), Value::List(b)) => *a.borrow() == *b.borrow(),
            _ => false,
        }
    }
}

#[derive(Debug)]
pub enum Halt {
    Error { line: usize, message: String },
    Exit(i32),
}

fn fail<T>(line: usize, message: impl Into<String>) -> Result<T, Halt> {
    Err(Halt::Error { line, message: message.into() })
}

enum Flow {
    Normal,
    Return(Value),
    Break,
    Continue,
}

pub struct Interpreter<'io> {
    functions: HashMap<String, Rc<FnDef>>,
    globals: HashMap<String, Value>,
    frames: Vec<Vec<HashMap<String, Value>>>,
    stdin: &'io mut dyn BufRead,
    stdout: &'io mut dyn Write,
}

impl<'io> Interpreter<'io> {
    pub fn new(stdin: &'io mut dyn BufRead, stdout: &'io mut dyn Write) -> Self {
        Self { functions: HashMap::new(), globals: HashMap::new(), frames: Vec::new(), stdin, stdout }
    }

    pub fn run(&mut self, program: &[Stmt]) -> Result<(), Halt> {
        // Top-level functions are visible before their declaration.
        for stmt in program {
            if let Stmt::Fn(def) = stmt {
                if self.functions.insert(def.name.clone(), def.clone()).is_some() {
                    return fail(def.line, format!("function `{}` is declared twice", def.name));
                }
            }
        }
        match self.exec_block(program)? {
            Flow::Normal => Ok(()),
            _ => unreachable!("control flow outside loop/function is rejected by the parser"),
        }
    }

    fn exec_block(&mut self, stmts: &[Stmt]) -> Result<Flow, Halt> {
        for stmt in stmts {
            match self.exec(stmt)? {
                Flow::Normal => {}
                other => return Ok(other),
            }
        }
        Ok(Flow::Normal)
    }

    fn scoped_block(&mut self, stmts: &[Stmt]) -> Result<Flow, Halt> {
        self.push_scope();
        let result = self.exec_block(stmts);
        self.pop_scope();
        result
    }

    fn push_scope(&mut self) {
        if let Some(frame) = self.frames.last_mut() {
            frame.push(HashMap::new());
        }
    }

    fn pop_scope(&mut self) {
        if let Some(frame) = self.frames.last_mut() {
            frame.pop();
        }
    }

    fn declare(&mut self, name: &str, value: Value) {
        match self.frames.last_mut().and_then(|f| f.last_mut()) {
            Some(scope) => {
                scope.insert(name.to_string(), value);
            }
            None => {
                self.globals.insert(name.to_string(), value);
            }
        }
    }

    fn lookup(&self, name: &str, line: usize) -> Result<Value, Halt> {
        if let Some(frame) = self.frames.last() {
            for scope in frame.iter().rev() {
                if let Some(v) = scope.get(name) {
                    return Ok(v.clone());
                }
            }
        }
        match self.globals.get(name) {
            Some(v) => Ok(v.clone()),
            None => fail(line, format!("undeclared identifier `{name}`")),
        }
    }

    fn assign_var(&mut self, name: &str, value: Value, line: usize) -> Result<(), Halt> {
        if let Some(frame) = self.frames.last_mut() {
            for scope in frame.iter_mut().rev() {
                if let Some(slot) = scope.get_mut(name) {
                    *slot = value;
                    return Ok(());
                }
            }
        }
        match self.globals.get_mut(name) {
            Some(slot) => {
                *slot = value;
                Ok(())
            }
            None => fail(line, format!("assignment to undeclared identifier `{name}` (use `let`)")),
        }
    }

    fn exec(&mut self, stmt: &Stmt) -> Result<Flow, Halt> {
        match stmt {
            Stmt::Let(name, expr) => {
                let value = self.eval(expr)?;
                self.declare(name, value);
            }
            Stmt::Assign(target, expr, line) => {
                let value = self.eval(expr)?;
                match target {
                    Expr::Var(name, _) => self.assign_var(name, value, *line)?,
                    Expr::Index(base, index, line) => {
                        let base = self.eval(base)?;
                        let index = self.eval(index)?;
                        let Value::List(items) = base else {
                            return fail(*line, format!("cannot assign into {}", base.type_name()));
                        };
                        let idx = list_index(&index, items.borrow().len(), *line)?;
                        items.borrow_mut()[idx] = value;
                    }
                    _ => unreachable!("parser only admits variables and index targets"),
                }
            }
            Stmt::Expr(expr) => {
                self.eval(expr)?;
            }
            Stmt::If(arms, otherwise) => {
                for (cond, body) in arms {
                    if self.condition(cond)? {
                        return self.scoped_block(body);
                    }
                }
                if let Some(body) = otherwise {
                    return self.scoped_block(body);
                }
            }
            Stmt::While(cond, body) => {
                while self.condition(cond)? {
                    match self.scoped_block(body)? {
                        Flow::Break => break,
                        Flow::Return(v) => return Ok(Flow::Return(v)),
                        Flow::Normal | Flow::Continue => {}
                    }
                }
            }
            Stmt::For(var, iter, body, line) => {
                let items: Vec<Value> = match self.eval(iter)? {
                    Value::List(items) => items.borrow().clone(),
                    Value::Str(s) => s.chars().map(|c| Value::str(c.to_string())).collect(),
                    other => return fail(*line, format!("cannot iterate over {}", other.type_name())),
                };
                for item in items {
                    self.push_scope();
                    self.declare(var, item);
                    let flow = self.exec_block(body);
                    self.pop_scope();
                    match flow? {
                        Flow::Break => break,
                        Flow::Return(v) => return Ok(Flow::Return(v)),
                        Flow::Normal | Flow::Continue => {}
                    }
                }
            }
            Stmt::Fn(_) => {}
            Stmt::Return(expr) => {
                let value = match expr {
                    Some(e) => self.eval(e)?,
                    None => Value::Nil,
                };
                return Ok(Flow::Return(value));
            }
            Stmt::Break => return Ok(Flow::Break),
            Stmt::Continue => return Ok(Flow::Continue),
        }
        Ok(Flow::Normal)
    }

    fn condition(&mut self, expr: &Expr) -> Result<bool, Halt> {
        match self.eval(expr)? {
            Value::Bool(b) => Ok(b),
            other => fail(expr_line(expr), format!("condition must be Bool, found {}", other.type_name())),
        }
    }

    fn eval(&mut self, expr: &Expr) -> Result<Value, Halt> {
        Ok(match expr {
            Expr::Int(v) => Value::Int(*v),
            Expr::Str(s) => Value::Str(s.clone()),
            Expr::Bool(b) => Value::Bool(*b),
            Expr::Nil => Value::Nil,
            Expr::Var(name, line) => self.lookup(name, *line)?,
            Expr::List(items) => {
                let values = items.iter().map(|e| self.eval(e)).collect::<Result<Vec<_>, _>>()?;
                Value::list(values)
            }
            Expr::Neg(inner, line) => match self.eval(inner)? {
                Value::Int(v) => {
                    Value::Int(v.checked_neg().ok_or(Halt::Error { line: *line, message: "integer overflow".into() })?)
                }
                other => return fail(*line, format!("cannot negate {}", other.type_name())),
            },
            Expr::Not(inner, line) => match self.eval(inner)? {
                Value::Bool(b) => Value::Bool(!b),
                other => return fail(*line, format!("`not` expects Bool, found {}", other.type_name())),
            },
            Expr::And(l, r, line) => {
                let left = self.eval(l)?;
                match left {
                    Value::Bool(false) => Value::Bool(false),
                    Value::Bool(true) => match self.eval(r)? {
                        Value::Bool(b) => Value::Bool(b),
                        other => return fail(*line, format!("`and` expects Bool, found {}", other.type_name())),
                    },
                    other => return fail(*line, format!("`and` expects Bool, found {}", other.type_name())),
                }
            }
            Expr::Or(l, r, line) => {
                let left = self.eval(l)?;
                match left {
                    Value::Bool(true) => Value::Bool(true),
                    Value::Bool(false) => match self.eval(r)? {
                        Value::Bool(b) => Value::Bool(b),
                        other => return fail(*line, format!("`or` expects Bool, found {}", other.type_name())),
                    },
                    other => return fail(*line, format!("`or` expects Bool, found {}", other.type_name())),
                }
            }
            Expr::Binary(op, l, r, line) => {
                let left = self.eval(l)?;
                let right = self.eval(r)?;
                binary(*op, left, right, *line)?
            }
            Expr::Index(base, index, line) => {
                let base = self.eval(base)?;
                let index = self.eval(index)?;
                match base {
                    Value::List(items) => {
                        let items = items.borrow();
                        let idx = list_index(&index, items.len(), *line)?;
                        items[idx].clone()
                    }
                    Value::Str(s) => {
                        let chars: Vec<char> = s.chars().collect();
                        let idx = list_index(&index, chars.len(), *line)?;
                        Value::str(chars[idx].to_string())
                    }
                    other => return fail(*line, format!("cannot index into {}", other.type_name())),
                }
            }
            Expr::Call(name, args, line) => {
                let values = args.iter().map(|e| self.eval(e)).collect::<Result<Vec<_>, _>>()?;
                self.call(name, values, *line)?
            }
        })
    }

    fn call(&mut self, name: &str, args: Vec<Value>, line: usize) -> Result<Value, Halt> {
        if let Some(def) = self.functions.get(name).cloned() {
            if def.params.len() != args.len() {
                return fail(
                    line,
                    format!("function `{name}` takes {} argument(s), {} given", def.params.len(), args.len()),
                );
            }
            if self.frames.len() >= MAX_CALL_DEPTH {
                return fail(line, "maximum call depth exceeded");
            }
            let scope: HashMap<String, Value> = def.params.iter().cloned().zip(args).collect();
            self.frames.push(vec![scope]);
            let flow = self.exec_block(&def.body);
            self.frames.pop();
            return Ok(match flow? {
                Flow::Return(v) => v,
                _ => Value::Nil,
            });
        }
        self.builtin(name, args, line)
    }

    fn builtin(&mut self, name: &str, args: Vec<Value>, line: usize) -> Result<Value, Halt> {
        let arity = |n: usize| -> Result<(), Halt> {
            if args.len() == n {
                Ok(())
            } else {
                fail(line, format!("`{name}` takes {n} argument(s), {} given", args.len()))
            }
        };
        match name {
            "print" => {
                let text = args.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ");
                writeln!(self.stdout, "{text}").map_err(|e| Halt::Error { line, message: e.to_string() })?;
                Ok(Value::Nil)
            }
            "len" => {
                arity(1)?;
                match &args[0] {
                    Value::List(items) => Ok(Value::Int(items.borrow().len() as i64)),
                    Value::Str(s) => Ok(Value::Int(s.chars().count() as i64)),
                    other => fail(line, format!("`len` expects List or Str, found {}", other.type_name())),
                }
            }
            "push" => {
                arity(2)?;
                let Value::List(items) = &args[0] else {
                    return fail(line, "`push` expects a List as first argument");
                };
                items.borrow_mut().push(args[1].clone());
                Ok(Value::Nil)
            }
            "pop" => {
                arity(1)?;
                let Value::List(items) = &args[0] else {
                    return fail(line, "`pop` expects a List");
                };
                let popped = items.borrow_mut().pop();
                popped.map_or_else(|| fail(line, "`pop` from empty List"), Ok)
            }
            "range" => {
                let (lo, hi) = match args.as_slice() {
                    [Value::Int(hi)] => (0, *hi),
                    [Value::Int(lo), Value::Int(hi)] => (*lo, *hi),
                    _ => return fail(line, "`range` expects one or two Int arguments"),
                };
                if hi.saturating_sub(lo) > 10_000_000 {
                    return fail(line, "`range` too large");
                }
                Ok(Value::list((lo..hi).map(Value::Int).collect()))
            }
            "str" => {
                arity(1)?;
                Ok(Value::str(args[0].to_string()))
            }
            "int" => {
                arity(1)?;
                match &args[0] {
                    Value::Int(v) => Ok(Value::Int(*v)),
                    Value::Str(s) => Ok(s.trim().parse::<i64>().map(Value::Int).unwrap_or(Value::Nil)),
                    other => fail(line, format!("`int` expects Str or Int, found {}", other.type_name())),
                }
            }
            "split" => {
                let parts: Vec<Value> = match args.as_slice() {
                    [Value::Str(s)] => s.split_whitespace().map(Value::str).collect(),
                    [Value::Str(s), Value::Str(sep)] if !sep.is_empty() => s.split(&**sep).map(Value::str).collect(),
                    _ => return fail(line, "`split` expects (Str) or (Str, non-empty Str)"),
                };
                Ok(Value::list(parts))
            }
            "join" => {
                arity(2)?;
                let (Value::List(items), Value::Str(sep)) = (&args[0], &args[1]) else {
                    return fail(line, "`join` expects (List, Str)");
                };
                let joined = items.borrow().iter().map(ToString::to_string).collect::<Vec<_>>().join(sep);
                Ok(Value::str(joined))
            }
            "chars" => {
                arity(1)?;
                let Value::Str(s) = &args[0] else {
                    return fail(line, "`chars` expects a Str");
                };
                Ok(Value::list(s.chars().map(|c| Value::str(c.to_string())).collect()))
            }
            "lower" | "upper" => {
                arity(1)?;
                let Value::Str(s) = &args[0] else {
                    return fail(line, format!("`{name}` expects a Str"));
                };
                Ok(Value::str(if name == "lower" { s.to_lowercase() } else { s.to_uppercase() }))
            }
            "read_line" => {
                arity(0)?;
                let mut buf = String::new();
                let n = self.stdin.read_line(&mut buf).map_err(|e| Halt::Error { line, message: e.to_string() })?;
                if n == 0 {
                    return Ok(Value::Nil);
                }
                let trimmed = buf.strip_suffix('\n').unwrap_or(&buf);
                let trimmed = trimmed.strip_suffix('\r').unwrap_or(trimmed);
                Ok(Value::str(trimmed))
            }
            "abs" => match args.as_slice() {
                [Value::Int(v)] => {
                    Ok(Value::Int(v.checked_abs().ok_or(Halt::Error { line, message: "integer overflow".into() })?))
                }
                _ => fail(line, "`abs` expects one Int"),
            },
            "min" | "max" => match args.as_slice() {
                [Value::Int(a), Value::Int(b)] => Ok(Value::Int(if name == "min" { *a.min(b) } else { *a.max(b) })),
                _ => fail(line, format!("`{name}` expects two Int arguments")),
            },
            "sort" => {
                arity(1)?;
                let Value::List(items) = &args[0] else {
                    return fail(line, "`sort` expects a List");
                };
                let items = items.borrow();
                if items.iter().all(|v| matches!(v, Value::Int(_))) {
                    let mut ints: Vec<i64> = items.iter().map(|v| if let Value::Int(i) = v { *i } else { 0 }).collect();
                    ints.sort_unstable();
                    Ok(Value::list(ints.into_iter().map(Value::Int).collect()))
                } else if items.iter().all(|v| matches!(v, Value::Str(_))) {
                    let mut strs: Vec<Rc<str>> = items
                        .iter()
                        .filter_map(|v| if let Value::Str(s) = v { Some(s.clone()) } else { None })
                        .collect();
                    strs.sort();
                    Ok(Value::list(strs.into_iter().map(Value::Str).collect()))
                } else {
                    fail(line, "`sort` expects a List of only Int or only Str")
                }
            }
            "contains" => {
                arity(2)?;
                match (&args[0], &args[1]) {
                    (Value::List(items), needle) => Ok(Value::Bool(items.borrow().iter().any(|v| v == needle))),
                    (Value::Str(s), Value::Str(needle)) => Ok(Value::Bool(s.contains(&**needle))),
                    _ => fail(line, "`contains` expects (List, value) or (Str, Str)"),
                }
            }
            "assert" => {
                let (cond, msg) = match args.as_slice() {
                    [Value::Bool(c)] => (*c, String::from("assertion failed")),
                    [Value::Bool(c), m] => (*c, format!("assertion failed: {m}")),
                    _ => return fail(line, "`assert` expects (Bool) or (Bool, message)"),
                };
                if cond {
                    Ok(Value::Nil)
                } else {
                    fail(line, msg)
                }
            }
            "exit" => match args.as_slice() {
                [Value::Int(code)] => Err(Halt::Exit((*code).clamp(0, 255) as i32)),
                _ => fail(line, "`exit` expects one Int"),
            },
            _ => fail(line, format!("undeclared function `{name}`")),
        }
    }
}

fn expr_line(expr: &Expr) -> usize {
    match expr {
        Expr::Var(_, l)
        | Expr::Neg(_, l)
        | Expr::Not(_, l)
        | Expr::Binary(_, _, _, l)
        | Expr::And(_, _, l)
        | Expr::Or(_, _, l)
        | Expr::Call(_, _, l)
        | Expr::Index(_, _, l) => *l,
        Expr::List(items) => items.first().map_or(0, expr_line),
        _ => 0,
    }
}

fn list_index(index: &Value, len: usize, line: usize) -> Result<usize, Halt> {
    match index {
        Value::Int(i) if *i >= 0 && (*i as usize) < len => Ok(*i as usize),
        Value::Int(i) => fail(line, format!("index {i} out of bounds for length {len}")),
        other => fail(line, format!("index must be Int, found {}", other.type_name())),
    }
}

fn binary(op: BinOp, left: Value, right: Value, line: usize) -> Result<Value, Halt> {
    let overflow = || Halt::Error { line, message: "integer overflow".into() };
    match (op, &left, &right) {
        (BinOp::Eq, _, _) => Ok(Value::Bool(left == right)),
        (BinOp::Ne, _, _) => Ok(Value::Bool(left != right)),
        (_, Value::Int(a), Value::Int(b)) => {
            let (a, b) = (*a, *b);
            Ok(match op {
                BinOp::Add => Value::Int(a.checked_add(b).ok_or_else(overflow)?),
                BinOp::Sub => Value::Int(a.checked_sub(b).ok_or_else(overflow)?),
                BinOp::Mul => Value::Int(a.checked_mul(b).ok_or_else(overflow)?),
                BinOp::Div | BinOp::Rem if b == 0 => return fail(line, "division by zero"),
                BinOp::Div => Value::Int(a.checked_div(b).ok_or_else(overflow)?),
                BinOp::Rem => Value::Int(a.checked_rem(b).ok_or_else(overflow)?),
                BinOp::Lt => Value::Bool(a < b),
                BinOp::Le => Value::Bool(a <= b),
                BinOp::Gt => Value::Bool(a > b),
                BinOp::Ge => Value::Bool(a >= b),
                BinOp::Eq | BinOp::Ne => unreachable!(),
            })
        }
        (_, Value::Str(a), Value::Str(b)) => Ok(match op {
            BinOp::Add => Value::str(format!("{a}{b}")),
            BinOp::Lt => Value::Bool(a < b),
            BinOp::Le => Value::Bool(a <= b),
            BinOp::Gt => Value::Bool(a > b),
            BinOp::Ge => Value::Bool(a >= b),
            _ => return fail(line, format!("operator {op:?} is not defined for Str")),
        }),
        (BinOp::Add, Value::List(a), Value::List(b)) => {
            let mut joined = a.borrow().clone();
            joined.extend(b.borrow().iter().cloned());
            Ok(Value::list(joined))
        }
        _ => fail(
            line,
            format!("type mismatch: {} {:?} {} (no implicit conversion)", left.type_name(), op, right.type_name()),
        ),
    }
}
