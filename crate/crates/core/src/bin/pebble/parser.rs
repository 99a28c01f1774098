use std::rc::Rc;

use crate::lexer::{Tok, Token};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone)]
pub enum Expr {
    Int(i64),
    Str(Rc<str>),
    Bool(bool),
    Nil,
    Var(String, usize),
    List(Vec<Expr>),
    Neg(Box<Expr>, usize),
    Not(Box<Expr>, usize),
    Binary(BinOp, Box<Expr>, Box<Expr>, usize),
    And(Box<Expr>, Box<Expr>, usize),
    Or(Box<Expr>, Box<Expr>, usize),
    Call(String, Vec<Expr>, usize),
    Index(Box<Expr>, Box<Expr>, usize),
}

#[derive(Debug, Clone)]
pub enum Stmt {
    Let(String, Expr),
    Assign(Expr, Expr, usize),
    Expr(Expr),
    If(Vec<(Expr, Vec<Stmt>)>, Option<Vec<Stmt>>),
    While(Expr, Vec<Stmt>),
    For(String, Expr, Vec<Stmt>, usize),
    Fn(Rc<FnDef>),
    Return(Option<Expr>),
    Break,
    Continue,
}

#[derive(Debug)]
pub struct FnDef {
    pub name: String,
    pub params: Vec<String>,
    pub body: Vec<Stmt>,
    pub line: usize,
}

#[derive(Debug)]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

pub fn parse(tokens: Vec<Token>) -> Result<Vec<Stmt>, ParseError> {
    let mut parser = Parser { tokens, pos: 0, fn_depth: 0, loop_depth: 0 };
    let mut stmts = Vec::new();
    while parser.peek() != &Tok::Eof {
        stmts.push(parser.statement()?);
    }
    Ok(stmts)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    fn_depth: usize,
    loop_depth: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn line(&self) -> usize {
        self.tokens[self.pos].line
    }

    fn advance(&mut self) -> Token {
        let tok = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        tok
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError { line: self.line(), message: message.into() })
    }

    fn expect(&mut self, want: Tok) -> Result<(), ParseError> {
        if *self.peek() == want {
            self.advance();
            Ok(())
        } else {
            self.error(format!("expected {want}, found {}", self.peek()))
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(name) => {
                self.advance();
                Ok(name)
            }
            other => self.error(format!("expected identifier, found {other}")),
        }
    }

    fn block(&mut self) -> Result<Vec<Stmt>, ParseError> {
        self.expect(Tok::LBrace)?;
        let mut body = Vec::new();
        while *self.peek() != Tok::RBrace {
            if *self.peek() == Tok::Eof {
                return self.error("unclosed block, expected `}`");
            }
            body.push(self.statement()?);
        }
        self.advance();
        Ok(body)
    }

    fn statement(&mut self) -> Result<Stmt, ParseError> {
        let line = self.line();
        match self.peek() {
            Tok::Let => {
                self.advance();
                let name = self.ident()?;
                self.expect(Tok::Assign)?;
                Ok(Stmt::Let(name, self.expr()?))
            }
            Tok::Fn => {
                self.advance();
                if self.fn_depth > 0 {
                    return self.error("functions may only be declared at the top level");
                }
                let name = self.ident()?;
                self.expect(Tok::LParen)?;
                let mut params = Vec::new();
                if *self.peek() != Tok::RParen {
                    loop {
                        params.push(self.ident()?);
                        if *self.peek() == Tok::Comma {
                            self.advance();
                        } else {
                            break;
                        }
                    }
                }
                self.expect(Tok::RParen)?;
                self.fn_depth += 1;
                let saved_loops = std::mem::replace(&mut self.loop_depth, 0);
                let body = self.block();
                self.loop_depth = saved_loops;
                self.fn_depth -= 1;
                Ok(Stmt::Fn(Rc::new(FnDef { name, params, body: body?, line })))
            }
            Tok::Return => {
                self.advance();
                if self.fn_depth == 0 {
                    return Err(ParseError { line, message: "`return` outside of a function".into() });
                }
                if *self.peek() == Tok::RBrace {
                    Ok(Stmt::Return(None))
                } else {
                    Ok(Stmt::Return(Some(self.expr()?)))
                }
            }
            Tok::If => {
                self.advance();
                let mut arms = vec![(self.expr()?, self.block()?)];
                let mut otherwise = None;
                loop {
                    match self.peek() {
                        Tok::Elif => {
                            self.advance();
                            arms.push((self.expr()?, self.block()?));
                        }
                        Tok::Else => {
                            self.advance();
                            otherwise = Some(self.block()?);
                            break;
                        }
                        _ => break,
                    }
                }
                Ok(Stmt::If(arms, otherwise))
            }
            Tok::While => {
                self.advance();
                let cond = self.expr()?;
                self.loop_depth += 1;
                let body = self.block();
                self.loop_depth -= 1;
                Ok(Stmt::While(cond, body?))
            }
            Tok::For => {
                self.advance();
                let var = self.ident()?;
                self.expect(Tok::In)?;
                let iter = self.expr()?;
                self.loop_depth += 1;
                let body = self.block();
                self.loop_depth -= 1;
                Ok(Stmt::For(var, iter, body?, line))
            }
            Tok::Break | Tok::Continue => {
                let is_break = *self.peek() == Tok::Break;
                self.advance();
                if self.loop_depth == 0 {
                    return Err(ParseError { line, message: "`break`/`continue` outside of a loop".into() });
                }
                Ok(if is_break { Stmt::Break } else { Stmt::Continue })
            }
            Tok::Elif | Tok::Else => self.error(format!("{} without a preceding `if`", self.peek())),
            _ => {
                let target = self.expr()?;
                if *self.peek() == Tok::Assign {
                    self.advance();
                    if !matches!(target, Expr::Var(..) | Expr::Index(..)) {
                        return Err(ParseError { line, message: "invalid assignment target".into() });
                    }
                    Ok(Stmt::Assign(target, self.expr()?, line))
                } else {
                    Ok(Stmt::Expr(target))
                }
            }
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> Result<Expr, ParseError> {
        let mut left = self.and_expr()?;
        while *self.peek() == Tok::Or {
            let line = self.advance().line;
            let right = self.and_expr()?;
            left = Expr::Or(Box::new(left), Box::new(right), line);
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> Result<Expr, ParseError> {
        let mut left = self.not_expr()?;
        while *self.peek() == Tok::And {
            let line = self.advance().line;
            let right = self.not_expr()?;
            left = Expr::And(Box::new(left), Box::new(right), line);
        }
        Ok(left)
    }

    fn not_expr(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Not {
            let line = self.advance().line;
            let inner = self.not_expr()?;
            return Ok(Expr::Not(Box::new(inner), line));
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Expr, ParseError> {
        let left = self.additive()?;
        let op = match self.peek() {
            Tok::Eq => BinOp::Eq,
            Tok::Ne => BinOp::Ne,
            Tok::Lt => BinOp::Lt,
            Tok::Le => BinOp::Le,
            Tok::Gt => BinOp::Gt,
            Tok::Ge => BinOp::Ge,
            _ => return Ok(left),
        };
        let line = self.advance().line;
        let right = self.additive()?;
        if matches!(self.peek(), Tok::Eq | Tok::Ne | Tok::Lt | Tok::Le | Tok::Gt | Tok::Ge) {
            return self.error("comparisons cannot be chained; use `and`");
        }
        Ok(Expr::Binary(op, Box::new(left), Box::new(right), line))
    }

    fn additive(&mut self) -> Result<Expr, ParseError> {
        let mut left = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(left),
            };
            let line = self.advance().line;
            let right = self.term()?;
            left = Expr::Binary(op, Box::new(left), Box::new(right), line);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut left = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                Tok::Percent => BinOp::Rem,
                _ => return Ok(left),
            };
            let line = self.advance().line;
            let right = self.unary()?;
            left = Expr::Binary(op, Box::new(left), Box::new(right), line);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            let line = self.advance().line;
            let inner = self.unary()?;
            return Ok(Expr::Neg(Box::new(inner), line));
        }
        self.postfix()
    }

    fn postfix(&mut self) -> Result<Expr, ParseError> {
        let mut base = self.primary()?;
        while *self.peek() == Tok::LBracket {
            let line = self.advance().line;
            let index = self.expr()?;
            self.expect(Tok::RBracket)?;
            base = Expr::Index(Box::new(base), Box::new(index), line);
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let token = self.advance();
        let line = token.line;
        match token.tok {
            Tok::Int(v) => Ok(Expr::Int(v)),
            Tok::Str(s) => Ok(Expr::Str(s.into())),
            Tok::True => Ok(Expr::Bool(true)),
            Tok::False => Ok(Expr::Bool(false)),
            Tok::Nil => Ok(Expr::Nil),
            Tok::Ident(name) => {
                if *self.peek() == Tok::LParen {
                    self.advance();
                    let args = self.comma_list(Tok::RParen)?;
                    Ok(Expr::Call(name, args, line))
                } else {
                    Ok(Expr::Var(name, line))
                }
            }
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            Tok::LBracket => Ok(Expr::List(self.comma_list(Tok::RBracket)?)),
            other => Err(ParseError { line, message: format!("expected expression, found {other}") }),
        }
    }

    fn comma_list(&mut self, close: Tok) -> Result<Vec<Expr>, ParseError> {
        let mut items = Vec::new();
        if *self.peek() == close {
            self.advance();
            return Ok(items);
        }
        loop {
            items.push(self.expr()?);
            match self.peek() {
                Tok::Comma => {
                    self.advance();
                }
                t if *t == close => {
                    self.advance();
                    return Ok(items);
                }
                other => return self.error(format!("expected `,` or {close}, found {other}")),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexer::tokenize;

    fn parse_src(src: &str) -> Result<Vec<Stmt>, ParseError> {
        parse(tokenize(src).unwrap())
    }

    #[test]
    fn parses_function_and_control_flow() {
        let prog = parse_src(
            "fn f(a, b) {\n if a < b { return a } elif a == b { return 0 } else { return b }\n}\nprint(f(1, 2))",
        )
        .unwrap();
        assert_eq!(prog.len(), 2);
    }

    #[test]
    fn rejects_return_at_top_level() {
        let err = parse_src("return 1").unwrap_err();
        assert!(err.message.contains("outside"));
    }

    #[test]
    fn rejects_chained_comparison() {
        assert!(parse_src("let x = 1 < 2 < 3").is_err());
    }

    #[test]
    fn reports_line_of_missing_brace() {
        let err = parse_src("let x = 1\nwhile x < 3 {\n x = x + 1\n").unwrap_err();
        assert_eq!(err.line, 4);
    }
}
