//! Lexer and recursive-descent parser for the kernel language.
//!
//! Pragmas are line-scoped: a `#pragma acc ...` directive owns the rest
//! of its line and attaches to the statement that follows.  Parsing
//! includes the semantic checks (single declaration per identifier,
//! resolvable extents, iterators never reassigned), so a returned
//! `Program` is well-formed by construction.

use crate::ast::*;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: u32, col: u32, msg: String },
    #[error("undeclared identifier `{name}` at line {line}")]
    UndeclaredIdentifier { name: String, line: u32 },
    #[error("identifier `{name}` declared more than once")]
    Redeclared { name: String },
    #[error("malformed directive at line {line}: {msg}")]
    MalformedDirective { line: u32, msg: String },
    #[error("semantic error at line {line}: {msg}")]
    Semantic { line: u32, msg: String },
}

type PResult<T> = Result<T, ParseError>;

const MAX_DEPTH: u32 = 200;

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Int(i64),
    Float(f64),
    Ident(String),
    Punct(&'static str),
}

#[derive(Debug, Clone)]
struct Tok {
    kind: TokKind,
    line: u32,
    col: u32,
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: u32,
    col: u32,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Lexer<'a> {
        Lexer {
            chars: src.chars().peekable(),
            line: 1,
            col: 1,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn err(&self, msg: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            line: self.line,
            col: self.col,
            msg: msg.into(),
        }
    }

    fn tokens(mut self) -> PResult<Vec<Tok>> {
        let mut out = Vec::new();
        loop {
            // skip whitespace and comments
            loop {
                match self.chars.peek() {
                    Some(c) if c.is_whitespace() => {
                        self.bump();
                    }
                    Some('/') => {
                        let mut look = self.chars.clone();
                        look.next();
                        match look.peek() {
                            Some('/') => {
                                while let Some(c) = self.bump() {
                                    if c == '\n' {
                                        break;
                                    }
                                }
                            }
                            Some('*') => {
                                self.bump();
                                self.bump();
                                let mut prev = ' ';
                                loop {
                                    match self.bump() {
                                        Some('/') if prev == '*' => break,
                                        Some(c) => prev = c,
                                        None => return Err(self.err("unterminated comment")),
                                    }
                                }
                            }
                            _ => break,
                        }
                    }
                    _ => break,
                }
            }
            let (line, col) = (self.line, self.col);
            let c = match self.chars.peek() {
                Some(c) => *c,
                None => return Ok(out),
            };
            let kind = if c.is_ascii_digit() {
                self.number()?
            } else if c.is_ascii_alphabetic() || c == '_' {
                let mut s = String::new();
                while let Some(&c) = self.chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        s.push(c);
                        self.bump();
                    } else {
                        break;
                    }
                }
                TokKind::Ident(s)
            } else {
                self.punct()?
            };
            out.push(Tok { kind, line, col });
        }
    }

    fn number(&mut self) -> PResult<TokKind> {
        let mut s = String::new();
        let mut is_float = false;
        while let Some(&c) = self.chars.peek() {
            if c.is_ascii_digit() {
                s.push(c);
                self.bump();
            } else if c == '.' {
                // a second '.' terminates the literal
                if is_float {
                    break;
                }
                is_float = true;
                s.push(c);
                self.bump();
            } else if c == 'e' || c == 'E' {
                let mut look = self.chars.clone();
                look.next();
                let next = look.peek().copied();
                let signed = matches!(next, Some('+') | Some('-'));
                let exp_digit = if signed {
                    let mut l2 = look.clone();
                    l2.next();
                    l2.peek().map_or(false, |d| d.is_ascii_digit())
                } else {
                    next.map_or(false, |d| d.is_ascii_digit())
                };
                if !exp_digit {
                    break;
                }
                is_float = true;
                s.push(c);
                self.bump();
                if signed {
                    s.push(self.bump().unwrap());
                }
                while let Some(&d) = self.chars.peek() {
                    if d.is_ascii_digit() {
                        s.push(d);
                        self.bump();
                    } else {
                        break;
                    }
                }
                break;
            } else {
                break;
            }
        }
        if is_float {
            s.parse::<f64>()
                .map(TokKind::Float)
                .map_err(|_| self.err(format!("invalid float literal `{s}`")))
        } else {
            s.parse::<i64>()
                .map(TokKind::Int)
                .map_err(|_| self.err(format!("integer literal `{s}` out of range")))
        }
    }

    fn punct(&mut self) -> PResult<TokKind> {
        let c = self.bump().unwrap();
        let two = |this: &mut Self, next: char, yes: &'static str, no: &'static str| {
            if this.chars.peek() == Some(&next) {
                this.bump();
                yes
            } else {
                no
            }
        };
        let p = match c {
            '+' => match self.chars.peek() {
                Some('+') => {
                    self.bump();
                    "++"
                }
                Some('=') => {
                    self.bump();
                    "+="
                }
                _ => "+",
            },
            '-' => two(self, '=', "-=", "-"),
            '*' => two(self, '=', "*=", "*"),
            '/' => two(self, '=', "/=", "/"),
            '%' => "%",
            '<' => two(self, '=', "<=", "<"),
            '>' => two(self, '=', ">=", ">"),
            '=' => two(self, '=', "==", "="),
            '!' => two(self, '=', "!=", "!"),
            '&' => {
                if self.chars.peek() == Some(&'&') {
                    self.bump();
                    "&&"
                } else {
                    return Err(self.err("expected `&&`"));
                }
            }
            '|' => {
                if self.chars.peek() == Some(&'|') {
                    self.bump();
                    "||"
                } else {
                    return Err(self.err("expected `||`"));
                }
            }
            '?' => "?",
            ':' => ":",
            ';' => ";",
            ',' => ",",
            '(' => "(",
            ')' => ")",
            '[' => "[",
            ']' => "]",
            '{' => "{",
            '}' => "}",
            '#' => "#",
            other => return Err(self.err(format!("unexpected character `{other}`"))),
        };
        Ok(TokKind::Punct(p))
    }
}

/// Parses and validates a whole program.
pub fn parse(source: &str) -> PResult<Program> {
    let toks = Lexer::new(source).tokens()?;
    let mut p = Parser { toks, pos: 0 };
    let program = p.program()?;
    check_program(&program)?;
    Ok(program)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn peek_at(&self, off: usize) -> Option<&Tok> {
        self.toks.get(self.pos + off)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn here(&self) -> (u32, u32) {
        match self.peek() {
            Some(t) => (t.line, t.col),
            None => self
                .toks
                .last()
                .map(|t| (t.line, t.col + 1))
                .unwrap_or((1, 1)),
        }
    }

    fn err(&self, msg: impl Into<String>) -> ParseError {
        let (line, col) = self.here();
        ParseError::Syntax {
            line,
            col,
            msg: msg.into(),
        }
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Some(Tok { kind: TokKind::Punct(q), .. }) if *q == p)
    }

    fn is_ident(&self, word: &str) -> bool {
        matches!(self.peek(), Some(Tok { kind: TokKind::Ident(s), .. }) if s == word)
    }

    fn eat_punct(&mut self, p: &str) -> PResult<()> {
        if self.is_punct(p) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected `{p}`")))
        }
    }

    fn eat_ident(&mut self) -> PResult<(String, u32)> {
        match self.next() {
            Some(Tok {
                kind: TokKind::Ident(s),
                line,
                ..
            }) => Ok((s, line)),
            _ => {
                self.pos = self.pos.saturating_sub(1);
                Err(self.err("expected identifier"))
            }
        }
    }

    fn program(&mut self) -> PResult<Program> {
        let mut decls = Vec::new();
        let mut stmts = Vec::new();
        while self.peek().is_some() {
            if (self.is_ident("int") || self.is_ident("double"))
                && matches!(
                    self.peek_at(1),
                    Some(Tok {
                        kind: TokKind::Ident(_),
                        ..
                    })
                )
            {
                if !stmts.is_empty() {
                    return Err(self.err("declarations must precede statements"));
                }
                decls.push(self.decl()?);
            } else {
                stmts.push(self.stmt(0)?);
            }
        }
        Ok(Program { decls, stmts })
    }

    fn decl(&mut self) -> PResult<Decl> {
        let (ty, _) = self.eat_ident()?;
        let elem = match ty.as_str() {
            "int" => ElemType::Int,
            "double" => ElemType::Float,
            _ => return Err(self.err("expected type keyword")),
        };
        let (name, _) = self.eat_ident()?;
        let mut extents = Vec::new();
        while self.is_punct("[") {
            self.pos += 1;
            let ext = match self.next() {
                Some(Tok {
                    kind: TokKind::Int(n),
                    ..
                }) if n > 0 => Extent::Lit(n as u64),
                Some(Tok {
                    kind: TokKind::Int(_),
                    ..
                }) => return Err(self.err("array extents must be positive")),
                Some(Tok {
                    kind: TokKind::Ident(p),
                    ..
                }) => Extent::Param(p),
                _ => return Err(self.err("expected extent (literal or scalar name)")),
            };
            extents.push(ext);
            self.eat_punct("]")?;
        }
        self.eat_punct(";")?;
        Ok(Decl { name, elem, extents })
    }

    fn stmt(&mut self, depth: u32) -> PResult<Stmt> {
        if depth > MAX_DEPTH {
            return Err(self.err("statement nesting too deep"));
        }
        if self.is_punct("#") {
            return self.pragma_stmt(depth);
        }
        if self.is_punct("{") {
            self.pos += 1;
            let mut stmts = Vec::new();
            while !self.is_punct("}") {
                if self.peek().is_none() {
                    return Err(self.err("unterminated block"));
                }
                stmts.push(self.stmt(depth + 1)?);
            }
            self.pos += 1;
            return Ok(Stmt::Block(stmts));
        }
        if self.is_ident("for") {
            return self.for_loop(depth);
        }
        if self.is_ident("if") {
            return self.if_stmt(depth);
        }
        if self.is_punct("(") {
            return self.predicated_stmt(depth);
        }
        // plain assignment
        let s = self.assignment()?;
        self.eat_punct(";")?;
        Ok(s)
    }

    fn assignment(&mut self) -> PResult<Stmt> {
        let target = self.lvalue()?;
        let op = self.assign_op()?;
        let value = self.expr(0)?;
        Ok(Stmt::Assign { target, op, value })
    }

    fn assign_op(&mut self) -> PResult<AssignOp> {
        let op = match self.peek() {
            Some(Tok {
                kind: TokKind::Punct(p),
                ..
            }) => match *p {
                "=" => AssignOp::Set,
                "+=" => AssignOp::Add,
                "-=" => AssignOp::Sub,
                "*=" => AssignOp::Mul,
                "/=" => AssignOp::Div,
                _ => return Err(self.err("expected assignment operator")),
            },
            _ => return Err(self.err("expected assignment operator")),
        };
        self.pos += 1;
        Ok(op)
    }

    fn lvalue(&mut self) -> PResult<LValue> {
        let (name, _) = self.eat_ident()?;
        let mut indices = Vec::new();
        while self.is_punct("[") {
            self.pos += 1;
            indices.push(self.expr(0)?);
            self.eat_punct("]")?;
        }
        Ok(LValue { name, indices })
    }

    fn for_loop(&mut self, depth: u32) -> PResult<Stmt> {
        self.pos += 1; // for
        self.eat_punct("(")?;
        if self.is_ident("int") {
            self.pos += 1;
        }
        let (iter, _) = self.eat_ident()?;
        self.eat_punct("=")?;
        let init = self.expr(0)?;
        self.eat_punct(";")?;
        let (it2, line2) = self.eat_ident()?;
        if it2 != iter {
            return Err(ParseError::Semantic {
                line: line2,
                msg: format!("loop condition must test iterator `{iter}`"),
            });
        }
        let cmp = if self.is_punct("<") {
            self.pos += 1;
            LoopCmp::Lt
        } else if self.is_punct("<=") {
            self.pos += 1;
            LoopCmp::Le
        } else {
            return Err(self.err("expected `<` or `<=` in loop condition"));
        };
        let bound = self.expr(0)?;
        self.eat_punct(";")?;
        let (it3, line3) = self.eat_ident()?;
        if it3 != iter {
            return Err(ParseError::Semantic {
                line: line3,
                msg: format!("loop step must update iterator `{iter}`"),
            });
        }
        let step = if self.is_punct("++") {
            self.pos += 1;
            LoopStep::Inc
        } else if self.is_punct("+=") {
            self.pos += 1;
            LoopStep::AddAssign(self.expr(0)?)
        } else {
            return Err(self.err("expected `++` or `+=` in loop step"));
        };
        self.eat_punct(")")?;
        let body = self.stmt(depth + 1)?;
        Ok(Stmt::For(ForLoop {
            iter,
            init,
            cmp,
            bound,
            step,
            body: Box::new(body),
        }))
    }

    fn if_stmt(&mut self, depth: u32) -> PResult<Stmt> {
        self.pos += 1; // if
        self.eat_punct("(")?;
        let cond = self.expr(0)?;
        self.eat_punct(")")?;
        let then_branch = Box::new(self.stmt(depth + 1)?);
        let else_branch = if self.is_ident("else") {
            self.pos += 1;
            Some(Box::new(self.stmt(depth + 1)?))
        } else {
            None
        };
        Ok(Stmt::If {
            cond,
            then_branch,
            else_branch,
        })
    }

    fn predicated_stmt(&mut self, _depth: u32) -> PResult<Stmt> {
        self.eat_punct("(")?;
        let cond = self.expr(0)?;
        self.eat_punct(")")?;
        self.eat_punct("?")?;
        let assign = self.assignment()?;
        self.eat_punct(":")?;
        let else_expr = self.expr(0)?;
        self.eat_punct(";")?;
        Ok(Stmt::Predicated {
            cond,
            then_assign: Box::new(assign),
            else_expr,
        })
    }

    fn pragma_stmt(&mut self, depth: u32) -> PResult<Stmt> {
        let pragma_line = self.here().0;
        self.pos += 1; // '#'
        let (w1, _) = self.eat_ident()?;
        if w1 != "pragma" {
            return Err(self.err("expected `pragma` after `#`"));
        }
        let (w2, line) = self.eat_ident()?;
        if w2 != "acc" {
            return Err(ParseError::MalformedDirective {
                line,
                msg: format!("unknown pragma namespace `{w2}`"),
            });
        }
        let dir = self.directive(pragma_line)?;
        if dir.kind == DirectiveKind::Atomic {
            let stmt = self.assignment()?;
            self.eat_punct(";")?;
            let (target, op, value) = match stmt {
                Stmt::Assign { target, op, value } => (target, op, value),
                _ => unreachable!(),
            };
            if op == AssignOp::Set {
                return Err(ParseError::MalformedDirective {
                    line: pragma_line,
                    msg: "atomic requires a read-modify-write operator".into(),
                });
            }
            if target.indices.is_empty() {
                return Err(ParseError::MalformedDirective {
                    line: pragma_line,
                    msg: "atomic must update one array element".into(),
                });
            }
            return Ok(Stmt::Atomic { target, op, value });
        }
        let body = self.stmt(depth + 1)?;
        if matches!(dir.kind, DirectiveKind::Loop | DirectiveKind::ParallelLoop)
            && !matches!(body, Stmt::For(_))
        {
            return Err(ParseError::MalformedDirective {
                line: pragma_line,
                msg: format!("`{}` must precede a for loop", dir.kind.keyword()),
            });
        }
        Ok(Stmt::Directive {
            dir,
            body: Box::new(body),
        })
    }

    /// Parses `<kind> <clauses...>`; the directive owns the rest of its line.
    fn directive(&mut self, pragma_line: u32) -> PResult<Directive> {
        let same_line = |tok: Option<&Tok>| matches!(tok, Some(t) if t.line == pragma_line);
        if !same_line(self.peek()) {
            return Err(ParseError::MalformedDirective {
                line: pragma_line,
                msg: "missing directive kind".into(),
            });
        }
        let (kw, _) = self.eat_ident()?;
        let kind = match kw.as_str() {
            "data" => DirectiveKind::Data,
            "parallel" => {
                if same_line(self.peek()) && self.is_ident("loop") {
                    self.pos += 1;
                    DirectiveKind::ParallelLoop
                } else {
                    DirectiveKind::Parallel
                }
            }
            "loop" => DirectiveKind::Loop,
            "atomic" => DirectiveKind::Atomic,
            other => {
                return Err(ParseError::MalformedDirective {
                    line: pragma_line,
                    msg: format!("unknown directive `{other}`"),
                })
            }
        };
        let mut clauses = Vec::new();
        while same_line(self.peek()) {
            clauses.push(self.clause(pragma_line)?);
        }
        for c in &clauses {
            if !clause_legal(kind, c) {
                return Err(ParseError::MalformedDirective {
                    line: pragma_line,
                    msg: format!("clause not allowed on `{}`", kind.keyword()),
                });
            }
        }
        Ok(Directive { kind, clauses })
    }

    fn clause(&mut self, pragma_line: u32) -> PResult<Clause> {
        let (word, _) = self.eat_ident().map_err(|_| ParseError::MalformedDirective {
            line: pragma_line,
            msg: "expected clause".into(),
        })?;
        let clause = match word.as_str() {
            "copyin" => Clause::Copyin(self.sections()?),
            "copyout" => Clause::Copyout(self.sections()?),
            "create" => Clause::Create(self.sections()?),
            "present" => Clause::Present(self.sections()?),
            "reduction" => {
                self.eat_punct("(")?;
                let op = if self.is_punct("+") {
                    self.pos += 1;
                    ReduceOp::Add
                } else if self.is_ident("max") {
                    self.pos += 1;
                    ReduceOp::Max
                } else if self.is_ident("min") {
                    self.pos += 1;
                    ReduceOp::Min
                } else {
                    return Err(ParseError::MalformedDirective {
                        line: pragma_line,
                        msg: "reduction operator must be +, max or min".into(),
                    });
                };
                self.eat_punct(":")?;
                let (var, _) = self.eat_ident()?;
                self.eat_punct(")")?;
                Clause::Reduction { op, var }
            }
            "gang" => Clause::Gang,
            "worker" => Clause::Worker,
            "vector" => Clause::Vector,
            "async" => {
                self.eat_punct("(")?;
                let id = match self.next() {
                    Some(Tok {
                        kind: TokKind::Int(n),
                        ..
                    }) => n,
                    _ => {
                        return Err(ParseError::MalformedDirective {
                            line: pragma_line,
                            msg: "async requires an integer queue id".into(),
                        })
                    }
                };
                self.eat_punct(")")?;
                Clause::Async(id)
            }
            other => {
                return Err(ParseError::MalformedDirective {
                    line: pragma_line,
                    msg: format!("unknown clause `{other}`"),
                })
            }
        };
        Ok(clause)
    }

    fn sections(&mut self) -> PResult<Vec<ArraySection>> {
        self.eat_punct("(")?;
        let mut out = Vec::new();
        loop {
            let (name, _) = self.eat_ident()?;
            let range = if self.is_punct("[") {
                self.pos += 1;
                let start = self.expr(0)?;
                self.eat_punct(":")?;
                let len = self.expr(0)?;
                self.eat_punct("]")?;
                Some((start, len))
            } else {
                None
            };
            out.push(ArraySection { name, range });
            if self.is_punct(",") {
                self.pos += 1;
            } else {
                break;
            }
        }
        self.eat_punct(")")?;
        Ok(out)
    }

    // expression parsing, precedence climbing

    fn expr(&mut self, depth: u32) -> PResult<Expr> {
        if depth > MAX_DEPTH {
            return Err(self.err("expression nesting too deep"));
        }
        let cond = self.or_expr(depth)?;
        if self.is_punct("?") {
            self.pos += 1;
            let then_val = self.expr(depth + 1)?;
            self.eat_punct(":")?;
            let else_val = self.expr(depth + 1)?;
            Ok(Expr::Ternary {
                cond: Box::new(cond),
                then_val: Box::new(then_val),
                else_val: Box::new(else_val),
            })
        } else {
            Ok(cond)
        }
    }

    fn or_expr(&mut self, depth: u32) -> PResult<Expr> {
        let mut lhs = self.and_expr(depth)?;
        while self.is_punct("||") {
            self.pos += 1;
            let rhs = self.and_expr(depth)?;
            lhs = Expr::binary(BinOp::Or, lhs, rhs);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self, depth: u32) -> PResult<Expr> {
        let mut lhs = self.cmp_expr(depth)?;
        while self.is_punct("&&") {
            self.pos += 1;
            let rhs = self.cmp_expr(depth)?;
            lhs = Expr::binary(BinOp::And, lhs, rhs);
        }
        Ok(lhs)
    }

    fn cmp_expr(&mut self, depth: u32) -> PResult<Expr> {
        let lhs = self.add_expr(depth)?;
        let op = match self.peek() {
            Some(Tok {
                kind: TokKind::Punct(p),
                ..
            }) => match *p {
                "<" => Some(BinOp::Lt),
                "<=" => Some(BinOp::Le),
                ">" => Some(BinOp::Gt),
                ">=" => Some(BinOp::Ge),
                "==" => Some(BinOp::Eq),
                "!=" => Some(BinOp::Ne),
                _ => None,
            },
            _ => None,
        };
        if let Some(op) = op {
            self.pos += 1;
            let rhs = self.add_expr(depth)?;
            Ok(Expr::binary(op, lhs, rhs))
        } else {
            Ok(lhs)
        }
    }

    fn add_expr(&mut self, depth: u32) -> PResult<Expr> {
        let mut lhs = self.mul_expr(depth)?;
        loop {
            let op = if self.is_punct("+") {
                BinOp::Add
            } else if self.is_punct("-") {
                BinOp::Sub
            } else {
                break;
            };
            self.pos += 1;
            let rhs = self.mul_expr(depth)?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn mul_expr(&mut self, depth: u32) -> PResult<Expr> {
        let mut lhs = self.unary_expr(depth)?;
        loop {
            let op = if self.is_punct("*") {
                BinOp::Mul
            } else if self.is_punct("/") {
                BinOp::Div
            } else if self.is_punct("%") {
                BinOp::Rem
            } else {
                break;
            };
            self.pos += 1;
            let rhs = self.unary_expr(depth)?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary_expr(&mut self, depth: u32) -> PResult<Expr> {
        if depth > MAX_DEPTH {
            return Err(self.err("expression nesting too deep"));
        }
        if self.is_punct("-") {
            self.pos += 1;
            let inner = self.unary_expr(depth + 1)?;
            // fold literal negation so printing round-trips
            return Ok(match inner {
                Expr::Int(n) => Expr::Int(n.checked_neg().unwrap_or(i64::MIN)),
                Expr::Float(f) => Expr::Float(-f),
                other => Expr::Unary {
                    op: UnOp::Neg,
                    expr: Box::new(other),
                },
            });
        }
        if self.is_punct("!") {
            self.pos += 1;
            let inner = self.unary_expr(depth + 1)?;
            return Ok(Expr::Unary {
                op: UnOp::Not,
                expr: Box::new(inner),
            });
        }
        self.postfix_expr(depth)
    }

    fn postfix_expr(&mut self, depth: u32) -> PResult<Expr> {
        match self.next() {
            Some(Tok {
                kind: TokKind::Int(n),
                ..
            }) => Ok(Expr::Int(n)),
            Some(Tok {
                kind: TokKind::Float(f),
                ..
            }) => Ok(Expr::Float(f)),
            Some(Tok {
                kind: TokKind::Ident(name),
                ..
            }) => {
                if self.is_punct("(") {
                    let func = match name.as_str() {
                        "sqrt" => Intrinsic::Sqrt,
                        "fabs" => Intrinsic::Fabs,
                        other => return Err(self.err(format!("unknown function `{other}`"))),
                    };
                    self.pos += 1;
                    let arg = self.expr(depth + 1)?;
                    self.eat_punct(")")?;
                    Ok(Expr::Call {
                        func,
                        arg: Box::new(arg),
                    })
                } else if self.is_punct("[") {
                    let mut indices = Vec::new();
                    while self.is_punct("[") {
                        self.pos += 1;
                        indices.push(self.expr(depth + 1)?);
                        self.eat_punct("]")?;
                    }
                    Ok(Expr::Index {
                        array: name,
                        indices,
                    })
                } else {
                    Ok(Expr::Ident(name))
                }
            }
            Some(Tok {
                kind: TokKind::Punct("("),
                ..
            }) => {
                let e = self.expr(depth + 1)?;
                self.eat_punct(")")?;
                Ok(e)
            }
            _ => {
                self.pos = self.pos.saturating_sub(1);
                Err(self.err("expected expression"))
            }
        }
    }
}

fn clause_legal(kind: DirectiveKind, clause: &Clause) -> bool {
    match kind {
        DirectiveKind::Data => clause.is_data_clause() || matches!(clause, Clause::Async(_)),
        DirectiveKind::Parallel => {
            clause.is_data_clause()
                || matches!(clause, Clause::Reduction { .. } | Clause::Async(_))
        }
        DirectiveKind::Loop => {
            clause.is_parallelism_clause() || matches!(clause, Clause::Reduction { .. })
        }
        DirectiveKind::ParallelLoop => {
            clause.is_data_clause()
                || clause.is_parallelism_clause()
                || matches!(clause, Clause::Reduction { .. } | Clause::Async(_))
        }
        DirectiveKind::Atomic => false,
    }
}

// semantic validation

struct Scope<'a> {
    decls: HashMap<&'a str, &'a Decl>,
    iterators: Vec<String>,
}

fn check_program(program: &Program) -> PResult<()> {
    let mut decls: HashMap<&str, &Decl> = HashMap::new();
    for d in &program.decls {
        if decls.insert(d.name.as_str(), d).is_some() {
            return Err(ParseError::Redeclared {
                name: d.name.clone(),
            });
        }
    }
    // extents resolve to a positive literal or a previously declared int scalar
    let mut seen: HashMap<&str, &Decl> = HashMap::new();
    for d in &program.decls {
        for e in &d.extents {
            if let Extent::Param(p) = e {
                match seen.get(p.as_str()) {
                    Some(pd) if pd.extents.is_empty() && pd.elem == ElemType::Int => {}
                    Some(_) => {
                        return Err(ParseError::Semantic {
                            line: 0,
                            msg: format!("extent `{p}` of `{}` must be an int scalar", d.name),
                        })
                    }
                    None => {
                        return Err(ParseError::UndeclaredIdentifier {
                            name: p.clone(),
                            line: 0,
                        })
                    }
                }
            }
        }
        seen.insert(d.name.as_str(), d);
    }
    let mut scope = Scope {
        decls,
        iterators: Vec::new(),
    };
    for s in &program.stmts {
        check_stmt(s, &mut scope)?;
    }
    Ok(())
}

fn check_stmt(stmt: &Stmt, scope: &mut Scope) -> PResult<()> {
    match stmt {
        Stmt::Block(stmts) => {
            for s in stmts {
                check_stmt(s, scope)?;
            }
        }
        Stmt::For(l) => {
            if scope.decls.contains_key(l.iter.as_str())
                || scope.iterators.iter().any(|i| *i == l.iter)
            {
                return Err(ParseError::Semantic {
                    line: 0,
                    msg: format!("loop iterator `{}` shadows another name", l.iter),
                });
            }
            check_expr(&l.init, scope)?;
            check_expr(&l.bound, scope)?;
            if let LoopStep::AddAssign(e) = &l.step {
                check_expr(e, scope)?;
            }
            scope.iterators.push(l.iter.clone());
            check_stmt(&l.body, scope)?;
            scope.iterators.pop();
        }
        Stmt::If {
            cond,
            then_branch,
            else_branch,
        } => {
            check_expr(cond, scope)?;
            check_stmt(then_branch, scope)?;
            if let Some(e) = else_branch {
                check_stmt(e, scope)?;
            }
        }
        Stmt::Assign { target, op: _, value } | Stmt::Atomic { target, op: _, value } => {
            check_lvalue(target, scope)?;
            check_expr(value, scope)?;
        }
        Stmt::Predicated {
            cond,
            then_assign,
            else_expr,
        } => {
            check_expr(cond, scope)?;
            check_stmt(then_assign, scope)?;
            check_expr(else_expr, scope)?;
        }
        Stmt::Directive { dir, body } => {
            for c in &dir.clauses {
                check_clause(c, scope)?;
            }
            check_stmt(body, scope)?;
        }
    }
    Ok(())
}

fn check_lvalue(lv: &LValue, scope: &Scope) -> PResult<()> {
    if scope.iterators.iter().any(|i| *i == lv.name) {
        return Err(ParseError::Semantic {
            line: 0,
            msg: format!("loop iterator `{}` reassigned in loop body", lv.name),
        });
    }
    let decl = scope
        .decls
        .get(lv.name.as_str())
        .ok_or_else(|| ParseError::UndeclaredIdentifier {
            name: lv.name.clone(),
            line: 0,
        })?;
    if lv.indices.is_empty() {
        if decl.is_array() {
            return Err(ParseError::Semantic {
                line: 0,
                msg: format!("array `{}` assigned without indices", lv.name),
            });
        }
    } else if decl.extents.len() != lv.indices.len() {
        return Err(ParseError::Semantic {
            line: 0,
            msg: format!(
                "`{}` has rank {}, indexed with {} subscripts",
                lv.name,
                decl.extents.len(),
                lv.indices.len()
            ),
        });
    }
    for ix in &lv.indices {
        check_expr(ix, scope)?;
    }
    Ok(())
}

fn check_expr(expr: &Expr, scope: &Scope) -> PResult<()> {
    let mut result = Ok(());
    expr.walk(&mut |e| {
        if result.is_err() {
            return;
        }
        match e {
            Expr::Ident(name) => {
                let is_iter = scope.iterators.iter().any(|i| i == name);
                match scope.decls.get(name.as_str()) {
                    Some(d) if d.is_array() => {
                        result = Err(ParseError::Semantic {
                            line: 0,
                            msg: format!("array `{name}` used without indices"),
                        });
                    }
                    Some(_) => {}
                    None if is_iter => {}
                    None => {
                        result = Err(ParseError::UndeclaredIdentifier {
                            name: name.clone(),
                            line: 0,
                        });
                    }
                }
            }
            Expr::Index { array, indices } => match scope.decls.get(array.as_str()) {
                Some(d) if d.extents.len() == indices.len() => {}
                Some(d) => {
                    result = Err(ParseError::Semantic {
                        line: 0,
                        msg: format!(
                            "`{array}` has rank {}, indexed with {} subscripts",
                            d.extents.len(),
                            indices.len()
                        ),
                    });
                }
                None => {
                    result = Err(ParseError::UndeclaredIdentifier {
                        name: array.clone(),
                        line: 0,
                    });
                }
            },
            _ => {}
        }
    });
    result
}

fn check_clause(clause: &Clause, scope: &Scope) -> PResult<()> {
    let check_name = |name: &str| -> PResult<()> {
        if scope.decls.contains_key(name) {
            Ok(())
        } else {
            Err(ParseError::UndeclaredIdentifier {
                name: name.to_string(),
                line: 0,
            })
        }
    };
    match clause {
        Clause::Copyin(s) | Clause::Copyout(s) | Clause::Create(s) | Clause::Present(s) => {
            for sec in s {
                check_name(&sec.name)?;
                if let Some((start, len)) = &sec.range {
                    check_expr(start, scope)?;
                    check_expr(len, scope)?;
                }
            }
        }
        Clause::Reduction { var, .. } => check_name(var)?,
        Clause::Gang | Clause::Worker | Clause::Vector | Clause::Async(_) => {}
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pretty::pretty_print;
    use crate::samples;

    #[test]
    fn parses_data_over_parallel_loop() {
        let p = parse(samples::SQUARE).unwrap();
        assert_eq!(p.decls.len(), 3);
        assert_eq!(p.stmts.len(), 1);
        match &p.stmts[0] {
            Stmt::Directive { dir, body } => {
                assert_eq!(dir.kind, DirectiveKind::Data);
                assert_eq!(dir.clauses.len(), 2);
                match body.as_ref() {
                    Stmt::Directive { dir, body } => {
                        assert_eq!(dir.kind, DirectiveKind::ParallelLoop);
                        assert!(matches!(body.as_ref(), Stmt::For(_)));
                    }
                    other => panic!("expected inner directive, got {other:?}"),
                }
            }
            other => panic!("expected directive block, got {other:?}"),
        }
    }

    #[test]
    fn empty_source_is_empty_program() {
        let p = parse("").unwrap();
        assert!(p.decls.is_empty());
        assert!(p.stmts.is_empty());
    }

    #[test]
    fn bogus_directive_rejected() {
        let src = "int N;\ndouble x[N];\n#pragma acc bogus\nx[0] = 1.0;\n";
        match parse(src) {
            Err(ParseError::MalformedDirective { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected MalformedDirective, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_is_identity() {
        for src in [
            samples::SQUARE,
            samples::CHAIN_FIVE,
            samples::BLOCK_SOLVER_6D,
            samples::STENCIL_19PT,
            samples::DOT_REDUCTION,
            samples::ATOMIC_HISTOGRAM,
        ] {
            let p = parse(src).unwrap();
            let text = pretty_print(&p);
            let p2 = parse(&text).unwrap();
            assert_eq!(p, p2);
        }
    }

    #[test]
    fn ternary_guard_round_trips() {
        let src = "\
int N;
double a[N];
double x;
(a[0] >= 1.0 && a[1] <= 2.0) ? a[0] = x : a[0];
x = 1 < 2 ? a[0] : 0.0;
";
        let p = parse(src).unwrap();
        let p2 = parse(&pretty_print(&p)).unwrap();
        assert_eq!(p, p2);
    }

    #[test]
    fn six_dim_reference_round_trips() {
        let src = "\
int n1;
double lhs[5][5][3][n1][8][8];
#pragma acc parallel loop gang
for (int i = 0; i < 8; i++)
  for (int k = 0; k < 8; k++)
    lhs[0][1][2][n1 - 1][i][k] = lhs[0][1][2][n1 - 1][i][k] * 2.0;
";
        let p = parse(src).unwrap();
        let text = pretty_print(&p);
        assert!(text.contains("lhs[0][1][2][n1 - 1][i][k]"));
        assert_eq!(parse(&text).unwrap(), p);
    }

    #[test]
    fn undeclared_identifier_rejected() {
        let err = parse("int N;\nx = 3;\n").unwrap_err();
        assert!(matches!(err, ParseError::UndeclaredIdentifier { name, .. } if name == "x"));
    }

    #[test]
    fn duplicate_declaration_rejected() {
        let err = parse("int N;\nint N;\n").unwrap_err();
        assert!(matches!(err, ParseError::Redeclared { name } if name == "N"));
    }

    #[test]
    fn iterator_reassignment_rejected() {
        let src = "int N;\nfor (int i = 0; i < N; i++) i = 3;\n";
        assert!(matches!(parse(src), Err(ParseError::Semantic { .. })));
    }

    #[test]
    fn atomic_requires_rmw_on_element() {
        let ok = "int h[8];\nfor (int i = 0; i < 8; i++) {\n#pragma acc atomic\nh[i] += 1;\n}\n";
        assert!(parse(ok).is_ok());
        let bad = "int h[8];\n#pragma acc atomic\nh[0] = 1;\n";
        assert!(matches!(
            parse(bad),
            Err(ParseError::MalformedDirective { .. })
        ));
    }

    #[test]
    fn comments_are_skipped() {
        let src = "// leading\nint N; /* mid */\ndouble x[N];\n/* multi\nline */\n";
        let p = parse(src).unwrap();
        assert_eq!(p.decls.len(), 2);
    }
}
