//! Canonical source emission.
//!
//! The printer produces deterministic text: stable clause ordering (as
//! stored), two-space indent, minimal parentheses.  Parsing the output
//! yields a structurally identical AST, which is what kernel caching
//! keys on.

use crate::ast::*;
use std::fmt::Write;

// Precedence levels, loosest to tightest.
const PREC_TERNARY: u8 = 0;
const PREC_OR: u8 = 1;
const PREC_AND: u8 = 2;
const PREC_CMP: u8 = 3;
const PREC_ADD: u8 = 4;
const PREC_MUL: u8 = 5;
const PREC_UNARY: u8 = 6;
const PREC_PRIMARY: u8 = 7;

fn binop_prec(op: BinOp) -> u8 {
    match op {
        BinOp::Or => PREC_OR,
        BinOp::And => PREC_AND,
        BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne => PREC_CMP,
        BinOp::Add | BinOp::Sub => PREC_ADD,
        BinOp::Mul | BinOp::Div | BinOp::Rem => PREC_MUL,
    }
}

pub fn pretty_print(program: &Program) -> String {
    let mut p = Printer::new();
    for d in &program.decls {
        p.decl(d);
    }
    for s in &program.stmts {
        p.stmt(s, 0);
    }
    p.out
}

pub fn print_stmt(stmt: &Stmt) -> String {
    let mut p = Printer::new();
    p.stmt(stmt, 0);
    p.out
}

pub fn print_expr(expr: &Expr) -> String {
    let mut s = String::new();
    write_expr(&mut s, expr, PREC_TERNARY);
    s
}

pub fn print_directive(dir: &Directive) -> String {
    let mut s = String::new();
    write_directive(&mut s, dir);
    s
}

struct Printer {
    out: String,
}

impl Printer {
    fn new() -> Printer {
        Printer { out: String::new() }
    }

    fn line(&mut self, indent: usize, text: &str) {
        for _ in 0..indent {
            self.out.push_str("  ");
        }
        self.out.push_str(text);
        self.out.push('\n');
    }

    fn decl(&mut self, d: &Decl) {
        let mut s = format!("{} {}", d.elem.keyword(), d.name);
        for e in &d.extents {
            write!(s, "[{e}]").unwrap();
        }
        s.push(';');
        self.line(0, &s);
    }

    fn stmt(&mut self, stmt: &Stmt, indent: usize) {
        match stmt {
            Stmt::Block(stmts) => {
                self.line(indent, "{");
                for s in stmts {
                    self.stmt(s, indent + 1);
                }
                self.line(indent, "}");
            }
            Stmt::For(l) => {
                let mut h = String::from("for (int ");
                h.push_str(&l.iter);
                h.push_str(" = ");
                write_expr(&mut h, &l.init, PREC_TERNARY);
                h.push_str("; ");
                h.push_str(&l.iter);
                h.push_str(match l.cmp {
                    LoopCmp::Lt => " < ",
                    LoopCmp::Le => " <= ",
                });
                write_expr(&mut h, &l.bound, PREC_TERNARY);
                h.push_str("; ");
                h.push_str(&l.iter);
                match &l.step {
                    LoopStep::Inc => h.push_str("++"),
                    LoopStep::AddAssign(e) => {
                        h.push_str(" += ");
                        write_expr(&mut h, e, PREC_TERNARY);
                    }
                }
                h.push(')');
                self.line(indent, &h);
                self.stmt(&l.body, indent + 1);
            }
            Stmt::If {
                cond,
                then_branch,
                else_branch,
            } => {
                let mut h = String::from("if (");
                write_expr(&mut h, cond, PREC_TERNARY);
                h.push(')');
                self.line(indent, &h);
                self.stmt(then_branch, indent + 1);
                if let Some(e) = else_branch {
                    self.line(indent, "else");
                    self.stmt(e, indent + 1);
                }
            }
            Stmt::Assign { target, op, value } => {
                let mut s = String::new();
                write_lvalue(&mut s, target);
                s.push(' ');
                s.push_str(op.symbol());
                s.push(' ');
                write_expr(&mut s, value, PREC_TERNARY);
                s.push(';');
                self.line(indent, &s);
            }
            Stmt::Predicated {
                cond,
                then_assign,
                else_expr,
            } => {
                let mut s = String::from("(");
                write_expr(&mut s, cond, PREC_TERNARY);
                s.push_str(") ? ");
                match then_assign.as_ref() {
                    Stmt::Assign { target, op, value } => {
                        write_lvalue(&mut s, target);
                        s.push(' ');
                        s.push_str(op.symbol());
                        s.push(' ');
                        write_expr(&mut s, value, PREC_TERNARY);
                    }
                    other => panic!("predicated statement must wrap an assignment, got {other:?}"),
                }
                s.push_str(" : ");
                write_expr(&mut s, else_expr, PREC_OR);
                s.push(';');
                self.line(indent, &s);
            }
            Stmt::Atomic { target, op, value } => {
                self.line(indent, "#pragma acc atomic");
                let mut s = String::new();
                write_lvalue(&mut s, target);
                s.push(' ');
                s.push_str(op.symbol());
                s.push(' ');
                write_expr(&mut s, value, PREC_TERNARY);
                s.push(';');
                self.line(indent, &s);
            }
            Stmt::Directive { dir, body } => {
                let mut s = String::new();
                write_directive(&mut s, dir);
                self.line(indent, &s);
                self.stmt(body, indent);
            }
        }
    }
}

fn write_lvalue(out: &mut String, lv: &LValue) {
    out.push_str(&lv.name);
    for ix in &lv.indices {
        out.push('[');
        write_expr(out, ix, PREC_TERNARY);
        out.push(']');
    }
}

fn write_expr(out: &mut String, expr: &Expr, min_prec: u8) {
    let prec = expr_prec(expr);
    let need_parens = prec < min_prec;
    if need_parens {
        out.push('(');
    }
    match expr {
        Expr::Int(v) => {
            write!(out, "{v}").unwrap();
        }
        Expr::Float(v) => {
            write!(out, "{v:?}").unwrap();
        }
        Expr::Ident(name) => out.push_str(name),
        Expr::Index { array, indices } => {
            out.push_str(array);
            for ix in indices {
                out.push('[');
                write_expr(out, ix, PREC_TERNARY);
                out.push(']');
            }
        }
        Expr::Unary { op, expr } => {
            out.push_str(match op {
                UnOp::Neg => "-",
                UnOp::Not => "!",
            });
            write_expr(out, expr, PREC_PRIMARY);
        }
        Expr::Binary { op, lhs, rhs } => {
            let p = binop_prec(*op);
            let (lp, rp) = if p == PREC_CMP {
                // comparisons do not chain; both sides must bind tighter
                (PREC_ADD, PREC_ADD)
            } else {
                (p, p + 1)
            };
            write_expr(out, lhs, lp);
            out.push(' ');
            out.push_str(op.symbol());
            out.push(' ');
            write_expr(out, rhs, rp);
        }
        Expr::Ternary {
            cond,
            then_val,
            else_val,
        } => {
            write_expr(out, cond, PREC_OR);
            out.push_str(" ? ");
            write_expr(out, then_val, PREC_TERNARY);
            out.push_str(" : ");
            write_expr(out, else_val, PREC_TERNARY);
        }
        Expr::Call { func, arg } => {
            out.push_str(func.name());
            out.push('(');
            write_expr(out, arg, PREC_TERNARY);
            out.push(')');
        }
    }
    if need_parens {
        out.push(')');
    }
}

fn expr_prec(expr: &Expr) -> u8 {
    match expr {
        Expr::Int(_) | Expr::Float(_) | Expr::Ident(_) | Expr::Index { .. } | Expr::Call { .. } => {
            PREC_PRIMARY
        }
        Expr::Unary { .. } => PREC_UNARY,
        Expr::Binary { op, .. } => binop_prec(*op),
        Expr::Ternary { .. } => PREC_TERNARY,
    }
}

fn write_directive(out: &mut String, dir: &Directive) {
    out.push_str("#pragma acc ");
    out.push_str(dir.kind.keyword());
    for c in &dir.clauses {
        out.push(' ');
        write_clause(out, c);
    }
}

fn write_clause(out: &mut String, clause: &Clause) {
    match clause {
        Clause::Copyin(secs) => write_sections(out, "copyin", secs),
        Clause::Copyout(secs) => write_sections(out, "copyout", secs),
        Clause::Create(secs) => write_sections(out, "create", secs),
        Clause::Present(secs) => write_sections(out, "present", secs),
        Clause::Reduction { op, var } => {
            write!(out, "reduction({}:{})", op.symbol(), var).unwrap();
        }
        Clause::Gang => out.push_str("gang"),
        Clause::Worker => out.push_str("worker"),
        Clause::Vector => out.push_str("vector"),
        Clause::Async(id) => {
            write!(out, "async({id})").unwrap();
        }
    }
}

fn write_sections(out: &mut String, name: &str, secs: &[ArraySection]) {
    out.push_str(name);
    out.push('(');
    for (i, sec) in secs.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&sec.name);
        if let Some((start, len)) = &sec.range {
            out.push('[');
            write_expr(out, start, PREC_TERNARY);
            out.push(':');
            write_expr(out, len, PREC_TERNARY);
            out.push(']');
        }
    }
    out.push(')');
}
