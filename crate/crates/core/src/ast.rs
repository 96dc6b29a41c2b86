//! Typed AST of the directive-annotated kernel language.
//!
//! Programs are a flat list of declarations followed by statements.  Two
//! element types exist: 64-bit integers (`int`) and 64-bit floats
//! (`double`).  Arrays are rectangular and row-major; extents are either
//! literal or bound to a declared integer scalar whose value is supplied
//! at run time.  Directives are pragma lines attached to the statement
//! that follows them.

use std::fmt;

/// Element type of a scalar or array declaration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElemType {
    Int,
    Float,
}

impl ElemType {
    pub fn size_bytes(self) -> u64 {
        8
    }

    pub fn keyword(self) -> &'static str {
        match self {
            ElemType::Int => "int",
            ElemType::Float => "double",
        }
    }
}

/// One array extent: a positive literal or a declared integer scalar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Extent {
    Lit(u64),
    Param(String),
}

impl fmt::Display for Extent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Extent::Lit(n) => write!(f, "{n}"),
            Extent::Param(p) => write!(f, "{p}"),
        }
    }
}

/// Scalar (no extents) or array declaration.
#[derive(Debug, Clone, PartialEq)]
pub struct Decl {
    pub name: String,
    pub elem: ElemType,
    pub extents: Vec<Extent>,
}

impl Decl {
    pub fn is_array(&self) -> bool {
        !self.extents.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }
}

/// The only callable functions in the language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Intrinsic {
    Sqrt,
    Fabs,
}

impl Intrinsic {
    pub fn name(self) -> &'static str {
        match self {
            Intrinsic::Sqrt => "sqrt",
            Intrinsic::Fabs => "fabs",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Int(i64),
    Float(f64),
    Ident(String),
    Index {
        array: String,
        indices: Vec<Expr>,
    },
    Unary {
        op: UnOp,
        expr: Box<Expr>,
    },
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Ternary {
        cond: Box<Expr>,
        then_val: Box<Expr>,
        else_val: Box<Expr>,
    },
    Call {
        func: Intrinsic,
        arg: Box<Expr>,
    },
}

impl Expr {
    pub fn ident(name: impl Into<String>) -> Expr {
        Expr::Ident(name.into())
    }

    pub fn index(array: impl Into<String>, indices: Vec<Expr>) -> Expr {
        Expr::Index {
            array: array.into(),
            indices,
        }
    }

    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    /// Walks the expression tree, calling `f` on every node.
    pub fn walk(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Int(_) | Expr::Float(_) | Expr::Ident(_) => {}
            Expr::Index { indices, .. } => {
                for ix in indices {
                    ix.walk(f);
                }
            }
            Expr::Unary { expr, .. } => expr.walk(f),
            Expr::Binary { lhs, rhs, .. } => {
                lhs.walk(f);
                rhs.walk(f);
            }
            Expr::Ternary {
                cond,
                then_val,
                else_val,
            } => {
                cond.walk(f);
                then_val.walk(f);
                else_val.walk(f);
            }
            Expr::Call { arg, .. } => arg.walk(f),
        }
    }
}

/// Assignment target: scalar name or array element.
#[derive(Debug, Clone, PartialEq)]
pub struct LValue {
    pub name: String,
    pub indices: Vec<Expr>,
}

impl LValue {
    pub fn scalar(name: impl Into<String>) -> LValue {
        LValue {
            name: name.into(),
            indices: Vec::new(),
        }
    }

    pub fn is_array(&self) -> bool {
        !self.indices.is_empty()
    }

    pub fn as_expr(&self) -> Expr {
        if self.indices.is_empty() {
            Expr::Ident(self.name.clone())
        } else {
            Expr::Index {
                array: self.name.clone(),
                indices: self.indices.clone(),
            }
        }
    }
}

/// `=` or a compound read-modify-write operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AssignOp {
    Set,
    Add,
    Sub,
    Mul,
    Div,
}

impl AssignOp {
    pub fn symbol(self) -> &'static str {
        match self {
            AssignOp::Set => "=",
            AssignOp::Add => "+=",
            AssignOp::Sub => "-=",
            AssignOp::Mul => "*=",
            AssignOp::Div => "/=",
        }
    }
}

/// Loop comparison in the canonical `for` header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LoopCmp {
    Lt,
    Le,
}

/// Loop increment: `i++` or `i += <expr>`.
#[derive(Debug, Clone, PartialEq)]
pub enum LoopStep {
    Inc,
    AddAssign(Expr),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForLoop {
    pub iter: String,
    pub init: Expr,
    pub cmp: LoopCmp,
    pub bound: Expr,
    pub step: LoopStep,
    pub body: Box<Stmt>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    Block(Vec<Stmt>),
    For(ForLoop),
    If {
        cond: Expr,
        then_branch: Box<Stmt>,
        else_branch: Option<Box<Stmt>>,
    },
    Assign {
        target: LValue,
        op: AssignOp,
        value: Expr,
    },
    /// Statement-level ternary used by the filtering transform:
    /// `(cond) ? <assign> : <expr>;`.  The else expression is evaluated
    /// for nothing and executed for nothing; it exists so the emitted
    /// code stays a legal expression statement.
    Predicated {
        cond: Expr,
        then_assign: Box<Stmt>,
        else_expr: Expr,
    },
    /// `#pragma acc atomic` followed by one read-modify-write of a
    /// single array element.
    Atomic {
        target: LValue,
        op: AssignOp,
        value: Expr,
    },
    Directive {
        dir: Directive,
        body: Box<Stmt>,
    },
}

impl Stmt {
    /// Walks the statement tree in source order.
    pub fn walk(&self, f: &mut impl FnMut(&Stmt)) {
        f(self);
        match self {
            Stmt::Block(stmts) => {
                for s in stmts {
                    s.walk(f);
                }
            }
            Stmt::For(l) => l.body.walk(f),
            Stmt::If {
                then_branch,
                else_branch,
                ..
            } => {
                then_branch.walk(f);
                if let Some(e) = else_branch {
                    e.walk(f);
                }
            }
            Stmt::Predicated { then_assign, .. } => then_assign.walk(f),
            Stmt::Directive { body, .. } => body.walk(f),
            Stmt::Assign { .. } | Stmt::Atomic { .. } => {}
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DirectiveKind {
    Data,
    Parallel,
    Loop,
    ParallelLoop,
    Atomic,
}

impl DirectiveKind {
    pub fn keyword(self) -> &'static str {
        match self {
            DirectiveKind::Data => "data",
            DirectiveKind::Parallel => "parallel",
            DirectiveKind::Loop => "loop",
            DirectiveKind::ParallelLoop => "parallel loop",
            DirectiveKind::Atomic => "atomic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReduceOp {
    Add,
    Max,
    Min,
}

impl ReduceOp {
    pub fn symbol(self) -> &'static str {
        match self {
            ReduceOp::Add => "+",
            ReduceOp::Max => "max",
            ReduceOp::Min => "min",
        }
    }
}

/// Array name with an optional `[start:length]` section.
#[derive(Debug, Clone, PartialEq)]
pub struct ArraySection {
    pub name: String,
    pub range: Option<(Expr, Expr)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Clause {
    Copyin(Vec<ArraySection>),
    Copyout(Vec<ArraySection>),
    Create(Vec<ArraySection>),
    Present(Vec<ArraySection>),
    Reduction { op: ReduceOp, var: String },
    Gang,
    Worker,
    Vector,
    Async(i64),
}

impl Clause {
    /// Clauses that move or declare device data.
    pub fn is_data_clause(&self) -> bool {
        matches!(
            self,
            Clause::Copyin(_) | Clause::Copyout(_) | Clause::Create(_) | Clause::Present(_)
        )
    }

    /// Clauses that mark loop-level parallelism.
    pub fn is_parallelism_clause(&self) -> bool {
        matches!(self, Clause::Gang | Clause::Worker | Clause::Vector)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Directive {
    pub kind: DirectiveKind,
    pub clauses: Vec<Clause>,
}

impl Directive {
    pub fn new(kind: DirectiveKind, clauses: Vec<Clause>) -> Directive {
        Directive { kind, clauses }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Program {
    pub decls: Vec<Decl>,
    pub stmts: Vec<Stmt>,
}

impl Program {
    pub fn decl(&self, name: &str) -> Option<&Decl> {
        self.decls.iter().find(|d| d.name == name)
    }
}
