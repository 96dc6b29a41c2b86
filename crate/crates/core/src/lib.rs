//! pacc-core: a directive-annotated kernel language, its lowering to
//! runtime-call form, predicate-based filtering for multi-device work
//! distribution, and a deterministic simulated multi-device runtime.

pub mod ast;
pub mod config;
pub mod filter;
pub mod gen;
pub mod interp;
pub mod lower;
pub mod parser;
pub mod pipeline;
pub mod pretty;
pub mod runtime;
pub mod samples;
pub mod specialize;
pub mod ssa;

pub use parser::parse;
pub use pretty::pretty_print;
