//! The source language: a small SSA tensor IR with blocks, φ nodes,
//! builtin calls and function references.

mod ast;
mod inline;
mod parse;
mod print;
mod validate;

pub use ast::*;
pub use inline::{inline_calls, InlineError};
pub use parse::{parse_fn_ref, parse_literal, parse_program, parse_type};
pub use print::{print_frontend, print_function};
pub use validate::{dominates, dominators, validate, validate_function, Diagnostic};
