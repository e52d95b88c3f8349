//! The builtin function table of the source language.

use crate::hlo::ElemOp;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinKind {
    /// Same-shape elementwise operation mapping directly to an HLO kind.
    Elementwise(ElemOp),
    /// Matrix-matrix or matrix-vector product.
    Matmul,
    /// Vector outer product.
    Outer,
    Transpose,
    Reshape,
    BroadcastInDim,
    /// Broadcast a scalar function over right-aligned arrays.
    Broadcast,
    MapReduce,
    ReduceInit,
    Sum,
    Rng,
    Dim,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Builtin {
    pub name: &'static str,
    pub kind: BuiltinKind,
    pub min_args: usize,
    /// `None` for variadic builtins.
    pub max_args: Option<usize>,
    /// Argument positions that must be compile-time constants or function
    /// references.
    pub static_args: &'static [usize],
}

impl Builtin {
    pub fn accepts(&self, n: usize) -> bool {
        n >= self.min_args && self.max_args.is_none_or(|m| n <= m)
    }

    pub fn arity_text(&self) -> String {
        match self.max_args {
            Some(m) if m == self.min_args => m.to_string(),
            Some(m) => format!("{}..{}", self.min_args, m),
            None => format!("{} or more", self.min_args),
        }
    }

    pub fn is_static(&self, pos: usize) -> bool {
        self.static_args.contains(&pos)
    }
}

const fn b(name: &'static str, kind: BuiltinKind, min: usize, max: Option<usize>, st: &'static [usize]) -> Builtin {
    Builtin { name, kind, min_args: min, max_args: max, static_args: st }
}

use BuiltinKind as K;

pub const BUILTINS: &[Builtin] = &[
    b("add", K::Elementwise(ElemOp::Add), 2, Some(2), &[]),
    b("subtract", K::Elementwise(ElemOp::Subtract), 2, Some(2), &[]),
    b("multiply", K::Elementwise(ElemOp::Multiply), 2, Some(2), &[]),
    b("divide", K::Elementwise(ElemOp::Divide), 2, Some(2), &[]),
    b("maximum", K::Elementwise(ElemOp::Maximum), 2, Some(2), &[]),
    b("exp", K::Elementwise(ElemOp::Exp), 1, Some(1), &[]),
    b("lt", K::Elementwise(ElemOp::Lt), 2, Some(2), &[]),
    b("le", K::Elementwise(ElemOp::Le), 2, Some(2), &[]),
    b("select", K::Elementwise(ElemOp::Select), 3, Some(3), &[]),
    b("matmul", K::Matmul, 2, Some(2), &[]),
    b("outer", K::Outer, 2, Some(2), &[]),
    b("transpose", K::Transpose, 2, Some(2), &[1]),
    b("reshape", K::Reshape, 2, Some(2), &[1]),
    b("broadcast_in_dim", K::BroadcastInDim, 3, Some(3), &[1, 2]),
    b("broadcast", K::Broadcast, 2, None, &[0]),
    b("mapreduce", K::MapReduce, 3, Some(4), &[0, 1, 3]),
    b("reduce_init", K::ReduceInit, 4, Some(4), &[0, 3]),
    b("sum", K::Sum, 1, Some(2), &[1]),
    b("rng", K::Rng, 1, Some(1), &[0]),
    b("dim", K::Dim, 2, Some(2), &[1]),
    b("identity", K::Identity, 1, Some(1), &[]),
];

pub fn lookup(name: &str) -> Option<&'static Builtin> {
    BUILTINS.iter().find(|b| b.name == name)
}

/// Builtins usable as scalar callbacks (`const fn @add`) when no user
/// function shadows the name.
pub fn is_scalar_callback(name: &str) -> bool {
    matches!(lookup(name).map(|b| b.kind), Some(K::Elementwise(_) | K::Identity))
}
