//! The target IR: modules of computations of shaped instructions whose
//! static operands live in the op configuration.

mod parse;
mod print;
mod shape;
mod structural;
mod validate;

pub use parse::{parse_hlo, HloParseError};
pub use print::print_hlo;
pub use shape::{shape_infer, CompSig, ShapeError};
pub use structural::{canonical_order, computation_key, structural_key, structurally_equal};
pub use validate::{validate_hlo, HloDiagnostic};

use crate::types::Shape;
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CompId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElemOp {
    Add,
    Subtract,
    Multiply,
    Divide,
    Maximum,
    Exp,
    Lt,
    Le,
    Select,
}

impl ElemOp {
    pub const ALL: [ElemOp; 9] = [
        ElemOp::Add,
        ElemOp::Subtract,
        ElemOp::Multiply,
        ElemOp::Divide,
        ElemOp::Maximum,
        ElemOp::Exp,
        ElemOp::Lt,
        ElemOp::Le,
        ElemOp::Select,
    ];

    pub fn arity(self) -> usize {
        match self {
            ElemOp::Exp => 1,
            ElemOp::Select => 3,
            _ => 2,
        }
    }

    pub fn kind_name(self) -> &'static str {
        match self {
            ElemOp::Add => "add",
            ElemOp::Subtract => "subtract",
            ElemOp::Multiply => "multiply",
            ElemOp::Divide => "divide",
            ElemOp::Maximum => "maximum",
            ElemOp::Exp => "exponential",
            ElemOp::Lt => "less-than",
            ElemOp::Le => "less-than-or-equal-to",
            ElemOp::Select => "select",
        }
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            ElemOp::Add => "a",
            ElemOp::Subtract => "sub",
            ElemOp::Multiply => "mul",
            ElemOp::Divide => "d",
            ElemOp::Maximum => "max",
            ElemOp::Exp => "e",
            ElemOp::Lt => "lt",
            ElemOp::Le => "le",
            ElemOp::Select => "s",
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(self, ElemOp::Lt | ElemOp::Le)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct DotDims {
    pub lhs_contracting: Vec<usize>,
    pub rhs_contracting: Vec<usize>,
    pub lhs_batch: Vec<usize>,
    pub rhs_batch: Vec<usize>,
}

impl DotDims {
    /// Contract lhs dim 1 with rhs dim 0: matrix-vector and matrix-matrix
    /// products.
    pub fn matmul() -> Self {
        DotDims { lhs_contracting: vec![1], rhs_contracting: vec![0], ..Default::default() }
    }
}

/// Instruction kind plus its static operands.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum HloOp {
    Parameter { index: usize, shape: Shape },
    Constant(Value),
    Dot(DotDims),
    Map { to_apply: CompId, dimensions: Vec<usize> },
    Reduce { to_apply: CompId, dimensions: Vec<usize> },
    /// Operand dim `i` maps to result dim `dimensions[i]`; `dims` are the
    /// result extents.
    Broadcast { dimensions: Vec<usize>, dims: Vec<usize> },
    Transpose { permutation: Vec<usize> },
    Reshape { dims: Vec<usize> },
    Tuple,
    GetTupleElement { index: usize },
    Conditional { true_comp: CompId, false_comp: CompId },
    While { condition: CompId, body: CompId },
    /// Uniform `f32` samples in `[0, 1)`.
    Rng { dims: Vec<usize> },
    Elementwise(ElemOp),
}

impl HloOp {
    pub fn kind_name(&self) -> &'static str {
        match self {
            HloOp::Parameter { .. } => "parameter",
            HloOp::Constant(_) => "constant",
            HloOp::Dot(_) => "dot",
            HloOp::Map { .. } => "map",
            HloOp::Reduce { .. } => "reduce",
            HloOp::Broadcast { .. } => "broadcast",
            HloOp::Transpose { .. } => "transpose",
            HloOp::Reshape { .. } => "reshape",
            HloOp::Tuple => "tuple",
            HloOp::GetTupleElement { .. } => "get-tuple-element",
            HloOp::Conditional { .. } => "conditional",
            HloOp::While { .. } => "while",
            HloOp::Rng { .. } => "rng",
            HloOp::Elementwise(e) => e.kind_name(),
        }
    }

    pub fn mnemonic(&self) -> &'static str {
        match self {
            HloOp::Parameter { .. } => "p",
            HloOp::Constant(_) => "c",
            HloOp::Dot(_) => "d",
            HloOp::Map { .. } => "m",
            HloOp::Reduce { .. } => "r",
            HloOp::Broadcast { .. } => "b",
            HloOp::Transpose { .. } => "tr",
            HloOp::Reshape { .. } => "rsh",
            HloOp::Tuple => "t",
            HloOp::GetTupleElement { .. } => "gte",
            HloOp::Conditional { .. } => "cond",
            HloOp::While { .. } => "w",
            HloOp::Rng { .. } => "rng",
            HloOp::Elementwise(e) => e.mnemonic(),
        }
    }

    /// Computations referenced by this op.
    pub fn called(&self) -> Vec<CompId> {
        match self {
            HloOp::Map { to_apply, .. } | HloOp::Reduce { to_apply, .. } => vec![*to_apply],
            HloOp::Conditional { true_comp, false_comp } => vec![*true_comp, *false_comp],
            HloOp::While { condition, body } => vec![*condition, *body],
            _ => Vec::new(),
        }
    }

    pub fn map_called(&mut self, f: impl Fn(CompId) -> CompId) {
        match self {
            HloOp::Map { to_apply, .. } | HloOp::Reduce { to_apply, .. } => *to_apply = f(*to_apply),
            HloOp::Conditional { true_comp, false_comp } => {
                *true_comp = f(*true_comp);
                *false_comp = f(*false_comp);
            }
            HloOp::While { condition, body } => {
                *condition = f(*condition);
                *body = f(*body);
            }
            _ => {}
        }
    }

    /// Deterministic and free of device state: safe to evaluate at compile
    /// time.
    pub fn is_pure(&self) -> bool {
        !matches!(self, HloOp::Parameter { .. } | HloOp::Rng { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HloInstruction {
    pub name: String,
    pub shape: Shape,
    pub op: HloOp,
    /// Indices of operand instructions in the same computation.
    pub operands: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HloComputation {
    pub name: String,
    pub instructions: Vec<HloInstruction>,
    pub root: usize,
}

impl HloComputation {
    /// Parameter instruction indices ordered by parameter number.
    pub fn parameters(&self) -> Vec<usize> {
        let mut ps: Vec<(usize, usize)> = self
            .instructions
            .iter()
            .enumerate()
            .filter_map(|(i, inst)| match inst.op {
                HloOp::Parameter { index, .. } => Some((index, i)),
                _ => None,
            })
            .collect();
        ps.sort_unstable();
        ps.into_iter().map(|(_, i)| i).collect()
    }

    pub fn signature(&self) -> CompSig {
        CompSig {
            params: self.parameters().into_iter().map(|i| self.instructions[i].shape.clone()).collect(),
            root: self.instructions[self.root].shape.clone(),
        }
    }

    pub fn root_inst(&self) -> &HloInstruction {
        &self.instructions[self.root]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HloModule {
    pub name: String,
    pub computations: Vec<HloComputation>,
    pub entry: CompId,
}

impl HloModule {
    pub fn comp(&self, id: CompId) -> &HloComputation {
        &self.computations[id.0]
    }

    pub fn entry_comp(&self) -> &HloComputation {
        self.comp(self.entry)
    }

    pub fn sig(&self, id: CompId) -> Option<CompSig> {
        self.computations.get(id.0).map(HloComputation::signature)
    }

    pub fn total_instructions(&self) -> usize {
        self.computations.iter().map(|c| c.instructions.len()).sum()
    }

    /// Computations reachable from the entry through `to_apply`, branch and
    /// loop references, in discovery order (entry first).
    pub fn reachable_computations(&self) -> Vec<CompId> {
        let mut seen = vec![false; self.computations.len()];
        let mut order = vec![self.entry];
        seen[self.entry.0] = true;
        let mut i = 0;
        while i < order.len() {
            let c = order[i];
            i += 1;
            for inst in &self.comp(c).instructions {
                for callee in inst.op.called() {
                    if callee.0 < seen.len() && !seen[callee.0] {
                        seen[callee.0] = true;
                        order.push(callee);
                    }
                }
            }
        }
        order
    }
}
