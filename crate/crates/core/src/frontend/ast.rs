use std::fmt;

use crate::text::Pos;
use crate::types::{Shape, TensorType};
use crate::value::{TensorValue, Value};

/// Index of an SSA value within its function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ValueId(pub u32);

/// Index of a block within its function; block 0 is the entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId(pub u32);

impl ValueId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl BlockId {
    pub const ENTRY: BlockId = BlockId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Source position kept for diagnostics. Never participates in equality,
/// so a reparsed module compares equal to the original.
#[derive(Debug, Clone, Copy, Default)]
pub struct Span(pub Pos);

impl PartialEq for Span {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl Eq for Span {}

/// A function reference with constant captures (a closure over literals).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FnRef {
    pub name: String,
    pub captures: Vec<TensorValue>,
}

impl FnRef {
    pub fn plain(name: impl Into<String>) -> Self {
        FnRef { name: name.into(), captures: Vec::new() }
    }
}

impl fmt::Display for FnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "@{}", self.name)?;
        if !self.captures.is_empty() {
            f.write_str("[")?;
            for (i, c) in self.captures.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{} {}", c.ty(), c)?;
            }
            f.write_str("]")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ValueType {
    Tensor(TensorType),
    Tuple(Vec<ValueType>),
    Fn(FnRef),
    /// Type of the `all` reduction-dimensions marker.
    AllDims,
}

impl ValueType {
    pub fn as_tensor(&self) -> Option<&TensorType> {
        match self {
            ValueType::Tensor(t) => Some(t),
            _ => None,
        }
    }

    /// The HLO shape of a tensor or tuple type; `None` for function
    /// references and the dims marker, which have no runtime form.
    pub fn to_shape(&self) -> Option<Shape> {
        match self {
            ValueType::Tensor(t) => Some(Shape::Array(t.clone())),
            ValueType::Tuple(elems) => elems.iter().map(ValueType::to_shape).collect::<Option<_>>().map(Shape::Tuple),
            ValueType::Fn(_) | ValueType::AllDims => None,
        }
    }

    pub fn from_shape(shape: &Shape) -> Self {
        match shape {
            Shape::Array(t) => ValueType::Tensor(t.clone()),
            Shape::Tuple(elems) => ValueType::Tuple(elems.iter().map(ValueType::from_shape).collect()),
        }
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueType::Tensor(t) => write!(f, "{t}"),
            ValueType::Tuple(elems) => {
                f.write_str("tuple(")?;
                for (i, e) in elems.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{e}")?;
                }
                f.write_str(")")
            }
            ValueType::Fn(r) => write!(f, "fn {r}"),
            ValueType::AllDims => f.write_str("dims"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Literal {
    Tensor(TensorValue),
    Tuple(Vec<Literal>),
    Fn(FnRef),
    AllDims,
}

impl Literal {
    pub fn ty(&self) -> ValueType {
        match self {
            Literal::Tensor(t) => ValueType::Tensor(t.ty().clone()),
            Literal::Tuple(elems) => ValueType::Tuple(elems.iter().map(Literal::ty).collect()),
            Literal::Fn(r) => ValueType::Fn(r.clone()),
            Literal::AllDims => ValueType::AllDims,
        }
    }

    pub fn to_value(&self) -> Option<Value> {
        match self {
            Literal::Tensor(t) => Some(Value::Tensor(t.clone())),
            Literal::Tuple(elems) => elems.iter().map(Literal::to_value).collect::<Option<_>>().map(Value::Tuple),
            Literal::Fn(_) | Literal::AllDims => None,
        }
    }

    pub fn from_value(v: &Value) -> Self {
        match v {
            Value::Tensor(t) => Literal::Tensor(t.clone()),
            Value::Tuple(elems) => Literal::Tuple(elems.iter().map(Literal::from_value).collect()),
        }
    }

    fn fmt_payload(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Tensor(t) => write!(f, "{t}"),
            Literal::Tuple(elems) => {
                f.write_str("(")?;
                for (i, e) in elems.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    e.fmt_payload(f)?;
                }
                f.write_str(")")
            }
            Literal::Fn(_) => Ok(()),
            Literal::AllDims => f.write_str("all"),
        }
    }
}

/// `TYPE PAYLOAD`, the spelling used after `const`.
impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Fn(r) => write!(f, "fn {r}"),
            _ => {
                write!(f, "{} ", self.ty())?;
                self.fmt_payload(f)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Callee {
    Static(FnRef),
    Value(ValueId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InstKind {
    Const(Literal),
    Call { builtin: String, args: Vec<ValueId> },
    CallFn { callee: Callee, args: Vec<ValueId> },
    MakeTuple(Vec<ValueId>),
    GetElement { tuple: ValueId, index: usize },
    Phi(Vec<(BlockId, ValueId)>),
}

impl InstKind {
    /// Values read by this instruction, in operand order.
    pub fn uses(&self) -> Vec<ValueId> {
        match self {
            InstKind::Const(_) => Vec::new(),
            InstKind::Call { args, .. } | InstKind::MakeTuple(args) => args.clone(),
            InstKind::CallFn { callee, args } => {
                let mut out = Vec::with_capacity(args.len() + 1);
                if let Callee::Value(v) = callee {
                    out.push(*v);
                }
                out.extend(args);
                out
            }
            InstKind::GetElement { tuple, .. } => vec![*tuple],
            InstKind::Phi(incoming) => incoming.iter().map(|(_, v)| *v).collect(),
        }
    }

    pub fn is_phi(&self) -> bool {
        matches!(self, InstKind::Phi(_))
    }

    pub fn map_uses(&mut self, mut f: impl FnMut(ValueId) -> ValueId) {
        match self {
            InstKind::Const(_) => {}
            InstKind::Call { args, .. } | InstKind::MakeTuple(args) => args.iter_mut().for_each(|a| *a = f(*a)),
            InstKind::CallFn { callee, args } => {
                if let Callee::Value(v) = callee {
                    *v = f(*v);
                }
                args.iter_mut().for_each(|a| *a = f(*a));
            }
            InstKind::GetElement { tuple, .. } => *tuple = f(*tuple),
            InstKind::Phi(incoming) => incoming.iter_mut().for_each(|(_, v)| *v = f(*v)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Inst {
    pub result: ValueId,
    pub kind: InstKind,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Terminator {
    Br { cond: ValueId, then_bb: BlockId, else_bb: BlockId },
    Jmp(BlockId),
    Return(ValueId),
}

impl Terminator {
    pub fn successors(&self) -> Vec<BlockId> {
        match self {
            Terminator::Br { then_bb, else_bb, .. } => vec![*then_bb, *else_bb],
            Terminator::Jmp(b) => vec![*b],
            Terminator::Return(_) => Vec::new(),
        }
    }

    pub fn uses(&self) -> Vec<ValueId> {
        match self {
            Terminator::Br { cond, .. } => vec![*cond],
            Terminator::Jmp(_) => Vec::new(),
            Terminator::Return(v) => vec![*v],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub label: String,
    pub insts: Vec<Inst>,
    pub term: Terminator,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Param {
    pub value: ValueId,
    pub ty: Option<ValueType>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Function {
    pub name: String,
    pub params: Vec<Param>,
    pub blocks: Vec<Block>,
    /// Source name of every value, indexed by `ValueId`.
    pub value_names: Vec<String>,
    pub span: Span,
}

/// Where a value is defined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Def {
    Param(usize),
    Inst { block: BlockId, index: usize },
}

impl Function {
    pub fn block(&self, b: BlockId) -> &Block {
        &self.blocks[b.index()]
    }

    pub fn value_name(&self, v: ValueId) -> &str {
        &self.value_names[v.index()]
    }

    pub fn num_values(&self) -> usize {
        self.value_names.len()
    }

    pub fn block_ids(&self) -> impl Iterator<Item = BlockId> {
        (0..self.blocks.len() as u32).map(BlockId)
    }

    /// Definition site of every value; `None` for ids with no definition.
    pub fn defs(&self) -> Vec<Option<Def>> {
        let mut out = vec![None; self.num_values()];
        for (i, p) in self.params.iter().enumerate() {
            out[p.value.index()] = Some(Def::Param(i));
        }
        for b in self.block_ids() {
            for (index, inst) in self.block(b).insts.iter().enumerate() {
                out[inst.result.index()] = Some(Def::Inst { block: b, index });
            }
        }
        out
    }

    /// Predecessor lists, one entry per CFG edge (a `br` with both arms to
    /// the same block contributes that block twice).
    pub fn predecessors(&self) -> Vec<Vec<BlockId>> {
        let mut preds = vec![Vec::new(); self.blocks.len()];
        for b in self.block_ids() {
            for s in self.block(b).term.successors() {
                if s.index() < preds.len() && !preds[s.index()].contains(&b) {
                    preds[s.index()].push(b);
                }
            }
        }
        preds
    }

    /// Blocks reachable from the entry, in reverse post-order.
    pub fn reverse_postorder(&self) -> Vec<BlockId> {
        let mut seen = vec![false; self.blocks.len()];
        let mut order = Vec::new();
        // iterative DFS keeping (block, next successor index)
        let mut stack = vec![(BlockId::ENTRY, 0usize)];
        seen[0] = true;
        while let Some((b, i)) = stack.pop() {
            let succs = self.block(b).term.successors();
            if i < succs.len() {
                stack.push((b, i + 1));
                let s = succs[i];
                if s.index() < seen.len() && !seen[s.index()] {
                    seen[s.index()] = true;
                    stack.push((s, 0));
                }
            } else {
                order.push(b);
            }
        }
        order.reverse();
        order
    }

    /// Allocates a fresh value id with a unique name derived from `hint`.
    pub fn fresh_value(&mut self, hint: &str) -> ValueId {
        let id = ValueId(self.value_names.len() as u32);
        let mut name = hint.to_string();
        let mut k = 0;
        while self.value_names.contains(&name) {
            k += 1;
            name = format!("{hint}.{k}");
        }
        self.value_names.push(name);
        id
    }

    pub fn is_straight_line(&self) -> bool {
        self.blocks.len() == 1 && matches!(self.blocks[0].term, Terminator::Return(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Module {
    pub functions: Vec<Function>,
}

impl Module {
    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }
}
