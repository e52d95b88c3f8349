//! Dataflow inference of types, shapes and constants over the frontend
//! CFG, and the offloadability check built on it.

mod lattice;
mod offload;
pub mod transfer;

use std::collections::HashMap;

pub use lattice::AbstractValue;
pub use offload::{check_offloadable, OffloadFailure, OffloadReason, OffloadReport};
pub use transfer::builtin_transfer;

use crate::builtins::is_scalar_callback;
use crate::frontend::{BlockId, Callee, FnRef, Function, InstKind, Module, Terminator, ValueId};

pub const DEFAULT_DEPTH_LIMIT: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InferError {
    #[error("`{callee}` expects {expected} arguments, got {got}")]
    Arity { callee: String, expected: String, got: usize },
}

/// Fixpoint of inference over one function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InferenceResult {
    /// Abstract value of every SSA value, indexed by `ValueId`.
    pub values: Vec<AbstractValue>,
    pub reachable: Vec<bool>,
    /// Executable successors of each block.
    pub edges: Vec<Vec<BlockId>>,
    /// Join of all returned values.
    pub returned: AbstractValue,
    /// Number of sweeps that changed something; one more quiet sweep
    /// confirms the fixpoint.
    pub iterations: usize,
}

impl InferenceResult {
    pub fn value(&self, v: ValueId) -> &AbstractValue {
        &self.values[v.index()]
    }

    pub fn edge_executable(&self, from: BlockId, to: BlockId) -> bool {
        self.edges[from.index()].contains(&to)
    }
}

/// How a scalar callback receives the `k` per-element arguments of a
/// `broadcast`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CallbackMode {
    /// A builtin scalar op such as `@add`.
    Builtin,
    /// One parameter per argument, after the captures.
    Positional,
    /// A single tuple parameter holding all `k` arguments.
    Aggregate,
}

pub fn callback_mode(m: &Module, f: &FnRef, k: usize) -> Option<CallbackMode> {
    match m.function(&f.name) {
        Some(func) => {
            let (n, c) = (func.params.len(), f.captures.len());
            if n == c + k {
                Some(CallbackMode::Positional)
            } else if k >= 2 && n == c + 1 {
                Some(CallbackMode::Aggregate)
            } else {
                None
            }
        }
        None if is_scalar_callback(&f.name) => Some(CallbackMode::Builtin),
        None => None,
    }
}

/// Interprocedural inference state: a memo of call results keyed on
/// (function, abstract arguments).
pub struct Inferencer<'m> {
    module: &'m Module,
    memo: HashMap<(String, Vec<AbstractValue>), AbstractValue>,
    stack: Vec<(String, Vec<AbstractValue>)>,
    pub depth_limit: usize,
}

impl<'m> Inferencer<'m> {
    pub fn new(module: &'m Module) -> Self {
        Inferencer { module, memo: HashMap::new(), stack: Vec::new(), depth_limit: DEFAULT_DEPTH_LIMIT }
    }

    /// Result of calling the module function `name`. Recursion still in
    /// progress, calls past the depth limit and unknown functions give
    /// `Top`.
    pub fn call(&mut self, name: &str, args: &[AbstractValue]) -> Result<AbstractValue, InferError> {
        let Some(f) = self.module.function(name) else {
            return Ok(AbstractValue::Top);
        };
        if args.iter().any(AbstractValue::is_bottom) {
            return Ok(AbstractValue::Bottom);
        }
        let key = (name.to_string(), args.to_vec());
        if let Some(v) = self.memo.get(&key) {
            return Ok(v.clone());
        }
        if self.stack.contains(&key) || self.stack.len() >= self.depth_limit {
            return Ok(AbstractValue::Top);
        }
        self.stack.push(key.clone());
        let res = self.infer_function(f, args);
        self.stack.pop();
        let v = res?.returned;
        self.memo.insert(key, v.clone());
        Ok(v)
    }

    /// Result of a scalar callback applied to `k` abstract scalars.
    pub fn callback(&mut self, f: &FnRef, scalars: &[AbstractValue]) -> Result<AbstractValue, InferError> {
        let captures = f.captures.iter().map(|c| AbstractValue::of_tensor(c.clone()));
        match callback_mode(self.module, f, scalars.len()) {
            None => Ok(AbstractValue::Top),
            Some(CallbackMode::Builtin) => {
                let args: Vec<AbstractValue> = captures.chain(scalars.iter().cloned()).collect();
                builtin_transfer(&f.name, &args, &mut |g, a| self.callback(g, a))
            }
            Some(CallbackMode::Positional) => {
                let args: Vec<AbstractValue> = captures.chain(scalars.iter().cloned()).collect();
                self.call(&f.name, &args)
            }
            Some(CallbackMode::Aggregate) => {
                let args: Vec<AbstractValue> = captures.chain([AbstractValue::Tuple(scalars.to_vec())]).collect();
                self.call(&f.name, &args)
            }
        }
    }

    fn call_fn(&mut self, r: &FnRef, args: &[AbstractValue]) -> Result<AbstractValue, InferError> {
        let mut full: Vec<AbstractValue> = r.captures.iter().map(|c| AbstractValue::of_tensor(c.clone())).collect();
        full.extend_from_slice(args);
        match self.module.function(&r.name) {
            Some(f) => {
                if f.params.len() != full.len() {
                    return Err(InferError::Arity {
                        callee: format!("@{}", r.name),
                        expected: f.params.len().to_string(),
                        got: full.len(),
                    });
                }
                self.call(&r.name, &full)
            }
            None if crate::builtins::lookup(&r.name).is_some() => {
                builtin_transfer(&r.name, &full, &mut |g, a| self.callback(g, a))
            }
            None => Ok(AbstractValue::Top),
        }
    }

    fn transfer(&mut self, kind: &InstKind, values: &[AbstractValue]) -> Result<AbstractValue, InferError> {
        let get = |v: &ValueId| values[v.index()].clone();
        Ok(match kind {
            InstKind::Const(lit) => AbstractValue::of_literal(lit),
            InstKind::Call { builtin, args } => {
                let args: Vec<AbstractValue> = args.iter().map(get).collect();
                builtin_transfer(builtin, &args, &mut |g, a| self.callback(g, a))?
            }
            InstKind::CallFn { callee, args } => {
                let args: Vec<AbstractValue> = args.iter().map(get).collect();
                let target = match callee {
                    Callee::Static(r) => AbstractValue::FnRef(r.clone()),
                    Callee::Value(v) => get(v),
                };
                match target {
                    AbstractValue::FnRef(r) => self.call_fn(&r, &args)?,
                    AbstractValue::Bottom => AbstractValue::Bottom,
                    _ => AbstractValue::Top,
                }
            }
            InstKind::MakeTuple(elems) => {
                let elems: Vec<AbstractValue> = elems.iter().map(get).collect();
                if elems.iter().any(AbstractValue::is_bottom) {
                    AbstractValue::Bottom
                } else {
                    AbstractValue::Tuple(elems)
                }
            }
            InstKind::GetElement { tuple, index } => match get(tuple) {
                AbstractValue::Tuple(elems) => elems.get(*index).cloned().unwrap_or(AbstractValue::Top),
                AbstractValue::Bottom => AbstractValue::Bottom,
                _ => AbstractValue::Top,
            },
            InstKind::Phi(_) => unreachable!("phis are joined by the driver"),
        })
    }

    /// Runs the sparse fixpoint over `f` with the given parameter values.
    pub fn infer_function(&mut self, f: &Function, args: &[AbstractValue]) -> Result<InferenceResult, InferError> {
        if args.len() != f.params.len() {
            return Err(InferError::Arity {
                callee: format!("@{}", f.name),
                expected: f.params.len().to_string(),
                got: args.len(),
            });
        }
        let mut values = vec![AbstractValue::Bottom; f.num_values()];
        for (p, a) in f.params.iter().zip(args) {
            values[p.value.index()] = a.clone();
        }
        let mut reachable = vec![false; f.blocks.len()];
        reachable[0] = true;
        let mut edges: Vec<Vec<BlockId>> = vec![Vec::new(); f.blocks.len()];
        let mut returned = AbstractValue::Bottom;
        let rpo = f.reverse_postorder();
        let mut iterations = 0;
        loop {
            let mut changed = false;
            for &b in &rpo {
                if !reachable[b.index()] {
                    continue;
                }
                let block = f.block(b);
                for inst in &block.insts {
                    let new = match &inst.kind {
                        InstKind::Phi(incoming) => incoming
                            .iter()
                            .filter(|(p, _)| edges[p.index()].contains(&b))
                            .fold(AbstractValue::Bottom, |acc, (_, v)| acc.join(&values[v.index()])),
                        kind => self.transfer(kind, &values)?,
                    };
                    let slot = &mut values[inst.result.index()];
                    let joined = slot.join(&new);
                    if joined != *slot {
                        *slot = joined;
                        changed = true;
                    }
                }
                let taken: Vec<BlockId> = match &block.term {
                    Terminator::Return(v) => {
                        let joined = returned.join(&values[v.index()]);
                        if joined != returned {
                            returned = joined;
                            changed = true;
                        }
                        Vec::new()
                    }
                    Terminator::Jmp(t) => vec![*t],
                    Terminator::Br { cond, then_bb, else_bb } => match &values[cond.index()] {
                        AbstractValue::Bottom => Vec::new(),
                        c => match c.as_const_tensor().and_then(|t| t.as_pred()) {
                            Some([true]) => vec![*then_bb],
                            Some([false]) => vec![*else_bb],
                            _ => vec![*then_bb, *else_bb],
                        },
                    },
                };
                for t in taken {
                    if !edges[b.index()].contains(&t) {
                        edges[b.index()].push(t);
                        reachable[t.index()] = true;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
            iterations += 1;
        }
        Ok(InferenceResult { values, reachable, edges, returned, iterations })
    }
}

/// Infers `f` (which need not belong to `module`) with the given parameter
/// values; calls resolve against `module`.
pub fn infer(f: &Function, args: &[AbstractValue], module: &Module) -> Result<InferenceResult, InferError> {
    Inferencer::new(module).infer_function(f, args)
}
