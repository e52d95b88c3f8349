//! Op-by-op evaluation of source programs: every builtin call is lowered on
//! its own and its HLO instructions are executed on the device one at a
//! time, the way an eager runtime would.

use std::collections::HashMap;

use super::{Device, EvalError, Handle};
use crate::builtins::{lookup, BuiltinKind};
use crate::frontend::{
    print_function, BlockId, Block, Callee, FnRef, Function, Inst, InstKind, Literal, Module, Param, Span, Terminator, ValueId,
    ValueType,
};
use crate::hlo::{HloModule, HloOp};
use crate::infer::AbstractValue;
use crate::lower::{compile_function, CompileError};
use crate::types::Shape;
use crate::value::{TensorValue, Value};

/// Blocks executed before evaluation gives up.
pub const DEFAULT_STEP_LIMIT: u64 = 1 << 22;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DynamicError {
    #[error("no function named @{0}")]
    UnknownFunction(String),
    #[error("unknown builtin `{0}`")]
    UnknownBuiltin(String),
    #[error("{callee} takes {expected} arguments, got {got}")]
    Arity { callee: String, expected: usize, got: usize },
    #[error("branch condition %{0} is not a pred[] value")]
    BranchNotPred(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("evaluation exceeded {0} steps")]
    StepLimit(u64),
    #[error("cannot lower `{builtin}`: {error}")]
    Compile { builtin: String, error: CompileError },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone)]
enum Rt {
    /// Known on the host (literals and values derived only from them).
    Host(TensorValue),
    Device(Handle, Shape),
    Tuple(Vec<Rt>),
    Fn(FnRef),
    AllDims,
}

pub struct DynamicEvaluator<'a> {
    module: &'a Module,
    dev: &'a Device,
    cache: HashMap<String, HloModule>,
    steps: u64,
    step_limit: u64,
}

impl<'a> DynamicEvaluator<'a> {
    pub fn new(module: &'a Module, dev: &'a Device) -> Self {
        DynamicEvaluator { module, dev, cache: HashMap::new(), steps: 0, step_limit: DEFAULT_STEP_LIMIT }
    }

    pub fn with_step_limit(mut self, limit: u64) -> Self {
        self.step_limit = limit;
        self
    }

    /// Evaluates `entry` on `inputs`, transferring them to the device and
    /// fetching the result back.
    pub fn run(&mut self, entry: &str, inputs: &[Value]) -> Result<Value, DynamicError> {
        let args: Vec<Rt> = inputs.iter().map(|v| self.upload(v)).collect();
        let out = self.call(entry, args)?;
        self.download(&out)
    }

    fn upload(&self, v: &Value) -> Rt {
        match v {
            Value::Tensor(t) => Rt::Device(self.dev.transfer(v), Shape::Array(t.ty().clone())),
            Value::Tuple(elems) => Rt::Tuple(elems.iter().map(|e| self.upload(e)).collect()),
        }
    }

    fn download(&self, r: &Rt) -> Result<Value, DynamicError> {
        Ok(match r {
            Rt::Host(t) => Value::Tensor(t.clone()),
            Rt::Device(h, _) => self.dev.fetch(*h)?,
            Rt::Tuple(elems) => Value::Tuple(elems.iter().map(|e| self.download(e)).collect::<Result<_, _>>()?),
            Rt::Fn(r) => return Err(DynamicError::Type(format!("function reference @{} has no runtime value", r.name))),
            Rt::AllDims => return Err(DynamicError::Type("the dims marker has no runtime value".into())),
        })
    }

    fn call(&mut self, name: &str, args: Vec<Rt>) -> Result<Rt, DynamicError> {
        let module = self.module;
        let f = module.function(name).ok_or_else(|| DynamicError::UnknownFunction(name.to_string()))?;
        if f.params.len() != args.len() {
            return Err(DynamicError::Arity { callee: format!("@{name}"), expected: f.params.len(), got: args.len() });
        }
        let mut env: Vec<Option<Rt>> = vec![None; f.num_values()];
        for (p, a) in f.params.iter().zip(args) {
            env[p.value.index()] = Some(a);
        }
        let get = |env: &[Option<Rt>], v: ValueId| -> Result<Rt, DynamicError> {
            env[v.index()].clone().ok_or_else(|| DynamicError::Type(format!("%{} used before definition", f.value_name(v))))
        };
        let mut prev: Option<BlockId> = None;
        let mut b = BlockId::ENTRY;
        loop {
            self.steps += 1;
            if self.steps > self.step_limit {
                return Err(DynamicError::StepLimit(self.step_limit));
            }
            let block = f.block(b);
            let phis: Vec<(ValueId, Rt)> = block
                .insts
                .iter()
                .filter_map(|i| match &i.kind {
                    InstKind::Phi(inc) => Some((i.result, inc)),
                    _ => None,
                })
                .map(|(r, inc)| {
                    let from = prev.ok_or_else(|| DynamicError::Type("φ in the entry block".into()))?;
                    let (_, v) = inc
                        .iter()
                        .find(|(p, _)| *p == from)
                        .ok_or_else(|| DynamicError::Type(format!("φ %{} has no incoming value", f.value_name(r))))?;
                    Ok((r, get(&env, *v)?))
                })
                .collect::<Result<_, DynamicError>>()?;
            for (r, v) in phis {
                env[r.index()] = Some(v);
            }
            for inst in &block.insts {
                let out = match &inst.kind {
                    InstKind::Phi(_) => continue,
                    InstKind::Const(lit) => literal(lit),
                    InstKind::Call { builtin, args } => {
                        let args = args.iter().map(|a| get(&env, *a)).collect::<Result<Vec<_>, _>>()?;
                        self.builtin(builtin, args)?
                    }
                    InstKind::CallFn { callee, args } => {
                        let target = match callee {
                            Callee::Static(r) => r.clone(),
                            Callee::Value(v) => match get(&env, *v)? {
                                Rt::Fn(r) => r,
                                _ => return Err(DynamicError::Type(format!("%{} is not a function", f.value_name(*v)))),
                            },
                        };
                        let mut full: Vec<Rt> = target.captures.iter().map(|c| Rt::Host(c.clone())).collect();
                        for a in args {
                            full.push(get(&env, *a)?);
                        }
                        if module.function(&target.name).is_some() {
                            self.call(&target.name, full)?
                        } else {
                            self.builtin(&target.name, full)?
                        }
                    }
                    InstKind::MakeTuple(elems) => Rt::Tuple(elems.iter().map(|e| get(&env, *e)).collect::<Result<_, _>>()?),
                    InstKind::GetElement { tuple, index } => match get(&env, *tuple)? {
                        Rt::Tuple(elems) if *index < elems.len() => elems[*index].clone(),
                        _ => return Err(DynamicError::Type(format!("%{} has no element {index}", f.value_name(*tuple)))),
                    },
                };
                env[inst.result.index()] = Some(out);
            }
            match &block.term {
                Terminator::Return(v) => return get(&env, *v),
                Terminator::Jmp(t) => {
                    prev = Some(b);
                    b = *t;
                }
                Terminator::Br { cond, then_bb, else_bb } => {
                    let c = match get(&env, *cond)? {
                        Rt::Host(t) => t,
                        Rt::Device(h, _) => self.dev.fetch(h)?.into_tensor().expect("array shape"),
                        _ => return Err(DynamicError::BranchNotPred(f.value_name(*cond).to_string())),
                    };
                    let taken = match c.as_pred() {
                        Some([x]) => *x,
                        _ => return Err(DynamicError::BranchNotPred(f.value_name(*cond).to_string())),
                    };
                    prev = Some(b);
                    b = if taken { *then_bb } else { *else_bb };
                }
            }
        }
    }

    fn builtin(&mut self, name: &str, mut args: Vec<Rt>) -> Result<Rt, DynamicError> {
        let b = lookup(name).ok_or_else(|| DynamicError::UnknownBuiltin(name.to_string()))?;
        if !b.accepts(args.len()) {
            return Err(DynamicError::Arity { callee: name.to_string(), expected: b.min_args, got: args.len() });
        }
        match b.kind {
            BuiltinKind::Identity => return Ok(args.swap_remove(0)),
            BuiltinKind::Dim => {
                let dims = match &args[0] {
                    Rt::Host(t) => t.dims().to_vec(),
                    Rt::Device(_, Shape::Array(t)) => t.dims.clone(),
                    _ => return Err(DynamicError::Type("dim of a non-array".into())),
                };
                let axis = match &args[1] {
                    Rt::Host(t) => t.to_index_list().and_then(|l| (l.len() == 1).then(|| l[0])),
                    _ => None,
                };
                return match axis.and_then(|a| dims.get(a)) {
                    Some(&d) => Ok(Rt::Host(TensorValue::scalar_s64(d as i64))),
                    None => Err(DynamicError::Type("dim axis out of range".into())),
                };
            }
            _ => {}
        }
        // Operands in static positions must be known on the host.
        for (i, a) in args.iter_mut().enumerate() {
            if b.is_static(i) {
                if let Rt::Device(h, _) = a {
                    let v = self.dev.fetch(*h)?;
                    *a = Rt::Host(v.into_tensor().expect("array shape"));
                }
            }
        }
        let (scratch, handles, arg_types) = scratch_function(name, &args)?;
        let key = print_function(&scratch);
        if !self.cache.contains_key(&key) {
            let abstract_args: Vec<AbstractValue> = arg_types.iter().map(AbstractValue::of_type).collect();
            let compiled = compile_function(self.module, scratch, &abstract_args)
                .map_err(|error| DynamicError::Compile { builtin: name.to_string(), error })?;
            self.cache.insert(key.clone(), compiled.module);
        }
        let hlo = &self.cache[&key];
        let out = execute_entry(self.dev, hlo, &handles)?;
        let shape = self.dev.shape_of(out)?;
        Ok(Rt::Device(out, shape))
    }
}

fn literal(lit: &Literal) -> Rt {
    match lit {
        Literal::Tensor(t) => Rt::Host(t.clone()),
        Literal::Tuple(elems) => Rt::Tuple(elems.iter().map(literal).collect()),
        Literal::Fn(r) => Rt::Fn(r.clone()),
        Literal::AllDims => Rt::AllDims,
    }
}

/// A one-call function applying `builtin` to `args`: device values become
/// parameters, everything else a constant.
fn scratch_function(builtin: &str, args: &[Rt]) -> Result<(Function, Vec<Handle>, Vec<ValueType>), DynamicError> {
    let mut f = Function {
        name: format!("{builtin}_op"),
        params: Vec::new(),
        blocks: Vec::new(),
        value_names: Vec::new(),
        span: Span::default(),
    };
    let mut insts = Vec::new();
    let mut handles = Vec::new();
    let mut types = Vec::new();
    let mut operands = Vec::new();
    for (i, a) in args.iter().enumerate() {
        let v = f.fresh_value(&format!("a{i}"));
        match a {
            Rt::Device(h, shape) => {
                let ty = ValueType::from_shape(shape);
                f.params.push(Param { value: v, ty: Some(ty.clone()) });
                handles.push(*h);
                types.push(ty);
            }
            Rt::Host(t) => insts.push(Inst { result: v, kind: InstKind::Const(Literal::Tensor(t.clone())), span: Span::default() }),
            Rt::Fn(r) => insts.push(Inst { result: v, kind: InstKind::Const(Literal::Fn(r.clone())), span: Span::default() }),
            Rt::AllDims => insts.push(Inst { result: v, kind: InstKind::Const(Literal::AllDims), span: Span::default() }),
            Rt::Tuple(_) => return Err(DynamicError::Type(format!("{builtin} applied to a tuple"))),
        }
        operands.push(v);
    }
    let r = f.fresh_value("r");
    insts.push(Inst { result: r, kind: InstKind::Call { builtin: builtin.to_string(), args: operands }, span: Span::default() });
    f.blocks.push(Block { label: "bb0".into(), insts, term: Terminator::Return(r), span: Span::default() });
    Ok((f, handles, types))
}

/// Runs the entry computation instruction by instruction, one device
/// execution per non-trivial op.
fn execute_entry(dev: &Device, m: &HloModule, params: &[Handle]) -> Result<Handle, EvalError> {
    let comp = m.entry_comp();
    let mut hs: Vec<Handle> = Vec::with_capacity(comp.instructions.len());
    for inst in &comp.instructions {
        let h = match &inst.op {
            HloOp::Parameter { index, .. } => params[*index],
            HloOp::Constant(v) => dev.transfer(v),
            op => {
                let args: Vec<Handle> = inst.operands.iter().map(|&o| hs[o]).collect();
                dev.execute_op(m, op, &args)?
            }
        };
        hs.push(h);
    }
    Ok(hs[comp.root])
}

/// Evaluates `entry` of `module` op by op on `dev`.
pub fn dynamic_eval(module: &Module, entry: &str, inputs: &[Value], dev: &Device) -> Result<Value, DynamicError> {
    DynamicEvaluator::new(module, dev).run(entry, inputs)
}
