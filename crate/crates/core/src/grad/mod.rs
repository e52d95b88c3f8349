//! Reverse-mode differentiation of straight-line source functions. The
//! result is ordinary source code: the primal instructions followed by a
//! reverse sweep, returning a tuple of cotangents.

mod check;

use std::collections::HashMap;

pub use check::{check_gradient, GradCheck};

use crate::builtins::{is_scalar_callback, lookup, BuiltinKind};
use crate::frontend::{
    inline_calls, Block, FnRef, Function, InlineError, Inst, InstKind, Literal, Module, Param, Span, Terminator, ValueId,
    ValueType,
};
use crate::infer::transfer::{static_indices, static_reduce_dims};
use crate::infer::{callback_mode, infer, AbstractValue, CallbackMode, InferError, InferenceResult};
use crate::types::{ElementType, TensorType};
use crate::value::TensorValue;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GradError {
    #[error("no function named @{0}")]
    UnknownFunction(String),
    #[error(transparent)]
    Inline(#[from] InlineError),
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error("@{0}: control flow unsupported in grad")]
    ControlFlow(String),
    #[error("`{builtin}` is not differentiable: {reason}")]
    NotDifferentiable { builtin: String, reason: String },
    #[error("@{function} must return an f32[] loss, returns {found}")]
    NonScalarOutput { function: String, found: String },
    #[error("bad wrt list: {0}")]
    Wrt(String),
    #[error("@{function} needs {expected} argument types, got {got}")]
    Signature { function: String, expected: usize, got: usize },
    #[error("cannot differentiate %{value}: {reason}")]
    Unsupported { value: String, reason: String },
    #[error("compiling for the gradient check failed: {0}")]
    Compile(String),
    #[error("evaluation failed during the gradient check: {0}")]
    Eval(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GradRequest {
    pub entry: String,
    /// Parameter indices to differentiate with respect to.
    pub wrt: Vec<usize>,
    /// Argument types; the declared parameter types when absent.
    pub arg_types: Option<Vec<ValueType>>,
}

impl GradRequest {
    pub fn new(entry: impl Into<String>, wrt: Vec<usize>) -> Self {
        GradRequest { entry: entry.into(), wrt, arg_types: None }
    }

    pub fn with_types(mut self, types: Vec<ValueType>) -> Self {
        self.arg_types = Some(types);
        self
    }
}

/// A gradient function together with the module it lives in (the input
/// module plus the generated function and any derivative callbacks).
#[derive(Debug, Clone)]
pub struct Gradient {
    pub module: Module,
    pub function: String,
}

/// Builds the gradient of the scalar loss `req.entry` with respect to the
/// parameters `req.wrt`. The new function takes the same parameters and
/// returns a tuple with one cotangent per `wrt` entry.
pub fn grad(module: &Module, req: &GradRequest) -> Result<Gradient, GradError> {
    let f = inline_calls(module, &req.entry)?.ok_or_else(|| GradError::UnknownFunction(req.entry.clone()))?;
    if !f.is_straight_line() {
        return Err(GradError::ControlFlow(req.entry.clone()));
    }
    let types: Vec<ValueType> = match &req.arg_types {
        Some(t) => t.clone(),
        None => f
            .params
            .iter()
            .map(|p| p.ty.clone())
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| GradError::Signature { function: req.entry.clone(), expected: f.params.len(), got: 0 })?,
    };
    if types.len() != f.params.len() {
        return Err(GradError::Signature { function: req.entry.clone(), expected: f.params.len(), got: types.len() });
    }
    if req.wrt.is_empty() {
        return Err(GradError::Wrt("empty".into()));
    }
    if let Some(bad) = req.wrt.iter().find(|&&i| i >= f.params.len()) {
        return Err(GradError::Wrt(format!("@{} has no parameter {bad}", req.entry)));
    }
    let args: Vec<AbstractValue> = types.iter().map(AbstractValue::of_type).collect();
    let res = infer(&f, &args, module)?;
    let loss_ok = res.returned.tensor_type().is_some_and(|t| t.is_scalar() && t.elem == ElementType::F32);
    if !loss_ok {
        return Err(GradError::NonScalarOutput { function: req.entry.clone(), found: res.returned.to_string() });
    }
    let mut ctx = Ctx { module: module.clone(), derivs: HashMap::new() };
    let name = ctx.fresh_fn_name(&format!("{}_grad", req.entry));
    let g = sweep(&mut ctx, &f, &res, Output::Tuple(req.wrt.clone()), name.clone())?;
    ctx.module.functions.push(g);
    Ok(Gradient { module: ctx.module, function: name })
}

struct Ctx {
    /// Input functions plus generated ones, so that later inference sees
    /// the derivative callbacks.
    module: Module,
    derivs: HashMap<(FnRef, Vec<ElementType>, usize), String>,
}

impl Ctx {
    fn fresh_fn_name(&self, base: &str) -> String {
        let mut name = base.to_string();
        let mut k = 0;
        while self.module.function(&name).is_some() || lookup(&name).is_some() {
            k += 1;
            name = format!("{base}{k}");
        }
        name
    }

    /// A function with the parameters of callback `f` returning its partial
    /// derivative with respect to the `i`th per-element argument.
    fn derivative(&mut self, f: &FnRef, elems: &[ElementType], i: usize) -> Result<FnRef, GradError> {
        let key = (FnRef::plain(f.name.clone()), elems.to_vec(), i);
        if let Some(name) = self.derivs.get(&key) {
            return Ok(FnRef { name: name.clone(), captures: f.captures.clone() });
        }
        let unsupported = |reason: String| GradError::NotDifferentiable { builtin: format!("@{}", f.name), reason };
        let mode = callback_mode(&self.module, f, elems.len())
            .ok_or_else(|| unsupported(format!("cannot take {} arguments", elems.len())))?;
        let ncap = f.captures.len();
        let primal = match mode {
            CallbackMode::Builtin => builtin_wrapper(&f.name, ncap + elems.len()),
            _ => {
                let body = inline_calls(&self.module, &f.name)?.ok_or_else(|| GradError::UnknownFunction(f.name.clone()))?;
                if !body.is_straight_line() {
                    return Err(GradError::ControlFlow(f.name.clone()));
                }
                body
            }
        };
        let scalars: Vec<AbstractValue> = elems.iter().map(|&e| AbstractValue::Typed(TensorType::scalar(e))).collect();
        let mut args: Vec<AbstractValue> = f.captures.iter().map(|c| AbstractValue::of_tensor(c.clone())).collect();
        let output = if mode == CallbackMode::Aggregate {
            args.push(AbstractValue::Tuple(scalars));
            Output::Element(ncap, i)
        } else {
            args.extend(scalars);
            Output::Single(ncap + i)
        };
        let res = infer(&primal, &args, &self.module)?;
        let name = self.fresh_fn_name(&format!("d{i}_{}", f.name));
        let d = sweep(self, &primal, &res, output, name.clone())?;
        self.module.functions.push(d);
        self.derivs.insert(key, name.clone());
        Ok(FnRef { name, captures: f.captures.clone() })
    }
}

/// `func @name(%a0, ..., %an) { %r = call name(%a0, ..., %an) return %r }`
fn builtin_wrapper(name: &str, n: usize) -> Function {
    let mut f = Function {
        name: name.to_string(),
        params: Vec::new(),
        blocks: Vec::new(),
        value_names: Vec::new(),
        span: Span::default(),
    };
    let args: Vec<ValueId> = (0..n).map(|i| f.fresh_value(&format!("a{i}"))).collect();
    f.params = args.iter().map(|&value| Param { value, ty: None }).collect();
    let r = f.fresh_value("r");
    let call = Inst { result: r, kind: InstKind::Call { builtin: name.to_string(), args }, span: Span::default() };
    f.blocks.push(Block { label: "bb0".into(), insts: vec![call], term: Terminator::Return(r), span: Span::default() });
    f
}

/// What the generated function returns.
enum Output {
    /// Cotangents of these parameters, as a tuple.
    Tuple(Vec<usize>),
    /// The cotangent of one parameter.
    Single(usize),
    /// One element of the cotangent of a tuple parameter.
    Element(usize, usize),
}

#[derive(Debug, Clone)]
enum Adj {
    Tensor(ValueId),
    Tuple(Vec<Option<Adj>>),
}

struct Sweep<'a> {
    ctx: &'a mut Ctx,
    g: Function,
    res: &'a InferenceResult,
    adj: HashMap<ValueId, Adj>,
}

fn sweep(ctx: &mut Ctx, f: &Function, res: &InferenceResult, output: Output, name: String) -> Result<Function, GradError> {
    let mut g = f.clone();
    g.name = name;
    let Terminator::Return(loss) = g.blocks[0].term else {
        return Err(GradError::ControlFlow(f.name.clone()));
    };
    let primal: Vec<Inst> = g.blocks[0].insts.clone();
    let mut s = Sweep { ctx, g, res, adj: HashMap::new() };
    if s.differentiable(loss) {
        let one = s.lit(TensorValue::scalar_f32(1.0));
        s.adj.insert(loss, Adj::Tensor(one));
    }
    for inst in primal.iter().rev() {
        let Some(a) = s.adj.get(&inst.result).cloned() else { continue };
        match (&inst.kind, a) {
            (InstKind::Const(_), _) => {}
            (InstKind::MakeTuple(elems), Adj::Tuple(parts)) => {
                for (e, p) in elems.iter().zip(parts) {
                    if let Some(p) = p {
                        s.accumulate(*e, p);
                    }
                }
            }
            (InstKind::GetElement { tuple, index }, a) => {
                let n = match s.res.value(*tuple) {
                    AbstractValue::Tuple(elems) => elems.len(),
                    other => return Err(s.unsupported(*tuple, format!("expected a tuple, inferred {other}"))),
                };
                let mut parts = vec![None; n];
                parts[*index] = Some(a);
                s.accumulate(*tuple, Adj::Tuple(parts));
            }
            (InstKind::Call { builtin, args }, Adj::Tensor(c)) => s.rule(builtin, args, inst.result, c)?,
            (_, _) => return Err(s.unsupported(inst.result, "no derivative for this instruction".into())),
        }
    }
    let ret = match output {
        Output::Tuple(params) => {
            let elems = params
                .iter()
                .map(|&i| s.materialize(s.g.params[i].value))
                .collect::<Result<Vec<_>, _>>()?;
            s.emit("grads", InstKind::MakeTuple(elems))
        }
        Output::Single(i) => s.materialize(s.g.params[i].value)?,
        Output::Element(p, i) => {
            let v = s.g.params[p].value;
            match s.adj.get(&v).cloned() {
                Some(Adj::Tuple(parts)) if matches!(parts.get(i), Some(Some(_))) => match &parts[i] {
                    Some(Adj::Tensor(t)) => *t,
                    _ => return Err(s.unsupported(v, "nested tuple argument".into())),
                },
                _ => s.lit(TensorValue::scalar_f32(0.0)),
            }
        }
    };
    s.g.blocks[0].term = Terminator::Return(ret);
    Ok(s.g)
}

impl Sweep<'_> {
    fn unsupported(&self, v: ValueId, reason: String) -> GradError {
        GradError::Unsupported { value: self.g.value_name(v).to_string(), reason }
    }

    fn emit(&mut self, hint: &str, kind: InstKind) -> ValueId {
        let v = self.g.fresh_value(hint);
        self.g.blocks[0].insts.push(Inst { result: v, kind, span: Span::default() });
        v
    }

    fn lit(&mut self, t: TensorValue) -> ValueId {
        self.emit("k", InstKind::Const(Literal::Tensor(t)))
    }

    fn index_list(&mut self, l: &[usize]) -> ValueId {
        self.lit(TensorValue::index_list(l))
    }

    fn call(&mut self, builtin: &str, args: Vec<ValueId>) -> ValueId {
        self.emit("d", InstKind::Call { builtin: builtin.to_string(), args })
    }

    fn fn_ref(&mut self, r: FnRef) -> ValueId {
        self.emit("df", InstKind::Const(Literal::Fn(r)))
    }

    /// True for values that carry a cotangent: runtime f32 tensors and
    /// tuples holding some.
    fn differentiable(&self, v: ValueId) -> bool {
        fn carries(a: &AbstractValue) -> bool {
            match a {
                AbstractValue::Typed(t) => t.elem == ElementType::F32,
                AbstractValue::Tuple(elems) => elems.iter().any(carries),
                _ => false,
            }
        }
        carries(self.res.value(v))
    }

    fn ty(&self, v: ValueId) -> Result<TensorType, GradError> {
        self.res.value(v).tensor_type().cloned().ok_or_else(|| self.unsupported(v, format!("inferred {}", self.res.value(v))))
    }

    fn zeros(&mut self, t: &TensorType) -> ValueId {
        let zero = match t.elem {
            ElementType::F32 => TensorValue::scalar_f32(0.0),
            ElementType::S64 => TensorValue::scalar_s64(0),
            ElementType::Pred => TensorValue::scalar_pred(false),
        };
        let z = self.lit(zero);
        if t.is_scalar() {
            return z;
        }
        let shape = self.index_list(&t.dims);
        let dims = self.index_list(&[]);
        self.call("broadcast_in_dim", vec![z, shape, dims])
    }

    fn negate(&mut self, c: ValueId, t: &TensorType) -> ValueId {
        let z = self.zeros(t);
        self.call("subtract", vec![z, c])
    }

    fn add_adj(&mut self, a: Adj, b: Adj) -> Adj {
        match (a, b) {
            (Adj::Tensor(x), Adj::Tensor(y)) => Adj::Tensor(self.call("add", vec![x, y])),
            (Adj::Tuple(xs), Adj::Tuple(ys)) => Adj::Tuple(
                xs.into_iter()
                    .zip(ys)
                    .map(|(x, y)| match (x, y) {
                        (Some(x), Some(y)) => Some(self.add_adj(x, y)),
                        (x, y) => x.or(y),
                    })
                    .collect(),
            ),
            (a, _) => a,
        }
    }

    fn accumulate(&mut self, v: ValueId, a: Adj) {
        if !self.differentiable(v) {
            return;
        }
        let next = match self.adj.remove(&v) {
            Some(old) => self.add_adj(old, a),
            None => a,
        };
        self.adj.insert(v, next);
    }

    fn acc(&mut self, v: ValueId, g: ValueId) {
        self.accumulate(v, Adj::Tensor(g));
    }

    /// The cotangent of `v` as a value, zeros where nothing flowed.
    fn materialize(&mut self, v: ValueId) -> Result<ValueId, GradError> {
        let a = self.adj.get(&v).cloned();
        let av = self.res.value(v).clone();
        self.build(a, &av, v)
    }

    fn build(&mut self, a: Option<Adj>, av: &AbstractValue, at: ValueId) -> Result<ValueId, GradError> {
        match (a, av) {
            (Some(Adj::Tensor(t)), _) => Ok(t),
            (a, AbstractValue::Tuple(elems)) => {
                let parts = match a {
                    Some(Adj::Tuple(p)) => p,
                    _ => vec![None; elems.len()],
                };
                let vals = parts
                    .into_iter()
                    .zip(elems)
                    .map(|(p, e)| self.build(p, e, at))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(self.emit("dt", InstKind::MakeTuple(vals)))
            }
            (_, av) => match av.tensor_type() {
                Some(t) => Ok(self.zeros(&t.clone())),
                None => Err(self.unsupported(at, format!("no cotangent type for {av}"))),
            },
        }
    }

    /// Sums `g` (of extents `r`) down to the right-aligned shape `to`.
    fn unbroadcast(&mut self, g: ValueId, r: &[usize], to: &TensorType) -> ValueId {
        let off = r.len() - to.rank();
        let mut axes: Vec<usize> = (0..off).collect();
        axes.extend((0..to.rank()).filter(|&i| to.dims[i] == 1 && r[off + i] != 1).map(|i| off + i));
        let mut g = g;
        let mut dims: Vec<usize> = r.to_vec();
        if !axes.is_empty() {
            let l = self.index_list(&axes);
            g = self.call("sum", vec![g, l]);
            dims = (0..r.len()).filter(|i| !axes.contains(i)).map(|i| r[i]).collect();
        }
        if dims != to.dims {
            let l = self.index_list(&to.dims);
            g = self.call("reshape", vec![g, l]);
        }
        g
    }

    fn not_diff(builtin: &str, reason: &str) -> GradError {
        GradError::NotDifferentiable { builtin: builtin.to_string(), reason: reason.to_string() }
    }

    fn fn_arg(&self, builtin: &str, v: ValueId) -> Result<FnRef, GradError> {
        match self.res.value(v) {
            AbstractValue::FnRef(r) => Ok(r.clone()),
            _ => Err(Self::not_diff(builtin, "callback is not a known function")),
        }
    }

    /// Adds the cotangent contributions of `out = builtin(args...)` given
    /// its cotangent `c`.
    fn rule(&mut self, builtin: &str, args: &[ValueId], out: ValueId, c: ValueId) -> Result<(), GradError> {
        let b = lookup(builtin).ok_or_else(|| Self::not_diff(builtin, "unknown builtin"))?;
        let d = |s: &Self, i: usize| s.differentiable(args[i]);
        match b.kind {
            BuiltinKind::Elementwise(op) => {
                use crate::hlo::ElemOp as E;
                let t = self.ty(out)?;
                match op {
                    E::Add => {
                        self.acc(args[0], c);
                        self.acc(args[1], c);
                    }
                    E::Subtract => {
                        self.acc(args[0], c);
                        if d(self, 1) {
                            let n = self.negate(c, &t);
                            self.acc(args[1], n);
                        }
                    }
                    E::Multiply => {
                        if d(self, 0) {
                            let g = self.call("multiply", vec![c, args[1]]);
                            self.acc(args[0], g);
                        }
                        if d(self, 1) {
                            let g = self.call("multiply", vec![c, args[0]]);
                            self.acc(args[1], g);
                        }
                    }
                    E::Divide => {
                        if d(self, 0) {
                            let g = self.call("divide", vec![c, args[1]]);
                            self.acc(args[0], g);
                        }
                        if d(self, 1) {
                            let ca = self.call("multiply", vec![c, args[0]]);
                            let bb = self.call("multiply", vec![args[1], args[1]]);
                            let q = self.call("divide", vec![ca, bb]);
                            let n = self.negate(q, &t);
                            self.acc(args[1], n);
                        }
                    }
                    E::Maximum => {
                        let p = self.call("lt", vec![args[0], args[1]]);
                        let z = self.zeros(&t);
                        if d(self, 0) {
                            let g = self.call("select", vec![p, z, c]);
                            self.acc(args[0], g);
                        }
                        if d(self, 1) {
                            let g = self.call("select", vec![p, c, z]);
                            self.acc(args[1], g);
                        }
                    }
                    E::Exp => {
                        let g = self.call("multiply", vec![c, out]);
                        self.acc(args[0], g);
                    }
                    E::Select => {
                        let z = self.zeros(&t);
                        if d(self, 1) {
                            let g = self.call("select", vec![args[0], c, z]);
                            self.acc(args[1], g);
                        }
                        if d(self, 2) {
                            let g = self.call("select", vec![args[0], z, c]);
                            self.acc(args[2], g);
                        }
                    }
                    E::Lt | E::Le => {}
                }
            }
            BuiltinKind::Identity => self.acc(args[0], c),
            BuiltinKind::Matmul => {
                let bt = self.ty(args[1])?;
                if d(self, 0) {
                    let g = if bt.rank() == 1 {
                        self.call("outer", vec![c, args[1]])
                    } else {
                        let perm = self.index_list(&[1, 0]);
                        let tb = self.call("transpose", vec![args[1], perm]);
                        self.call("matmul", vec![c, tb])
                    };
                    self.acc(args[0], g);
                }
                if d(self, 1) {
                    let perm = self.index_list(&[1, 0]);
                    let ta = self.call("transpose", vec![args[0], perm]);
                    let g = self.call("matmul", vec![ta, c]);
                    self.acc(args[1], g);
                }
            }
            BuiltinKind::Outer => {
                if d(self, 0) {
                    let g = self.call("matmul", vec![c, args[1]]);
                    self.acc(args[0], g);
                }
                if d(self, 1) {
                    let perm = self.index_list(&[1, 0]);
                    let tc = self.call("transpose", vec![c, perm]);
                    let g = self.call("matmul", vec![tc, args[0]]);
                    self.acc(args[1], g);
                }
            }
            BuiltinKind::Transpose => {
                let perm = static_indices(self.res.value(args[1])).ok_or_else(|| Self::not_diff(builtin, "permutation is not constant"))?;
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let l = self.index_list(&inv);
                let g = self.call("transpose", vec![c, l]);
                self.acc(args[0], g);
            }
            BuiltinKind::Reshape => {
                let t = self.ty(args[0])?;
                let l = self.index_list(&t.dims);
                let g = self.call("reshape", vec![c, l]);
                self.acc(args[0], g);
            }
            BuiltinKind::BroadcastInDim => {
                let t = self.ty(args[0])?;
                let r = self.ty(out)?;
                let dims = static_indices(self.res.value(args[2])).ok_or_else(|| Self::not_diff(builtin, "dims are not constant"))?;
                let mut axes: Vec<usize> = (0..r.rank()).filter(|a| !dims.contains(a)).collect();
                axes.extend((0..t.rank()).filter(|&i| t.dims[i] == 1 && r.dims[dims[i]] != 1).map(|i| dims[i]));
                axes.sort_unstable();
                let mut g = c;
                let mut cur = r.dims.clone();
                if !axes.is_empty() {
                    let l = self.index_list(&axes);
                    g = self.call("sum", vec![g, l]);
                    cur = (0..r.rank()).filter(|a| !axes.contains(a)).map(|a| r.dims[a]).collect();
                }
                if cur != t.dims {
                    let l = self.index_list(&t.dims);
                    g = self.call("reshape", vec![g, l]);
                }
                self.acc(args[0], g);
            }
            BuiltinKind::Sum => self.reduce_rule(builtin, None, args[0], args.get(1).copied(), c)?,
            BuiltinKind::MapReduce => {
                let op = self.fn_arg(builtin, args[1])?;
                let plain_add = op.name == "add" && op.captures.is_empty() && self.ctx.module.function("add").is_none();
                if !plain_add {
                    return Err(Self::not_diff(builtin, &format!("only add reductions are differentiated, got @{}", op.name)));
                }
                let f = self.fn_arg(builtin, args[0])?;
                self.reduce_rule(builtin, Some(f), args[2], args.get(3).copied(), c)?;
            }
            BuiltinKind::Broadcast => {
                let f = self.fn_arg(builtin, args[0])?;
                let r = self.ty(out)?.dims;
                let xs = &args[1..];
                let elems = xs.iter().map(|x| self.ty(*x).map(|t| t.elem)).collect::<Result<Vec<_>, _>>()?;
                let builtin_cb = self.ctx.module.function(&f.name).is_none() && is_scalar_callback(&f.name) && f.captures.is_empty();
                for (i, x) in xs.iter().enumerate() {
                    if !self.differentiable(*x) {
                        continue;
                    }
                    let xt = self.ty(*x)?;
                    let g = match (builtin_cb, f.name.as_str(), i) {
                        (true, "add", _) | (true, "identity", _) | (true, "subtract", 0) => c,
                        (true, "subtract", 1) => {
                            let t = TensorType::new(ElementType::F32, r.clone());
                            self.negate(c, &t)
                        }
                        _ => {
                            let df = self.ctx.derivative(&f, &elems, i)?;
                            let dv = self.fn_ref(df);
                            let mut bargs = vec![dv];
                            bargs.extend_from_slice(xs);
                            let local = self.call("broadcast", bargs);
                            self.call("multiply", vec![c, local])
                        }
                    };
                    let g = self.unbroadcast(g, &r, &xt);
                    self.acc(*x, g);
                }
            }
            BuiltinKind::Rng | BuiltinKind::Dim => {}
            BuiltinKind::ReduceInit => return Err(Self::not_diff(builtin, "reductions with an explicit init are not differentiated")),
        }
        Ok(())
    }

    /// `sum` and `mapreduce(f, add, ...)`: spread `c` back over the reduced
    /// axes, times `f'` when there is a map.
    fn reduce_rule(&mut self, builtin: &str, f: Option<FnRef>, x: ValueId, dims: Option<ValueId>, c: ValueId) -> Result<(), GradError> {
        if !self.differentiable(x) {
            return Ok(());
        }
        let t = self.ty(x)?;
        let reduced = static_reduce_dims(dims.map(|d| self.res.value(d)), t.rank())
            .ok_or_else(|| Self::not_diff(builtin, "reduction dims are not constant"))?;
        let kept: Vec<usize> = (0..t.rank()).filter(|a| !reduced.contains(a)).collect();
        let shape = self.index_list(&t.dims);
        let kl = self.index_list(&kept);
        let mut g = self.call("broadcast_in_dim", vec![c, shape, kl]);
        if let Some(f) = f {
            let identity = f.name == "identity" && f.captures.is_empty() && self.ctx.module.function("identity").is_none();
            if !identity {
                let df = self.ctx.derivative(&f, &[t.elem], 0)?;
                let dv = self.fn_ref(df);
                let local = self.call("broadcast", vec![dv, x]);
                g = self.call("multiply", vec![g, local]);
            }
        }
        self.acc(x, g);
        Ok(())
    }
}

#[cfg(test)]
mod tests;
