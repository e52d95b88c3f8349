use super::{internal, FnLowering, Frame, LowerError, Lowerer};
use crate::builtins::{lookup, BuiltinKind};
use crate::frontend::{inline_calls, FnRef, ValueId};
use crate::hlo::{CompId, DotDims, HloOp};
use crate::infer::transfer::{neutral_element, static_indices, static_reduce_dims};
use crate::infer::{callback_mode, AbstractValue, CallbackMode, Inferencer};
use crate::types::{ElementType, Shape, TensorType};
use crate::value::Value;

impl Lowerer<'_> {
    fn arg_type(&self, fl: &FnLowering, v: ValueId) -> Result<TensorType, LowerError> {
        match fl.res.value(v).tensor_type() {
            Some(t) => Ok(t.clone()),
            None => internal(format!("%{} is not a tensor", fl.f.value_name(v))),
        }
    }

    fn static_list(&self, fl: &FnLowering, v: ValueId) -> Result<Vec<usize>, LowerError> {
        match static_indices(fl.res.value(v)) {
            Some(l) => Ok(l),
            None => internal(format!("%{} is not a constant index list", fl.f.value_name(v))),
        }
    }

    fn fn_arg(&self, fl: &FnLowering, v: ValueId) -> Result<FnRef, LowerError> {
        match fl.res.value(v) {
            AbstractValue::FnRef(r) => Ok(r.clone()),
            other => internal(format!("%{} is {other}, not a function", fl.f.value_name(v))),
        }
    }

    pub(super) fn lower_call(&mut self, fl: &mut FnLowering, name: &str, args: &[ValueId]) -> Result<usize, LowerError> {
        let Some(b) = lookup(name) else {
            return internal(format!("unknown builtin {name}"));
        };
        match b.kind {
            BuiltinKind::Identity => self.lookup(fl, args[0]),
            BuiltinKind::Elementwise(op) => {
                let ops = args.iter().map(|a| self.lookup(fl, *a)).collect::<Result<Vec<_>, _>>()?;
                self.emit(fl, HloOp::Elementwise(op), ops)
            }
            BuiltinKind::Matmul | BuiltinKind::Outer => {
                let l = self.lookup(fl, args[0])?;
                let r = self.lookup(fl, args[1])?;
                let dims = if b.kind == BuiltinKind::Matmul { DotDims::matmul() } else { DotDims::default() };
                self.emit(fl, HloOp::Dot(dims), vec![l, r])
            }
            BuiltinKind::Transpose => {
                let permutation = self.static_list(fl, args[1])?;
                let x = self.lookup(fl, args[0])?;
                self.emit(fl, HloOp::Transpose { permutation }, vec![x])
            }
            BuiltinKind::Reshape => {
                let dims = self.static_list(fl, args[1])?;
                let x = self.lookup(fl, args[0])?;
                self.emit(fl, HloOp::Reshape { dims }, vec![x])
            }
            BuiltinKind::BroadcastInDim => {
                let dims = self.static_list(fl, args[1])?;
                let dimensions = self.static_list(fl, args[2])?;
                let x = self.lookup(fl, args[0])?;
                self.emit(fl, HloOp::Broadcast { dimensions, dims }, vec![x])
            }
            BuiltinKind::Rng => {
                let dims = self.static_list(fl, args[0])?;
                self.emit(fl, HloOp::Rng { dims }, Vec::new())
            }
            BuiltinKind::Dim => internal("dim is always a constant"),
            BuiltinKind::Sum => {
                self.lower_mapreduce(fl, &FnRef::plain("identity"), &FnRef::plain("add"), args[0], args.get(1).copied())
            }
            BuiltinKind::MapReduce => {
                let f = self.fn_arg(fl, args[0])?;
                let op = self.fn_arg(fl, args[1])?;
                self.lower_mapreduce(fl, &f, &op, args[2], args.get(3).copied())
            }
            BuiltinKind::ReduceInit => {
                let op = self.fn_arg(fl, args[0])?;
                let xt = self.arg_type(fl, args[1])?;
                let dimensions = match static_reduce_dims(Some(fl.res.value(args[3])), xt.rank()) {
                    Some(d) => d,
                    None => return internal("bad reduction dimensions"),
                };
                let x = self.lookup(fl, args[1])?;
                let init = self.lookup(fl, args[2])?;
                let to_apply = self.compile_callback(&op, &[xt.elem, xt.elem])?;
                self.emit(fl, HloOp::Reduce { to_apply, dimensions }, vec![x, init])
            }
            BuiltinKind::Broadcast => self.lower_broadcast(fl, args),
        }
    }

    fn lower_mapreduce(
        &mut self,
        fl: &mut FnLowering,
        f: &FnRef,
        op: &FnRef,
        x: ValueId,
        dims: Option<ValueId>,
    ) -> Result<usize, LowerError> {
        let xt = self.arg_type(fl, x)?;
        let dimensions = match static_reduce_dims(dims.map(|d| fl.res.value(d)), xt.rank()) {
            Some(d) => d,
            None => return internal("bad reduction dimensions"),
        };
        let xi = self.lookup(fl, x)?;
        let map_fn = self.compile_callback(f, &[xt.elem])?;
        let mapped = self.emit(fl, HloOp::Map { to_apply: map_fn, dimensions: (0..xt.rank()).collect() }, vec![xi])?;
        let elem = match fl.top().b.shape(mapped) {
            Shape::Array(t) => t.elem,
            Shape::Tuple(_) => return internal("map produced a tuple"),
        };
        let Some(neutral) = neutral_element(op, elem) else {
            return internal(format!("@{} has no neutral element for {elem}", op.name));
        };
        let init = self.constant(fl, Value::Tensor(neutral));
        let to_apply = self.compile_callback(op, &[elem, elem])?;
        self.emit(fl, HloOp::Reduce { to_apply, dimensions }, vec![mapped, init])
    }

    /// `broadcast(f, xs...)`: expand every argument to the right-aligned
    /// common extents, then map `f` over all dimensions.
    fn lower_broadcast(&mut self, fl: &mut FnLowering, args: &[ValueId]) -> Result<usize, LowerError> {
        let f = self.fn_arg(fl, args[0])?;
        let tys = args[1..].iter().map(|a| self.arg_type(fl, *a)).collect::<Result<Vec<_>, _>>()?;
        let extents: Vec<&[usize]> = tys.iter().map(|t| t.dims.as_slice()).collect();
        let Some(r) = crate::infer::transfer::broadcast_dims(&extents) else {
            return internal("arguments do not broadcast");
        };
        let mut ops = Vec::with_capacity(tys.len());
        for (a, t) in args[1..].iter().zip(&tys) {
            let x = self.lookup(fl, *a)?;
            ops.push(self.expand(fl, x, t, &r)?);
        }
        let elems: Vec<ElementType> = tys.iter().map(|t| t.elem).collect();
        let to_apply = self.compile_callback(&f, &elems)?;
        self.emit(fl, HloOp::Map { to_apply, dimensions: (0..r.len()).collect() }, ops)
    }

    fn expand(&mut self, fl: &mut FnLowering, x: usize, t: &TensorType, r: &[usize]) -> Result<usize, LowerError> {
        if t.dims == r {
            return Ok(x);
        }
        let off = r.len() - t.rank();
        let kept: Vec<usize> = (0..t.rank()).filter(|&i| t.dims[i] == r[off + i]).collect();
        let mut src = x;
        if kept.len() != t.rank() {
            let dims = kept.iter().map(|&i| t.dims[i]).collect();
            src = self.emit(fl, HloOp::Reshape { dims }, vec![x])?;
        }
        let dimensions = kept.iter().map(|&i| off + i).collect();
        self.emit(fl, HloOp::Broadcast { dimensions, dims: r.to_vec() }, vec![src])
    }

    /// Computation applying the scalar callback `r` to scalars of the given
    /// element types. Identical requests share one computation.
    pub(super) fn compile_callback(&mut self, r: &FnRef, elems: &[ElementType]) -> Result<CompId, LowerError> {
        let key = (r.clone(), elems.to_vec());
        if let Some(&c) = self.callbacks.get(&key) {
            return Ok(c);
        }
        let Some(mode) = callback_mode(self.module, r, elems.len()) else {
            return internal(format!("@{} cannot take {} arguments", r.name, elems.len()));
        };
        let slot = self.reserve();
        let mut frame = Frame::new(slot);
        let params: Vec<usize> = elems
            .iter()
            .enumerate()
            .map(|(index, &e)| frame.b.push(HloOp::Parameter { index, shape: Shape::scalar(e) }, Vec::new(), Shape::scalar(e)))
            .collect();
        let root = match mode {
            CallbackMode::Builtin => self.builtin_callback(frame, r, &params)?,
            CallbackMode::Positional | CallbackMode::Aggregate => {
                self.user_callback(frame, r, mode, elems, &params)?
            }
        };
        self.install(root.0, root.1);
        self.callbacks.insert(key, slot);
        Ok(slot)
    }

    fn builtin_callback(&mut self, mut frame: Frame, r: &FnRef, params: &[usize]) -> Result<(Frame, usize), LowerError> {
        let Some(b) = lookup(&r.name) else {
            return internal(format!("unknown builtin @{}", r.name));
        };
        let mut ops: Vec<usize> = r
            .captures
            .iter()
            .map(|c| frame.b.push(HloOp::Constant(Value::Tensor(c.clone())), Vec::new(), Shape::Array(c.ty().clone())))
            .collect();
        ops.extend_from_slice(params);
        let root = match b.kind {
            BuiltinKind::Identity => ops[0],
            BuiltinKind::Elementwise(op) => {
                let shapes: Vec<&Shape> = ops.iter().map(|&o| frame.b.shape(o)).collect();
                let hop = HloOp::Elementwise(op);
                let shape = crate::hlo::shape_infer(&hop, &shapes, &|_| None).map_err(|e| LowerError::Internal(e.to_string()))?;
                frame.b.push(hop, ops, shape)
            }
            _ => return internal(format!("@{} is not a scalar builtin", r.name)),
        };
        Ok((frame, root))
    }

    fn user_callback(
        &mut self,
        mut frame: Frame,
        r: &FnRef,
        mode: CallbackMode,
        elems: &[ElementType],
        params: &[usize],
    ) -> Result<(Frame, usize), LowerError> {
        let body = match inline_calls(self.module, &r.name) {
            Ok(Some(body)) => body,
            _ => return internal(format!("callback @{} cannot be inlined", r.name)),
        };
        let scalars: Vec<AbstractValue> = elems.iter().map(|&e| AbstractValue::Typed(TensorType::scalar(e))).collect();
        let mut args: Vec<AbstractValue> = r.captures.iter().map(|c| AbstractValue::of_tensor(c.clone())).collect();
        let ncap = args.len();
        if mode == CallbackMode::Aggregate {
            args.push(AbstractValue::Tuple(scalars));
        } else {
            args.extend(scalars);
        }
        let res = Inferencer::new(self.module).infer_function(&body, &args).map_err(|e| LowerError::Internal(e.to_string()))?;
        if mode == CallbackMode::Aggregate {
            let t = self.emit_in(&mut frame, HloOp::Tuple, params.to_vec())?;
            for index in 0..params.len() {
                let g = self.emit_in(&mut frame, HloOp::GetTupleElement { index }, vec![t])?;
                frame.gtes.insert((t, index), g);
            }
            frame.env.insert(body.params[ncap].value, t);
        } else {
            for (p, &i) in body.params[ncap..].iter().zip(params) {
                frame.env.insert(p.value, i);
            }
        }
        let tree = match crate::structurize::detect_regions(&body, &res) {
            Ok(t) => t,
            Err(e) => return internal(e.to_string()),
        };
        let mut fl = FnLowering { f: &body, res: &res, frames: vec![frame] };
        let out = self.lower_seq(&mut fl, &tree.body, super::control::Arrival::None)?;
        let frame = fl.frames.pop().expect("callback frame");
        Ok((frame, out[0]))
    }

    /// Like `emit`, for a frame not on any function's stack.
    fn emit_in(&mut self, frame: &mut Frame, op: HloOp, operands: Vec<usize>) -> Result<usize, LowerError> {
        let shapes: Vec<&Shape> = operands.iter().map(|&o| frame.b.shape(o)).collect();
        let shape = crate::hlo::shape_infer(&op, &shapes, &|c| self.sig(c)).map_err(|e| LowerError::Internal(e.to_string()))?;
        Ok(frame.b.push(op, operands, shape))
    }
}
