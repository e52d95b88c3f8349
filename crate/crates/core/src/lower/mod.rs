//! Lowering of inferred, structurized frontend functions to HLO modules.
//!
//! Each HLO computation under construction is a [`Frame`]. Values defined
//! outside the frame (the live-ins of a branch arm or loop) are captured on
//! first use: the frame's single tuple parameter grows an element and the
//! use reads it through a get-tuple-element, so live-in lists come out in
//! first-use order and contain exactly what is used.

mod builtin;
mod control;

use std::collections::HashMap;

use crate::frontend::{inline_calls, FnRef, Function, InlineError, InstKind, Module, ValueId, ValueType};
use crate::hlo::{canonical_order, shape_infer, validate_hlo, CompId, HloComputation, HloDiagnostic, HloInstruction, HloModule, HloOp};
use crate::infer::{check_offloadable, infer, AbstractValue, InferError, InferenceResult, OffloadReport};
use crate::structurize::{detect_regions, RegionTree, StructureError};
use crate::types::{ElementType, Shape};
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LowerError {
    #[error("internal lowering error: {0}")]
    Internal(String),
}

fn internal<T>(msg: impl Into<String>) -> Result<T, LowerError> {
    Err(LowerError::Internal(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CompileError {
    #[error("no function named @{0}")]
    UnknownFunction(String),
    #[error("@{function} takes {expected} arguments, got {got} types")]
    Signature { function: String, expected: usize, got: usize },
    #[error(transparent)]
    Inline(#[from] InlineError),
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error("not offloadable:\n{0}")]
    Offload(OffloadReport),
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error(transparent)]
    Lower(#[from] LowerError),
    #[error("compiled module is invalid: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<HloDiagnostic>),
}

impl CompileError {
    /// Failures that indicate a compiler defect rather than bad input.
    pub fn is_internal(&self) -> bool {
        matches!(self, CompileError::Lower(_) | CompileError::Invalid(_))
    }
}

/// Everything produced on the way to an HLO module.
#[derive(Debug, Clone)]
pub struct Compiled {
    pub module: HloModule,
    /// The entry function after inlining.
    pub function: Function,
    pub inference: InferenceResult,
    pub regions: RegionTree,
}

/// Compiles `entry` for arguments of the given types.
pub fn compile(module: &Module, entry: &str, arg_types: &[ValueType]) -> Result<HloModule, CompileError> {
    compile_full(module, entry, arg_types).map(|c| c.module)
}

pub fn compile_full(module: &Module, entry: &str, arg_types: &[ValueType]) -> Result<Compiled, CompileError> {
    let f = inline_calls(module, entry)?.ok_or_else(|| CompileError::UnknownFunction(entry.to_string()))?;
    if f.params.len() != arg_types.len() {
        return Err(CompileError::Signature { function: entry.to_string(), expected: f.params.len(), got: arg_types.len() });
    }
    let args: Vec<AbstractValue> = arg_types.iter().map(AbstractValue::of_type).collect();
    compile_function(module, f, &args)
}

/// Compiles a function that need not belong to `module` (calls and
/// callbacks resolve against `module`).
pub fn compile_function(module: &Module, f: Function, args: &[AbstractValue]) -> Result<Compiled, CompileError> {
    let inference = infer(&f, args, module)?;
    let report = check_offloadable(module, &f, &inference);
    if !report.offloadable() {
        return Err(CompileError::Offload(report));
    }
    let regions = detect_regions(&f, &inference)?;
    let hlo = lower_function(module, &f, &inference, &regions)?;
    let diags = validate_hlo(&hlo);
    if !diags.is_empty() {
        return Err(CompileError::Invalid(diags));
    }
    Ok(Compiled { module: hlo, function: f, inference, regions })
}

/// Declared parameter types of `name`, if all are present.
pub fn declared_signature(module: &Module, name: &str) -> Option<Vec<ValueType>> {
    module.function(name)?.params.iter().map(|p| p.ty.clone()).collect()
}

/// Instructions of one computation, named `c<K><mnemonic><J>` with `J`
/// counting instructions in creation order.
struct CompBuilder {
    k: usize,
    counter: usize,
    insts: Vec<HloInstruction>,
}

impl CompBuilder {
    fn new(k: usize) -> Self {
        CompBuilder { k, counter: 0, insts: Vec::new() }
    }

    fn push(&mut self, op: HloOp, operands: Vec<usize>, shape: Shape) -> usize {
        let name = format!("c{}{}{}", self.k, op.mnemonic(), self.counter);
        self.counter += 1;
        self.insts.push(HloInstruction { name, shape, op, operands });
        self.insts.len() - 1
    }

    fn shape(&self, i: usize) -> &Shape {
        &self.insts[i].shape
    }

    /// Orders instructions as a post-order walk from the root (unreachable
    /// ones last).
    fn finish(self, name: String, root: usize) -> HloComputation {
        let c = HloComputation { name, instructions: self.insts, root };
        let order = canonical_order(&c);
        let mut pos = vec![0; order.len()];
        for (k, &i) in order.iter().enumerate() {
            pos[i] = k;
        }
        let mut slots: Vec<Option<HloInstruction>> = c.instructions.into_iter().map(Some).collect();
        let instructions = order
            .iter()
            .map(|&i| {
                let mut inst = slots[i].take().expect("each instruction once");
                inst.operands.iter_mut().for_each(|o| *o = pos[*o]);
                inst
            })
            .collect();
        HloComputation { name: c.name, instructions, root: pos[root] }
    }
}

/// Live-ins of a frame, read from its tuple parameter.
struct Capture {
    param: usize,
    /// Tuple index of the first captured value (loop state puts carried
    /// values first).
    base: usize,
    list: Vec<ValueId>,
}

struct Frame {
    b: CompBuilder,
    slot: CompId,
    env: HashMap<ValueId, usize>,
    gtes: HashMap<(usize, usize), usize>,
    capture: Option<Capture>,
}

impl Frame {
    fn new(slot: CompId) -> Self {
        Frame { b: CompBuilder::new(slot.0), slot, env: HashMap::new(), gtes: HashMap::new(), capture: None }
    }

    /// A frame whose parameter 0 is a tuple of live-ins; the parameter's
    /// shape is fixed once all captures are known.
    fn with_capture(slot: CompId, base: usize) -> Self {
        let mut f = Frame::new(slot);
        let param = f.b.push(HloOp::Parameter { index: 0, shape: Shape::Tuple(Vec::new()) }, Vec::new(), Shape::Tuple(Vec::new()));
        f.capture = Some(Capture { param, base, list: Vec::new() });
        f
    }

    fn set_param_shape(&mut self, shape: Shape) {
        let Some(c) = &self.capture else { return };
        let inst = &mut self.b.insts[c.param];
        inst.shape = shape.clone();
        inst.op = HloOp::Parameter { index: 0, shape };
    }
}

/// Lowering state of one frontend function: its inference facts and the
/// stack of computations being built for it.
struct FnLowering<'a> {
    f: &'a Function,
    res: &'a InferenceResult,
    frames: Vec<Frame>,
}

impl FnLowering<'_> {
    fn top(&mut self) -> &mut Frame {
        self.frames.last_mut().expect("a frame is open")
    }

    fn value_shape(&self, v: ValueId) -> Result<Shape, LowerError> {
        match self.res.value(v).value_type().and_then(|t| t.to_shape()) {
            Some(s) => Ok(s),
            None => internal(format!("%{} has no runtime shape ({})", self.f.value_name(v), self.res.value(v))),
        }
    }
}

struct Lowerer<'m> {
    module: &'m Module,
    comps: Vec<Option<HloComputation>>,
    callbacks: HashMap<(FnRef, Vec<ElementType>), CompId>,
}

impl<'m> Lowerer<'m> {
    fn reserve(&mut self) -> CompId {
        self.comps.push(None);
        CompId(self.comps.len() - 1)
    }

    /// Stores a finished frame; computations other than the entry are
    /// named `c<K>`.
    fn install(&mut self, frame: Frame, root: usize) -> CompId {
        let slot = frame.slot;
        self.comps[slot.0] = Some(frame.b.finish(format!("c{}", slot.0), root));
        slot
    }

    fn sig(&self, c: CompId) -> Option<crate::hlo::CompSig> {
        self.comps.get(c.0)?.as_ref().map(HloComputation::signature)
    }

    /// Adds an instruction to the innermost frame, deriving its shape.
    fn emit(&mut self, fl: &mut FnLowering, op: HloOp, operands: Vec<usize>) -> Result<usize, LowerError> {
        let frame = fl.top();
        let shapes: Vec<&Shape> = operands.iter().map(|&o| frame.b.shape(o)).collect();
        let shape = shape_infer(&op, &shapes, &|c| self.sig(c)).map_err(|e| LowerError::Internal(e.to_string()))?;
        Ok(fl.top().b.push(op, operands, shape))
    }

    fn constant(&mut self, fl: &mut FnLowering, v: Value) -> usize {
        let shape = v.shape();
        fl.top().b.push(HloOp::Constant(v), Vec::new(), shape)
    }

    fn gte(&mut self, fl: &mut FnLowering, tuple: usize, index: usize) -> Result<usize, LowerError> {
        if let Some(&i) = fl.top().gtes.get(&(tuple, index)) {
            return Ok(i);
        }
        let i = self.emit(fl, HloOp::GetTupleElement { index }, vec![tuple])?;
        fl.top().gtes.insert((tuple, index), i);
        Ok(i)
    }

    /// HLO instruction holding `v` in the innermost frame: an existing
    /// binding, a materialized constant, or a new capture.
    fn lookup(&mut self, fl: &mut FnLowering, v: ValueId) -> Result<usize, LowerError> {
        if let Some(&i) = fl.top().env.get(&v) {
            return Ok(i);
        }
        if let Some(c) = fl.res.value(v).const_value() {
            let i = self.constant(fl, c);
            fl.top().env.insert(v, i);
            return Ok(i);
        }
        let shape = fl.value_shape(v)?;
        let frame = fl.top();
        let Some(cap) = &mut frame.capture else {
            return internal(format!("%{} is not available in {}", fl.f.value_name(v), fl.f.name));
        };
        let k = match cap.list.iter().position(|&x| x == v) {
            Some(k) => k,
            None => {
                cap.list.push(v);
                cap.list.len() - 1
            }
        };
        let (param, index) = (cap.param, cap.base + k);
        let i = frame.b.push(HloOp::GetTupleElement { index }, vec![param], shape);
        frame.gtes.insert((param, index), i);
        frame.env.insert(v, i);
        Ok(i)
    }

    fn lower_inst(&mut self, fl: &mut FnLowering, kind: &InstKind, result: ValueId) -> Result<(), LowerError> {
        if kind.is_phi() || fl.res.value(result).is_static() {
            return Ok(());
        }
        let i = match kind {
            InstKind::Const(_) | InstKind::Phi(_) => return Ok(()),
            InstKind::Call { builtin, args } => self.lower_call(fl, builtin, args)?,
            InstKind::MakeTuple(elems) => {
                let ops = elems.iter().map(|e| self.lookup(fl, *e)).collect::<Result<Vec<_>, _>>()?;
                self.emit(fl, HloOp::Tuple, ops)?
            }
            InstKind::GetElement { tuple, index } => {
                let t = self.lookup(fl, *tuple)?;
                self.gte(fl, t, *index)?
            }
            InstKind::CallFn { .. } => return internal(format!("call at %{} was not inlined", fl.f.value_name(result))),
        };
        fl.top().env.insert(result, i);
        Ok(())
    }
}

/// Lowers `f` (already inferred and structurized) into a module whose entry
/// computation has one parameter per function parameter.
pub fn lower_function(module: &Module, f: &Function, res: &InferenceResult, tree: &RegionTree) -> Result<HloModule, LowerError> {
    let mut lw = Lowerer { module, comps: Vec::new(), callbacks: HashMap::new() };
    let slot = lw.reserve();
    let mut fl = FnLowering { f, res, frames: vec![Frame::new(slot)] };
    for (index, p) in f.params.iter().enumerate() {
        let shape = fl.value_shape(p.value)?;
        let i = fl.top().b.push(HloOp::Parameter { index, shape: shape.clone() }, Vec::new(), shape);
        fl.top().env.insert(p.value, i);
    }
    let out = lw.lower_seq(&mut fl, &tree.body, control::Arrival::None)?;
    let frame = fl.frames.pop().expect("entry frame");
    lw.install(frame, out[0]);
    lw.comps[0].as_mut().expect("entry").name = f.name.clone();
    let computations = lw.comps.into_iter().map(|c| c.expect("every reserved computation is built")).collect();
    Ok(HloModule { name: f.name.clone(), computations, entry: CompId(0) })
}
