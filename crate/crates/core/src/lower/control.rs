//! Lowering of region trees: if-regions become `conditional`s whose arms
//! return the merge φs, loops become `while`s over a state tuple of the
//! carried φs followed by the loop's live-ins.

use super::{internal, FnLowering, Frame, LowerError, Lowerer};
use crate::frontend::{BlockId, InstKind, ValueId};
use crate::hlo::{ElemOp, HloOp};
use crate::structurize::{IfRegion, Item, LoopRegion, Seq, SeqEnd};
use crate::types::Shape;
use crate::value::{TensorValue, Value};

/// How control reaches the next item of a sequence, which decides where its
/// φs come from.
#[derive(Debug, Clone)]
pub(super) enum Arrival {
    None,
    Edge(BlockId),
    /// Results of the preceding if-region, one per non-static φ.
    Values(Vec<usize>),
}

impl Lowerer<'_> {
    /// φs of `b` that need a runtime value, with their incoming lists.
    fn dynamic_phis<'f>(&self, fl: &FnLowering<'f>, b: BlockId) -> Vec<(ValueId, &'f [(BlockId, ValueId)])> {
        fl.f.block(b)
            .insts
            .iter()
            .filter_map(|i| match &i.kind {
                InstKind::Phi(inc) if !fl.res.value(i.result).is_static() => Some((i.result, inc.as_slice())),
                _ => None,
            })
            .collect()
    }

    /// Values flowing into the dynamic φs of `to` along `from -> to`.
    fn incoming(&mut self, fl: &mut FnLowering, from: BlockId, to: BlockId) -> Result<Vec<usize>, LowerError> {
        let phis = self.dynamic_phis(fl, to);
        let mut out = Vec::with_capacity(phis.len());
        for (phi, inc) in phis {
            let Some(&(_, v)) = inc.iter().find(|(p, _)| *p == from) else {
                return internal(format!("φ %{} has no incoming value from {}", fl.f.value_name(phi), fl.f.block(from).label));
            };
            out.push(self.lookup(fl, v)?);
        }
        Ok(out)
    }

    fn arrival_values(&mut self, fl: &mut FnLowering, b: BlockId, arrival: &Arrival) -> Result<Vec<usize>, LowerError> {
        let n = self.dynamic_phis(fl, b).len();
        let vals = match arrival {
            Arrival::Edge(p) => self.incoming(fl, *p, b)?,
            Arrival::Values(v) => v.clone(),
            Arrival::None => Vec::new(),
        };
        if vals.len() != n {
            return internal(format!("{} expects {n} φ values, got {}", fl.f.block(b).label, vals.len()));
        }
        Ok(vals)
    }

    fn lower_block(&mut self, fl: &mut FnLowering, b: BlockId) -> Result<(), LowerError> {
        for inst in &fl.f.block(b).insts {
            self.lower_inst(fl, &inst.kind, inst.result)?;
        }
        Ok(())
    }

    /// Lowers `seq` into the innermost frame and returns what its end
    /// produces: the returned value, or the φ inputs of the block it jumps
    /// to.
    pub(super) fn lower_seq(&mut self, fl: &mut FnLowering, seq: &Seq, mut arrival: Arrival) -> Result<Vec<usize>, LowerError> {
        let mut last = Vec::new();
        for item in &seq.items {
            match item {
                Item::Block(b) => {
                    let vals = self.arrival_values(fl, *b, &arrival)?;
                    let phis = self.dynamic_phis(fl, *b);
                    for ((phi, _), i) in phis.into_iter().zip(vals) {
                        fl.top().env.insert(phi, i);
                    }
                    self.lower_block(fl, *b)?;
                    arrival = Arrival::Edge(*b);
                }
                Item::If(r) => {
                    last = self.lower_if(fl, r)?;
                    arrival = Arrival::Values(last.clone());
                }
                Item::Loop(l) => {
                    self.lower_loop(fl, l, &arrival)?;
                    arrival = Arrival::Edge(l.header);
                }
            }
        }
        match seq.end {
            SeqEnd::Return(v) => Ok(vec![self.lookup(fl, v)?]),
            SeqEnd::Goto { from, to } => self.incoming(fl, from, to),
            SeqEnd::Inner => Ok(last),
        }
    }

    /// Builds one branch arm as a computation over a tuple of its live-ins.
    fn lower_arm(&mut self, fl: &mut FnLowering, arm: &Seq, branch: BlockId) -> Result<(crate::hlo::CompId, Vec<ValueId>, usize), LowerError> {
        let slot = self.reserve();
        fl.frames.push(Frame::with_capture(slot, 0));
        let out = self.lower_seq(fl, arm, Arrival::Edge(branch))?;
        let root = match out.len() {
            1 => out[0],
            _ => self.emit(fl, HloOp::Tuple, out.clone())?,
        };
        let mut frame = fl.frames.pop().expect("arm frame");
        let captures = frame.capture.as_ref().map(|c| c.list.clone()).unwrap_or_default();
        let shapes = captures.iter().map(|v| fl.value_shape(*v)).collect::<Result<Vec<_>, _>>()?;
        frame.set_param_shape(Shape::Tuple(shapes));
        Ok((self.install(frame, root), captures, out.len()))
    }

    fn lower_if(&mut self, fl: &mut FnLowering, r: &IfRegion) -> Result<Vec<usize>, LowerError> {
        let cond = self.lookup(fl, r.cond)?;
        let (true_comp, t_caps, k) = self.lower_arm(fl, &r.then_arm, r.branch)?;
        let (false_comp, f_caps, k2) = self.lower_arm(fl, &r.else_arm, r.branch)?;
        if k != k2 {
            return internal(format!("arms of the branch in {} produce {k} and {k2} values", fl.f.block(r.branch).label));
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut ops = vec![cond];
        for caps in [t_caps, f_caps] {
            let vals = caps.iter().map(|v| self.lookup(fl, *v)).collect::<Result<Vec<_>, _>>()?;
            ops.push(self.emit(fl, HloOp::Tuple, vals)?);
        }
        let c = self.emit(fl, HloOp::Conditional { true_comp, false_comp }, ops)?;
        if k == 1 {
            return Ok(vec![c]);
        }
        (0..k).map(|i| self.gte(fl, c, i)).collect()
    }

    /// Opens a frame over the loop state and binds the carried φs to its
    /// leading elements.
    fn open_state_frame(&mut self, fl: &mut FnLowering, carried: &[ValueId], captures: Vec<ValueId>) -> Result<(), LowerError> {
        let slot = self.reserve();
        let mut frame = Frame::with_capture(slot, carried.len());
        if let Some(c) = &mut frame.capture {
            c.list = captures;
        }
        let param = frame.capture.as_ref().map(|c| c.param).expect("state frame has a parameter");
        for (index, v) in carried.iter().enumerate() {
            let shape = fl.value_shape(*v)?;
            let g = frame.b.push(HloOp::GetTupleElement { index }, vec![param], shape);
            frame.gtes.insert((param, index), g);
            frame.env.insert(*v, g);
        }
        fl.frames.push(frame);
        Ok(())
    }

    fn lower_loop(&mut self, fl: &mut FnLowering, l: &LoopRegion, arrival: &Arrival) -> Result<(), LowerError> {
        let init = self.arrival_values(fl, l.header, arrival)?;
        let carried: Vec<ValueId> = self.dynamic_phis(fl, l.header).into_iter().map(|(v, _)| v).collect();

        self.open_state_frame(fl, &carried, Vec::new())?;
        self.lower_block(fl, l.header)?;
        let mut c = self.lookup(fl, l.cond)?;
        if !l.continue_on {
            let t = self.constant(fl, Value::Tensor(TensorValue::scalar_pred(true)));
            let f = self.constant(fl, Value::Tensor(TensorValue::scalar_pred(false)));
            c = self.emit(fl, HloOp::Elementwise(ElemOp::Select), vec![c, f, t])?;
        }
        let mut cond_frame = fl.frames.pop().expect("condition frame");
        let cond_caps = cond_frame.capture.as_ref().map(|c| c.list.clone()).unwrap_or_default();

        self.open_state_frame(fl, &carried, cond_caps)?;
        self.lower_block(fl, l.header)?;
        let mut next = self.lower_seq(fl, &l.body, Arrival::Edge(l.header))?;
        if next.len() != carried.len() {
            return internal(format!("loop at {} carries {} values, body produces {}", fl.f.block(l.header).label, carried.len(), next.len()));
        }
        let (param, ncap) = {
            let cap = fl.top().capture.as_ref().expect("body frame has a parameter");
            (cap.param, cap.list.len())
        };
        for i in 0..ncap {
            next.push(self.gte(fl, param, carried.len() + i)?);
        }
        let root = self.emit(fl, HloOp::Tuple, next)?;
        let mut body_frame = fl.frames.pop().expect("body frame");
        let captures = body_frame.capture.as_ref().map(|c| c.list.clone()).unwrap_or_default();

        let state = carried
            .iter()
            .chain(&captures)
            .map(|v| fl.value_shape(*v))
            .collect::<Result<Vec<_>, _>>()?;
        cond_frame.set_param_shape(Shape::Tuple(state.clone()));
        body_frame.set_param_shape(Shape::Tuple(state));
        let condition = self.install(cond_frame, c);
        let body = self.install(body_frame, root);

        let mut vals = init;
        for v in &captures {
            vals.push(self.lookup(fl, *v)?);
        }
        let t = self.emit(fl, HloOp::Tuple, vals)?;
        let w = self.emit(fl, HloOp::While { condition, body }, vec![t])?;
        for (i, v) in carried.iter().enumerate() {
            let g = self.gte(fl, w, i)?;
            fl.top().env.insert(*v, g);
        }
        self.lower_block(fl, l.header)
    }
}
