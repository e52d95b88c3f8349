use std::fmt;

use serde::Serialize;

use super::{callback_mode, AbstractValue, CallbackMode, InferenceResult, Inferencer};
use crate::builtins::{lookup, BuiltinKind};
use crate::frontend::{inline_calls, FnRef, Function, InstKind, Module, Terminator, ValueId};
use crate::types::TensorType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OffloadReason {
    UnresolvedStaticOperand,
    UninferredShape,
    UnsupportedBuiltin,
    DynamicCallTarget,
}

impl fmt::Display for OffloadReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OffloadReason::UnresolvedStaticOperand => "unresolved-static-operand",
            OffloadReason::UninferredShape => "uninferred-shape",
            OffloadReason::UnsupportedBuiltin => "unsupported-builtin",
            OffloadReason::DynamicCallTarget => "dynamic-call-target",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OffloadFailure {
    pub function: String,
    /// Name of the offending value (for a branch, its condition).
    pub value: String,
    pub reason: OffloadReason,
    pub detail: String,
}

impl fmt::Display for OffloadFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "@{} %{}: {}: {}", self.function, self.value, self.reason, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct OffloadReport {
    pub failures: Vec<OffloadFailure>,
}

impl OffloadReport {
    pub fn offloadable(&self) -> bool {
        self.failures.is_empty()
    }
}

impl fmt::Display for OffloadReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, x) in self.failures.iter().enumerate() {
            if i > 0 {
                f.write_str("\n")?;
            }
            write!(f, "{x}")?;
        }
        Ok(())
    }
}

struct Checker<'m> {
    module: &'m Module,
    failures: Vec<OffloadFailure>,
    depth: usize,
    /// Values whose failure was already reported, so that dependents stay
    /// quiet.
    tainted: Vec<(String, ValueId)>,
}

impl Checker<'_> {
    fn fail(&mut self, f: &Function, v: ValueId, reason: OffloadReason, detail: impl Into<String>) {
        self.tainted.push((f.name.clone(), v));
        self.failures.push(OffloadFailure {
            function: f.name.clone(),
            value: f.value_name(v).to_string(),
            reason,
            detail: detail.into(),
        });
    }

    fn is_tainted(&self, f: &Function, v: ValueId) -> bool {
        self.tainted.iter().any(|(n, t)| *n == f.name && *t == v)
    }

    fn check(&mut self, f: &Function, res: &InferenceResult) {
        for p in &f.params {
            if !res.value(p.value).is_runtime_typed() {
                self.fail(f, p.value, OffloadReason::UninferredShape, format!("parameter is {}", res.value(p.value)));
            }
        }
        for b in f.block_ids() {
            if !res.reachable[b.index()] {
                continue;
            }
            let block = f.block(b);
            for inst in &block.insts {
                let v = inst.result;
                let out = res.value(v);
                if inst.kind.uses().iter().any(|u| self.is_tainted(f, *u)) {
                    self.tainted.push((f.name.clone(), v));
                    continue;
                }
                match &inst.kind {
                    InstKind::Const(_) | InstKind::Phi(_) | InstKind::MakeTuple(_) | InstKind::GetElement { .. } => {
                        if !out.is_runtime_typed() && !out.is_static() {
                            self.fail(f, v, OffloadReason::UninferredShape, format!("inferred {out}"));
                        }
                    }
                    InstKind::CallFn { callee, .. } => {
                        let target = match callee {
                            crate::frontend::Callee::Static(r) => format!("@{}", r.name),
                            crate::frontend::Callee::Value(t) => format!("%{}", f.value_name(*t)),
                        };
                        self.fail(f, v, OffloadReason::DynamicCallTarget, format!("call through {target} was not inlined"));
                    }
                    InstKind::Call { builtin, args } => {
                        let Some(bi) = lookup(builtin) else {
                            self.fail(f, v, OffloadReason::UnsupportedBuiltin, format!("unknown builtin `{builtin}`"));
                            continue;
                        };
                        let mut operand_failure = false;
                        for (i, a) in args.iter().enumerate() {
                            let av = res.value(*a);
                            if bi.is_static(i) {
                                if !av.is_static() {
                                    operand_failure = true;
                                    self.fail(
                                        f,
                                        v,
                                        OffloadReason::UnresolvedStaticOperand,
                                        format!("operand {i} of {builtin} (%{}) is {av}", f.value_name(*a)),
                                    );
                                }
                            } else if !av.is_runtime_typed() {
                                operand_failure = true;
                                self.fail(
                                    f,
                                    v,
                                    OffloadReason::UninferredShape,
                                    format!("operand {i} of {builtin} (%{}) is {av}", f.value_name(*a)),
                                );
                            }
                        }
                        if operand_failure {
                            continue;
                        }
                        if !out.is_runtime_typed() {
                            self.fail(f, v, OffloadReason::UninferredShape, format!("{builtin} result is {out}"));
                            continue;
                        }
                        self.check_callbacks(f, v, bi.kind, args, res);
                    }
                }
            }
            if block.term.uses().iter().any(|u| self.is_tainted(f, *u)) {
                continue;
            }
            match &block.term {
                Terminator::Br { cond, .. } => {
                    let ok = res.value(*cond).tensor_type().is_some_and(|t| t.is_scalar() && t.elem == crate::types::ElementType::Pred);
                    if !ok {
                        self.fail(f, *cond, OffloadReason::UninferredShape, format!("branch condition is {}", res.value(*cond)));
                    }
                }
                Terminator::Return(r) => {
                    if !res.value(*r).is_runtime_typed() {
                        self.fail(f, *r, OffloadReason::UninferredShape, format!("returned value is {}", res.value(*r)));
                    }
                }
                Terminator::Jmp(_) => {}
            }
        }
    }

    /// Callbacks must be straight-line and themselves offloadable at the
    /// scalar types they are applied to.
    fn check_callbacks(&mut self, f: &Function, v: ValueId, kind: BuiltinKind, args: &[ValueId], res: &InferenceResult) {
        let scalar = |a: &ValueId| res.value(*a).tensor_type().map(|t| AbstractValue::Typed(TensorType::scalar(t.elem)));
        let fnref = |i: usize| match res.value(args[i]) {
            AbstractValue::FnRef(r) => Some(r.clone()),
            _ => None,
        };
        let uses: Vec<(FnRef, Vec<AbstractValue>)> = match kind {
            BuiltinKind::Broadcast => {
                vec![(fnref(0).unwrap(), args[1..].iter().map(|a| scalar(a).unwrap()).collect())]
            }
            BuiltinKind::MapReduce => {
                let x = scalar(&args[2]).unwrap();
                let mut inf = Inferencer::new(self.module);
                let mapped = inf.callback(&fnref(0).unwrap(), std::slice::from_ref(&x)).unwrap_or(AbstractValue::Top);
                vec![(fnref(0).unwrap(), vec![x]), (fnref(1).unwrap(), vec![mapped.clone(), mapped])]
            }
            BuiltinKind::ReduceInit => {
                let x = scalar(&args[1]).unwrap();
                vec![(fnref(0).unwrap(), vec![x.clone(), x])]
            }
            _ => Vec::new(),
        };
        for (r, scalars) in uses {
            self.check_callback(f, v, &r, &scalars);
        }
    }

    fn check_callback(&mut self, f: &Function, v: ValueId, r: &FnRef, scalars: &[AbstractValue]) {
        let Some(mode) = callback_mode(self.module, r, scalars.len()) else {
            self.fail(f, v, OffloadReason::UnsupportedBuiltin, format!("callback @{} cannot take {} arguments", r.name, scalars.len()));
            return;
        };
        if mode == CallbackMode::Builtin {
            return;
        }
        if self.depth >= super::DEFAULT_DEPTH_LIMIT {
            self.fail(f, v, OffloadReason::UnsupportedBuiltin, format!("callback @{} nests too deeply", r.name));
            return;
        }
        let Ok(Some(body)) = inline_calls(self.module, &r.name) else {
            self.fail(f, v, OffloadReason::UnsupportedBuiltin, format!("callback @{} cannot be inlined", r.name));
            return;
        };
        if !body.is_straight_line() {
            self.fail(f, v, OffloadReason::UnsupportedBuiltin, format!("callback @{} has control flow", r.name));
            return;
        }
        let mut cargs: Vec<AbstractValue> = r.captures.iter().map(|c| AbstractValue::of_tensor(c.clone())).collect();
        match mode {
            CallbackMode::Aggregate => cargs.push(AbstractValue::Tuple(scalars.to_vec())),
            _ => cargs.extend_from_slice(scalars),
        }
        let Ok(cres) = Inferencer::new(self.module).infer_function(&body, &cargs) else {
            self.fail(f, v, OffloadReason::UninferredShape, format!("callback @{} fails inference", r.name));
            return;
        };
        let scalar_result = cres.returned.tensor_type().is_some_and(TensorType::is_scalar);
        if !scalar_result {
            self.fail(f, v, OffloadReason::UninferredShape, format!("callback @{} returns {}", r.name, cres.returned));
            return;
        }
        self.depth += 1;
        self.check(&body, &cres);
        self.depth -= 1;
    }
}

/// Checks that every reachable instruction of `f` can be lowered: static
/// operands are constants, dynamic operands and results have known shapes,
/// builtins and callbacks are supported and no call remains.
pub fn check_offloadable(module: &Module, f: &Function, res: &InferenceResult) -> OffloadReport {
    let mut c = Checker { module, failures: Vec::new(), depth: 0, tainted: Vec::new() };
    c.check(f, res);
    OffloadReport { failures: c.failures }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_program;
    use crate::infer::infer;
    use crate::types::ElementType;

    fn report(src: &str, args: Vec<AbstractValue>) -> OffloadReport {
        let m = parse_program(src).unwrap();
        let f = inline_calls(&m, &m.functions[0].name).unwrap().unwrap();
        let r = infer(&f, &args, &m).unwrap();
        check_offloadable(&m, &f, &r)
    }

    fn typed(elem: ElementType, dims: &[usize]) -> AbstractValue {
        AbstractValue::Typed(TensorType::new(elem, dims.to_vec()))
    }

    #[test]
    fn dynamic_permutation() {
        let r = report(
            "func @f(%x: f32[3,4], %p: s64[2]) { bb0: %y = call transpose(%x, %p) return %y }",
            vec![typed(ElementType::F32, &[3, 4]), typed(ElementType::S64, &[2])],
        );
        assert_eq!(r.failures.len(), 1, "{r}");
        assert_eq!(r.failures[0].reason, OffloadReason::UnresolvedStaticOperand);
        assert_eq!(r.failures[0].value, "y");
    }

    #[test]
    fn unknown_builtin() {
        let r = report("func @f(%x: f32[]) { bb0: %y = call foo(%x) return %y }", vec![typed(ElementType::F32, &[])]);
        assert_eq!(r.failures[0].reason, OffloadReason::UnsupportedBuiltin);
    }

    #[test]
    fn callback_with_branch() {
        let r = report(
            "func @f(%x: f32[4]) { bb0: %g = const fn @g %y = call broadcast(%g, %x) return %y }
             func @g(%a: f32[]) { bb0: %z = const f32[] 0 %c = call lt(%a, %z) br %c, bb1, bb2
                bb1: jmp bb2 bb2: return %a }",
            vec![typed(ElementType::F32, &[4])],
        );
        assert_eq!(r.failures.len(), 1, "{r}");
        assert!(r.failures[0].detail.contains("control flow"));
    }
}
