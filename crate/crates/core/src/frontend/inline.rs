use std::collections::HashMap;

use super::ast::*;
use crate::builtins;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InlineError {
    #[error("@{caller} calls @{callee} with {got} arguments, expected {expected}")]
    Arity { caller: String, callee: String, expected: usize, got: usize },
}

/// Static callee of a `call_fn`, if it can be read off the instruction or a
/// `const fn` definition.
fn resolve_callee(consts: &HashMap<ValueId, FnRef>, callee: &Callee) -> Option<FnRef> {
    match callee {
        Callee::Static(r) => Some(r.clone()),
        Callee::Value(v) => consts.get(v).cloned(),
    }
}

fn fn_consts(f: &Function) -> HashMap<ValueId, FnRef> {
    let mut out = HashMap::new();
    for b in &f.blocks {
        for inst in &b.insts {
            if let InstKind::Const(Literal::Fn(r)) = &inst.kind {
                out.insert(inst.result, r.clone());
            }
        }
    }
    out
}

/// Replaces every non-recursive `call_fn` with a statically known target by
/// the callee's body. Calls naming a builtin (with no user function of that
/// name) become builtin calls. Recursive and unresolved calls are kept.
pub fn inline_calls(m: &Module, name: &str) -> Result<Option<Function>, InlineError> {
    let Some(f) = m.function(name) else { return Ok(None) };
    inline_rec(m, f, &mut vec![name.to_string()]).map(Some)
}

fn inline_rec(m: &Module, f: &Function, stack: &mut Vec<String>) -> Result<Function, InlineError> {
    let mut f = f.clone();
    let mut skip: Vec<ValueId> = Vec::new();
    loop {
        let consts = fn_consts(&f);
        let mut site = None;
        'search: for (bi, b) in f.blocks.iter().enumerate() {
            for (ii, inst) in b.insts.iter().enumerate() {
                if let InstKind::CallFn { callee, .. } = &inst.kind {
                    if skip.contains(&inst.result) {
                        continue;
                    }
                    match resolve_callee(&consts, callee) {
                        Some(r) => {
                            site = Some((bi, ii, r));
                            break 'search;
                        }
                        None => skip.push(inst.result),
                    }
                }
            }
        }
        let Some((bi, ii, callee)) = site else { return Ok(f) };
        let result = f.blocks[bi].insts[ii].result;
        let args = match &f.blocks[bi].insts[ii].kind {
            InstKind::CallFn { args, .. } => args.clone(),
            _ => unreachable!(),
        };
        match m.function(&callee.name) {
            None => {
                if builtins::lookup(&callee.name).is_some() {
                    call_builtin(&mut f, bi, ii, &callee, args);
                } else {
                    skip.push(result);
                }
            }
            Some(_) if stack.contains(&callee.name) => skip.push(result),
            Some(g) => {
                let expected = g.params.len();
                let got = callee.captures.len() + args.len();
                if expected != got {
                    return Err(InlineError::Arity {
                        caller: f.name.clone(),
                        callee: g.name.clone(),
                        expected,
                        got,
                    });
                }
                stack.push(g.name.clone());
                let body = inline_rec(m, g, stack)?;
                stack.pop();
                splice(&mut f, bi, ii, &body, &callee, &args);
            }
        }
    }
}

fn call_builtin(f: &mut Function, bi: usize, ii: usize, callee: &FnRef, args: Vec<ValueId>) {
    let span = f.blocks[bi].insts[ii].span;
    let mut all = Vec::new();
    let mut new_insts = Vec::new();
    for c in &callee.captures {
        let v = f.fresh_value("cap");
        new_insts.push(Inst { result: v, kind: InstKind::Const(Literal::Tensor(c.clone())), span });
        all.push(v);
    }
    all.extend(args);
    f.blocks[bi].insts[ii].kind = InstKind::Call { builtin: callee.name.clone(), args: all };
    let at = ii;
    for (k, inst) in new_insts.into_iter().enumerate() {
        f.blocks[bi].insts.insert(at + k, inst);
    }
}

fn substitute(f: &mut Function, from: ValueId, to: ValueId) {
    let sub = |v: ValueId| if v == from { to } else { v };
    for b in &mut f.blocks {
        for inst in &mut b.insts {
            inst.kind.map_uses(sub);
        }
        match &mut b.term {
            Terminator::Br { cond, .. } => *cond = sub(*cond),
            Terminator::Return(v) => *v = sub(*v),
            Terminator::Jmp(_) => {}
        }
    }
}

fn fresh_label(f: &Function, hint: &str) -> String {
    let mut label = hint.to_string();
    let mut k = 0;
    while f.blocks.iter().any(|b| b.label == label) {
        k += 1;
        label = format!("{hint}.{k}");
    }
    label
}

fn splice(f: &mut Function, bi: usize, ii: usize, g: &Function, callee: &FnRef, args: &[ValueId]) {
    let call = f.blocks[bi].insts[ii].clone();
    let span = call.span;

    // Map callee values into the caller.
    let mut vmap: HashMap<ValueId, ValueId> = HashMap::new();
    let mut prologue = Vec::new();
    for (k, p) in g.params.iter().enumerate() {
        if k < callee.captures.len() {
            let v = f.fresh_value(&format!("{}.{}", g.name, g.value_name(p.value)));
            prologue.push(Inst {
                result: v,
                kind: InstKind::Const(Literal::Tensor(callee.captures[k].clone())),
                span,
            });
            vmap.insert(p.value, v);
        } else {
            vmap.insert(p.value, args[k - callee.captures.len()]);
        }
    }
    for b in &g.blocks {
        for inst in &b.insts {
            let v = f.fresh_value(&format!("{}.{}", g.name, g.value_name(inst.result)));
            vmap.insert(inst.result, v);
        }
    }
    let mapv = |v: ValueId| vmap.get(&v).copied().unwrap_or(v);
    let copy_inst = |inst: &Inst| {
        let mut kind = inst.kind.clone();
        kind.map_uses(mapv);
        Inst { result: mapv(inst.result), kind, span }
    };

    if g.is_straight_line() {
        let mut body: Vec<Inst> = prologue;
        body.extend(g.blocks[0].insts.iter().map(copy_inst));
        let Terminator::Return(ret) = g.blocks[0].term else { unreachable!() };
        let ret = mapv(ret);
        let insts = &mut f.blocks[bi].insts;
        insts.splice(ii..=ii, body);
        substitute(f, call.result, ret);
        return;
    }

    // Multi-block callee: split the caller block around the call.
    let base = f.blocks.len() as u32;
    let cont = BlockId(base + g.blocks.len() as u32);
    let bmap = |b: BlockId| BlockId(base + b.0);
    let caller_label = f.blocks[bi].label.clone();
    let mut new_blocks = Vec::new();
    let mut returns = Vec::new();
    for (k, b) in g.blocks.iter().enumerate() {
        let insts: Vec<Inst> = b
            .insts
            .iter()
            .map(|inst| {
                let mut i = copy_inst(inst);
                if let InstKind::Phi(incoming) = &mut i.kind {
                    for (p, _) in incoming.iter_mut() {
                        *p = bmap(*p);
                    }
                }
                i
            })
            .collect();
        let term = match &b.term {
            Terminator::Br { cond, then_bb, else_bb } => {
                Terminator::Br { cond: mapv(*cond), then_bb: bmap(*then_bb), else_bb: bmap(*else_bb) }
            }
            Terminator::Jmp(t) => Terminator::Jmp(bmap(*t)),
            Terminator::Return(v) => {
                returns.push((BlockId(base + k as u32), mapv(*v)));
                Terminator::Jmp(cont)
            }
        };
        let label = fresh_label(f, &format!("{caller_label}.{}.{}", g.name, b.label));
        new_blocks.push(Block { label: label.clone(), insts, term, span });
        f.blocks.push(Block { label, insts: Vec::new(), term: Terminator::Jmp(BlockId(0)), span });
    }
    for (k, b) in new_blocks.into_iter().enumerate() {
        f.blocks[base as usize + k] = b;
    }

    let tail: Vec<Inst> = f.blocks[bi].insts.drain(ii..).skip(1).collect();
    let old_term = std::mem::replace(&mut f.blocks[bi].term, Terminator::Jmp(bmap(BlockId::ENTRY)));
    f.blocks[bi].insts.extend(prologue);
    let mut cont_insts = Vec::new();
    let single_return = (returns.len() == 1).then(|| returns[0].1);
    if single_return.is_none() {
        cont_insts.push(Inst { result: call.result, kind: InstKind::Phi(returns), span });
    }
    cont_insts.extend(tail);
    let from = BlockId(bi as u32);
    for s in old_term.successors() {
        for inst in &mut f.blocks[s.index()].insts {
            if let InstKind::Phi(incoming) = &mut inst.kind {
                for (p, _) in incoming.iter_mut() {
                    if *p == from {
                        *p = cont;
                    }
                }
            }
        }
    }
    let label = fresh_label(f, &format!("{caller_label}.cont"));
    f.blocks.push(Block { label, insts: cont_insts, term: old_term, span });
    if let Some(ret) = single_return {
        substitute(f, call.result, ret);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{parse_program, validate_function};

    #[test]
    fn straight_line_callee() {
        let m = parse_program(
            "func @sq(%x) { bb0: %y = call multiply(%x, %x) return %y }
             func @f(%a: f32[]) { bb0: %b = call_fn @sq(%a) %c = call_fn @sq(%b) return %c }",
        )
        .unwrap();
        let f = inline_calls(&m, "f").unwrap().unwrap();
        assert!(f.is_straight_line());
        assert_eq!(f.blocks[0].insts.len(), 2);
        assert!(validate_function(&f).is_empty());
    }

    #[test]
    fn captures_become_constants() {
        let m = parse_program(
            "func @scale(%k, %x) { bb0: %y = call multiply(%k, %x) return %y }
             func @f(%a: f32[]) { bb0: %g = const fn @scale[f32[] 2] %b = call_fn %g(%a) return %b }",
        )
        .unwrap();
        let f = inline_calls(&m, "f").unwrap().unwrap();
        assert!(matches!(f.blocks[0].insts[1].kind, InstKind::Const(Literal::Tensor(_))));
        assert!(validate_function(&f).is_empty());
    }

    #[test]
    fn recursive_call_kept() {
        let m = parse_program("func @r(%x: s64[]) { bb0: %y = call_fn @r(%x) return %y }").unwrap();
        let f = inline_calls(&m, "r").unwrap().unwrap();
        assert!(matches!(f.blocks[0].insts[0].kind, InstKind::CallFn { .. }));
    }

    #[test]
    fn multi_block_callee() {
        let m = parse_program(
            "func @abs(%x) {
             bb0: %z = const f32[] 0 %c = call lt(%x, %z) br %c, bb1, bb2
             bb1: %n = call subtract(%z, %x) jmp bb2
             bb2: %p = phi [bb0: %x, bb1: %n] return %p }
             func @f(%a: f32[], %c: pred[]) {
             bb0: br %c, bb1, bb2
             bb1: %b = call_fn @abs(%a) %d = call exp(%b) jmp bb2
             bb2: %r = phi [bb0: %a, bb1: %d] return %r }",
        )
        .unwrap();
        let f = inline_calls(&m, "f").unwrap().unwrap();
        assert!(validate_function(&f).is_empty(), "{:?}", validate_function(&f));
        assert_eq!(f.blocks.len(), 7);
    }
}
