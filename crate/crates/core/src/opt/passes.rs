use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{live_instructions, retain_computations, retain_instructions, Names};
use crate::hlo::{computation_key, shape_infer, CompId, HloComputation, HloInstruction, HloModule, HloOp};
use crate::interp::Evaluator;
use crate::types::Shape;
use crate::value::Value;

/// Largest tensor (in elements) produced by constant folding.
pub const FOLD_ELEMENT_LIMIT: usize = 1024;

/// Iterations a folded `while` may run before folding gives up on it.
const FOLD_WHILE_CAP: u64 = 1 << 12;

/// Computations free of random number generation, transitively.
fn pure_computations(m: &HloModule) -> Vec<bool> {
    let n = m.computations.len();
    let mut pure = vec![true; n];
    loop {
        let mut changed = false;
        for (i, c) in m.computations.iter().enumerate() {
            if !pure[i] {
                continue;
            }
            let impure = c.instructions.iter().any(|inst| {
                matches!(inst.op, HloOp::Rng { .. }) || inst.op.called().iter().any(|k| !pure[k.0])
            });
            if impure {
                pure[i] = false;
                changed = true;
            }
        }
        if !changed {
            return pure;
        }
    }
}

/// Replaces pure instructions whose operands are all constants with the
/// constant they evaluate to (tensor results up to `FOLD_ELEMENT_LIMIT`
/// elements).
pub fn fold_constants(m: &HloModule) -> HloModule {
    let pure = pure_computations(m);
    let mut out = m.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for c in &mut out.computations {
        let mut names = Names::new(c);
        for i in 0..c.instructions.len() {
            let inst = &c.instructions[i];
            let foldable = inst.op.is_pure()
                && !matches!(inst.op, HloOp::Constant(_))
                && inst.op.called().iter().all(|k| pure[k.0])
                && inst.operands.iter().all(|&o| matches!(c.instructions[o].op, HloOp::Constant(_)));
            if !foldable {
                continue;
            }
            let Shape::Array(t) = &inst.shape else { continue };
            if t.element_count() > FOLD_ELEMENT_LIMIT {
                continue;
            }
            let operands: Vec<&Value> = inst
                .operands
                .iter()
                .map(|&o| match &c.instructions[o].op {
                    HloOp::Constant(v) => v,
                    _ => unreachable!("checked above"),
                })
                .collect();
            let mut ev = Evaluator { module: m, rng: &mut rng, while_cap: FOLD_WHILE_CAP };
            let Ok(v) = ev.eval_op(&inst.op, &operands) else { continue };
            let name = names.fresh("c");
            c.instructions[i] = HloInstruction { name, shape: v.shape(), op: HloOp::Constant(v), operands: Vec::new() };
        }
    }
    out
}

/// Forwards `get-tuple-element(tuple(x0, ..., xk), i)` to `xi`.
pub fn simplify_tuples(m: &HloModule) -> HloModule {
    let mut out = m.clone();
    for c in &mut out.computations {
        let n = c.instructions.len();
        let mut alias: Vec<usize> = (0..n).collect();
        let mut touched = vec![false; n];
        for i in 0..n {
            let inst = &c.instructions[i];
            if let HloOp::GetTupleElement { index } = inst.op {
                let t = alias[inst.operands[0]];
                if matches!(c.instructions[t].op, HloOp::Tuple) {
                    alias[i] = alias[c.instructions[t].operands[index]];
                    touched[i] = true;
                    touched[t] = true;
                }
            }
        }
        if !touched.iter().any(|t| *t) {
            continue;
        }
        for inst in &mut c.instructions {
            inst.operands.iter_mut().for_each(|o| *o = alias[*o]);
        }
        c.root = alias[c.root];
        let live = live_instructions(c);
        let keep: Vec<bool> = (0..n).map(|i| live[i] || !touched[i]).collect();
        retain_instructions(c, &keep);
    }
    out
}

/// A scalar computation made only of parameters, constants and elementwise
/// ops can be applied to whole arrays directly.
fn elementwise_body(c: &HloComputation) -> bool {
    c.instructions.iter().all(|i| match &i.op {
        HloOp::Parameter { .. } | HloOp::Elementwise(_) => true,
        HloOp::Constant(v) => v.as_tensor().is_some_and(|t| t.ty().is_scalar()),
        _ => false,
    })
}

/// Instructions an inlined copy of `c` adds: one per elementwise op, two
/// (constant plus broadcast) per constant.
fn inline_cost(c: &HloComputation) -> usize {
    c.instructions
        .iter()
        .map(|i| match i.op {
            HloOp::Elementwise(_) => 1,
            HloOp::Constant(_) => 2,
            _ => 0,
        })
        .sum()
}

fn full_map(op: &HloOp, shape: &Shape) -> bool {
    match (op, shape) {
        (HloOp::Map { dimensions, .. }, Shape::Array(t)) => dimensions.iter().copied().eq(0..t.rank()),
        _ => false,
    }
}

/// Replaces maps over elementwise scalar computations with the equivalent
/// array instructions. A callback is inlined only where that does not grow
/// the module: every use of it must be inlinable and the copies must not
/// outnumber the instructions freed by dropping it.
pub fn inline_maps(m: &HloModule) -> HloModule {
    let n = m.computations.len();
    let mut map_uses = vec![0usize; n];
    let mut other_uses = vec![false; n];
    for c in &m.computations {
        for inst in &c.instructions {
            for k in inst.op.called() {
                if full_map(&inst.op, &inst.shape) {
                    map_uses[k.0] += 1;
                } else {
                    other_uses[k.0] = true;
                }
            }
        }
    }
    let inline: Vec<bool> = (0..n)
        .map(|k| {
            let c = &m.computations[k];
            if CompId(k) == m.entry || map_uses[k] == 0 || !elementwise_body(c) {
                return false;
            }
            let saved = if other_uses[k] { 0 } else { c.instructions.len() };
            map_uses[k] * inline_cost(c) <= saved + map_uses[k]
        })
        .collect();
    if !inline.iter().any(|x| *x) {
        return m.clone();
    }
    let mut out = m.clone();
    for c in &mut out.computations {
        let targets = c.instructions.iter().any(|i| matches!(i.op, HloOp::Map { to_apply, .. } if inline[to_apply.0] && full_map(&i.op, &i.shape)));
        if !targets {
            continue;
        }
        let mut names = Names::new(c);
        let old = std::mem::take(&mut c.instructions);
        let mut pos = vec![usize::MAX; old.len()];
        for (i, mut inst) in old.into_iter().enumerate() {
            inst.operands.iter_mut().for_each(|o| *o = pos[*o]);
            let callee = match inst.op {
                HloOp::Map { to_apply, .. } if inline[to_apply.0] && full_map(&inst.op, &inst.shape) => to_apply,
                _ => {
                    pos[i] = c.instructions.len();
                    c.instructions.push(inst);
                    continue;
                }
            };
            let dims = inst.shape.as_array().expect("full map has an array shape").dims.clone();
            let body = m.comp(callee);
            let mut local = vec![usize::MAX; body.instructions.len()];
            for (j, b) in body.instructions.iter().enumerate() {
                local[j] = match &b.op {
                    HloOp::Parameter { index, .. } => inst.operands[*index],
                    HloOp::Constant(v) => {
                        let scalar = c.instructions.len();
                        c.instructions.push(HloInstruction { name: names.fresh("c"), shape: v.shape(), op: b.op.clone(), operands: Vec::new() });
                        let elem = v.as_tensor().expect("scalar constant").elem();
                        c.instructions.push(HloInstruction {
                            name: names.fresh("b"),
                            shape: Shape::array(elem, dims.clone()),
                            op: HloOp::Broadcast { dimensions: Vec::new(), dims: dims.clone() },
                            operands: vec![scalar],
                        });
                        c.instructions.len() - 1
                    }
                    op => {
                        let operands: Vec<usize> = b.operands.iter().map(|&o| local[o]).collect();
                        let shapes: Vec<&Shape> = operands.iter().map(|&o| &c.instructions[o].shape).collect();
                        let shape = shape_infer(op, &shapes, &|_| None).expect("elementwise ops of a valid callback");
                        c.instructions.push(HloInstruction { name: names.fresh(op.mnemonic()), shape, op: op.clone(), operands });
                        c.instructions.len() - 1
                    }
                };
            }
            pos[i] = local[body.root];
        }
        c.root = pos[c.root];
    }
    out
}

/// Removes instructions that no root depends on (parameters stay) and
/// computations the entry cannot reach.
pub fn dce(m: &HloModule) -> HloModule {
    let mut out = m.clone();
    for c in &mut out.computations {
        let live = live_instructions(c);
        retain_instructions(c, &live);
    }
    let mut keep = vec![false; out.computations.len()];
    for id in out.reachable_computations() {
        keep[id.0] = true;
    }
    retain_computations(&mut out, &keep, &|id| id);
    out
}

/// Merges computations that are identical up to names, repeating until
/// callers of merged computations stop becoming identical themselves.
pub fn dedup_computations(m: &HloModule) -> HloModule {
    let mut out = m.clone();
    loop {
        let n = out.computations.len();
        let mut first: HashMap<String, usize> = HashMap::new();
        let mut target: Vec<usize> = (0..n).collect();
        for (i, c) in out.computations.iter().enumerate() {
            if CompId(i) == out.entry {
                continue;
            }
            let key = computation_key(c, &|id| format!("#{}", id.0));
            let t = *first.entry(key).or_insert(i);
            target[i] = t;
        }
        if target.iter().enumerate().all(|(i, t)| i == *t) {
            return out;
        }
        let keep: Vec<bool> = (0..n).map(|i| target[i] == i).collect();
        retain_computations(&mut out, &keep, &|id| CompId(target[id.0]));
    }
}
