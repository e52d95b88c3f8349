use std::collections::HashMap;
use std::fmt::Write;

use super::{CompId, HloComputation, HloModule, HloOp};

/// Post-order from the root (operands left to right), followed by any
/// instructions the root does not reach, in stored order.
pub fn canonical_order(c: &HloComputation) -> Vec<usize> {
    let n = c.instructions.len();
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![(c.root, 0usize)];
    seen[c.root] = true;
    while let Some((i, k)) = stack.pop() {
        let ops = &c.instructions[i].operands;
        if k < ops.len() {
            stack.push((i, k + 1));
            let o = ops[k];
            if !seen[o] {
                seen[o] = true;
                stack.push((o, 0));
            }
        } else {
            order.push(i);
        }
    }
    order.extend((0..n).filter(|&i| !seen[i]));
    order
}

/// Name-free description of one computation; computation references are
/// rendered through `comp_ref`.
pub fn computation_key(c: &HloComputation, comp_ref: &dyn Fn(CompId) -> String) -> String {
    let order = canonical_order(c);
    let mut pos = vec![0usize; c.instructions.len()];
    for (k, &i) in order.iter().enumerate() {
        pos[i] = k;
    }
    let mut out = String::new();
    for &i in &order {
        let inst = &c.instructions[i];
        let _ = write!(out, "{}:{}", inst.op.kind_name(), inst.shape);
        match &inst.op {
            HloOp::Parameter { index, .. } => {
                let _ = write!(out, "#{index}");
            }
            HloOp::Constant(v) => {
                let _ = write!(out, "={v}");
            }
            HloOp::Dot(d) => {
                let _ = write!(out, "{:?}{:?}{:?}{:?}", d.lhs_batch, d.lhs_contracting, d.rhs_batch, d.rhs_contracting);
            }
            HloOp::Map { to_apply, dimensions } | HloOp::Reduce { to_apply, dimensions } => {
                let _ = write!(out, "{dimensions:?}@{}", comp_ref(*to_apply));
            }
            HloOp::Broadcast { dimensions, .. } => {
                let _ = write!(out, "{dimensions:?}");
            }
            HloOp::Transpose { permutation } => {
                let _ = write!(out, "{permutation:?}");
            }
            HloOp::GetTupleElement { index } => {
                let _ = write!(out, ".{index}");
            }
            HloOp::Conditional { true_comp, false_comp } => {
                let _ = write!(out, "@{}@{}", comp_ref(*true_comp), comp_ref(*false_comp));
            }
            HloOp::While { condition, body } => {
                let _ = write!(out, "@{}@{}", comp_ref(*condition), comp_ref(*body));
            }
            _ => {}
        }
        let ops: Vec<String> = inst.operands.iter().map(|&o| pos[o].to_string()).collect();
        let _ = write!(out, "({})", ops.join(","));
        if i == c.root {
            out.push('*');
        }
        out.push(';');
    }
    out
}

/// Canonical text of a whole module that ignores instruction and
/// computation names: two modules with equal keys are isomorphic graphs
/// rooted at the entry.
pub fn structural_key(m: &HloModule) -> String {
    let mut order = m.reachable_computations();
    let rest: Vec<CompId> = (0..m.computations.len()).map(CompId).filter(|c| !order.contains(c)).collect();
    order.extend(rest);
    let rank: HashMap<CompId, usize> = order.iter().enumerate().map(|(k, &c)| (c, k)).collect();
    let comp_ref = |c: CompId| rank.get(&c).map(|r| r.to_string()).unwrap_or_else(|| "?".into());
    let mut out = String::new();
    for (k, &c) in order.iter().enumerate() {
        let _ = writeln!(out, "{k} {{{}}}", computation_key(m.comp(c), &comp_ref));
    }
    out
}

pub fn structurally_equal(a: &HloModule, b: &HloModule) -> bool {
    structural_key(a) == structural_key(b)
}
