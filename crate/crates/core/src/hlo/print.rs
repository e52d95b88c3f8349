use std::fmt::Write;

use super::{HloComputation, HloInstruction, HloModule, HloOp};

fn set(items: &[usize]) -> String {
    let inner: Vec<String> = items.iter().map(usize::to_string).collect();
    format!("{{{}}}", inner.join(","))
}

/// Text form: non-entry computations in index order, then the entry.
pub fn print_hlo(m: &HloModule) -> String {
    let mut out = String::new();
    let order = (0..m.computations.len()).filter(|&i| i != m.entry.0).chain([m.entry.0]);
    for (n, i) in order.enumerate() {
        if n > 0 {
            out.push('\n');
        }
        print_computation(m, &m.computations[i], i == m.entry.0, &mut out);
    }
    out
}

fn print_computation(m: &HloModule, c: &HloComputation, entry: bool, out: &mut String) {
    if entry {
        out.push_str("ENTRY ");
    }
    let _ = writeln!(out, "{} {{", c.name);
    for (i, inst) in c.instructions.iter().enumerate() {
        out.push_str("  ");
        if i == c.root {
            out.push_str("ROOT ");
        }
        print_instruction(m, c, inst, out);
        out.push('\n');
    }
    out.push_str("}\n");
}

fn print_instruction(m: &HloModule, c: &HloComputation, inst: &HloInstruction, out: &mut String) {
    let comp = |id: super::CompId| m.computations.get(id.0).map(|c| c.name.as_str()).unwrap_or("?");
    let _ = write!(out, "{} = {} {}(", inst.name, inst.shape, inst.op.kind_name());
    match &inst.op {
        HloOp::Parameter { index, .. } => {
            let _ = write!(out, "{index}");
        }
        HloOp::Constant(v) => {
            let _ = write!(out, "{v}");
        }
        _ => {
            let names: Vec<&str> = inst.operands.iter().map(|&o| c.instructions[o].name.as_str()).collect();
            out.push_str(&names.join(", "));
        }
    }
    out.push(')');
    match &inst.op {
        HloOp::Dot(d) => {
            if !d.lhs_batch.is_empty() {
                let _ = write!(out, ", lhs_batch_dims={}", set(&d.lhs_batch));
            }
            let _ = write!(out, ", lhs_contracting_dims={}", set(&d.lhs_contracting));
            if !d.rhs_batch.is_empty() {
                let _ = write!(out, ", rhs_batch_dims={}", set(&d.rhs_batch));
            }
            let _ = write!(out, ", rhs_contracting_dims={}", set(&d.rhs_contracting));
        }
        HloOp::Map { to_apply, dimensions } | HloOp::Reduce { to_apply, dimensions } => {
            let _ = write!(out, ", dimensions={}, to_apply={}", set(dimensions), comp(*to_apply));
        }
        HloOp::Broadcast { dimensions, .. } => {
            let _ = write!(out, ", dimensions={}", set(dimensions));
        }
        HloOp::Transpose { permutation } => {
            let _ = write!(out, ", permutation={}", set(permutation));
        }
        HloOp::GetTupleElement { index } => {
            let _ = write!(out, ", index={index}");
        }
        HloOp::Conditional { true_comp, false_comp } => {
            let _ = write!(out, ", true_computation={}, false_computation={}", comp(*true_comp), comp(*false_comp));
        }
        HloOp::While { condition, body } => {
            let _ = write!(out, ", condition={}, body={}", comp(*condition), comp(*body));
        }
        _ => {}
    }
}
