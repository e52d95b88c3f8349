use std::fmt::Write;

use super::ast::*;

/// Canonical text: one line per instruction, two-space indent, blank line
/// between functions.
pub fn print_frontend(m: &Module) -> String {
    let mut out = String::new();
    for (i, f) in m.functions.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        print_function_into(f, &mut out);
    }
    out
}

pub fn print_function(f: &Function) -> String {
    let mut out = String::new();
    print_function_into(f, &mut out);
    out
}

fn print_function_into(f: &Function, out: &mut String) {
    let v = |id: ValueId| format!("%{}", f.value_name(id));
    let list = |ids: &[ValueId]| ids.iter().map(|&a| v(a)).collect::<Vec<_>>().join(", ");
    let _ = write!(out, "func @{}(", f.name);
    for (i, p) in f.params.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&v(p.value));
        if let Some(ty) = &p.ty {
            let _ = write!(out, ": {ty}");
        }
    }
    out.push_str(") {\n");
    for b in &f.blocks {
        let _ = writeln!(out, "{}:", b.label);
        for inst in &b.insts {
            let _ = write!(out, "  {} = ", v(inst.result));
            match &inst.kind {
                InstKind::Const(l) => {
                    let _ = write!(out, "const {l}");
                }
                InstKind::Call { builtin, args } => {
                    let _ = write!(out, "call {builtin}({})", list(args));
                }
                InstKind::CallFn { callee, args } => {
                    let callee = match callee {
                        Callee::Static(r) => r.to_string(),
                        Callee::Value(c) => v(*c),
                    };
                    let _ = write!(out, "call_fn {callee}({})", list(args));
                }
                InstKind::MakeTuple(args) => {
                    let _ = write!(out, "tuple({})", list(args));
                }
                InstKind::GetElement { tuple, index } => {
                    let _ = write!(out, "get {}, {index}", v(*tuple));
                }
                InstKind::Phi(incoming) => {
                    let items: Vec<String> =
                        incoming.iter().map(|(b, x)| format!("{}: {}", f.block(*b).label, v(*x))).collect();
                    let _ = write!(out, "phi [{}]", items.join(", "));
                }
            }
            out.push('\n');
        }
        match &b.term {
            Terminator::Br { cond, then_bb, else_bb } => {
                let _ = writeln!(out, "  br {}, {}, {}", v(*cond), f.block(*then_bb).label, f.block(*else_bb).label);
            }
            Terminator::Jmp(t) => {
                let _ = writeln!(out, "  jmp {}", f.block(*t).label);
            }
            Terminator::Return(x) => {
                let _ = writeln!(out, "  return {}", v(*x));
            }
        }
    }
    out.push_str("}\n");
}
