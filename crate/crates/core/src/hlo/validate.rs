use std::fmt;

use super::{shape_infer, CompId, HloModule, HloOp};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HloDiagnostic {
    pub computation: String,
    pub instruction: Option<String>,
    pub message: String,
}

impl fmt::Display for HloDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.instruction {
            Some(i) => write!(f, "{}/{}: {}", self.computation, i, self.message),
            None => write!(f, "{}: {}", self.computation, self.message),
        }
    }
}

/// Checks references, def-before-use, parameter numbering, computation
/// call cycles and that every stored shape re-derives via `shape_infer`.
pub fn validate_hlo(m: &HloModule) -> Vec<HloDiagnostic> {
    let mut out = Vec::new();
    let ncomps = m.computations.len();
    if m.entry.0 >= ncomps {
        out.push(HloDiagnostic { computation: m.name.clone(), instruction: None, message: "entry computation missing".into() });
        return out;
    }
    let mut names = std::collections::HashSet::new();
    for c in &m.computations {
        if !names.insert(c.name.as_str()) {
            out.push(HloDiagnostic { computation: c.name.clone(), instruction: None, message: "duplicate computation name".into() });
        }
    }

    // A computation must not (transitively) call itself.
    let mut state = vec![0u8; ncomps];
    fn visit(m: &HloModule, c: usize, state: &mut [u8]) -> bool {
        if state[c] == 1 {
            return false;
        }
        if state[c] == 2 {
            return true;
        }
        state[c] = 1;
        for inst in &m.computations[c].instructions {
            for callee in inst.op.called() {
                if callee.0 < state.len() && !visit(m, callee.0, state) {
                    return false;
                }
            }
        }
        state[c] = 2;
        true
    }
    for c in 0..ncomps {
        if !visit(m, c, &mut state) {
            out.push(HloDiagnostic {
                computation: m.computations[c].name.clone(),
                instruction: None,
                message: "computation call graph has a cycle".into(),
            });
            return out;
        }
    }

    let sigs = |id: CompId| m.sig(id);
    for c in &m.computations {
        let mut diag = |inst: Option<&str>, message: String| {
            out.push(HloDiagnostic { computation: c.name.clone(), instruction: inst.map(str::to_string), message })
        };
        if c.instructions.is_empty() || c.root >= c.instructions.len() {
            diag(None, "missing root instruction".into());
            continue;
        }
        let mut param_seen = Vec::new();
        let mut inames = std::collections::HashSet::new();
        for (i, inst) in c.instructions.iter().enumerate() {
            if !inames.insert(inst.name.as_str()) {
                diag(Some(&inst.name), "duplicate instruction name".into());
            }
            if let HloOp::Parameter { index, .. } = inst.op {
                param_seen.push(index);
            }
            if let Some(&bad) = inst.operands.iter().find(|&&o| o >= i) {
                diag(Some(&inst.name), format!("operand #{bad} is not defined before use"));
                continue;
            }
            if let Some(callee) = inst.op.called().into_iter().find(|cid| cid.0 >= ncomps) {
                diag(Some(&inst.name), format!("reference to missing computation #{}", callee.0));
                continue;
            }
            if inst.op.called().contains(&m.entry) {
                diag(Some(&inst.name), "the entry computation cannot be called".into());
            }
            let shapes: Vec<_> = inst.operands.iter().map(|&o| &c.instructions[o].shape).collect();
            match shape_infer(&inst.op, &shapes, &sigs) {
                Ok(s) if s == inst.shape => {}
                Ok(s) => diag(Some(&inst.name), format!("stored shape {} but operands imply {s}", inst.shape)),
                Err(e) => diag(Some(&inst.name), e.to_string()),
            }
        }
        param_seen.sort_unstable();
        if param_seen.iter().enumerate().any(|(i, &p)| i != p) {
            diag(None, format!("parameter numbers {param_seen:?} are not dense from 0"));
        }
    }
    out
}
