use std::fmt;

use super::ast::*;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub function: String,
    pub block: String,
    /// Result name of the offending instruction, or `terminator`.
    pub inst: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "@{} {} {}: {}", self.function, self.block, self.inst, self.message)
    }
}

/// Immediate dominators over the reachable blocks (entry maps to itself,
/// unreachable blocks to `None`).
pub fn dominators(f: &Function) -> Vec<Option<BlockId>> {
    let rpo = f.reverse_postorder();
    let mut order = vec![usize::MAX; f.blocks.len()];
    for (i, b) in rpo.iter().enumerate() {
        order[b.index()] = i;
    }
    let preds = f.predecessors();
    let mut idom: Vec<Option<BlockId>> = vec![None; f.blocks.len()];
    idom[0] = Some(BlockId::ENTRY);
    let intersect = |idom: &[Option<BlockId>], mut a: BlockId, mut b: BlockId| {
        while a != b {
            while order[a.index()] > order[b.index()] {
                a = idom[a.index()].unwrap();
            }
            while order[b.index()] > order[a.index()] {
                b = idom[b.index()].unwrap();
            }
        }
        a
    };
    let mut changed = true;
    while changed {
        changed = false;
        for &b in rpo.iter().skip(1) {
            let mut new: Option<BlockId> = None;
            for &p in &preds[b.index()] {
                if idom[p.index()].is_none() {
                    continue;
                }
                new = Some(match new {
                    None => p,
                    Some(n) => intersect(&idom, p, n),
                });
            }
            if new != idom[b.index()] {
                idom[b.index()] = new;
                changed = true;
            }
        }
    }
    idom
}

pub fn dominates(idom: &[Option<BlockId>], a: BlockId, mut b: BlockId) -> bool {
    loop {
        if a == b {
            return true;
        }
        match idom[b.index()] {
            Some(p) if p != b => b = p,
            _ => return false,
        }
    }
}

pub fn validate(m: &Module) -> Vec<Diagnostic> {
    m.functions.iter().flat_map(validate_function).collect()
}

pub fn validate_function(f: &Function) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut diag = |block: &str, inst: &str, message: String| {
        out.push(Diagnostic { function: f.name.clone(), block: block.into(), inst: inst.into(), message })
    };
    let nblocks = f.blocks.len();
    let nvalues = f.num_values();
    let name = |v: ValueId| f.value_names.get(v.index()).map(String::as_str).unwrap_or("?");

    let mut def_count = vec![0usize; nvalues];
    for p in &f.params {
        if p.value.index() < nvalues {
            def_count[p.value.index()] += 1;
        }
    }
    for b in &f.blocks {
        for inst in &b.insts {
            if inst.result.index() < nvalues {
                def_count[inst.result.index()] += 1;
            } else {
                diag(&b.label, "?", format!("result id {} out of range", inst.result.0));
            }
        }
        for s in b.term.successors() {
            if s.index() >= nblocks {
                diag(&b.label, "terminator", format!("branch to missing block #{}", s.0));
            }
        }
    }
    for (i, &n) in def_count.iter().enumerate() {
        if n > 1 {
            diag(&f.blocks[0].label, &f.value_names[i], "value defined more than once".into());
        }
    }
    if def_count.iter().any(|&n| n > 1) || f.blocks.iter().any(|b| b.term.successors().iter().any(|s| s.index() >= nblocks)) {
        return out;
    }

    let preds = f.predecessors();
    if !preds[0].is_empty() {
        diag(&f.blocks[0].label, "terminator", "entry block has predecessors".into());
    }
    let defs = f.defs();
    let idom = dominators(f);

    for b in f.block_ids() {
        let block = f.block(b);
        let label = &block.label;
        let mut seen_non_phi = false;
        for (index, inst) in block.insts.iter().enumerate() {
            let iname = name(inst.result);
            if let InstKind::Phi(incoming) = &inst.kind {
                if seen_non_phi {
                    diag(label, iname, "phi is not at the head of its block".into());
                }
                let bp = &preds[b.index()];
                for (p, _) in incoming {
                    if !bp.contains(p) {
                        let pl = f.blocks.get(p.index()).map(|x| x.label.as_str()).unwrap_or("?");
                        diag(label, iname, format!("phi lists {pl}, which is not a predecessor"));
                    }
                }
                for p in bp {
                    let n = incoming.iter().filter(|(q, _)| q == p).count();
                    if n != 1 {
                        diag(label, iname, format!("phi has {n} incoming values for predecessor {}", f.block(*p).label));
                    }
                }
            } else {
                seen_non_phi = true;
            }
            if idom[b.index()].is_none() {
                continue;
            }
            if let InstKind::Phi(incoming) = &inst.kind {
                for &(p, v) in incoming {
                    if p.index() >= nblocks || idom[p.index()].is_none() {
                        continue;
                    }
                    if !available_at_end(&defs, &idom, v, p) {
                        diag(label, iname, format!("`%{}` does not dominate the end of {}", name(v), f.block(p).label));
                    }
                }
            } else {
                for v in inst.kind.uses() {
                    if !available_before(&defs, &idom, v, b, index) {
                        diag(label, iname, format!("use of `%{}` is not dominated by its definition", name(v)));
                    }
                }
            }
        }
        if idom[b.index()].is_some() {
            for v in block.term.uses() {
                if !available_before(&defs, &idom, v, b, block.insts.len()) {
                    diag(label, "terminator", format!("use of `%{}` is not dominated by its definition", name(v)));
                }
            }
        }
    }
    out
}

fn available_before(defs: &[Option<Def>], idom: &[Option<BlockId>], v: ValueId, b: BlockId, index: usize) -> bool {
    match defs.get(v.index()).copied().flatten() {
        None => false,
        Some(Def::Param(_)) => true,
        Some(Def::Inst { block, index: di }) => {
            if block == b {
                di < index
            } else {
                dominates(idom, block, b)
            }
        }
    }
}

fn available_at_end(defs: &[Option<Def>], idom: &[Option<BlockId>], v: ValueId, b: BlockId) -> bool {
    match defs.get(v.index()).copied().flatten() {
        None => false,
        Some(Def::Param(_)) => true,
        Some(Def::Inst { block, .. }) => dominates(idom, block, b),
    }
}
