//! HLO cleanup passes and the instruction-count report.

mod count;
mod passes;

use std::collections::HashSet;

pub use count::{count_instructions, CountReport, KindCount};
pub use passes::{dce, dedup_computations, fold_constants, inline_maps, simplify_tuples, FOLD_ELEMENT_LIMIT};

use crate::hlo::{structural_key, CompId, HloComputation, HloModule};

pub const DEFAULT_PIPELINE: &[&str] = &["fold_constants", "simplify_tuples", "inline_maps", "dce", "dedup_computations"];

/// Rounds of the pass list before `run_pipeline` stops looking for a
/// fixpoint.
pub const MAX_ROUNDS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown pass `{0}` (known: fold_constants, simplify_tuples, inline_maps, dce, dedup_computations)")]
pub struct UnknownPass(pub String);

pub type Pass = fn(&HloModule) -> HloModule;

pub fn pass_by_name(name: &str) -> Result<Pass, UnknownPass> {
    Ok(match name {
        "fold_constants" => fold_constants,
        "simplify_tuples" => simplify_tuples,
        "inline_maps" => inline_maps,
        "dce" => dce,
        "dedup_computations" => dedup_computations,
        _ => return Err(UnknownPass(name.to_string())),
    })
}

/// Runs `passes` in order, repeating the list until the module stops
/// changing (at most `MAX_ROUNDS` times).
pub fn run_pipeline(m: &HloModule, passes: &[&str]) -> Result<HloModule, UnknownPass> {
    let passes: Vec<Pass> = passes.iter().map(|p| pass_by_name(p)).collect::<Result<_, _>>()?;
    let mut cur = m.clone();
    if passes.is_empty() {
        return Ok(cur);
    }
    let mut key = structural_key(&cur);
    for _ in 0..MAX_ROUNDS {
        for p in &passes {
            cur = p(&cur);
        }
        let next = structural_key(&cur);
        if next == key {
            break;
        }
        key = next;
    }
    Ok(cur)
}

pub fn optimize(m: &HloModule) -> HloModule {
    run_pipeline(m, DEFAULT_PIPELINE).expect("default passes exist")
}

/// Instructions reachable from the root, plus every parameter.
fn live_instructions(c: &HloComputation) -> Vec<bool> {
    let mut live = vec![false; c.instructions.len()];
    let mut stack = vec![c.root];
    for (i, inst) in c.instructions.iter().enumerate() {
        if matches!(inst.op, crate::hlo::HloOp::Parameter { .. }) {
            stack.push(i);
        }
    }
    while let Some(i) = stack.pop() {
        if !std::mem::replace(&mut live[i], true) {
            stack.extend(&c.instructions[i].operands);
        }
    }
    live
}

/// Keeps the instructions marked in `keep`, renumbering operands. Every kept
/// instruction's operands must be kept too.
fn retain_instructions(c: &mut HloComputation, keep: &[bool]) {
    let mut pos = vec![usize::MAX; keep.len()];
    let old = std::mem::take(&mut c.instructions);
    for (i, mut inst) in old.into_iter().enumerate() {
        if keep[i] {
            inst.operands.iter_mut().for_each(|o| *o = pos[*o]);
            pos[i] = c.instructions.len();
            c.instructions.push(inst);
        }
    }
    c.root = pos[c.root];
}

/// Keeps the computations marked in `keep`, retargeting references through
/// `redirect` first.
fn retain_computations(m: &mut HloModule, keep: &[bool], redirect: &dyn Fn(CompId) -> CompId) {
    let mut pos = vec![usize::MAX; keep.len()];
    let mut n = 0;
    for (i, k) in keep.iter().enumerate() {
        if *k {
            pos[i] = n;
            n += 1;
        }
    }
    let old = std::mem::take(&mut m.computations);
    for (i, mut c) in old.into_iter().enumerate() {
        if keep[i] {
            for inst in &mut c.instructions {
                inst.op.map_called(|id| CompId(pos[redirect(id).0]));
            }
            m.computations.push(c);
        }
    }
    m.entry = CompId(pos[m.entry.0]);
}

/// Fresh instruction names in the `c<K><mnemonic><J>` style of a
/// computation.
struct Names {
    prefix: String,
    used: HashSet<String>,
    next: usize,
}

impl Names {
    fn new(c: &HloComputation) -> Self {
        let prefix = c
            .instructions
            .first()
            .map(|i| {
                let digits = i.name.chars().skip(1).take_while(char::is_ascii_digit).count();
                if i.name.starts_with('c') && digits > 0 {
                    i.name[..1 + digits].to_string()
                } else {
                    "c".to_string()
                }
            })
            .unwrap_or_else(|| "c".to_string());
        Names { prefix, used: c.instructions.iter().map(|i| i.name.clone()).collect(), next: c.instructions.len() }
    }

    fn fresh(&mut self, mnemonic: &str) -> String {
        loop {
            let name = format!("{}{}{}", self.prefix, mnemonic, self.next);
            self.next += 1;
            if self.used.insert(name.clone()) {
                return name;
            }
        }
    }
}
