//! Recovers structured control flow from the CFG: branches whose arms meet
//! again become if-regions, strongly connected components become loops.
//!
//! Only executable edges (as found by inference) are considered, so a branch
//! on a known predicate is an unconditional jump here.

use std::fmt;

use crate::builtins::{lookup, BuiltinKind};
use crate::frontend::{BlockId, Function, InstKind, Terminator, ValueId};
use crate::infer::InferenceResult;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionTree {
    pub body: Seq,
}

/// Items executed one after another, then `end`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seq {
    pub items: Vec<Item>,
    pub end: SeqEnd,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Item {
    /// The instructions of one block; its φs are bound from whatever
    /// precedes it.
    Block(BlockId),
    If(IfRegion),
    Loop(LoopRegion),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SeqEnd {
    Return(ValueId),
    /// Control leaves along the edge `from -> to` (to a merge block, or back
    /// to a loop header).
    Goto { from: BlockId, to: BlockId },
    /// The last item is an if-region whose arms end the way this sequence
    /// does.
    Inner,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Merge {
    /// Arms meet at this block; its φs are the region's results.
    Block(BlockId),
    /// Arms end where the enclosing sequence ends.
    Outer,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IfRegion {
    /// Block ending in the branch (the preceding item).
    pub branch: BlockId,
    pub cond: ValueId,
    pub then_arm: Seq,
    pub else_arm: Seq,
    pub merge: Merge,
    /// φs at the merge block, empty for `Merge::Outer`.
    pub phis: Vec<ValueId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopRegion {
    pub header: BlockId,
    /// Blocks of the strongly connected component, header first.
    pub blocks: Vec<BlockId>,
    /// φs of the header, in source order.
    pub carried: Vec<ValueId>,
    /// Header branch condition; the loop continues while it equals
    /// `continue_on`.
    pub cond: ValueId,
    pub continue_on: bool,
    /// From the body entry up to the back edges to the header.
    pub body: Seq,
    pub exit: BlockId,
    /// Loop values used after the loop (all defined in the header).
    pub exit_values: Vec<ValueId>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StructureError {
    #[error("@{function}: irreducible control flow: loop {blocks} has several entries")]
    Irreducible { function: String, blocks: String },
    #[error("@{function}: loop at {header}: {message}")]
    LoopExit { function: String, header: String, message: String },
    #[error("@{function}: loop header {header} draws random numbers; the header is re-evaluated and cannot have effects")]
    EffectInHeader { function: String, header: String },
}

const EXIT: usize = usize::MAX;

struct Ctx<'a> {
    f: &'a Function,
    succs: Vec<Vec<BlockId>>,
    preds: Vec<Vec<BlockId>>,
}

/// A scope: the top level of the function, or a loop body (nodes exclude
/// the header, edges to which mean "continue").
struct Scope {
    nodes: Vec<bool>,
    header: Option<BlockId>,
    /// Loop header -> (SCC blocks, exit block).
    loops: Vec<Option<(Vec<BlockId>, BlockId)>>,
    /// Scope node -> representative (itself, or its loop's header).
    rep: Vec<usize>,
    ipdom: Vec<usize>,
}

impl Ctx<'_> {
    fn label(&self, b: BlockId) -> String {
        self.f.block(b).label.clone()
    }

    fn loop_err(&self, header: BlockId, message: impl Into<String>) -> StructureError {
        StructureError::LoopExit { function: self.f.name.clone(), header: self.label(header), message: message.into() }
    }

    /// Tarjan's SCCs over the scope nodes, in discovery order.
    fn sccs(&self, nodes: &[bool]) -> Vec<Vec<BlockId>> {
        struct St {
            index: Vec<usize>,
            low: Vec<usize>,
            on: Vec<bool>,
            stack: Vec<usize>,
            next: usize,
            out: Vec<Vec<BlockId>>,
        }
        fn visit(c: &Ctx, nodes: &[bool], st: &mut St, v: usize) {
            st.index[v] = st.next;
            st.low[v] = st.next;
            st.next += 1;
            st.stack.push(v);
            st.on[v] = true;
            for w in &c.succs[v] {
                let w = w.index();
                if !nodes[w] {
                    continue;
                }
                if st.index[w] == usize::MAX {
                    visit(c, nodes, st, w);
                    st.low[v] = st.low[v].min(st.low[w]);
                } else if st.on[w] {
                    st.low[v] = st.low[v].min(st.index[w]);
                }
            }
            if st.low[v] == st.index[v] {
                let mut comp = Vec::new();
                loop {
                    let w = st.stack.pop().unwrap();
                    st.on[w] = false;
                    comp.push(BlockId(w as u32));
                    if w == v {
                        break;
                    }
                }
                comp.sort();
                st.out.push(comp);
            }
        }
        let n = nodes.len();
        let mut st = St { index: vec![usize::MAX; n], low: vec![0; n], on: vec![false; n], stack: Vec::new(), next: 0, out: Vec::new() };
        for v in 0..n {
            if nodes[v] && st.index[v] == usize::MAX {
                visit(self, nodes, &mut st, v);
            }
        }
        st.out
    }

    fn scope(&self, nodes: Vec<bool>, header: Option<BlockId>) -> Result<Scope, StructureError> {
        let n = nodes.len();
        let mut loops = vec![None; n];
        let mut rep: Vec<usize> = (0..n).collect();
        for comp in self.sccs(&nodes) {
            let cyclic = comp.len() > 1 || self.succs[comp[0].index()].contains(&comp[0]);
            if !cyclic {
                continue;
            }
            let inside = |b: BlockId| comp.contains(&b);
            let entries: Vec<BlockId> =
                comp.iter().copied().filter(|b| self.preds[b.index()].iter().any(|p| !inside(*p))).collect();
            if entries.len() != 1 {
                let names: Vec<String> = comp.iter().map(|b| self.label(*b)).collect();
                return Err(StructureError::Irreducible { function: self.f.name.clone(), blocks: names.join(", ") });
            }
            let h = entries[0];
            let mut exit = None;
            for &b in &comp {
                if matches!(self.f.block(b).term, Terminator::Return(_)) {
                    return Err(self.loop_err(h, format!("block {} returns from inside the loop", self.label(b))));
                }
                for &s in &self.succs[b.index()] {
                    if inside(s) {
                        continue;
                    }
                    if b != h {
                        return Err(self.loop_err(h, format!("block {} leaves the loop; only the header may exit", self.label(b))));
                    }
                    if exit.replace(s).is_some() {
                        return Err(self.loop_err(h, "the header has several exits"));
                    }
                }
            }
            let Some(exit) = exit else {
                return Err(self.loop_err(h, "the loop never exits"));
            };
            for &b in &comp {
                rep[b.index()] = h.index();
            }
            let mut blocks = vec![h];
            blocks.extend(comp.iter().copied().filter(|b| *b != h));
            loops[h.index()] = Some((blocks, exit));
        }

        // Successors in the DAG where each loop is collapsed to its header.
        let dag_succs = |v: usize| -> Result<Vec<usize>, StructureError> {
            let raw: Vec<BlockId> = match &loops[v] {
                Some((_, exit)) => vec![*exit],
                None => self.succs[v].clone(),
            };
            if raw.is_empty() {
                if let Some(h) = header {
                    return Err(self.loop_err(h,format!("block {} returns from inside the loop", self.label(BlockId(v as u32)))));
                }
                return Ok(vec![EXIT]);
            }
            raw.into_iter()
                .map(|s| {
                    if Some(s) == header {
                        Ok(EXIT)
                    } else if nodes[s.index()] {
                        Ok(rep[s.index()])
                    } else {
                        Err(self.loop_err(header.unwrap_or(s), format!("block {} leaves the loop", self.label(BlockId(v as u32)))))
                    }
                })
                .collect()
        };

        // Post-dominators: visit in reverse topological order of the DAG.
        let mut order = Vec::new();
        let mut state = vec![0u8; n];
        let mut all_succs: Vec<Vec<usize>> = vec![Vec::new(); n];
        for v in 0..n {
            if nodes[v] && rep[v] == v {
                all_succs[v] = dag_succs(v)?;
            }
        }
        fn topo(v: usize, succs: &[Vec<usize>], state: &mut [u8], order: &mut Vec<usize>) {
            state[v] = 1;
            for &s in &succs[v] {
                if s != EXIT && state[s] == 0 {
                    topo(s, succs, state, order);
                }
            }
            state[v] = 2;
            order.push(v);
        }
        for v in 0..n {
            if nodes[v] && rep[v] == v && state[v] == 0 {
                topo(v, &all_succs, &mut state, &mut order);
            }
        }
        let mut ipdom = vec![EXIT; n];
        let mut depth = vec![0usize; n];
        let depth_of = |d: &[usize], x: usize| if x == EXIT { 0 } else { d[x] };
        for &v in &order {
            let mut acc: Option<usize> = None;
            for &s in &all_succs[v] {
                acc = Some(match acc {
                    None => s,
                    Some(mut a) => {
                        let mut b = s;
                        while a != b {
                            if depth_of(&depth, a) >= depth_of(&depth, b) {
                                a = ipdom[a];
                            } else {
                                b = ipdom[b];
                            }
                        }
                        a
                    }
                });
            }
            ipdom[v] = acc.unwrap_or(EXIT);
            depth[v] = depth_of(&depth, ipdom[v]) + 1;
        }
        Ok(Scope { nodes, header, loops, rep, ipdom })
    }

    fn target(&self, scope: &Scope, node: usize) -> BlockId {
        if node == EXIT {
            scope.header.expect("edge to EXIT only in loop scopes")
        } else {
            BlockId(node as u32)
        }
    }

    /// Walks from `start` (reached from `from`) until `stop`.
    fn walk(&self, scope: &Scope, start: usize, mut from: BlockId, stop: usize) -> Result<Seq, StructureError> {
        let mut items = Vec::new();
        let mut cur = start;
        loop {
            if cur == stop {
                return Ok(Seq { items, end: SeqEnd::Goto { from, to: self.target(scope, stop) } });
            }
            let b = BlockId(cur as u32);
            if let Some((blocks, exit)) = &scope.loops[cur] {
                items.push(Item::Loop(self.loop_region(b, blocks.clone(), *exit)?));
                from = b;
                cur = if scope.nodes[exit.index()] { scope.rep[exit.index()] } else { EXIT };
                if Some(*exit) != scope.header && !scope.nodes[exit.index()] {
                    return Err(self.loop_err(b, "exit leaves the enclosing loop"));
                }
                continue;
            }
            items.push(Item::Block(b));
            let block = self.f.block(b);
            let succs = &self.succs[cur];
            match succs.len() {
                0 => {
                    let Terminator::Return(v) = block.term else { unreachable!("a block without successors returns") };
                    return Ok(Seq { items, end: SeqEnd::Return(v) });
                }
                1 => {
                    let s = succs[0];
                    from = b;
                    cur = if Some(s) == scope.header { EXIT } else { scope.rep[s.index()] };
                }
                _ => {
                    let Terminator::Br { cond, then_bb, else_bb } = block.term else { unreachable!("two successors come from a branch") };
                    let m = scope.ipdom[cur];
                    let arm = |s: BlockId| -> Result<Seq, StructureError> {
                        let s = if Some(s) == scope.header { EXIT } else { scope.rep[s.index()] };
                        if s == m {
                            Ok(Seq { items: Vec::new(), end: SeqEnd::Goto { from: b, to: self.target(scope, m) } })
                        } else {
                            self.walk(scope, s, b, m)
                        }
                    };
                    let then_arm = arm(then_bb)?;
                    let else_arm = arm(else_bb)?;
                    if m == stop {
                        items.push(Item::If(IfRegion { branch: b, cond, then_arm, else_arm, merge: Merge::Outer, phis: Vec::new() }));
                        return Ok(Seq { items, end: SeqEnd::Inner });
                    }
                    let mb = BlockId(m as u32);
                    let phis = self.phis(mb);
                    items.push(Item::If(IfRegion { branch: b, cond, then_arm, else_arm, merge: Merge::Block(mb), phis }));
                    from = b;
                    cur = m;
                }
            }
        }
    }

    fn phis(&self, b: BlockId) -> Vec<ValueId> {
        self.f.block(b).insts.iter().filter(|i| i.kind.is_phi()).map(|i| i.result).collect()
    }

    fn loop_region(&self, h: BlockId, blocks: Vec<BlockId>, exit: BlockId) -> Result<LoopRegion, StructureError> {
        let header = self.f.block(h);
        for inst in &header.insts {
            if let InstKind::Call { builtin, .. } = &inst.kind {
                if lookup(builtin).is_some_and(|b| b.kind == BuiltinKind::Rng) {
                    return Err(StructureError::EffectInHeader { function: self.f.name.clone(), header: header.label.clone() });
                }
            }
        }
        let Terminator::Br { cond, then_bb, else_bb } = header.term else {
            return Err(self.loop_err(h, "the header does not end in a branch"));
        };
        let continue_on = then_bb != exit;
        let body_entry = if continue_on { then_bb } else { else_bb };
        let mut nodes = vec![false; self.f.blocks.len()];
        for &b in &blocks[1..] {
            nodes[b.index()] = true;
        }
        let scope = self.scope(nodes, Some(h))?;
        let body = if body_entry == h {
            Seq { items: Vec::new(), end: SeqEnd::Goto { from: h, to: h } }
        } else {
            self.walk(&scope, scope.rep[body_entry.index()], h, EXIT)?
        };
        let carried = self.phis(h);
        let defined_in_loop = |v: ValueId| {
            blocks.iter().any(|b| self.f.block(*b).insts.iter().any(|i| i.result == v))
        };
        let mut exit_values = Vec::new();
        for b in self.f.block_ids() {
            if blocks.contains(&b) {
                continue;
            }
            let block = self.f.block(b);
            let mut uses: Vec<ValueId> = block.insts.iter().flat_map(|i| i.kind.uses()).collect();
            uses.extend(block.term.uses());
            for v in uses {
                if defined_in_loop(v) && !exit_values.contains(&v) {
                    exit_values.push(v);
                }
            }
        }
        Ok(LoopRegion { header: h, blocks, carried, cond, continue_on, body, exit, exit_values })
    }
}

/// Builds the region tree of `f` over the edges `res` found executable.
pub fn detect_regions(f: &Function, res: &InferenceResult) -> Result<RegionTree, StructureError> {
    let n = f.blocks.len();
    let mut succs = vec![Vec::new(); n];
    let mut preds = vec![Vec::new(); n];
    for b in f.block_ids() {
        if !res.reachable[b.index()] {
            continue;
        }
        for s in f.block(b).term.successors() {
            if res.edge_executable(b, s) && !succs[b.index()].contains(&s) {
                succs[b.index()].push(s);
                preds[s.index()].push(b);
            }
        }
    }
    let ctx = Ctx { f, succs, preds };
    let scope = ctx.scope(res.reachable.clone(), None)?;
    let body = ctx.walk(&scope, scope.rep[0], BlockId::ENTRY, EXIT)?;
    Ok(RegionTree { body })
}

impl Seq {
    /// Blocks in the order the tree visits them (loop headers once).
    pub fn blocks(&self) -> Vec<BlockId> {
        let mut out = Vec::new();
        self.collect_blocks(&mut out);
        out
    }

    fn collect_blocks(&self, out: &mut Vec<BlockId>) {
        for item in &self.items {
            match item {
                Item::Block(b) => out.push(*b),
                Item::If(r) => {
                    r.then_arm.collect_blocks(out);
                    r.else_arm.collect_blocks(out);
                }
                Item::Loop(l) => {
                    out.push(l.header);
                    l.body.collect_blocks(out);
                }
            }
        }
    }

    fn fmt_indented(&self, f: &Function, out: &mut fmt::Formatter<'_>, depth: usize) -> fmt::Result {
        let pad = "  ".repeat(depth);
        let label = |b: BlockId| &f.block(b).label;
        let name = |v: ValueId| f.value_name(v);
        for item in &self.items {
            match item {
                Item::Block(b) => writeln!(out, "{pad}block {}", label(*b))?,
                Item::If(r) => {
                    let merge = match &r.merge {
                        Merge::Block(m) => label(*m).to_string(),
                        Merge::Outer => "outer".to_string(),
                    };
                    let phis: Vec<String> = r.phis.iter().map(|v| format!("%{}", name(*v))).collect();
                    writeln!(out, "{pad}if %{} merge {} [{}]", name(r.cond), merge, phis.join(", "))?;
                    writeln!(out, "{pad}then")?;
                    r.then_arm.fmt_indented(f, out, depth + 1)?;
                    writeln!(out, "{pad}else")?;
                    r.else_arm.fmt_indented(f, out, depth + 1)?;
                }
                Item::Loop(l) => {
                    let carried: Vec<String> = l.carried.iter().map(|v| format!("%{}", name(*v))).collect();
                    let neg = if l.continue_on { "" } else { "!" };
                    writeln!(out, "{pad}loop {} [{}] while {neg}%{} exit {}", label(l.header), carried.join(", "), name(l.cond), label(l.exit))?;
                    l.body.fmt_indented(f, out, depth + 1)?;
                }
            }
        }
        match &self.end {
            SeqEnd::Return(v) => writeln!(out, "{pad}return %{}", name(*v)),
            SeqEnd::Goto { from, to } => writeln!(out, "{pad}goto {} -> {}", label(*from), label(*to)),
            SeqEnd::Inner => Ok(()),
        }
    }
}

/// Indented outline of a region tree, for diagnostics and tests.
pub struct Outline<'a>(pub &'a Function, pub &'a RegionTree);

impl fmt::Display for Outline<'_> {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.1.body.fmt_indented(self.0, out, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_program;
    use crate::infer::{infer, AbstractValue};

    fn outline(src: &str) -> Result<String, StructureError> {
        let m = parse_program(src).unwrap();
        let f = &m.functions[0];
        let args: Vec<AbstractValue> = f.params.iter().map(|p| AbstractValue::of_type(p.ty.as_ref().unwrap())).collect();
        let res = infer(f, &args, &m).unwrap();
        detect_regions(f, &res).map(|t| Outline(f, &t).to_string())
    }

    #[test]
    fn straight_line() {
        let o = outline("func @f(%x: f32[]) { bb0: %y = call exp(%x) return %y }").unwrap();
        assert_eq!(o, "block bb0\nreturn %y\n");
    }

    #[test]
    fn diamond() {
        let o = outline(
            "func @f(%c: pred[], %x: f32[]) { bb0: br %c, bb1, bb2
             bb1: %y = call exp(%x) jmp bb3
             bb2: jmp bb3
             bb3: %p = phi [bb1: %y, bb2: %x] return %p }",
        )
        .unwrap();
        assert_eq!(
            o,
            "block bb0\nif %c merge bb3 [%p]\nthen\n  block bb1\n  goto bb1 -> bb3\nelse\n  block bb2\n  goto bb2 -> bb3\nblock bb3\nreturn %p\n"
        );
    }

    #[test]
    fn counted_loop() {
        let o = outline(
            "func @f(%n: s64[]) {
             bb0: %z = const s64[] 0
                  %one = const s64[] 1
                  jmp bb1
             bb1: %i = phi [bb0: %z, bb2: %i2]
                  %acc = phi [bb0: %z, bb2: %acc2]
                  %c = call lt(%i, %n)
                  br %c, bb2, bb3
             bb2: %acc2 = call add(%acc, %i)
                  %i2 = call add(%i, %one)
                  jmp bb1
             bb3: return %acc }",
        )
        .unwrap();
        assert_eq!(o, "block bb0\nloop bb1 [%i, %acc] while %c exit bb3\n  block bb2\n  goto bb2 -> bb1\nblock bb3\nreturn %acc\n");
    }

    #[test]
    fn early_return_is_outer_if() {
        let o = outline(
            "func @f(%c: pred[], %x: f32[]) { bb0: br %c, bb1, bb2
             bb1: return %x
             bb2: %y = call exp(%x) return %y }",
        )
        .unwrap();
        assert_eq!(o, "block bb0\nif %c merge outer []\nthen\n  block bb1\n  return %x\nelse\n  block bb2\n  return %y\n");
    }

    #[test]
    fn irreducible_rejected() {
        let e = outline(
            "func @f(%c: pred[]) { bb0: br %c, bb1, bb2
             bb1: br %c, bb2, bb3
             bb2: br %c, bb1, bb3
             bb3: return %c }",
        )
        .unwrap_err();
        assert!(matches!(e, StructureError::Irreducible { .. }), "{e}");
    }

    #[test]
    fn side_exit_rejected() {
        let e = outline(
            "func @f(%c: pred[]) { bb0: jmp bb1
             bb1: br %c, bb2, bb3
             bb2: br %c, bb1, bb3
             bb3: return %c }",
        )
        .unwrap_err();
        assert!(matches!(e, StructureError::LoopExit { .. }), "{e}");
    }
}
