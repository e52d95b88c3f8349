use std::collections::HashMap;

use super::{validate_hlo, CompId, DotDims, ElemOp, HloComputation, HloDiagnostic, HloInstruction, HloModule, HloOp};
use crate::text::{Cursor, Pos, SyntaxError, Tok};
use crate::types::Shape;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HloParseError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("invalid module: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<HloDiagnostic>),
}

const ATTRS: &[&str] = &[
    "dimensions",
    "to_apply",
    "lhs_contracting_dims",
    "rhs_contracting_dims",
    "lhs_batch_dims",
    "rhs_batch_dims",
    "index",
    "permutation",
    "condition",
    "body",
    "true_computation",
    "false_computation",
];

enum AttrVal {
    Set(Vec<usize>),
    Name(String, Pos),
    Int(usize),
}

struct Pending {
    comp: usize,
    inst: usize,
    refs: Vec<(String, Pos)>,
}

/// Parses the printer's text format and validates the result.
pub fn parse_hlo(src: &str) -> Result<HloModule, HloParseError> {
    let mut cur = Cursor::new(src)?;
    let mut computations = Vec::new();
    let mut comp_names: HashMap<String, usize> = HashMap::new();
    let mut entry = None;
    let mut pending = Vec::new();
    while !cur.at_eof() {
        let pos = cur.pos();
        let is_entry = cur.eat_ident("ENTRY");
        let name = cur.ident()?;
        if comp_names.insert(name.clone(), computations.len()).is_some() {
            return Err(SyntaxError::new(pos, format!("duplicate computation `{name}`")).into());
        }
        if is_entry {
            if entry.is_some() {
                return Err(SyntaxError::new(pos, "more than one ENTRY computation").into());
            }
            entry = Some(computations.len());
        }
        let comp = parse_computation(&mut cur, name, computations.len(), &mut pending)?;
        computations.push(comp);
    }
    let Some(entry) = entry else {
        return Err(SyntaxError::new(cur.pos(), "module has no ENTRY computation").into());
    };
    for p in pending {
        let mut ids = Vec::new();
        for (n, pos) in &p.refs {
            match comp_names.get(n) {
                Some(&c) => ids.push(CompId(c)),
                None => return Err(SyntaxError::new(*pos, format!("unresolved computation `{n}`")).into()),
            }
        }
        let op = &mut computations[p.comp].instructions[p.inst].op;
        let mut it = ids.into_iter();
        match op {
            HloOp::Map { to_apply, .. } | HloOp::Reduce { to_apply, .. } => *to_apply = it.next().unwrap(),
            HloOp::Conditional { true_comp, false_comp } => {
                *true_comp = it.next().unwrap();
                *false_comp = it.next().unwrap();
            }
            HloOp::While { condition, body } => {
                *condition = it.next().unwrap();
                *body = it.next().unwrap();
            }
            _ => {}
        }
    }
    let m = HloModule { name: computations[entry].name.clone(), computations, entry: CompId(entry) };
    let diags = validate_hlo(&m);
    if !diags.is_empty() {
        return Err(HloParseError::Invalid(diags));
    }
    Ok(m)
}

fn parse_computation(
    cur: &mut Cursor,
    name: String,
    comp_index: usize,
    pending: &mut Vec<Pending>,
) -> Result<HloComputation, SyntaxError> {
    cur.expect_punct('{')?;
    let mut instructions: Vec<HloInstruction> = Vec::new();
    let mut names: HashMap<String, usize> = HashMap::new();
    let mut root = None;
    while !cur.eat_punct('}') {
        let pos = cur.pos();
        if cur.eat_ident("ROOT") {
            if root.is_some() {
                return Err(SyntaxError::new(pos, format!("computation `{name}` has more than one ROOT")));
            }
            root = Some(instructions.len());
        }
        let iname = cur.ident()?;
        if names.insert(iname.clone(), instructions.len()).is_some() {
            return Err(SyntaxError::new(pos, format!("duplicate instruction `{iname}`")));
        }
        cur.expect_punct('=')?;
        let shape = cur.hlo_shape()?;
        let kpos = cur.pos();
        let kind = cur.ident()?;
        cur.expect_punct('(')?;
        let mut operands = Vec::new();
        let mut param_index = None;
        let mut literal = None;
        match kind.as_str() {
            "parameter" => param_index = Some(cur.usize()?),
            "constant" => literal = Some(cur.value_literal(&shape)?),
            _ => {
                if !cur.is_punct(')') {
                    loop {
                        let opos = cur.pos();
                        let o = cur.ident()?;
                        match names.get(&o) {
                            Some(&i) if i < instructions.len() => operands.push(i),
                            _ => return Err(SyntaxError::new(opos, format!("operand `{o}` is not defined before use"))),
                        }
                        if !cur.eat_punct(',') {
                            break;
                        }
                    }
                }
            }
        }
        cur.expect_punct(')')?;

        let mut attrs: HashMap<String, (AttrVal, Pos)> = HashMap::new();
        loop {
            let had_comma = cur.eat_punct(',');
            let is_attr = matches!(cur.peek(), Tok::Ident(a) if ATTRS.contains(&a.as_str()))
                && matches!(cur.peek_at(1), Tok::Punct('='));
            if !is_attr {
                if had_comma {
                    return cur.unexpected("an attribute");
                }
                break;
            }
            let apos = cur.pos();
            let a = cur.ident()?;
            cur.expect_punct('=')?;
            let v = match cur.peek().clone() {
                Tok::Punct('{') => AttrVal::Set(cur.usize_set()?),
                Tok::Number(_) => AttrVal::Int(cur.usize()?),
                Tok::Ident(n) => {
                    let p = cur.pos();
                    cur.next();
                    AttrVal::Name(n, p)
                }
                _ => return cur.unexpected("an attribute value"),
            };
            if attrs.insert(a.clone(), (v, apos)).is_some() {
                return Err(SyntaxError::new(apos, format!("duplicate attribute `{a}`")));
            }
        }

        let mut take_set = |key: &str, required: bool| -> Result<Vec<usize>, SyntaxError> {
            match attrs.remove(key) {
                Some((AttrVal::Set(s), _)) => Ok(s),
                Some((_, p)) => Err(SyntaxError::new(p, format!("`{key}` expects a `{{...}}` list"))),
                None if required => Err(SyntaxError::new(kpos, format!("{kind} requires `{key}`"))),
                None => Ok(Vec::new()),
            }
        };
        let mut refs = Vec::new();
        let array_dims = |s: &Shape| match s {
            Shape::Array(t) => Ok(t.dims.clone()),
            Shape::Tuple(_) => Err(SyntaxError::new(kpos, format!("{kind} must have an array shape"))),
        };
        let op = match kind.as_str() {
            "parameter" => HloOp::Parameter { index: param_index.unwrap(), shape: shape.clone() },
            "constant" => HloOp::Constant(literal.unwrap()),
            "dot" => HloOp::Dot(DotDims {
                lhs_contracting: take_set("lhs_contracting_dims", true)?,
                rhs_contracting: take_set("rhs_contracting_dims", true)?,
                lhs_batch: take_set("lhs_batch_dims", false)?,
                rhs_batch: take_set("rhs_batch_dims", false)?,
            }),
            "map" | "reduce" => {
                let dimensions = take_set("dimensions", true)?;
                refs.push(take_name(&mut attrs, "to_apply", kpos)?);
                if kind == "map" {
                    HloOp::Map { to_apply: CompId(usize::MAX), dimensions }
                } else {
                    HloOp::Reduce { to_apply: CompId(usize::MAX), dimensions }
                }
            }
            "broadcast" => HloOp::Broadcast { dimensions: take_set("dimensions", true)?, dims: array_dims(&shape)? },
            "transpose" => HloOp::Transpose { permutation: take_set("permutation", true)? },
            "reshape" => HloOp::Reshape { dims: array_dims(&shape)? },
            "tuple" => HloOp::Tuple,
            "get-tuple-element" => match attrs.remove("index") {
                Some((AttrVal::Int(index), _)) => HloOp::GetTupleElement { index },
                Some((_, p)) => return Err(SyntaxError::new(p, "`index` expects an integer")),
                None => return Err(SyntaxError::new(kpos, "get-tuple-element requires `index`")),
            },
            "conditional" => {
                refs.push(take_name(&mut attrs, "true_computation", kpos)?);
                refs.push(take_name(&mut attrs, "false_computation", kpos)?);
                HloOp::Conditional { true_comp: CompId(usize::MAX), false_comp: CompId(usize::MAX) }
            }
            "while" => {
                refs.push(take_name(&mut attrs, "condition", kpos)?);
                refs.push(take_name(&mut attrs, "body", kpos)?);
                HloOp::While { condition: CompId(usize::MAX), body: CompId(usize::MAX) }
            }
            "rng" => HloOp::Rng { dims: array_dims(&shape)? },
            other => match ElemOp::ALL.iter().find(|e| e.kind_name() == other) {
                Some(e) => HloOp::Elementwise(*e),
                None => return Err(SyntaxError::new(kpos, format!("unknown instruction kind `{other}`"))),
            },
        };
        if let Some((a, (_, p))) = attrs.into_iter().next() {
            return Err(SyntaxError::new(p, format!("attribute `{a}` does not apply to {kind}")));
        }
        if !refs.is_empty() {
            pending.push(Pending { comp: comp_index, inst: instructions.len(), refs });
        }
        instructions.push(HloInstruction { name: iname, shape, op, operands });
    }
    if instructions.is_empty() {
        return cur.error(format!("computation `{name}` is empty"));
    }
    let root = root.unwrap_or(instructions.len() - 1);
    Ok(HloComputation { name, instructions, root })
}

fn take_name(attrs: &mut HashMap<String, (AttrVal, Pos)>, key: &str, pos: Pos) -> Result<(String, Pos), SyntaxError> {
    match attrs.remove(key) {
        Some((AttrVal::Name(n, p), _)) => Ok((n, p)),
        Some((_, p)) => Err(SyntaxError::new(p, format!("`{key}` expects a computation name"))),
        None => Err(SyntaxError::new(pos, format!("missing `{key}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hlo::print_hlo;

    const DENSE: &str = "c1 {
  c1p0 = f32[] parameter(0)
  c1p1 = f32[] parameter(1)
  ROOT c1a2 = f32[] add(c1p0, c1p1)
}

ENTRY dense {
  c0p0 = f32[10,10]{0,1} parameter(0)
  c0p1 = f32[10]{0} parameter(1)
  c0d3 = f32[10]{0} dot(c0p0, c0p1), lhs_contracting_dims={1}, rhs_contracting_dims={0}
  c0p2 = f32[10]{0} parameter(2)
  ROOT c0m4 = f32[10]{0} map(c0d3, c0p2), dimensions={0}, to_apply=c1
}
";

    #[test]
    fn dense_round_trip() {
        let m = parse_hlo(DENSE).unwrap();
        assert_eq!(m.computations.len(), 2);
        assert_eq!(m.entry_comp().root_inst().op.kind_name(), "map");
        assert_eq!(print_hlo(&m), DENSE);
    }

    #[test]
    fn malformed_attribute() {
        let src = DENSE.replace("dimensions={0}", "dimensions={a}");
        assert!(matches!(parse_hlo(&src), Err(HloParseError::Syntax(_))));
    }

    #[test]
    fn unresolved_reference() {
        let src = DENSE.replace("to_apply=c1", "to_apply=c9");
        let err = parse_hlo(&src).unwrap_err();
        assert!(err.to_string().contains("unresolved computation"));
    }
}
