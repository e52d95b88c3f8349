use std::collections::HashMap;

use super::ast::*;
use crate::text::{Cursor, Pos, SyntaxError, Tok};
use crate::types::TensorType;

enum RawKind {
    Const(Literal),
    Call(String, Vec<(String, Pos)>),
    CallFn(RawCallee, Vec<(String, Pos)>),
    Tuple(Vec<(String, Pos)>),
    Get((String, Pos), usize),
    Phi(Vec<((String, Pos), (String, Pos))>),
}

enum RawCallee {
    Static(FnRef),
    Value((String, Pos)),
}

enum RawTerm {
    Br((String, Pos), (String, Pos), (String, Pos)),
    Jmp((String, Pos)),
    Return((String, Pos)),
}

struct RawInst {
    result: (String, Pos),
    kind: RawKind,
}

struct RawBlock {
    label: (String, Pos),
    insts: Vec<RawInst>,
    term: RawTerm,
}

/// Parses a module in the `.mhl` text format.
pub fn parse_program(src: &str) -> Result<Module, SyntaxError> {
    let mut cur = Cursor::new(src)?;
    let mut functions: Vec<Function> = Vec::new();
    while !cur.at_eof() {
        let pos = cur.pos();
        let f = parse_function(&mut cur)?;
        if functions.iter().any(|g| g.name == f.name) {
            return Err(SyntaxError::new(pos, format!("duplicate function `@{}`", f.name)));
        }
        functions.push(f);
    }
    Ok(Module { functions })
}

pub fn parse_type(cur: &mut Cursor) -> Result<ValueType, SyntaxError> {
    if cur.eat_ident("tuple") {
        cur.expect_punct('(')?;
        let mut elems = Vec::new();
        if !cur.eat_punct(')') {
            loop {
                elems.push(parse_type(cur)?);
                if cur.eat_punct(')') {
                    break;
                }
                cur.expect_punct(',')?;
            }
        }
        return Ok(ValueType::Tuple(elems));
    }
    Ok(ValueType::Tensor(cur.tensor_type()?))
}

fn parse_payload(cur: &mut Cursor, ty: &ValueType) -> Result<Literal, SyntaxError> {
    match ty {
        ValueType::Tensor(t) => Ok(Literal::Tensor(cur.tensor_literal(t)?)),
        ValueType::Tuple(elems) => {
            cur.expect_punct('(')?;
            let mut out = Vec::with_capacity(elems.len());
            for (i, e) in elems.iter().enumerate() {
                if i > 0 {
                    cur.expect_punct(',')?;
                }
                out.push(parse_payload(cur, e)?);
            }
            cur.expect_punct(')')?;
            Ok(Literal::Tuple(out))
        }
        ValueType::Fn(_) | ValueType::AllDims => unreachable!("not produced by parse_type"),
    }
}

/// `@name` optionally followed by `[TYPE LITERAL, ...]` captures.
pub fn parse_fn_ref(cur: &mut Cursor) -> Result<FnRef, SyntaxError> {
    let name = cur.global()?;
    let mut captures = Vec::new();
    if cur.eat_punct('[') && !cur.eat_punct(']') {
        loop {
            let ty: TensorType = cur.tensor_type()?;
            captures.push(cur.tensor_literal(&ty)?);
            if cur.eat_punct(']') {
                break;
            }
            cur.expect_punct(',')?;
        }
    }
    Ok(FnRef { name, captures })
}

/// The part after `const`: `fn @f[...]`, `dims all` or `TYPE PAYLOAD`.
pub fn parse_literal(cur: &mut Cursor) -> Result<Literal, SyntaxError> {
    if cur.eat_ident("fn") {
        return Ok(Literal::Fn(parse_fn_ref(cur)?));
    }
    if cur.eat_ident("dims") {
        cur.expect_ident("all")?;
        return Ok(Literal::AllDims);
    }
    let ty = parse_type(cur)?;
    parse_payload(cur, &ty)
}

fn parse_args(cur: &mut Cursor) -> Result<Vec<(String, Pos)>, SyntaxError> {
    cur.expect_punct('(')?;
    let mut args = Vec::new();
    if !cur.eat_punct(')') {
        loop {
            args.push(cur.local()?);
            if cur.eat_punct(')') {
                break;
            }
            cur.expect_punct(',')?;
        }
    }
    Ok(args)
}

fn label(cur: &mut Cursor) -> Result<(String, Pos), SyntaxError> {
    let pos = cur.pos();
    Ok((cur.ident()?, pos))
}

fn at_label(cur: &Cursor) -> bool {
    matches!(cur.peek(), Tok::Ident(_)) && matches!(cur.peek_at(1), Tok::Punct(':'))
}

fn parse_block(cur: &mut Cursor) -> Result<RawBlock, SyntaxError> {
    if !at_label(cur) {
        return cur.unexpected("a block label like `bb0:`");
    }
    let label = label(cur)?;
    cur.expect_punct(':')?;
    let mut insts = Vec::new();
    loop {
        match cur.peek().clone() {
            Tok::Local(_) => insts.push(parse_inst(cur)?),
            Tok::Ident(w) if !at_label(cur) && (w == "br" || w == "jmp" || w == "return") => {
                cur.next();
                let term = match w.as_str() {
                    "br" => {
                        let c = cur.local()?;
                        cur.expect_punct(',')?;
                        let t = self::label(cur)?;
                        cur.expect_punct(',')?;
                        let e = self::label(cur)?;
                        RawTerm::Br(c, t, e)
                    }
                    "jmp" => RawTerm::Jmp(self::label(cur)?),
                    _ => RawTerm::Return(cur.local()?),
                };
                return Ok(RawBlock { label, insts, term });
            }
            _ if at_label(cur) || cur.is_punct('}') || cur.at_eof() => {
                return cur.error(format!("block `{}` lacks a terminator", label.0));
            }
            _ => return cur.unexpected("an instruction or terminator"),
        }
    }
}

fn parse_inst(cur: &mut Cursor) -> Result<RawInst, SyntaxError> {
    let result = cur.local()?;
    cur.expect_punct('=')?;
    let op_pos = cur.pos();
    let op = cur.ident()?;
    let kind = match op.as_str() {
        "const" => RawKind::Const(parse_literal(cur)?),
        "call" => {
            let name = cur.ident()?;
            RawKind::Call(name, parse_args(cur)?)
        }
        "call_fn" => {
            let callee = match cur.peek() {
                Tok::Local(_) => RawCallee::Value(cur.local()?),
                _ => RawCallee::Static(parse_fn_ref(cur)?),
            };
            RawKind::CallFn(callee, parse_args(cur)?)
        }
        "tuple" => RawKind::Tuple(parse_args(cur)?),
        "get" => {
            let t = cur.local()?;
            cur.expect_punct(',')?;
            RawKind::Get(t, cur.usize()?)
        }
        "phi" => {
            cur.expect_punct('[')?;
            let mut incoming = Vec::new();
            if !cur.eat_punct(']') {
                loop {
                    let b = label(cur)?;
                    cur.expect_punct(':')?;
                    let v = cur.local()?;
                    incoming.push((b, v));
                    if cur.eat_punct(']') {
                        break;
                    }
                    cur.expect_punct(',')?;
                }
            }
            RawKind::Phi(incoming)
        }
        other => return Err(SyntaxError::new(op_pos, format!("unknown instruction kind `{other}`"))),
    };
    Ok(RawInst { result, kind })
}

fn parse_function(cur: &mut Cursor) -> Result<Function, SyntaxError> {
    let fpos = cur.pos();
    cur.expect_ident("func")?;
    let name = cur.global()?;
    cur.expect_punct('(')?;
    let mut raw_params = Vec::new();
    if !cur.eat_punct(')') {
        loop {
            let p = cur.local()?;
            let ty = if cur.eat_punct(':') { Some(parse_type(cur)?) } else { None };
            raw_params.push((p, ty));
            if cur.eat_punct(')') {
                break;
            }
            cur.expect_punct(',')?;
        }
    }
    cur.expect_punct('{')?;
    let mut raw_blocks = Vec::new();
    while !cur.eat_punct('}') {
        if cur.at_eof() {
            return cur.unexpected("`}`");
        }
        raw_blocks.push(parse_block(cur)?);
    }
    if raw_blocks.is_empty() {
        return Err(SyntaxError::new(fpos, format!("function `@{name}` has no blocks")));
    }

    let mut values: HashMap<String, ValueId> = HashMap::new();
    let mut value_names = Vec::new();
    let mut define = |(n, pos): &(String, Pos)| -> Result<ValueId, SyntaxError> {
        if values.contains_key(n) {
            return Err(SyntaxError::new(*pos, format!("duplicate value `%{n}`")));
        }
        let id = ValueId(value_names.len() as u32);
        values.insert(n.clone(), id);
        value_names.push(n.clone());
        Ok(id)
    };
    let mut params = Vec::new();
    for (p, ty) in &raw_params {
        params.push(Param { value: define(p)?, ty: ty.clone() });
    }
    let mut results = Vec::new();
    for b in &raw_blocks {
        for i in &b.insts {
            results.push(define(&i.result)?);
        }
    }
    let mut blocks_by_label: HashMap<String, BlockId> = HashMap::new();
    for (i, b) in raw_blocks.iter().enumerate() {
        if blocks_by_label.insert(b.label.0.clone(), BlockId(i as u32)).is_some() {
            return Err(SyntaxError::new(b.label.1, format!("duplicate block `{}`", b.label.0)));
        }
    }
    let use_of = |(n, pos): &(String, Pos)| {
        values.get(n).copied().ok_or_else(|| SyntaxError::new(*pos, format!("undefined value `%{n}`")))
    };
    let block_of = |(n, pos): &(String, Pos)| {
        blocks_by_label.get(n).copied().ok_or_else(|| SyntaxError::new(*pos, format!("undefined block `{n}`")))
    };
    let uses = |args: &[(String, Pos)]| args.iter().map(use_of).collect::<Result<Vec<_>, _>>();

    let mut results = results.into_iter();
    let mut blocks = Vec::with_capacity(raw_blocks.len());
    for b in &raw_blocks {
        let mut insts = Vec::with_capacity(b.insts.len());
        for i in &b.insts {
            let kind = match &i.kind {
                RawKind::Const(l) => InstKind::Const(l.clone()),
                RawKind::Call(name, args) => InstKind::Call { builtin: name.clone(), args: uses(args)? },
                RawKind::CallFn(callee, args) => {
                    let callee = match callee {
                        RawCallee::Static(r) => Callee::Static(r.clone()),
                        RawCallee::Value(v) => Callee::Value(use_of(v)?),
                    };
                    InstKind::CallFn { callee, args: uses(args)? }
                }
                RawKind::Tuple(args) => InstKind::MakeTuple(uses(args)?),
                RawKind::Get(t, index) => InstKind::GetElement { tuple: use_of(t)?, index: *index },
                RawKind::Phi(incoming) => InstKind::Phi(
                    incoming.iter().map(|(b, v)| Ok((block_of(b)?, use_of(v)?))).collect::<Result<_, SyntaxError>>()?,
                ),
            };
            insts.push(Inst { result: results.next().unwrap(), kind, span: Span(i.result.1) });
        }
        let term = match &b.term {
            RawTerm::Br(c, t, e) => Terminator::Br { cond: use_of(c)?, then_bb: block_of(t)?, else_bb: block_of(e)? },
            RawTerm::Jmp(t) => Terminator::Jmp(block_of(t)?),
            RawTerm::Return(v) => Terminator::Return(use_of(v)?),
        };
        blocks.push(Block { label: b.label.0.clone(), insts, term, span: Span(b.label.1) });
    }
    Ok(Function { name, params, blocks, value_names, span: Span(fpos) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_function() {
        let m = parse_program("func @id(%x: f32[10]) { bb0: return %x }").unwrap();
        assert_eq!(m.functions.len(), 1);
        assert_eq!(m.functions[0].blocks.len(), 1);
    }

    #[test]
    fn missing_terminator() {
        let err = parse_program("func @f(%x: f32[]) {\nbb0:\n  %y = call exp(%x)\n}").unwrap_err();
        assert!(err.message.contains("lacks a terminator"), "{err}");
        assert_eq!(err.pos.line, 4);
    }

    #[test]
    fn duplicate_names() {
        let err = parse_program("func @f(%x: f32[]) { bb0: %x = call exp(%x) return %x }").unwrap_err();
        assert!(err.message.contains("duplicate value"));
        let err = parse_program("func @f() { bb0: %a = const s64[] 1 return %a }\nfunc @f() { bb0: %a = const s64[] 1 return %a }")
            .unwrap_err();
        assert!(err.message.contains("duplicate function"));
    }
}
