//! Tokenizer shared by the frontend and HLO text parsers.

use std::fmt;

use crate::types::{ElementType, TensorType};
use crate::value::{empty_data, extend_data, parse_scalar, Data, TensorValue, Value};
use crate::types::Shape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{pos}: {message}")]
pub struct SyntaxError {
    pub pos: Pos,
    pub message: String,
}

impl SyntaxError {
    pub fn new(pos: Pos, message: impl Into<String>) -> Self {
        SyntaxError { pos, message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Local(String),
    Global(String),
    Number(String),
    Punct(char),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) | Tok::Number(s) => write!(f, "`{s}`"),
            Tok::Local(s) => write!(f, "`%{s}`"),
            Tok::Global(s) => write!(f, "`@{s}`"),
            Tok::Punct(c) => write!(f, "`{c}`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

/// Splits `src` into tokens. `;` starts a comment running to end of line.
pub fn tokenize(src: &str) -> Result<Vec<Token>, SyntaxError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    macro_rules! bump {
        () => {{
            if chars[i] == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            i += 1;
        }};
    }
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, col };
        if c.is_whitespace() {
            bump!();
            continue;
        }
        if c == ';' {
            while i < chars.len() && chars[i] != '\n' {
                bump!();
            }
            continue;
        }
        if c == '%' || c == '@' {
            bump!();
            let start = i;
            while i < chars.len() && is_name_char(chars[i]) {
                bump!();
            }
            if start == i {
                return Err(SyntaxError::new(pos, format!("expected a name after `{c}`")));
            }
            let name: String = chars[start..i].iter().collect();
            out.push(Token { tok: if c == '%' { Tok::Local(name) } else { Tok::Global(name) }, pos });
            continue;
        }
        let starts_number = c.is_ascii_digit()
            || ((c == '-' || c == '+') && i + 1 < chars.len() && (chars[i + 1].is_ascii_digit() || chars[i + 1] == 'i'));
        if starts_number {
            let start = i;
            bump!();
            if chars[start] != '-' && chars[start] != '+' || chars[i].is_ascii_digit() {
                while i < chars.len() {
                    let d = chars[i];
                    let exp_sign = (d == '-' || d == '+') && matches!(chars[i - 1], 'e' | 'E');
                    if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                        bump!();
                    } else {
                        break;
                    }
                }
            } else {
                // signed `inf`
                while i < chars.len() && chars[i].is_ascii_alphabetic() {
                    bump!();
                }
            }
            out.push(Token { tok: Tok::Number(chars[start..i].iter().collect()), pos });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() {
                let d = chars[i];
                let dash_word = d == '-' && i + 1 < chars.len() && chars[i + 1].is_ascii_alphabetic();
                if is_name_char(d) || dash_word {
                    bump!();
                } else {
                    break;
                }
            }
            out.push(Token { tok: Tok::Ident(chars[start..i].iter().collect()), pos });
            continue;
        }
        if "(){}[],:=".contains(c) {
            bump!();
            out.push(Token { tok: Tok::Punct(c), pos });
            continue;
        }
        return Err(SyntaxError::new(pos, format!("unexpected character `{c}`")));
    }
    out.push(Token { tok: Tok::Eof, pos: Pos { line, col } });
    Ok(out)
}

/// Recursive-descent helper over a token vector.
pub struct Cursor {
    toks: Vec<Token>,
    at: usize,
}

impl Cursor {
    pub fn new(src: &str) -> Result<Self, SyntaxError> {
        Ok(Cursor { toks: tokenize(src)?, at: 0 })
    }

    pub fn peek(&self) -> &Tok {
        &self.toks[self.at].tok
    }

    pub fn peek_at(&self, ahead: usize) -> &Tok {
        let i = (self.at + ahead).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    pub fn pos(&self) -> Pos {
        self.toks[self.at].pos
    }

    #[allow(clippy::should_implement_trait)]
    pub fn next(&mut self) -> Token {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    pub fn at_eof(&self) -> bool {
        matches!(self.peek(), Tok::Eof)
    }

    pub fn error<T>(&self, message: impl Into<String>) -> Result<T, SyntaxError> {
        Err(SyntaxError::new(self.pos(), message))
    }

    pub fn unexpected<T>(&self, wanted: &str) -> Result<T, SyntaxError> {
        self.error(format!("expected {wanted}, found {}", self.peek()))
    }

    pub fn is_punct(&self, c: char) -> bool {
        matches!(self.peek(), Tok::Punct(p) if *p == c)
    }

    pub fn eat_punct(&mut self, c: char) -> bool {
        if self.is_punct(c) {
            self.next();
            true
        } else {
            false
        }
    }

    pub fn expect_punct(&mut self, c: char) -> Result<(), SyntaxError> {
        if self.eat_punct(c) {
            Ok(())
        } else {
            self.unexpected(&format!("`{c}`"))
        }
    }

    pub fn is_ident(&self, word: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == word)
    }

    pub fn eat_ident(&mut self, word: &str) -> bool {
        if self.is_ident(word) {
            self.next();
            true
        } else {
            false
        }
    }

    pub fn expect_ident(&mut self, word: &str) -> Result<(), SyntaxError> {
        if self.eat_ident(word) {
            Ok(())
        } else {
            self.unexpected(&format!("`{word}`"))
        }
    }

    pub fn ident(&mut self) -> Result<String, SyntaxError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.next();
                Ok(s)
            }
            _ => self.unexpected("an identifier"),
        }
    }

    pub fn local(&mut self) -> Result<(String, Pos), SyntaxError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Local(s) => {
                self.next();
                Ok((s, pos))
            }
            _ => self.unexpected("a `%` value name"),
        }
    }

    pub fn global(&mut self) -> Result<String, SyntaxError> {
        match self.peek().clone() {
            Tok::Global(s) => {
                self.next();
                Ok(s)
            }
            _ => self.unexpected("an `@` function name"),
        }
    }

    pub fn usize(&mut self) -> Result<usize, SyntaxError> {
        match self.peek().clone() {
            Tok::Number(s) => match s.parse::<usize>() {
                Ok(n) => {
                    self.next();
                    Ok(n)
                }
                Err(_) => self.error(format!("expected a non-negative integer, found `{s}`")),
            },
            _ => self.unexpected("a non-negative integer"),
        }
    }

    /// `{a,b,c}` of non-negative integers.
    pub fn usize_set(&mut self) -> Result<Vec<usize>, SyntaxError> {
        self.expect_punct('{')?;
        let mut out = Vec::new();
        if !self.eat_punct('}') {
            loop {
                out.push(self.usize()?);
                if self.eat_punct('}') {
                    break;
                }
                self.expect_punct(',')?;
            }
        }
        Ok(out)
    }

    /// `ELEM[d0,d1,...]`.
    pub fn tensor_type(&mut self) -> Result<TensorType, SyntaxError> {
        let pos = self.pos();
        let name = self.ident()?;
        let elem = ElementType::from_name(&name)
            .ok_or_else(|| SyntaxError::new(pos, format!("unknown element type `{name}`")))?;
        self.expect_punct('[')?;
        let mut dims = Vec::new();
        if !self.eat_punct(']') {
            loop {
                dims.push(self.usize()?);
                if self.eat_punct(']') {
                    break;
                }
                self.expect_punct(',')?;
            }
        }
        Ok(TensorType::new(elem, dims))
    }

    /// HLO shape: `f32[2,3]{0,1}`, `f32[]` or `(SHAPE, ...)`; layouts are
    /// accepted and dropped.
    pub fn hlo_shape(&mut self) -> Result<Shape, SyntaxError> {
        if self.eat_punct('(') {
            let mut elems = Vec::new();
            if !self.eat_punct(')') {
                loop {
                    elems.push(self.hlo_shape()?);
                    if self.eat_punct(')') {
                        break;
                    }
                    self.expect_punct(',')?;
                }
            }
            return Ok(Shape::Tuple(elems));
        }
        let t = self.tensor_type()?;
        if self.is_punct('{') {
            let layout = self.usize_set()?;
            let mut sorted = layout.clone();
            sorted.sort_unstable();
            if sorted != (0..t.rank()).collect::<Vec<_>>() {
                return self.error(format!("layout {{{layout:?}}} is not a permutation of the dimensions of {t}"));
            }
        }
        Ok(Shape::Array(t))
    }

    fn scalar_token(&mut self, elem: ElementType) -> Result<Data, SyntaxError> {
        let pos = self.pos();
        let text = match self.peek().clone() {
            Tok::Number(s) | Tok::Ident(s) => s,
            _ => return self.unexpected(&format!("a {elem} element")),
        };
        self.next();
        parse_scalar(&text, elem).ok_or_else(|| SyntaxError::new(pos, format!("`{text}` is not a valid {elem} element")))
    }

    fn nested(&mut self, elem: ElementType, dims: &[usize], acc: &mut Data) -> Result<(), SyntaxError> {
        let Some((&n, rest)) = dims.split_first() else {
            let d = self.scalar_token(elem)?;
            extend_data(acc, d);
            return Ok(());
        };
        self.expect_punct('{')?;
        for i in 0..n {
            if i > 0 {
                self.expect_punct(',')?;
            }
            self.nested(elem, rest, acc)?;
        }
        if !self.is_punct('}') {
            return self.error(format!("expected `}}` after {n} elements"));
        }
        self.next();
        Ok(())
    }

    /// A tensor literal of the given type.
    pub fn tensor_literal(&mut self, ty: &TensorType) -> Result<TensorValue, SyntaxError> {
        let mut data = empty_data(ty.elem);
        self.nested(ty.elem, &ty.dims, &mut data)?;
        Ok(TensorValue::new(ty.clone(), data).expect("parsed element count"))
    }

    /// A literal (tensor or tuple) of the given HLO shape.
    pub fn value_literal(&mut self, shape: &Shape) -> Result<Value, SyntaxError> {
        match shape {
            Shape::Array(t) => Ok(Value::Tensor(self.tensor_literal(t)?)),
            Shape::Tuple(elems) => {
                self.expect_punct('(')?;
                let mut out = Vec::with_capacity(elems.len());
                for (i, s) in elems.iter().enumerate() {
                    if i > 0 {
                        self.expect_punct(',')?;
                    }
                    out.push(self.value_literal(s)?);
                }
                self.expect_punct(')')?;
                Ok(Value::Tuple(out))
            }
        }
    }
}

/// Parses a comma-separated list of tensor or tuple types, as used in CLI
/// signatures: `f32[10,10],f32[10]` or `(s64[], s64[])`.
pub fn parse_shape_list(src: &str) -> Result<Vec<Shape>, SyntaxError> {
    let mut cur = Cursor::new(src)?;
    let mut out = Vec::new();
    if cur.at_eof() {
        return Ok(out);
    }
    loop {
        out.push(cur.hlo_shape()?);
        if cur.at_eof() {
            return Ok(out);
        }
        cur.expect_punct(',')?;
    }
}

/// Parses a literal of the given shape, e.g. `{1, 2}` for `f32[2]`.
pub fn parse_value(src: &str, shape: &Shape) -> Result<Value, SyntaxError> {
    let mut cur = Cursor::new(src)?;
    let v = cur.value_literal(shape)?;
    if !cur.at_eof() {
        return cur.unexpected("end of literal");
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens() {
        let toks = tokenize("c4gte4 = f32[] get-tuple-element(c4t2), index=1 ; note\n-1.5e-3 -inf").unwrap();
        let kinds: Vec<Tok> = toks.into_iter().map(|t| t.tok).collect();
        assert_eq!(kinds[0], Tok::Ident("c4gte4".into()));
        assert_eq!(kinds[5], Tok::Ident("get-tuple-element".into()));
        assert!(kinds.contains(&Tok::Number("-1.5e-3".into())));
        assert!(kinds.contains(&Tok::Number("-inf".into())));
    }

    #[test]
    fn literal_round_trip() {
        let shape = Shape::array(ElementType::F32, [2, 2]);
        let v = parse_value("{{1, 2.5}, {-inf, 1e30}}", &shape).unwrap();
        assert_eq!(parse_value(&v.to_string(), &shape).unwrap(), v);
    }

    #[test]
    fn positions() {
        let err = tokenize("a\n  $").unwrap_err();
        assert_eq!(err.pos, Pos { line: 2, col: 3 });
    }
}
