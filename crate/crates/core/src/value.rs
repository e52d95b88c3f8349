//! Concrete tensor values and their literal syntax.
//!
//! The literal grammar is shared by frontend `const` instructions, HLO
//! `constant(...)` instructions and CLI output: scalars print bare (`0`,
//! `2.5`, `true`), arrays as nested braces in row-major order
//! (`{{1, 2}, {3, 4}}`) and tuples in parentheses (`(1, {2, 3})`).

use std::fmt;
use std::hash::{Hash, Hasher};

use crate::types::{ElementType, Shape, TensorType};

#[derive(Debug, Clone)]
pub enum Data {
    F32(Vec<f32>),
    S64(Vec<i64>),
    Pred(Vec<bool>),
}

impl Data {
    pub fn len(&self) -> usize {
        match self {
            Data::F32(v) => v.len(),
            Data::S64(v) => v.len(),
            Data::Pred(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn elem(&self) -> ElementType {
        match self {
            Data::F32(_) => ElementType::F32,
            Data::S64(_) => ElementType::S64,
            Data::Pred(_) => ElementType::Pred,
        }
    }

    /// Picks the elements at `indices`, preserving the element type.
    pub fn gather(&self, indices: impl Iterator<Item = usize>) -> Data {
        match self {
            Data::F32(v) => Data::F32(indices.map(|i| v[i]).collect()),
            Data::S64(v) => Data::S64(indices.map(|i| v[i]).collect()),
            Data::Pred(v) => Data::Pred(indices.map(|i| v[i]).collect()),
        }
    }
}

// Bitwise comparison: two literals are the same constant iff every element
// has the same bit pattern (so NaN == NaN and 0.0 != -0.0).
impl PartialEq for Data {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Data::F32(a), Data::F32(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (Data::S64(a), Data::S64(b)) => a == b,
            (Data::Pred(a), Data::Pred(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Data {}

impl Hash for Data {
    fn hash<H: Hasher>(&self, state: &mut H) {
        match self {
            Data::F32(v) => {
                0u8.hash(state);
                for x in v {
                    x.to_bits().hash(state);
                }
            }
            Data::S64(v) => {
                1u8.hash(state);
                v.hash(state);
            }
            Data::Pred(v) => {
                2u8.hash(state);
                v.hash(state);
            }
        }
    }
}

/// An immutable, shaped tensor. Elements are stored row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TensorValue {
    ty: TensorType,
    data: Data,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("tensor of type {ty} needs {expected} elements, got {got}")]
pub struct ElementCountError {
    pub ty: TensorType,
    pub expected: usize,
    pub got: usize,
}

impl TensorValue {
    pub fn new(ty: TensorType, data: Data) -> Result<Self, ElementCountError> {
        if data.len() != ty.element_count() || data.elem() != ty.elem {
            return Err(ElementCountError { expected: ty.element_count(), got: data.len(), ty });
        }
        Ok(TensorValue { ty, data })
    }

    pub fn f32(dims: impl Into<Vec<usize>>, values: Vec<f32>) -> Self {
        Self::new(TensorType::new(ElementType::F32, dims), Data::F32(values)).expect("element count")
    }

    pub fn s64(dims: impl Into<Vec<usize>>, values: Vec<i64>) -> Self {
        Self::new(TensorType::new(ElementType::S64, dims), Data::S64(values)).expect("element count")
    }

    pub fn pred(dims: impl Into<Vec<usize>>, values: Vec<bool>) -> Self {
        Self::new(TensorType::new(ElementType::Pred, dims), Data::Pred(values)).expect("element count")
    }

    pub fn scalar_f32(x: f32) -> Self {
        Self::f32(Vec::new(), vec![x])
    }

    pub fn scalar_s64(x: i64) -> Self {
        Self::s64(Vec::new(), vec![x])
    }

    pub fn scalar_pred(x: bool) -> Self {
        Self::pred(Vec::new(), vec![x])
    }

    /// A tensor of `ty` with every element equal to the scalar `fill`.
    pub fn splat(ty: &TensorType, fill: &TensorValue) -> Self {
        let n = ty.element_count();
        let data = match fill.data() {
            Data::F32(v) => Data::F32(vec![v[0]; n]),
            Data::S64(v) => Data::S64(vec![v[0]; n]),
            Data::Pred(v) => Data::Pred(vec![v[0]; n]),
        };
        TensorValue { ty: ty.clone(), data }
    }

    pub fn zeros(ty: &TensorType) -> Self {
        let n = ty.element_count();
        let data = match ty.elem {
            ElementType::F32 => Data::F32(vec![0.0; n]),
            ElementType::S64 => Data::S64(vec![0; n]),
            ElementType::Pred => Data::Pred(vec![false; n]),
        };
        TensorValue { ty: ty.clone(), data }
    }

    pub fn ty(&self) -> &TensorType {
        &self.ty
    }

    pub fn dims(&self) -> &[usize] {
        &self.ty.dims
    }

    pub fn elem(&self) -> ElementType {
        self.ty.elem
    }

    pub fn data(&self) -> &Data {
        &self.data
    }

    pub fn into_data(self) -> Data {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            Data::F32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_s64(&self) -> Option<&[i64]> {
        match &self.data {
            Data::S64(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_pred(&self) -> Option<&[bool]> {
        match &self.data {
            Data::Pred(v) => Some(v),
            _ => None,
        }
    }

    /// Same data under a new shape with equal element count.
    pub fn reshaped(&self, dims: Vec<usize>) -> Option<Self> {
        let ty = TensorType::new(self.ty.elem, dims);
        (ty.element_count() == self.len()).then(|| TensorValue { ty, data: self.data.clone() })
    }

    /// Interprets a rank-0 or rank-1 `s64` tensor as a list of indices.
    pub fn to_index_list(&self) -> Option<Vec<usize>> {
        if self.ty.rank() > 1 {
            return None;
        }
        let v = self.as_s64()?;
        v.iter().map(|&x| usize::try_from(x).ok()).collect()
    }

    pub fn index_list(values: &[usize]) -> Self {
        Self::s64(vec![values.len()], values.iter().map(|&x| x as i64).collect())
    }

    fn fmt_element(&self, f: &mut fmt::Formatter<'_>, i: usize) -> fmt::Result {
        match &self.data {
            Data::F32(v) => write!(f, "{}", FloatLit(v[i])),
            Data::S64(v) => write!(f, "{}", v[i]),
            Data::Pred(v) => write!(f, "{}", v[i]),
        }
    }

    fn fmt_nested(&self, f: &mut fmt::Formatter<'_>, axis: usize, offset: usize) -> fmt::Result {
        let dims = self.dims();
        if axis == dims.len() {
            return self.fmt_element(f, offset);
        }
        let stride: usize = dims[axis + 1..].iter().product();
        f.write_str("{")?;
        for i in 0..dims[axis] {
            if i > 0 {
                f.write_str(", ")?;
            }
            self.fmt_nested(f, axis + 1, offset + i * stride)?;
        }
        f.write_str("}")
    }
}

impl fmt::Display for TensorValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_nested(f, 0, 0)
    }
}

/// Shortest round-tripping decimal for an `f32`; exponent form for very
/// large or very small magnitudes.
pub struct FloatLit(pub f32);

impl fmt::Display for FloatLit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let plain = format!("{}", self.0);
        if plain.len() > 16 {
            write!(f, "{:e}", self.0)
        } else {
            f.write_str(&plain)
        }
    }
}

/// A runtime value: a tensor or a tuple of values.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Value {
    Tensor(TensorValue),
    Tuple(Vec<Value>),
}

impl Value {
    pub fn shape(&self) -> Shape {
        match self {
            Value::Tensor(t) => Shape::Array(t.ty().clone()),
            Value::Tuple(elems) => Shape::Tuple(elems.iter().map(Value::shape).collect()),
        }
    }

    pub fn as_tensor(&self) -> Option<&TensorValue> {
        match self {
            Value::Tensor(t) => Some(t),
            Value::Tuple(_) => None,
        }
    }

    pub fn into_tensor(self) -> Option<TensorValue> {
        match self {
            Value::Tensor(t) => Some(t),
            Value::Tuple(_) => None,
        }
    }

    /// A value of `shape` filled with zeros.
    pub fn zeros(shape: &Shape) -> Value {
        match shape {
            Shape::Array(t) => Value::Tensor(TensorValue::zeros(t)),
            Shape::Tuple(elems) => Value::Tuple(elems.iter().map(Value::zeros).collect()),
        }
    }
}

impl From<TensorValue> for Value {
    fn from(t: TensorValue) -> Self {
        Value::Tensor(t)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Tensor(t) => write!(f, "{t}"),
            Value::Tuple(elems) => {
                f.write_str("(")?;
                for (i, e) in elems.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{e}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Parses a scalar element spelled as in the literal grammar.
pub fn parse_scalar(text: &str, elem: ElementType) -> Option<Data> {
    match elem {
        ElementType::F32 => {
            let x = match text {
                "inf" | "+inf" => f32::INFINITY,
                "-inf" => f32::NEG_INFINITY,
                "nan" | "NaN" => f32::NAN,
                other => other.parse::<f32>().ok()?,
            };
            Some(Data::F32(vec![x]))
        }
        ElementType::S64 => text.parse::<i64>().ok().map(|x| Data::S64(vec![x])),
        ElementType::Pred => match text {
            "true" => Some(Data::Pred(vec![true])),
            "false" => Some(Data::Pred(vec![false])),
            _ => None,
        },
    }
}

/// Appends the elements of `more` (same element type) to `acc`.
pub fn extend_data(acc: &mut Data, more: Data) {
    match (acc, more) {
        (Data::F32(a), Data::F32(b)) => a.extend(b),
        (Data::S64(a), Data::S64(b)) => a.extend(b),
        (Data::Pred(a), Data::Pred(b)) => a.extend(b),
        _ => unreachable!("element type checked by the caller"),
    }
}

pub fn empty_data(elem: ElementType) -> Data {
    match elem {
        ElementType::F32 => Data::F32(Vec::new()),
        ElementType::S64 => Data::S64(Vec::new()),
        ElementType::Pred => Data::Pred(Vec::new()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literal_display() {
        assert_eq!(TensorValue::scalar_f32(0.0).to_string(), "0");
        assert_eq!(TensorValue::scalar_f32(0.1).to_string(), "0.1");
        assert_eq!(TensorValue::s64([2, 2], vec![1, 2, 3, 4]).to_string(), "{{1, 2}, {3, 4}}");
        assert_eq!(TensorValue::s64([0], vec![]).to_string(), "{}");
        assert_eq!(TensorValue::scalar_f32(f32::NEG_INFINITY).to_string(), "-inf");
        assert_eq!(TensorValue::scalar_f32(1e30).to_string(), "1e30");
        let t = Value::Tuple(vec![TensorValue::scalar_s64(1).into(), TensorValue::scalar_pred(true).into()]);
        assert_eq!(t.to_string(), "(1, true)");
    }

    #[test]
    fn bitwise_equality() {
        assert_eq!(TensorValue::scalar_f32(f32::NAN), TensorValue::scalar_f32(f32::NAN));
        assert_ne!(TensorValue::scalar_f32(0.0), TensorValue::scalar_f32(-0.0));
    }

    #[test]
    fn element_count_checked() {
        assert!(TensorValue::new(TensorType::new(ElementType::F32, [2]), Data::F32(vec![1.0])).is_err());
    }
}
