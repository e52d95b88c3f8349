use std::fmt;

use crate::frontend::{FnRef, Literal, ValueType};
use crate::types::TensorType;
use crate::value::{TensorValue, Value};

/// Abstract value of the inference lattice.
///
/// Constants refine types: `Bottom ⊑ Const(c) ⊑ Typed(type of c) ⊑ Top`.
/// Tuples are ordered pointwise, so a tuple value is always spelled
/// `Tuple`, never `Typed` of a tuple type.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AbstractValue {
    Bottom,
    /// A known tensor or the all-dims marker.
    Const(Literal),
    Typed(TensorType),
    Tuple(Vec<AbstractValue>),
    FnRef(FnRef),
    Top,
}

impl AbstractValue {
    pub fn of_tensor(t: TensorValue) -> Self {
        AbstractValue::Const(Literal::Tensor(t))
    }

    pub fn of_literal(lit: &Literal) -> Self {
        match lit {
            Literal::Tuple(elems) => AbstractValue::Tuple(elems.iter().map(Self::of_literal).collect()),
            Literal::Fn(r) => AbstractValue::FnRef(r.clone()),
            other => AbstractValue::Const(other.clone()),
        }
    }

    pub fn of_value(v: &Value) -> Self {
        Self::of_literal(&Literal::from_value(v))
    }

    /// The abstraction of "any value of type `ty`".
    pub fn of_type(ty: &ValueType) -> Self {
        match ty {
            ValueType::Tensor(t) => AbstractValue::Typed(t.clone()),
            ValueType::Tuple(elems) => AbstractValue::Tuple(elems.iter().map(Self::of_type).collect()),
            ValueType::Fn(r) => AbstractValue::FnRef(r.clone()),
            ValueType::AllDims => AbstractValue::Const(Literal::AllDims),
        }
    }

    pub fn join(&self, other: &Self) -> Self {
        use AbstractValue::*;
        match (self, other) {
            (Bottom, x) | (x, Bottom) => x.clone(),
            (Top, _) | (_, Top) => Top,
            (Const(a), Const(b)) => {
                if a == b {
                    Const(a.clone())
                } else {
                    match (a, b) {
                        (Literal::Tensor(x), Literal::Tensor(y)) if x.ty() == y.ty() => Typed(x.ty().clone()),
                        _ => Top,
                    }
                }
            }
            (Const(Literal::Tensor(c)), Typed(t)) | (Typed(t), Const(Literal::Tensor(c))) if c.ty() == t => Typed(t.clone()),
            (Typed(a), Typed(b)) if a == b => Typed(a.clone()),
            (Tuple(a), Tuple(b)) if a.len() == b.len() => Tuple(a.iter().zip(b).map(|(x, y)| x.join(y)).collect()),
            (FnRef(a), FnRef(b)) if a == b => FnRef(a.clone()),
            _ => Top,
        }
    }

    /// Lattice order, derived from `join`.
    pub fn leq(&self, other: &Self) -> bool {
        self.join(other) == *other
    }

    pub fn is_bottom(&self) -> bool {
        matches!(self, AbstractValue::Bottom)
    }

    pub fn as_const_tensor(&self) -> Option<&TensorValue> {
        match self {
            AbstractValue::Const(Literal::Tensor(t)) => Some(t),
            _ => None,
        }
    }

    /// Tensor type of a `Const` tensor or `Typed` value.
    pub fn tensor_type(&self) -> Option<&TensorType> {
        match self {
            AbstractValue::Const(Literal::Tensor(t)) => Some(t.ty()),
            AbstractValue::Typed(t) => Some(t),
            _ => None,
        }
    }

    /// Full type when every component is known; `None` if any part is
    /// `Bottom` or `Top`.
    pub fn value_type(&self) -> Option<ValueType> {
        match self {
            AbstractValue::Bottom | AbstractValue::Top => None,
            AbstractValue::Const(lit) => Some(lit.ty()),
            AbstractValue::Typed(t) => Some(ValueType::Tensor(t.clone())),
            AbstractValue::Tuple(elems) => elems.iter().map(Self::value_type).collect::<Option<_>>().map(ValueType::Tuple),
            AbstractValue::FnRef(r) => Some(ValueType::Fn(r.clone())),
        }
    }

    /// Known runtime value, if every component is a tensor constant.
    pub fn const_value(&self) -> Option<Value> {
        match self {
            AbstractValue::Const(Literal::Tensor(t)) => Some(Value::Tensor(t.clone())),
            AbstractValue::Tuple(elems) => elems.iter().map(Self::const_value).collect::<Option<_>>().map(Value::Tuple),
            _ => None,
        }
    }

    /// True when the value has a runtime form and every component's shape
    /// is known.
    pub fn is_runtime_typed(&self) -> bool {
        match self {
            AbstractValue::Const(Literal::Tensor(_)) | AbstractValue::Typed(_) => true,
            AbstractValue::Tuple(elems) => elems.iter().all(Self::is_runtime_typed),
            _ => false,
        }
    }

    /// True when the value is known at compile time, so lowering needs no
    /// runtime input for it (constants, tuples of constants, function
    /// references and the dims marker).
    pub fn is_static(&self) -> bool {
        match self {
            AbstractValue::Const(_) | AbstractValue::FnRef(_) => true,
            AbstractValue::Tuple(elems) => elems.iter().all(Self::is_static),
            _ => false,
        }
    }
}

impl fmt::Display for AbstractValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AbstractValue::Bottom => f.write_str("bottom"),
            AbstractValue::Top => f.write_str("top"),
            AbstractValue::Const(lit) => write!(f, "const {lit}"),
            AbstractValue::Typed(t) => write!(f, "{t}"),
            AbstractValue::FnRef(r) => write!(f, "fn {r}"),
            AbstractValue::Tuple(elems) => {
                f.write_str("tuple(")?;
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ElementType;
    use AbstractValue::*;

    fn c(x: i64) -> AbstractValue {
        AbstractValue::of_tensor(TensorValue::scalar_s64(x))
    }

    #[test]
    fn examples() {
        assert_eq!(Bottom.join(&c(3)), c(3));
        assert_eq!(c(3).join(&c(4)), Typed(TensorType::scalar(ElementType::S64)));
        let a = Typed(TensorType::new(ElementType::F32, [10]));
        let b = Typed(TensorType::new(ElementType::F32, [20]));
        assert_eq!(a.join(&b), Top);
    }

    #[test]
    fn tuple_pointwise() {
        let t = Tuple(vec![c(1), c(2)]);
        let u = Tuple(vec![c(1), c(5)]);
        assert_eq!(t.join(&u), Tuple(vec![c(1), Typed(TensorType::scalar(ElementType::S64))]));
        assert_eq!(t.join(&Tuple(vec![c(1)])), Top);
    }
}
