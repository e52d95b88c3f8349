//! Element types, tensor types and HLO shapes shared by every stage.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ElementType {
    F32,
    S64,
    Pred,
}

impl ElementType {
    pub const ALL: [ElementType; 3] = [ElementType::F32, ElementType::S64, ElementType::Pred];

    pub fn name(self) -> &'static str {
        match self {
            ElementType::F32 => "f32",
            ElementType::S64 => "s64",
            ElementType::Pred => "pred",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "f32" => Some(ElementType::F32),
            "s64" => Some(ElementType::S64),
            "pred" => Some(ElementType::Pred),
            _ => None,
        }
    }

    /// Arithmetic (add, multiply, ...) is defined on this element type.
    pub fn is_numeric(self) -> bool {
        matches!(self, ElementType::F32 | ElementType::S64)
    }
}

impl fmt::Display for ElementType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Element type plus a static shape. Rank 0 is a scalar.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorType {
    pub elem: ElementType,
    pub dims: Vec<usize>,
}

impl TensorType {
    pub fn new(elem: ElementType, dims: impl Into<Vec<usize>>) -> Self {
        TensorType { elem, dims: dims.into() }
    }

    pub fn scalar(elem: ElementType) -> Self {
        TensorType { elem, dims: Vec::new() }
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn element_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn with_elem(&self, elem: ElementType) -> Self {
        TensorType { elem, dims: self.dims.clone() }
    }
}

/// Frontend spelling: `f32[10,10]`, `pred[]`.
impl fmt::Display for TensorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[", self.elem)?;
        write_list(f, &self.dims)?;
        f.write_str("]")
    }
}

/// The type of an HLO value: an array or a (possibly nested) tuple.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Shape {
    Array(TensorType),
    Tuple(Vec<Shape>),
}

impl Shape {
    pub fn scalar(elem: ElementType) -> Self {
        Shape::Array(TensorType::scalar(elem))
    }

    pub fn array(elem: ElementType, dims: impl Into<Vec<usize>>) -> Self {
        Shape::Array(TensorType::new(elem, dims))
    }

    pub fn as_array(&self) -> Option<&TensorType> {
        match self {
            Shape::Array(t) => Some(t),
            Shape::Tuple(_) => None,
        }
    }

    pub fn as_tuple(&self) -> Option<&[Shape]> {
        match self {
            Shape::Tuple(elems) => Some(elems),
            Shape::Array(_) => None,
        }
    }

    pub fn is_scalar_of(&self, elem: ElementType) -> bool {
        matches!(self, Shape::Array(t) if t.is_scalar() && t.elem == elem)
    }
}

/// HLO spelling with the default minor-to-major layout: `f32[10,10]{0,1}`,
/// `f32[]`, `(f32[], s64[])`.
impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Array(t) => {
                write!(f, "{t}")?;
                if !t.is_scalar() {
                    f.write_str("{")?;
                    let layout: Vec<usize> = (0..t.rank()).collect();
                    write_list(f, &layout)?;
                    f.write_str("}")?;
                }
                Ok(())
            }
            Shape::Tuple(elems) => {
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

pub(crate) fn write_list(f: &mut fmt::Formatter<'_>, items: &[usize]) -> fmt::Result {
    for (i, d) in items.iter().enumerate() {
        if i > 0 {
            f.write_str(",")?;
        }
        write!(f, "{d}")?;
    }
    Ok(())
}

/// Row-major strides for `dims`.
pub fn strides(dims: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * dims[i + 1];
    }
    strides
}

/// Converts a flat row-major offset into a multi-index.
pub fn unravel(mut offset: usize, dims: &[usize], out: &mut [usize]) {
    for i in (0..dims.len()).rev() {
        let d = dims[i].max(1);
        out[i] = offset % d;
        offset /= d;
    }
}
