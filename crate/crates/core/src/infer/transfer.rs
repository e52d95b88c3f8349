//! Transfer functions of the builtins.

use super::{AbstractValue, InferError};
use crate::builtins::{lookup, BuiltinKind};
use crate::frontend::{FnRef, Literal};
use crate::hlo::{DotDims, ElemOp};
use crate::interp::kernels;
use crate::types::{ElementType, TensorType};
use crate::value::TensorValue;

/// Largest result folded to a constant during inference.
pub const FOLD_LIMIT: usize = 4096;

/// Infers the result of applying a scalar callback to abstract scalar
/// arguments.
pub type CallbackFn<'a> = dyn FnMut(&FnRef, &[AbstractValue]) -> Result<AbstractValue, InferError> + 'a;

use AbstractValue as A;

/// Reads a constant index list (`s64[]` or `s64[k]`).
pub fn static_indices(v: &AbstractValue) -> Option<Vec<usize>> {
    v.as_const_tensor()?.to_index_list()
}

/// Reduction dimensions: the all-dims marker, a single axis or an axis list.
/// Must be distinct and in range; returned sorted.
pub fn static_reduce_dims(v: Option<&AbstractValue>, rank: usize) -> Option<Vec<usize>> {
    let mut dims = match v {
        None | Some(A::Const(Literal::AllDims)) => return Some((0..rank).collect()),
        Some(v) => static_indices(v)?,
    };
    dims.sort_unstable();
    let distinct = dims.windows(2).all(|w| w[0] < w[1]);
    (distinct && dims.iter().all(|&d| d < rank)).then_some(dims)
}

/// Right-aligned broadcast of several extents lists.
pub fn broadcast_dims(shapes: &[&[usize]]) -> Option<Vec<usize>> {
    let rank = shapes.iter().map(|s| s.len()).max().unwrap_or(0);
    let mut out = vec![1; rank];
    for s in shapes {
        let off = rank - s.len();
        for (i, &d) in s.iter().enumerate() {
            let o = &mut out[off + i];
            if *o == 1 {
                *o = d;
            } else if d != 1 && d != *o {
                return None;
            }
        }
    }
    Some(out)
}

/// Result element type of an elementwise op on operand types, or `None`
/// when the operands are ill-typed for it.
pub fn elementwise_type(op: ElemOp, tys: &[&TensorType]) -> Option<TensorType> {
    if tys.len() != op.arity() {
        return None;
    }
    match op {
        ElemOp::Exp => (tys[0].elem == ElementType::F32).then(|| tys[0].clone()),
        ElemOp::Select => {
            let ok = tys[0].elem == ElementType::Pred && tys[0].dims == tys[1].dims && tys[1] == tys[2];
            ok.then(|| tys[1].clone())
        }
        _ => {
            let ok = tys[0] == tys[1] && tys[0].elem.is_numeric();
            ok.then(|| if op.is_comparison() { tys[0].with_elem(ElementType::Pred) } else { tys[0].clone() })
        }
    }
}

/// Type of `matmul(a, b)`: matrix-vector or matrix-matrix.
pub fn matmul_type(a: &TensorType, b: &TensorType) -> Option<TensorType> {
    if a.elem != b.elem || !a.elem.is_numeric() || a.rank() != 2 || !(1..=2).contains(&b.rank()) || a.dims[1] != b.dims[0] {
        return None;
    }
    let mut dims = vec![a.dims[0]];
    dims.extend_from_slice(&b.dims[1..]);
    Some(TensorType::new(a.elem, dims))
}

fn outer_type(a: &TensorType, b: &TensorType) -> Option<TensorType> {
    let ok = a.elem == b.elem && a.elem.is_numeric() && a.rank() == 1 && b.rank() == 1;
    ok.then(|| TensorType::new(a.elem, vec![a.dims[0], b.dims[0]]))
}

fn permuted(t: &TensorType, perm: &[usize]) -> Option<TensorType> {
    let mut seen = vec![false; t.rank()];
    let ok = perm.len() == t.rank() && perm.iter().all(|&p| p < t.rank() && !std::mem::replace(&mut seen[p], true));
    ok.then(|| TensorType::new(t.elem, perm.iter().map(|&p| t.dims[p]).collect::<Vec<_>>()))
}

/// Validates `broadcast_in_dim` operands; same rule as the HLO op.
pub fn broadcast_in_dim_ok(t: &TensorType, shape: &[usize], dims: &[usize]) -> bool {
    dims.len() == t.rank()
        && dims.windows(2).all(|w| w[0] < w[1])
        && dims.iter().enumerate().all(|(i, &d)| d < shape.len() && shape[d] == t.dims[i])
}

fn scalar_elem(v: &AbstractValue) -> Option<ElementType> {
    v.tensor_type().filter(|t| t.is_scalar()).map(|t| t.elem)
}

/// Neutral element of a `mapreduce` combiner.
pub fn neutral_element(op: &FnRef, elem: ElementType) -> Option<TensorValue> {
    if !op.captures.is_empty() {
        return None;
    }
    Some(match (op.name.as_str(), elem) {
        ("add", ElementType::F32) => TensorValue::scalar_f32(0.0),
        ("add", ElementType::S64) => TensorValue::scalar_s64(0),
        ("multiply", ElementType::F32) => TensorValue::scalar_f32(1.0),
        ("multiply", ElementType::S64) => TensorValue::scalar_s64(1),
        ("maximum", ElementType::F32) => TensorValue::scalar_f32(f32::NEG_INFINITY),
        ("maximum", ElementType::S64) => TensorValue::scalar_s64(i64::MIN),
        _ => return None,
    })
}

/// Abstract result of a builtin call. `callback` infers scalar callbacks
/// used by `broadcast`, `mapreduce` and `reduce_init`.
///
/// Unsupported argument combinations give `Top`; the only hard error is a
/// wrong argument count.
pub fn builtin_transfer(name: &str, args: &[AbstractValue], callback: &mut CallbackFn<'_>) -> Result<AbstractValue, InferError> {
    let Some(b) = lookup(name) else {
        return Ok(A::Top);
    };
    if !b.accepts(args.len()) {
        return Err(InferError::Arity { callee: name.to_string(), expected: b.arity_text(), got: args.len() });
    }
    if args.iter().any(AbstractValue::is_bottom) {
        return Ok(A::Bottom);
    }
    let ty = |i: usize| args[i].tensor_type();
    let consts: Option<Vec<&TensorValue>> = args
        .iter()
        .enumerate()
        .filter(|(i, _)| !b.is_static(*i))
        .map(|(_, a)| a.as_const_tensor())
        .collect();
    let result = match b.kind {
        BuiltinKind::Identity => return Ok(args[0].clone()),
        BuiltinKind::Elementwise(op) => {
            let Some(tys) = args.iter().map(AbstractValue::tensor_type).collect::<Option<Vec<_>>>() else {
                return Ok(A::Top);
            };
            let Some(out) = elementwise_type(op, &tys) else {
                return Ok(A::Top);
            };
            fold(&out, consts, |c| kernels::elementwise(op, c).ok())
        }
        BuiltinKind::Matmul => {
            let (Some(a), Some(bt)) = (ty(0), ty(1)) else { return Ok(A::Top) };
            let Some(out) = matmul_type(a, bt) else { return Ok(A::Top) };
            fold(&out, consts, |c| kernels::dot(c[0], c[1], &DotDims::matmul()).ok())
        }
        BuiltinKind::Outer => {
            let (Some(a), Some(bt)) = (ty(0), ty(1)) else { return Ok(A::Top) };
            let Some(out) = outer_type(a, bt) else { return Ok(A::Top) };
            fold(&out, consts, |c| kernels::dot(c[0], c[1], &DotDims::default()).ok())
        }
        BuiltinKind::Transpose => {
            let (Some(x), Some(perm)) = (ty(0), static_indices(&args[1])) else { return Ok(A::Top) };
            let Some(out) = permuted(x, &perm) else { return Ok(A::Top) };
            fold(&out, consts, |c| Some(kernels::transpose(c[0], &perm)))
        }
        BuiltinKind::Reshape => {
            let (Some(x), Some(shape)) = (ty(0), static_indices(&args[1])) else { return Ok(A::Top) };
            let out = TensorType::new(x.elem, shape.clone());
            if out.element_count() != x.element_count() {
                return Ok(A::Top);
            }
            fold(&out, consts, |c| c[0].reshaped(shape.clone()))
        }
        BuiltinKind::BroadcastInDim => {
            let (Some(x), Some(shape), Some(dims)) = (ty(0), static_indices(&args[1]), static_indices(&args[2])) else {
                return Ok(A::Top);
            };
            if !broadcast_in_dim_ok(x, &shape, &dims) {
                return Ok(A::Top);
            }
            let out = TensorType::new(x.elem, shape.clone());
            fold(&out, consts, |c| Some(kernels::broadcast(c[0], &dims, &shape)))
        }
        BuiltinKind::Sum => {
            let Some(x) = ty(0) else { return Ok(A::Top) };
            let Some(dims) = static_reduce_dims(args.get(1), x.rank()) else { return Ok(A::Top) };
            let Some(init) = neutral_element(&FnRef::plain("add"), x.elem) else { return Ok(A::Top) };
            let out = reduced_type(x, &dims);
            fold(&out, consts, |c| kernels::reduce_elementwise(c[0], &init, &dims, ElemOp::Add).ok())
        }
        BuiltinKind::Dim => {
            let (Some(x), Some(axis)) = (ty(0), args[1].as_const_tensor()) else { return Ok(A::Top) };
            let axis = match axis.to_index_list().as_deref() {
                Some(&[a]) if axis.dims().is_empty() && a < x.rank() => a,
                _ => return Ok(A::Top),
            };
            return Ok(A::of_tensor(TensorValue::scalar_s64(x.dims[axis] as i64)));
        }
        BuiltinKind::Rng => {
            let Some(shape) = static_indices(&args[0]) else { return Ok(A::Top) };
            return Ok(A::Typed(TensorType::new(ElementType::F32, shape)));
        }
        BuiltinKind::Broadcast => {
            let A::FnRef(f) = &args[0] else { return Ok(A::Top) };
            let Some(tys) = args[1..].iter().map(AbstractValue::tensor_type).collect::<Option<Vec<_>>>() else {
                return Ok(A::Top);
            };
            let Some(dims) = broadcast_dims(&tys.iter().map(|t| t.dims.as_slice()).collect::<Vec<_>>()) else {
                return Ok(A::Top);
            };
            let scalars: Vec<AbstractValue> = tys.iter().map(|t| A::Typed(TensorType::scalar(t.elem))).collect();
            let Some(elem) = scalar_elem(&callback(f, &scalars)?) else { return Ok(A::Top) };
            return Ok(A::Typed(TensorType::new(elem, dims)));
        }
        BuiltinKind::MapReduce => {
            let (A::FnRef(f), A::FnRef(op), Some(x)) = (&args[0], &args[1], ty(2)) else { return Ok(A::Top) };
            let Some(dims) = static_reduce_dims(args.get(3), x.rank()) else { return Ok(A::Top) };
            let Some(elem) = scalar_elem(&callback(f, &[A::Typed(TensorType::scalar(x.elem))])?) else {
                return Ok(A::Top);
            };
            if neutral_element(op, elem).is_none() {
                return Ok(A::Top);
            }
            let s = A::Typed(TensorType::scalar(elem));
            if scalar_elem(&callback(op, &[s.clone(), s])?) != Some(elem) {
                return Ok(A::Top);
            }
            return Ok(A::Typed(reduced_type(&x.with_elem(elem), &dims)));
        }
        BuiltinKind::ReduceInit => {
            let (A::FnRef(op), Some(x), Some(init)) = (&args[0], ty(1), ty(2)) else { return Ok(A::Top) };
            let Some(dims) = static_reduce_dims(Some(&args[3]), x.rank()) else { return Ok(A::Top) };
            if !init.is_scalar() || init.elem != x.elem {
                return Ok(A::Top);
            }
            let s = A::Typed(TensorType::scalar(x.elem));
            if scalar_elem(&callback(op, &[s.clone(), s])?) != Some(x.elem) {
                return Ok(A::Top);
            }
            return Ok(A::Typed(reduced_type(x, &dims)));
        }
    };
    Ok(result)
}

pub fn reduced_type(x: &TensorType, dims: &[usize]) -> TensorType {
    TensorType::new(x.elem, (0..x.rank()).filter(|i| !dims.contains(i)).map(|i| x.dims[i]).collect::<Vec<_>>())
}

/// `Const` when every dynamic operand is constant, the result is small and
/// the kernel succeeds; otherwise `Typed`.
fn fold(
    out: &TensorType,
    consts: Option<Vec<&TensorValue>>,
    eval: impl FnOnce(&[&TensorValue]) -> Option<TensorValue>,
) -> AbstractValue {
    if let Some(c) = consts {
        if out.element_count() <= FOLD_LIMIT {
            if let Some(v) = eval(&c) {
                debug_assert_eq!(v.ty(), out);
                return A::of_tensor(v);
            }
        }
    }
    A::Typed(out.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_callbacks(_: &FnRef, _: &[AbstractValue]) -> Result<AbstractValue, InferError> {
        Ok(A::Top)
    }

    fn t(elem: ElementType, dims: &[usize]) -> AbstractValue {
        A::Typed(TensorType::new(elem, dims.to_vec()))
    }

    #[test]
    fn matmul_shapes() {
        let r = builtin_transfer("matmul", &[t(ElementType::F32, &[10, 10]), t(ElementType::F32, &[10])], &mut no_callbacks);
        assert_eq!(r.unwrap(), t(ElementType::F32, &[10]));
    }

    #[test]
    fn transpose_needs_const_perm() {
        let perm = A::of_tensor(TensorValue::index_list(&[1, 0]));
        let r = builtin_transfer("transpose", &[t(ElementType::F32, &[3, 4]), perm], &mut no_callbacks).unwrap();
        assert_eq!(r, t(ElementType::F32, &[4, 3]));
        let r = builtin_transfer("transpose", &[t(ElementType::F32, &[3, 4]), t(ElementType::S64, &[2])], &mut no_callbacks);
        assert_eq!(r.unwrap(), A::Top);
    }

    #[test]
    fn constant_folding() {
        let two = A::of_tensor(TensorValue::scalar_s64(2));
        let three = A::of_tensor(TensorValue::scalar_s64(3));
        let r = builtin_transfer("add", &[two, three], &mut no_callbacks).unwrap();
        assert_eq!(r, A::of_tensor(TensorValue::scalar_s64(5)));
    }

    #[test]
    fn arity_is_an_error() {
        assert!(builtin_transfer("add", &[A::Top], &mut no_callbacks).is_err());
        assert_eq!(builtin_transfer("foo", &[], &mut no_callbacks).unwrap(), A::Top);
    }

    #[test]
    fn right_aligned_broadcast() {
        assert_eq!(broadcast_dims(&[&[3, 1], &[1, 4]]), Some(vec![3, 4]));
        assert_eq!(broadcast_dims(&[&[10], &[]]), Some(vec![10]));
        assert_eq!(broadcast_dims(&[&[2, 3], &[3]]), Some(vec![2, 3]));
        assert_eq!(broadcast_dims(&[&[2], &[3]]), None);
    }
}
