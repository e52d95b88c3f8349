use super::{CompId, ElemOp, HloOp};
use crate::types::{ElementType, Shape, TensorType};

/// Parameter and root shapes of a computation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompSig {
    pub params: Vec<Shape>,
    pub root: Shape,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{op}: {message}")]
pub struct ShapeError {
    pub op: &'static str,
    pub message: String,
}

fn err<T>(op: &HloOp, message: impl Into<String>) -> Result<T, ShapeError> {
    Err(ShapeError { op: op.kind_name(), message: message.into() })
}

fn array<'a>(op: &HloOp, s: &'a Shape, what: &str) -> Result<&'a TensorType, ShapeError> {
    match s {
        Shape::Array(t) => Ok(t),
        Shape::Tuple(_) => err(op, format!("{what} must be an array, got {s}")),
    }
}

fn is_permutation(p: &[usize], n: usize) -> bool {
    let mut seen = vec![false; n];
    p.len() == n && p.iter().all(|&i| i < n && !std::mem::replace(&mut seen[i], true))
}

fn distinct_in_range(d: &[usize], n: usize) -> bool {
    let mut seen = vec![false; n];
    d.iter().all(|&i| i < n && !std::mem::replace(&mut seen[i], true))
}

/// Checks that `callee` maps `n` scalars of the given element types to a
/// scalar; returns the root element type.
fn scalar_callee(op: &HloOp, sig: &CompSig, elems: &[ElementType]) -> Result<ElementType, ShapeError> {
    if sig.params.len() != elems.len() {
        return err(op, format!("to_apply takes {} parameters, op supplies {}", sig.params.len(), elems.len()));
    }
    for (i, (p, &e)) in sig.params.iter().zip(elems).enumerate() {
        if !p.is_scalar_of(e) {
            return err(op, format!("to_apply parameter {i} has shape {p}, expected {e}[]"));
        }
    }
    match &sig.root {
        Shape::Array(t) if t.is_scalar() => Ok(t.elem),
        other => err(op, format!("to_apply must return a scalar, returns {other}")),
    }
}

/// Result shape of `op` applied to operands of the given shapes. `sigs`
/// resolves computation references.
pub fn shape_infer(
    op: &HloOp,
    operands: &[&Shape],
    sigs: &dyn Fn(CompId) -> Option<CompSig>,
) -> Result<Shape, ShapeError> {
    let arity = |n: usize| -> Result<(), ShapeError> {
        if operands.len() != n {
            return err(op, format!("expects {n} operands, got {}", operands.len()));
        }
        Ok(())
    };
    let sig = |c: CompId| sigs(c).ok_or_else(|| ShapeError { op: op.kind_name(), message: format!("unknown computation #{}", c.0) });
    match op {
        HloOp::Parameter { shape, .. } => {
            arity(0)?;
            Ok(shape.clone())
        }
        HloOp::Constant(v) => {
            arity(0)?;
            Ok(v.shape())
        }
        HloOp::Rng { dims } => {
            arity(0)?;
            Ok(Shape::array(ElementType::F32, dims.clone()))
        }
        HloOp::Tuple => Ok(Shape::Tuple(operands.iter().map(|s| (*s).clone()).collect())),
        HloOp::GetTupleElement { index } => {
            arity(1)?;
            match operands[0] {
                Shape::Tuple(elems) if *index < elems.len() => Ok(elems[*index].clone()),
                Shape::Tuple(elems) => err(op, format!("index {index} out of range for {}-tuple", elems.len())),
                s => err(op, format!("operand must be a tuple, got {s}")),
            }
        }
        HloOp::Elementwise(e) => {
            arity(e.arity())?;
            let ts: Vec<&TensorType> =
                operands.iter().enumerate().map(|(i, s)| array(op, s, &format!("operand {i}"))).collect::<Result<_, _>>()?;
            match e {
                ElemOp::Select => {
                    if ts[0].elem != ElementType::Pred {
                        return err(op, format!("predicate must be pred, got {}", ts[0]));
                    }
                    if ts[1] != ts[2] {
                        return err(op, format!("branches differ: {} vs {}", ts[1], ts[2]));
                    }
                    if ts[0].dims != ts[1].dims {
                        return err(op, format!("predicate shape {} does not match {}", ts[0], ts[1]));
                    }
                    Ok(Shape::Array(ts[1].clone()))
                }
                ElemOp::Exp => {
                    if ts[0].elem != ElementType::F32 {
                        return err(op, format!("requires f32, got {}", ts[0]));
                    }
                    Ok(Shape::Array(ts[0].clone()))
                }
                _ => {
                    if ts[0] != ts[1] {
                        return err(op, format!("operand types differ: {} vs {}", ts[0], ts[1]));
                    }
                    if !ts[0].elem.is_numeric() {
                        return err(op, format!("requires a numeric element type, got {}", ts[0]));
                    }
                    if e.is_comparison() {
                        Ok(Shape::Array(ts[0].with_elem(ElementType::Pred)))
                    } else {
                        Ok(Shape::Array(ts[0].clone()))
                    }
                }
            }
        }
        HloOp::Dot(d) => {
            arity(2)?;
            let l = array(op, operands[0], "lhs")?;
            let r = array(op, operands[1], "rhs")?;
            if l.elem != r.elem || !l.elem.is_numeric() {
                return err(op, format!("operands {l} and {r} must share a numeric element type"));
            }
            if d.lhs_contracting.len() != d.rhs_contracting.len() || d.lhs_batch.len() != d.rhs_batch.len() {
                return err(op, "dimension number lists have mismatched lengths");
            }
            let lhs_used: Vec<usize> = d.lhs_batch.iter().chain(&d.lhs_contracting).copied().collect();
            let rhs_used: Vec<usize> = d.rhs_batch.iter().chain(&d.rhs_contracting).copied().collect();
            if !distinct_in_range(&lhs_used, l.rank()) || !distinct_in_range(&rhs_used, r.rank()) {
                return err(op, "dimension numbers out of range or repeated");
            }
            for (&a, &b) in d.lhs_contracting.iter().zip(&d.rhs_contracting).chain(d.lhs_batch.iter().zip(&d.rhs_batch)) {
                if l.dims[a] != r.dims[b] {
                    return err(op, format!("lhs dim {a} ({}) does not match rhs dim {b} ({})", l.dims[a], r.dims[b]));
                }
            }
            let mut dims: Vec<usize> = d.lhs_batch.iter().map(|&i| l.dims[i]).collect();
            dims.extend((0..l.rank()).filter(|i| !lhs_used.contains(i)).map(|i| l.dims[i]));
            dims.extend((0..r.rank()).filter(|i| !rhs_used.contains(i)).map(|i| r.dims[i]));
            Ok(Shape::array(l.elem, dims))
        }
        HloOp::Map { to_apply, dimensions } => {
            if operands.is_empty() {
                return err(op, "expects at least one operand");
            }
            let ts: Vec<&TensorType> =
                operands.iter().enumerate().map(|(i, s)| array(op, s, &format!("operand {i}"))).collect::<Result<_, _>>()?;
            if ts.iter().any(|t| t.dims != ts[0].dims) {
                return err(op, "operands must share one shape");
            }
            if *dimensions != (0..ts[0].rank()).collect::<Vec<_>>() {
                return err(op, format!("dimensions must be all of 0..{}", ts[0].rank()));
            }
            let elems: Vec<ElementType> = ts.iter().map(|t| t.elem).collect();
            let out = scalar_callee(op, &sig(*to_apply)?, &elems)?;
            Ok(Shape::array(out, ts[0].dims.clone()))
        }
        HloOp::Reduce { to_apply, dimensions } => {
            arity(2)?;
            let x = array(op, operands[0], "operand")?;
            let init = array(op, operands[1], "init")?;
            if !init.is_scalar() || init.elem != x.elem {
                return err(op, format!("init must be {}[], got {init}", x.elem));
            }
            if !distinct_in_range(dimensions, x.rank()) {
                return err(op, format!("dimensions {dimensions:?} invalid for rank {}", x.rank()));
            }
            let out = scalar_callee(op, &sig(*to_apply)?, &[x.elem, x.elem])?;
            if out != x.elem {
                return err(op, format!("to_apply returns {out}, expected {}", x.elem));
            }
            let dims = (0..x.rank()).filter(|i| !dimensions.contains(i)).map(|i| x.dims[i]).collect::<Vec<_>>();
            Ok(Shape::array(x.elem, dims))
        }
        HloOp::Broadcast { dimensions, dims } => {
            arity(1)?;
            let x = array(op, operands[0], "operand")?;
            if dimensions.len() != x.rank() {
                return err(op, format!("dimensions has {} entries for rank-{} operand", dimensions.len(), x.rank()));
            }
            if !distinct_in_range(dimensions, dims.len()) || dimensions.windows(2).any(|w| w[0] >= w[1]) {
                return err(op, format!("dimensions {dimensions:?} must be increasing and below {}", dims.len()));
            }
            for (i, &d) in dimensions.iter().enumerate() {
                if x.dims[i] != dims[d] {
                    return err(op, format!("operand dim {i} ({}) does not match result dim {d} ({})", x.dims[i], dims[d]));
                }
            }
            Ok(Shape::array(x.elem, dims.clone()))
        }
        HloOp::Transpose { permutation } => {
            arity(1)?;
            let x = array(op, operands[0], "operand")?;
            if !is_permutation(permutation, x.rank()) {
                return err(op, format!("{permutation:?} is not a permutation of rank {}", x.rank()));
            }
            Ok(Shape::array(x.elem, permutation.iter().map(|&p| x.dims[p]).collect::<Vec<_>>()))
        }
        HloOp::Reshape { dims } => {
            arity(1)?;
            let x = array(op, operands[0], "operand")?;
            let n: usize = dims.iter().product();
            if n != x.element_count() {
                return err(op, format!("cannot reshape {x} ({} elements) to {n} elements", x.element_count()));
            }
            Ok(Shape::array(x.elem, dims.clone()))
        }
        HloOp::Conditional { true_comp, false_comp } => {
            arity(3)?;
            if !operands[0].is_scalar_of(ElementType::Pred) {
                return err(op, format!("predicate must be pred[], got {}", operands[0]));
            }
            let t = sig(*true_comp)?;
            let f = sig(*false_comp)?;
            if t.params.len() != 1 || t.params[0] != *operands[1] {
                return err(op, "true computation parameter does not match its operand");
            }
            if f.params.len() != 1 || f.params[0] != *operands[2] {
                return err(op, "false computation parameter does not match its operand");
            }
            if t.root != f.root {
                return err(op, format!("branch results differ: {} vs {}", t.root, f.root));
            }
            Ok(t.root)
        }
        HloOp::While { condition, body } => {
            arity(1)?;
            let state = operands[0];
            let c = sig(*condition)?;
            let b = sig(*body)?;
            if c.params.len() != 1 || c.params[0] != *state || !c.root.is_scalar_of(ElementType::Pred) {
                return err(op, format!("condition must map {state} to pred[]"));
            }
            if b.params.len() != 1 || b.params[0] != *state || b.root != *state {
                return err(op, format!("body must map {state} to itself"));
            }
            Ok(state.clone())
        }
    }
}
