//! Dense kernels on row-major tensors.

use crate::hlo::{DotDims, ElemOp};
use crate::types::{strides, unravel, ElementType, TensorType};
use crate::value::{Data, TensorValue};

use super::EvalError;

fn max_f32(a: f32, b: f32) -> f32 {
    if a.is_nan() || b.is_nan() {
        f32::NAN
    } else {
        a.max(b)
    }
}

/// Applies an elementwise op to same-shaped operands.
pub fn elementwise(op: ElemOp, args: &[&TensorValue]) -> Result<TensorValue, EvalError> {
    if args.len() != op.arity() {
        return Err(EvalError::Type(format!("{} expects {} operands", op.kind_name(), op.arity())));
    }
    let ty = args[0].ty().clone();
    let mismatch = || EvalError::Type(format!("{} operand types differ", op.kind_name()));
    let data = match op {
        ElemOp::Exp => match args[0].data() {
            Data::F32(a) => Data::F32(a.iter().map(|x| x.exp()).collect()),
            _ => return Err(EvalError::Type("exponential requires f32".into())),
        },
        ElemOp::Select => {
            let (Data::Pred(p), a, b) = (args[0].data(), args[1].data(), args[2].data()) else {
                return Err(EvalError::Type("select predicate must be pred".into()));
            };
            if args[1].ty() != args[2].ty() || args[0].dims() != args[1].dims() {
                return Err(mismatch());
            }
            let pick = |i: usize| p[i];
            let out = match (a, b) {
                (Data::F32(a), Data::F32(b)) => Data::F32((0..p.len()).map(|i| if pick(i) { a[i] } else { b[i] }).collect()),
                (Data::S64(a), Data::S64(b)) => Data::S64((0..p.len()).map(|i| if pick(i) { a[i] } else { b[i] }).collect()),
                (Data::Pred(a), Data::Pred(b)) => Data::Pred((0..p.len()).map(|i| if pick(i) { a[i] } else { b[i] }).collect()),
                _ => return Err(mismatch()),
            };
            return Ok(TensorValue::new(args[1].ty().clone(), out).expect("select shape"));
        }
        _ => {
            if args[0].ty() != args[1].ty() {
                return Err(mismatch());
            }
            match (args[0].data(), args[1].data()) {
                (Data::F32(a), Data::F32(b)) => {
                    let zip = a.iter().zip(b.iter());
                    match op {
                        ElemOp::Add => Data::F32(zip.map(|(x, y)| x + y).collect()),
                        ElemOp::Subtract => Data::F32(zip.map(|(x, y)| x - y).collect()),
                        ElemOp::Multiply => Data::F32(zip.map(|(x, y)| x * y).collect()),
                        ElemOp::Divide => Data::F32(zip.map(|(x, y)| x / y).collect()),
                        ElemOp::Maximum => Data::F32(zip.map(|(x, y)| max_f32(*x, *y)).collect()),
                        ElemOp::Lt => Data::Pred(zip.map(|(x, y)| x < y).collect()),
                        ElemOp::Le => Data::Pred(zip.map(|(x, y)| x <= y).collect()),
                        ElemOp::Exp | ElemOp::Select => unreachable!(),
                    }
                }
                (Data::S64(a), Data::S64(b)) => {
                    let zip = a.iter().zip(b.iter());
                    match op {
                        ElemOp::Add => Data::S64(zip.map(|(x, y)| x.wrapping_add(*y)).collect()),
                        ElemOp::Subtract => Data::S64(zip.map(|(x, y)| x.wrapping_sub(*y)).collect()),
                        ElemOp::Multiply => Data::S64(zip.map(|(x, y)| x.wrapping_mul(*y)).collect()),
                        ElemOp::Divide => {
                            if b.contains(&0) {
                                return Err(EvalError::DivideByZero);
                            }
                            Data::S64(zip.map(|(x, y)| x.wrapping_div(*y)).collect())
                        }
                        ElemOp::Maximum => Data::S64(zip.map(|(x, y)| *x.max(y)).collect()),
                        ElemOp::Lt => Data::Pred(zip.map(|(x, y)| x < y).collect()),
                        ElemOp::Le => Data::Pred(zip.map(|(x, y)| x <= y).collect()),
                        ElemOp::Exp | ElemOp::Select => unreachable!(),
                    }
                }
                _ => return Err(EvalError::Type(format!("{} requires numeric operands", op.kind_name()))),
            }
        }
    };
    let out_ty = if op.is_comparison() { ty.with_elem(ElementType::Pred) } else { ty };
    Ok(TensorValue::new(out_ty, data).expect("elementwise shape"))
}

/// General dot: batch dims, then lhs free dims, then rhs free dims.
pub fn dot(l: &TensorValue, r: &TensorValue, d: &DotDims) -> Result<TensorValue, EvalError> {
    let lr = l.dims().len();
    let rr = r.dims().len();
    let l_used: Vec<usize> = d.lhs_batch.iter().chain(&d.lhs_contracting).copied().collect();
    let r_used: Vec<usize> = d.rhs_batch.iter().chain(&d.rhs_contracting).copied().collect();
    let l_free: Vec<usize> = (0..lr).filter(|i| !l_used.contains(i)).collect();
    let r_free: Vec<usize> = (0..rr).filter(|i| !r_used.contains(i)).collect();
    let mut out_dims: Vec<usize> = d.lhs_batch.iter().map(|&i| l.dims()[i]).collect();
    out_dims.extend(l_free.iter().map(|&i| l.dims()[i]));
    out_dims.extend(r_free.iter().map(|&i| r.dims()[i]));
    let contract_dims: Vec<usize> = d.lhs_contracting.iter().map(|&i| l.dims()[i]).collect();
    let ls = strides(l.dims());
    let rs = strides(r.dims());
    let n_out: usize = out_dims.iter().product();
    let n_contract: usize = contract_dims.iter().product();
    let nb = d.lhs_batch.len();
    let mut out_idx = vec![0; out_dims.len()];
    let mut c_idx = vec![0; contract_dims.len()];
    let mut offsets = Vec::with_capacity(n_out);
    for o in 0..n_out {
        unravel(o, &out_dims, &mut out_idx);
        let mut lbase = 0;
        let mut rbase = 0;
        for k in 0..nb {
            lbase += out_idx[k] * ls[d.lhs_batch[k]];
            rbase += out_idx[k] * rs[d.rhs_batch[k]];
        }
        for (k, &i) in l_free.iter().enumerate() {
            lbase += out_idx[nb + k] * ls[i];
        }
        for (k, &i) in r_free.iter().enumerate() {
            rbase += out_idx[nb + l_free.len() + k] * rs[i];
        }
        let mut pairs = Vec::with_capacity(n_contract);
        for c in 0..n_contract {
            unravel(c, &contract_dims, &mut c_idx);
            let mut lo = lbase;
            let mut ro = rbase;
            for k in 0..c_idx.len() {
                lo += c_idx[k] * ls[d.lhs_contracting[k]];
                ro += c_idx[k] * rs[d.rhs_contracting[k]];
            }
            pairs.push((lo, ro));
        }
        offsets.push(pairs);
    }
    let data = match (l.data(), r.data()) {
        (Data::F32(a), Data::F32(b)) => {
            Data::F32(offsets.iter().map(|ps| ps.iter().fold(0.0f32, |acc, &(i, j)| acc + a[i] * b[j])).collect())
        }
        (Data::S64(a), Data::S64(b)) => Data::S64(
            offsets.iter().map(|ps| ps.iter().fold(0i64, |acc, &(i, j)| acc.wrapping_add(a[i].wrapping_mul(b[j])))).collect(),
        ),
        _ => return Err(EvalError::Type("dot requires matching numeric operands".into())),
    };
    Ok(TensorValue::new(TensorType::new(l.elem(), out_dims), data).expect("dot shape"))
}

pub fn transpose(x: &TensorValue, perm: &[usize]) -> TensorValue {
    let dims: Vec<usize> = perm.iter().map(|&p| x.dims()[p]).collect();
    let xs = strides(x.dims());
    let n = x.len();
    let mut idx = vec![0; dims.len()];
    let src = (0..n).map(|o| {
        unravel(o, &dims, &mut idx);
        idx.iter().zip(perm).map(|(&i, &p)| i * xs[p]).sum::<usize>()
    });
    let data = x.data().gather(src.collect::<Vec<_>>().into_iter());
    TensorValue::new(TensorType::new(x.elem(), dims), data).expect("transpose shape")
}

/// Replicates `x` into `dims`, operand dim `i` landing on result dim
/// `dimensions[i]`.
pub fn broadcast(x: &TensorValue, dimensions: &[usize], dims: &[usize]) -> TensorValue {
    let xs = strides(x.dims());
    let n: usize = dims.iter().product();
    let mut idx = vec![0; dims.len()];
    let mut src = Vec::with_capacity(n);
    for o in 0..n {
        unravel(o, dims, &mut idx);
        src.push(dimensions.iter().enumerate().map(|(i, &d)| idx[d] * xs[i]).sum::<usize>());
    }
    let data = x.data().gather(src.into_iter());
    TensorValue::new(TensorType::new(x.elem(), dims.to_vec()), data).expect("broadcast shape")
}

/// Scalar element `i` of `x` as a rank-0 tensor.
pub fn element(x: &TensorValue, i: usize) -> TensorValue {
    TensorValue::new(TensorType::scalar(x.elem()), x.data().gather(std::iter::once(i))).expect("scalar")
}

/// Concatenates rank-0 tensors of one element type into a tensor of `dims`.
pub fn assemble(elem: ElementType, dims: Vec<usize>, scalars: Vec<TensorValue>) -> Result<TensorValue, EvalError> {
    let mut data = crate::value::empty_data(elem);
    for s in scalars {
        if s.elem() != elem || !s.dims().is_empty() {
            return Err(EvalError::Type(format!("expected {elem}[] from callback, got {}", s.ty())));
        }
        crate::value::extend_data(&mut data, s.into_data());
    }
    Ok(TensorValue::new(TensorType::new(elem, dims), data).expect("assembled shape"))
}

/// Folds the elements of `x` over `dimensions` with `f`, starting from
/// `init` in every output position. Elements are visited in row-major
/// order, so each output accumulates its reduced indices lexicographically.
pub fn reduce(
    x: &TensorValue,
    init: &TensorValue,
    dimensions: &[usize],
    mut f: impl FnMut(TensorValue, TensorValue) -> Result<TensorValue, EvalError>,
) -> Result<TensorValue, EvalError> {
    let kept: Vec<usize> = (0..x.dims().len()).filter(|i| !dimensions.contains(i)).collect();
    let out_dims: Vec<usize> = kept.iter().map(|&i| x.dims()[i]).collect();
    let out_strides = strides(&out_dims);
    let n_out: usize = out_dims.iter().product();
    let mut acc: Vec<Option<TensorValue>> = vec![Some(init.clone()); n_out];
    let mut idx = vec![0; x.dims().len()];
    for o in 0..x.len() {
        unravel(o, x.dims(), &mut idx);
        let target: usize = kept.iter().enumerate().map(|(k, &d)| idx[d] * out_strides[k]).sum();
        let prev = acc[target].take().expect("accumulator present");
        acc[target] = Some(f(prev, element(x, o))?);
    }
    assemble(init.elem(), out_dims, acc.into_iter().map(|a| a.expect("accumulator present")).collect())
}

/// `reduce` with an elementwise binary op as the combiner.
pub fn reduce_elementwise(x: &TensorValue, init: &TensorValue, dimensions: &[usize], op: ElemOp) -> Result<TensorValue, EvalError> {
    reduce(x, init, dimensions, |a, b| elementwise(op, &[&a, &b]))
}
