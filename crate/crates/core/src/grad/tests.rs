use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::frontend::parse_program;
use crate::interp::Device;
use crate::lower::compile;
use crate::value::Value;

fn f32t(dims: &[usize]) -> ValueType {
    ValueType::Tensor(TensorType::new(ElementType::F32, dims.to_vec()))
}

fn vec_f32(dims: &[usize], v: Vec<f32>) -> Value {
    Value::Tensor(TensorValue::f32(dims.to_vec(), v))
}

/// Runs the gradient function and returns each cotangent's data.
fn gradient(src: &str, entry: &str, wrt: Vec<usize>, inputs: &[Value]) -> Vec<Vec<f32>> {
    let m = parse_program(src).unwrap();
    let types: Vec<ValueType> = inputs.iter().map(|v| ValueType::from_shape(&v.shape())).collect();
    let g = grad(&m, &GradRequest::new(entry, wrt).with_types(types.clone())).unwrap();
    let h = compile(&g.module, &g.function, &types).unwrap();
    let out = Device::new(0).run_module(&h, inputs).unwrap();
    let Value::Tuple(elems) = out else { panic!("gradient is not a tuple: {out}") };
    elems.iter().map(|e| e.as_tensor().unwrap().as_f32().unwrap().to_vec()).collect()
}

fn close(a: &[f32], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        let rel = (*x as f64 - y).abs() / y.abs().max(1.0);
        assert!(rel <= tol, "{a:?} vs {b:?}");
    }
}

const SUM_SQUARES: &str = "func @f(%x) {
bb0:
  %y = call multiply(%x, %x)
  %s = call sum(%y)
  return %s
}";

#[test]
fn sum_of_squares_is_twice_x() {
    let x = vec![1.5, -2.0, 0.25, 3.0];
    let g = gradient(SUM_SQUARES, "f", vec![0], &[vec_f32(&[4], x.clone())]);
    let want: Vec<f64> = x.iter().map(|v| 2.0 * *v as f64).collect();
    close(&g[0], &want, 1e-6);
}

#[test]
fn sum_exp_at_zero_is_ones() {
    let src = "func @f(%x) {
bb0:
  %e = const fn @exp
  %a = const fn @add
  %s = call mapreduce(%e, %a, %x)
  return %s
}";
    let g = gradient(src, "f", vec![0], &[vec_f32(&[2, 3], vec![0.0; 6])]);
    close(&g[0], &[1.0; 6], 1e-6);
}

#[test]
fn constant_loss_has_zero_gradient() {
    let src = "func @f(%x) {
bb0:
  %c = const f32[] 3
  return %c
}";
    let g = gradient(src, "f", vec![0], &[vec_f32(&[3], vec![1.0, 2.0, 3.0])]);
    assert_eq!(g[0], vec![0.0; 3]);
}

#[test]
fn transpose_and_reshape_route_back() {
    let src = "func @f(%x, %w) {
bb0:
  %p = const s64[2] {1, 0}
  %t = call transpose(%x, %p)
  %sh = const s64[1] {6}
  %r = call reshape(%t, %sh)
  %m = call multiply(%r, %w)
  %s = call sum(%m)
  return %s
}";
    let w: Vec<f32> = (0..6).map(|i| i as f32).collect();
    let g = gradient(src, "f", vec![0], &[vec_f32(&[2, 3], vec![0.0; 6]), vec_f32(&[6], w.clone())]);
    // x[i][j] lands at r[j * 2 + i].
    let want: Vec<f64> = (0..2).flat_map(|i| (0..3).map(move |j| (j * 2 + i) as f64)).collect();
    close(&g[0], &want, 0.0);
}

const DENSE_LOSS: &str = "func @loss(%W, %x, %b) {
bb0:
  %y = call matmul(%W, %x)
  %add = const fn @add
  %z = call broadcast(%add, %y, %b)
  %sq = call multiply(%z, %z)
  %s = call sum(%sq)
  return %s
}";

#[test]
fn dense_loss_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (n, k) = (3, 4);
    let w: Vec<f32> = (0..n * k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x: Vec<f32> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let b: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let g = gradient(
        DENSE_LOSS,
        "loss",
        vec![0, 1, 2],
        &[vec_f32(&[n, k], w.clone()), vec_f32(&[k], x.clone()), vec_f32(&[n], b.clone())],
    );
    let z: Vec<f64> = (0..n).map(|i| (0..k).map(|j| w[i * k + j] as f64 * x[j] as f64).sum::<f64>() + b[i] as f64).collect();
    let dw: Vec<f64> = (0..n * k).map(|ij| 2.0 * z[ij / k] * x[ij % k] as f64).collect();
    let dx: Vec<f64> = (0..k).map(|j| (0..n).map(|i| 2.0 * z[i] * w[i * k + j] as f64).sum()).collect();
    let db: Vec<f64> = z.iter().map(|v| 2.0 * v).collect();
    close(&g[0], &dw, 1e-5);
    close(&g[1], &dx, 1e-5);
    close(&g[2], &db, 1e-5);
}

const SOFTMAX_LOSS: &str = "func @loss(%xs, %t) {
bb0:
  %f = const fn @exp
  %e = call broadcast(%f, %xs)
  %s = call sum(%e)
  %g = const fn @expdiv
  %p = call broadcast(%g, %xs, %s)
  %m = call multiply(%p, %t)
  %r = call sum(%m)
  return %r
}
func @expdiv(%args) {
bb0:
  %a = get %args, 0
  %x = call exp(%a)
  %d = get %args, 1
  %q = call divide(%x, %d)
  return %q
}";

#[test]
fn softmax_loss_uses_derivative_callbacks() {
    let xs = vec![0.3f32, -1.2, 0.8, 0.1];
    let t = vec![1.0f32, 2.0, -0.5, 0.0];
    let g = gradient(SOFTMAX_LOSS, "loss", vec![0], &[vec_f32(&[4], xs.clone()), vec_f32(&[4], t.clone())]);
    let e: Vec<f64> = xs.iter().map(|v| (*v as f64).exp()).collect();
    let s: f64 = e.iter().sum();
    let p: Vec<f64> = e.iter().map(|v| v / s).collect();
    let pt: f64 = p.iter().zip(&t).map(|(a, b)| a * *b as f64).sum();
    let want: Vec<f64> = (0..4).map(|i| p[i] * (t[i] as f64 - pt)).collect();
    close(&g[0], &want, 1e-5);
}

#[test]
fn derivative_helpers_join_the_module() {
    let m = parse_program(SOFTMAX_LOSS).unwrap();
    let g = grad(&m, &GradRequest::new("loss", vec![0]).with_types(vec![f32t(&[4]), f32t(&[4])])).unwrap();
    assert_eq!(g.function, "loss_grad");
    let names: Vec<&str> = g.module.functions.iter().map(|f| f.name.as_str()).collect();
    assert!(names.contains(&"d0_exp"), "{names:?}");
    assert!(names.contains(&"d0_expdiv") && names.contains(&"d1_expdiv"), "{names:?}");
}

#[test]
fn check_gradient_agrees_on_dense_loss() {
    let m = parse_program(DENSE_LOSS).unwrap();
    let inputs = [
        vec_f32(&[2, 2], vec![0.5, -0.25, 1.0, 0.75]),
        vec_f32(&[2], vec![1.0, -1.0]),
        vec_f32(&[2], vec![0.1, 0.2]),
    ];
    let c = check_gradient(&m, &GradRequest::new("loss", vec![0, 1, 2]), &inputs, 1e-2).unwrap();
    assert!(c.max_rel_error < 1e-3, "{c:?}");
}

#[test]
fn rejects_control_flow_and_bad_requests() {
    let src = "func @f(%x, %c: pred[]) {
bb0:
  br %c, bb1, bb2
bb1:
  jmp bb2
bb2:
  %s = call sum(%x)
  return %s
}";
    let m = parse_program(src).unwrap();
    let types = vec![f32t(&[2]), ValueType::Tensor(TensorType::scalar(ElementType::Pred))];
    let err = grad(&m, &GradRequest::new("f", vec![0]).with_types(types)).unwrap_err();
    assert!(matches!(err, GradError::ControlFlow(_)), "{err}");

    let m = parse_program(SUM_SQUARES).unwrap();
    let req = |wrt| GradRequest::new("f", wrt).with_types(vec![f32t(&[2])]);
    assert!(matches!(grad(&m, &req(vec![])), Err(GradError::Wrt(_))));
    assert!(matches!(grad(&m, &req(vec![1])), Err(GradError::Wrt(_))));
    assert!(matches!(grad(&m, &GradRequest::new("g", vec![0])), Err(GradError::UnknownFunction(_))));

    let vec_out = "func @f(%x) {
bb0:
  %y = call multiply(%x, %x)
  return %y
}";
    let m = parse_program(vec_out).unwrap();
    assert!(matches!(grad(&m, &req(vec![0])), Err(GradError::NonScalarOutput { .. })));
}

#[test]
fn reduce_init_is_not_differentiable() {
    let src = "func @f(%x) {
bb0:
  %m = const fn @maximum
  %i = const f32[] 0
  %d = const dims all
  %r = call reduce_init(%m, %x, %i, %d)
  return %r
}";
    let m = parse_program(src).unwrap();
    let err = grad(&m, &GradRequest::new("f", vec![0]).with_types(vec![f32t(&[3])])).unwrap_err();
    assert!(matches!(err, GradError::NotDifferentiable { .. }), "{err}");
}
