use super::{grad, GradError, GradRequest};
use crate::frontend::{Module, ValueType};
use crate::interp::Device;
use crate::lower::compile;
use crate::value::{Data, TensorValue, Value};

/// Result of comparing a compiled gradient against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest `|g - fd| / max(|g|, |fd|, 1)` over all checked elements.
    pub max_rel_error: f64,
    /// `(wrt position, flat element index)` of the worst element.
    pub worst: Option<(usize, usize)>,
    pub analytic: Vec<TensorValue>,
    pub numeric: Vec<TensorValue>,
}

fn f32_tensor(v: &Value, what: usize) -> Result<&TensorValue, GradError> {
    match v.as_tensor() {
        Some(t) if t.as_f32().is_some() => Ok(t),
        _ => Err(GradError::Wrt(format!("argument {what} is not an f32 tensor"))),
    }
}

fn scalar(v: &Value) -> Result<f64, GradError> {
    v.as_tensor()
        .and_then(|t| t.as_f32())
        .filter(|d| d.len() == 1)
        .map(|d| d[0] as f64)
        .ok_or_else(|| GradError::Eval(format!("loss is not an f32 scalar: {v}")))
}

/// Compiles `req.entry` and its gradient, runs both on `inputs`, and
/// compares every gradient element against a central difference with step
/// `step * max(1, |x|)`.
pub fn check_gradient(module: &Module, req: &GradRequest, inputs: &[Value], step: f64) -> Result<GradCheck, GradError> {
    let types: Vec<ValueType> = inputs.iter().map(|v| ValueType::from_shape(&v.shape())).collect();
    let req = req.clone().with_types(types.clone());
    let g = grad(module, &req)?;
    let primal = compile(module, &req.entry, &types).map_err(|e| GradError::Compile(e.to_string()))?;
    let gm = compile(&g.module, &g.function, &types).map_err(|e| GradError::Compile(e.to_string()))?;
    let dev = Device::new(0);
    let run = |args: &[Value]| dev.run_module(&primal, args).map_err(|e| GradError::Eval(e.to_string())).and_then(|v| scalar(&v));
    let grads = match dev.run_module(&gm, inputs).map_err(|e| GradError::Eval(e.to_string()))? {
        Value::Tuple(elems) => elems,
        other => return Err(GradError::Eval(format!("gradient is not a tuple: {other}"))),
    };
    let mut out = GradCheck { max_rel_error: 0.0, worst: None, analytic: Vec::new(), numeric: Vec::new() };
    for (pos, &p) in req.wrt.iter().enumerate() {
        let x = f32_tensor(&inputs[p], p)?;
        let gx = f32_tensor(&grads[pos], p)?.clone();
        let xs = x.as_f32().expect("checked f32");
        let mut fd = Vec::with_capacity(xs.len());
        for j in 0..xs.len() {
            let h = step * (xs[j].abs() as f64).max(1.0);
            let eval_at = |delta: f64| -> Result<(f64, f64), GradError> {
                let mut d = xs.to_vec();
                d[j] = (xs[j] as f64 + delta) as f32;
                let actual = d[j] as f64;
                let mut args = inputs.to_vec();
                args[p] = Value::Tensor(TensorValue::new(x.ty().clone(), Data::F32(d)).expect("same shape"));
                Ok((run(&args)?, actual))
            };
            let (fp, xp) = eval_at(h)?;
            let (fm, xm) = eval_at(-h)?;
            let num = (fp - fm) / (xp - xm);
            let ana = gx.as_f32().expect("checked f32")[j] as f64;
            let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1.0);
            if rel > out.max_rel_error || out.worst.is_none() {
                out.max_rel_error = out.max_rel_error.max(rel);
                out.worst = Some((pos, j));
            }
            fd.push(num as f32);
        }
        out.numeric.push(TensorValue::new(x.ty().clone(), Data::F32(fd)).expect("same shape"));
        out.analytic.push(gx);
    }
    Ok(out)
}
