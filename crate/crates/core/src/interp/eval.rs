use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::kernels;
use super::EvalError;
use crate::hlo::{CompId, HloModule, HloOp};
use crate::types::Shape;
use crate::value::{TensorValue, Value};

/// Whole-computation evaluator over host values.
pub struct Evaluator<'a> {
    pub module: &'a HloModule,
    pub rng: &'a mut ChaCha8Rng,
    pub while_cap: u64,
}

fn tensor<'v>(v: &'v Value, what: &str) -> Result<&'v TensorValue, EvalError> {
    v.as_tensor().ok_or_else(|| EvalError::Type(format!("{what} must be an array")))
}

impl Evaluator<'_> {
    pub fn eval_computation(&mut self, id: CompId, args: &[Value]) -> Result<Value, EvalError> {
        let comp = self.module.comp(id);
        let mut vals: Vec<Option<Value>> = vec![None; comp.instructions.len()];
        for (i, inst) in comp.instructions.iter().enumerate() {
            let v = match &inst.op {
                HloOp::Parameter { index, shape } => {
                    let a = args
                        .get(*index)
                        .ok_or_else(|| EvalError::Input(format!("{} expects parameter {index}", comp.name)))?;
                    if a.shape() != *shape {
                        return Err(EvalError::Input(format!(
                            "parameter {index} of {} expects {shape}, got {}",
                            comp.name,
                            a.shape()
                        )));
                    }
                    a.clone()
                }
                op => {
                    let operands: Vec<&Value> = inst.operands.iter().map(|&o| vals[o].as_ref().expect("def before use")).collect();
                    self.eval_op(op, &operands)?
                }
            };
            vals[i] = Some(v);
        }
        Ok(vals[comp.root].take().expect("root evaluated"))
    }

    /// Evaluates one non-parameter op on concrete operands.
    pub fn eval_op(&mut self, op: &HloOp, operands: &[&Value]) -> Result<Value, EvalError> {
        Ok(match op {
            HloOp::Parameter { .. } => return Err(EvalError::Type("parameter outside a computation".into())),
            HloOp::Constant(v) => v.clone(),
            HloOp::Rng { dims } => {
                let n: usize = dims.iter().product();
                let data: Vec<f32> = (0..n).map(|_| self.rng.random::<f32>()).collect();
                Value::Tensor(TensorValue::f32(dims.clone(), data))
            }
            HloOp::Tuple => Value::Tuple(operands.iter().map(|v| (*v).clone()).collect()),
            HloOp::GetTupleElement { index } => match operands[0] {
                Value::Tuple(elems) => {
                    elems.get(*index).cloned().ok_or_else(|| EvalError::Type(format!("tuple index {index} out of range")))?
                }
                _ => return Err(EvalError::Type("get-tuple-element of a non-tuple".into())),
            },
            HloOp::Elementwise(e) => {
                let ts: Vec<&TensorValue> = operands.iter().map(|v| tensor(v, "operand")).collect::<Result<_, _>>()?;
                Value::Tensor(kernels::elementwise(*e, &ts)?)
            }
            HloOp::Dot(d) => Value::Tensor(kernels::dot(tensor(operands[0], "lhs")?, tensor(operands[1], "rhs")?, d)?),
            HloOp::Transpose { permutation } => Value::Tensor(kernels::transpose(tensor(operands[0], "operand")?, permutation)),
            HloOp::Reshape { dims } => {
                let x = tensor(operands[0], "operand")?;
                Value::Tensor(x.reshaped(dims.clone()).ok_or_else(|| EvalError::Type("reshape element count".into()))?)
            }
            HloOp::Broadcast { dimensions, dims } => {
                Value::Tensor(kernels::broadcast(tensor(operands[0], "operand")?, dimensions, dims))
            }
            HloOp::Map { to_apply, .. } => {
                let ts: Vec<&TensorValue> = operands.iter().map(|v| tensor(v, "operand")).collect::<Result<_, _>>()?;
                let dims = ts[0].dims().to_vec();
                let n = ts[0].len();
                let root_elem = match &self.module.comp(*to_apply).root_inst().shape {
                    Shape::Array(t) => t.elem,
                    s => return Err(EvalError::Type(format!("map callback returns {s}"))),
                };
                let mut out = Vec::with_capacity(n);
                for i in 0..n {
                    let args: Vec<Value> = ts.iter().map(|t| Value::Tensor(kernels::element(t, i))).collect();
                    let r = self.eval_computation(*to_apply, &args)?;
                    out.push(r.into_tensor().ok_or_else(|| EvalError::Type("map callback returned a tuple".into()))?);
                }
                Value::Tensor(kernels::assemble(root_elem, dims, out)?)
            }
            HloOp::Reduce { to_apply, dimensions } => {
                let x = tensor(operands[0], "operand")?;
                let init = tensor(operands[1], "init")?;
                Value::Tensor(self.reduce(x, init, dimensions, *to_apply)?)
            }
            HloOp::Conditional { true_comp, false_comp } => {
                let p = tensor(operands[0], "predicate")?;
                let taken = match p.as_pred() {
                    Some([b]) => *b,
                    _ => return Err(EvalError::Type("conditional predicate must be pred[]".into())),
                };
                if taken {
                    self.eval_computation(*true_comp, &[operands[1].clone()])?
                } else {
                    self.eval_computation(*false_comp, &[operands[2].clone()])?
                }
            }
            HloOp::While { condition, body } => {
                let mut state = operands[0].clone();
                let mut iterations = 0u64;
                loop {
                    let c = self.eval_computation(*condition, std::slice::from_ref(&state))?;
                    let go = match c.as_tensor().and_then(TensorValue::as_pred) {
                        Some([b]) => *b,
                        _ => return Err(EvalError::Type("while condition must return pred[]".into())),
                    };
                    if !go {
                        break state;
                    }
                    if iterations >= self.while_cap {
                        return Err(EvalError::WhileLimit(self.while_cap));
                    }
                    iterations += 1;
                    state = self.eval_computation(*body, &[state])?;
                }
            }
        })
    }

    fn reduce(&mut self, x: &TensorValue, init: &TensorValue, dimensions: &[usize], f: CompId) -> Result<TensorValue, EvalError> {
        kernels::reduce(x, init, dimensions, |acc, e| {
            self.eval_computation(f, &[Value::Tensor(acc), Value::Tensor(e)])?
                .into_tensor()
                .ok_or_else(|| EvalError::Type("reduce callback returned a tuple".into()))
        })
    }
}
