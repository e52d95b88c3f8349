use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::eval::Evaluator;
use super::EvalError;
use crate::hlo::{shape_infer, HloModule, HloOp};
use crate::types::Shape;
use crate::value::{TensorValue, Value};

pub const DEFAULT_WHILE_CAP: u64 = 1 << 20;

/// Opaque reference to a device allocation. Ids are never reused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Handle(pub u64);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DeviceStats {
    pub executions: u64,
    pub transfers_in: u64,
    pub transfers_out: u64,
    pub live_allocations: u64,
}

/// One `execute_op` call, recorded when tracing is on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub kind: &'static str,
    pub operands: Vec<(Handle, Shape)>,
    pub result: Handle,
    pub shape: Shape,
}

enum Stored {
    Tensor(TensorValue),
    Tuple(Vec<Handle>),
}

/// In-process stand-in for a remote accelerator: an allocation table plus
/// round-trip counters.
pub struct Device {
    table: Mutex<HashMap<u64, Stored>>,
    next_id: AtomicU64,
    executions: AtomicU64,
    transfers_in: AtomicU64,
    transfers_out: AtomicU64,
    rng: Mutex<ChaCha8Rng>,
    while_cap: u64,
    trace: Mutex<Option<Vec<TraceEntry>>>,
}

impl Device {
    pub fn new(seed: u64) -> Self {
        Device {
            table: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(0),
            executions: AtomicU64::new(0),
            transfers_in: AtomicU64::new(0),
            transfers_out: AtomicU64::new(0),
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
            while_cap: DEFAULT_WHILE_CAP,
            trace: Mutex::new(None),
        }
    }

    pub fn with_while_cap(mut self, cap: u64) -> Self {
        self.while_cap = cap;
        self
    }

    pub fn enable_trace(&self) {
        *self.trace.lock().unwrap() = Some(Vec::new());
    }

    pub fn take_trace(&self) -> Vec<TraceEntry> {
        self.trace.lock().unwrap().as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn stats(&self) -> DeviceStats {
        DeviceStats {
            executions: self.executions.load(Ordering::SeqCst),
            transfers_in: self.transfers_in.load(Ordering::SeqCst),
            transfers_out: self.transfers_out.load(Ordering::SeqCst),
            live_allocations: self.table.lock().unwrap().len() as u64,
        }
    }

    fn store(&self, table: &mut HashMap<u64, Stored>, v: Value) -> Handle {
        let stored = match v {
            Value::Tensor(t) => Stored::Tensor(t),
            Value::Tuple(elems) => Stored::Tuple(elems.into_iter().map(|e| self.store(table, e)).collect()),
        };
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        table.insert(id, stored);
        Handle(id)
    }

    fn load(table: &HashMap<u64, Stored>, h: Handle) -> Result<Value, EvalError> {
        match table.get(&h.0) {
            None => Err(EvalError::DeadHandle(h.0)),
            Some(Stored::Tensor(t)) => Ok(Value::Tensor(t.clone())),
            Some(Stored::Tuple(elems)) => {
                elems.iter().map(|&e| Self::load(table, e)).collect::<Result<_, _>>().map(Value::Tuple)
            }
        }
    }

    fn remove(table: &mut HashMap<u64, Stored>, h: Handle) -> bool {
        match table.remove(&h.0) {
            None => false,
            Some(Stored::Tensor(_)) => true,
            Some(Stored::Tuple(elems)) => {
                for e in elems {
                    Self::remove(table, e);
                }
                true
            }
        }
    }

    /// Copies a host value to the device.
    pub fn transfer(&self, v: &Value) -> Handle {
        self.transfers_in.fetch_add(1, Ordering::SeqCst);
        let mut table = self.table.lock().unwrap();
        self.store(&mut table, v.clone())
    }

    /// Copies a device value back to the host.
    pub fn fetch(&self, h: Handle) -> Result<Value, EvalError> {
        let table = self.table.lock().unwrap();
        let v = Self::load(&table, h)?;
        self.transfers_out.fetch_add(1, Ordering::SeqCst);
        Ok(v)
    }

    /// Shape metadata of an allocation; not a data transfer.
    pub fn shape_of(&self, h: Handle) -> Result<Shape, EvalError> {
        let table = self.table.lock().unwrap();
        Ok(Self::load(&table, h)?.shape())
    }

    pub fn release(&self, h: Handle) -> Result<(), EvalError> {
        let mut table = self.table.lock().unwrap();
        if Self::remove(&mut table, h) {
            Ok(())
        } else {
            Err(EvalError::DeadHandle(h.0))
        }
    }

    /// Runs one op on device-resident operands; `ctx` supplies the
    /// computations the op refers to.
    pub fn execute_op(&self, ctx: &HloModule, op: &HloOp, args: &[Handle]) -> Result<Handle, EvalError> {
        let values = {
            let table = self.table.lock().unwrap();
            args.iter().map(|&h| Self::load(&table, h)).collect::<Result<Vec<_>, _>>()?
        };
        let shapes: Vec<Shape> = values.iter().map(Value::shape).collect();
        let refs: Vec<&Shape> = shapes.iter().collect();
        let expected = shape_infer(op, &refs, &|c| ctx.sig(c)).map_err(EvalError::Shape)?;
        let result = {
            let mut rng = self.rng.lock().unwrap();
            let mut ev = Evaluator { module: ctx, rng: &mut rng, while_cap: self.while_cap };
            let operands: Vec<&Value> = values.iter().collect();
            ev.eval_op(op, &operands)?
        };
        let shape = result.shape();
        debug_assert_eq!(shape, expected, "execute_op result disagrees with shape_infer");
        self.executions.fetch_add(1, Ordering::SeqCst);
        let h = {
            let mut table = self.table.lock().unwrap();
            self.store(&mut table, result)
        };
        if let Some(trace) = self.trace.lock().unwrap().as_mut() {
            trace.push(TraceEntry {
                kind: op.kind_name(),
                operands: args.iter().copied().zip(shapes).collect(),
                result: h,
                shape,
            });
        }
        Ok(h)
    }

    /// Runs the entry computation of `m` as a single execution.
    pub fn execute_module(&self, m: &HloModule, args: &[Handle]) -> Result<Handle, EvalError> {
        let values = {
            let table = self.table.lock().unwrap();
            args.iter().map(|&h| Self::load(&table, h)).collect::<Result<Vec<_>, _>>()?
        };
        let sig = m.entry_comp().signature();
        if sig.params.len() != values.len() {
            return Err(EvalError::Input(format!("{} expects {} inputs, got {}", m.name, sig.params.len(), values.len())));
        }
        for (i, (p, v)) in sig.params.iter().zip(&values).enumerate() {
            if *p != v.shape() {
                return Err(EvalError::Input(format!("input {i} of {} expects {p}, got {}", m.name, v.shape())));
            }
        }
        let result = {
            let mut rng = self.rng.lock().unwrap();
            let mut ev = Evaluator { module: m, rng: &mut rng, while_cap: self.while_cap };
            ev.eval_computation(m.entry, &values)?
        };
        self.executions.fetch_add(1, Ordering::SeqCst);
        let mut table = self.table.lock().unwrap();
        Ok(self.store(&mut table, result))
    }

    /// Transfers `inputs`, executes the module once and fetches the result.
    pub fn run_module(&self, m: &HloModule, inputs: &[Value]) -> Result<Value, EvalError> {
        let handles: Vec<Handle> = inputs.iter().map(|v| self.transfer(v)).collect();
        let out = self.execute_module(m, &handles);
        for h in &handles {
            self.release(*h)?;
        }
        let out = out?;
        let v = self.fetch(out)?;
        self.release(out)?;
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hlo::{DotDims, ElemOp};

    fn module() -> HloModule {
        crate::hlo::parse_hlo("ENTRY e {\n  ROOT c = f32[] constant(0)\n}\n").unwrap()
    }

    #[test]
    fn transfer_fetch_round_trip() {
        let d = Device::new(0);
        let v = Value::Tensor(TensorValue::f32([2], vec![1.0, 2.0]));
        let a = d.transfer(&v);
        let b = d.transfer(&v);
        assert_ne!(a, b);
        assert_eq!(d.fetch(a).unwrap(), v);
        let t = Value::Tuple(vec![v.clone(), Value::Tuple(vec![TensorValue::scalar_s64(3).into()])]);
        let h = d.transfer(&t);
        assert_eq!(d.fetch(h).unwrap(), t);
        d.release(h).unwrap();
        assert!(matches!(d.fetch(h), Err(EvalError::DeadHandle(_))));
    }

    #[test]
    fn execute_counts() {
        let d = Device::new(0);
        let m = module();
        let a = d.transfer(&TensorValue::f32([2], vec![1.0, 2.0]).into());
        let b = d.transfer(&TensorValue::f32([2], vec![3.0, 4.0]).into());
        let c = d.execute_op(&m, &HloOp::Elementwise(ElemOp::Add), &[a, b]).unwrap();
        assert_eq!(d.fetch(c).unwrap(), TensorValue::f32([2], vec![4.0, 6.0]).into());
        let i = d.transfer(&TensorValue::f32([2, 2], vec![1.0, 0.0, 0.0, 1.0]).into());
        let x = d.transfer(&TensorValue::f32([2], vec![5.0, 7.0]).into());
        let y = d.execute_op(&m, &HloOp::Dot(DotDims::matmul()), &[i, x]).unwrap();
        assert_eq!(d.fetch(y).unwrap(), TensorValue::f32([2], vec![5.0, 7.0]).into());
        let s = d.stats();
        assert_eq!((s.executions, s.transfers_in, s.transfers_out), (2, 4, 2));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let d = Device::new(0);
        let a = d.transfer(&TensorValue::f32([2], vec![1.0, 2.0]).into());
        let b = d.transfer(&TensorValue::f32([3], vec![1.0, 2.0, 3.0]).into());
        assert!(matches!(d.execute_op(&module(), &HloOp::Elementwise(ElemOp::Add), &[a, b]), Err(EvalError::Shape(_))));
    }
}
