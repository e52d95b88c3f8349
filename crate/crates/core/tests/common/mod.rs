#![allow(dead_code)]

use std::path::PathBuf;

use hloc::frontend::{parse_program, Module, ValueType};
use hloc::hlo::{shape_infer, CompId, DotDims, ElemOp, HloComputation, HloInstruction, HloModule, HloOp};
use hloc::text::parse_shape_list;
use hloc::types::{ElementType, Shape, TensorType};
use hloc::value::{Data, TensorValue, Value};
use rand::seq::IndexedRandom;
use rand::Rng;

/// A corpus program with the settings from its `;!` directives.
pub struct Program {
    pub name: String,
    pub source: String,
    pub module: Module,
    pub entry: String,
    pub sig: Vec<ValueType>,
    /// Inclusive range for random `s64` inputs.
    pub range: (i64, i64),
    /// Parameters to differentiate, when the program is a loss.
    pub grad: Option<Vec<usize>>,
}

fn directive<'a>(src: &'a str, key: &str) -> Option<&'a str> {
    src.lines().find_map(|l| l.trim().strip_prefix(";!")?.trim().strip_prefix(key).map(str::trim))
}

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("corpus")
}

pub fn corpus() -> Vec<Program> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(corpus_dir())
        .expect("corpus directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "mhl"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let source = std::fs::read_to_string(&p).unwrap();
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            let module = parse_program(&source).unwrap_or_else(|e| panic!("{name}: {e}"));
            let entry = directive(&source, "entry").expect("entry directive").to_string();
            let sig = parse_shape_list(directive(&source, "sig").expect("sig directive"))
                .unwrap()
                .iter()
                .map(ValueType::from_shape)
                .collect();
            let range = directive(&source, "range")
                .map(|r| {
                    let v: Vec<i64> = r.split_whitespace().map(|x| x.parse().unwrap()).collect();
                    (v[0], v[1])
                })
                .unwrap_or((-10, 10));
            let grad = directive(&source, "grad").map(|g| g.split(',').map(|x| x.trim().parse().unwrap()).collect());
            Program { name, source, module, entry, sig, range, grad }
        })
        .collect()
}

pub fn program(name: &str) -> Program {
    corpus().into_iter().find(|p| p.name == name).unwrap_or_else(|| panic!("no corpus program {name}"))
}

pub fn random_tensor(rng: &mut impl Rng, t: &TensorType, range: (i64, i64)) -> TensorValue {
    let n = t.element_count();
    let data = match t.elem {
        ElementType::F32 => Data::F32((0..n).map(|_| rng.random_range(-2.0f32..2.0)).collect()),
        ElementType::S64 => Data::S64((0..n).map(|_| rng.random_range(range.0..=range.1)).collect()),
        ElementType::Pred => Data::Pred((0..n).map(|_| rng.random_bool(0.5)).collect()),
    };
    TensorValue::new(t.clone(), data).unwrap()
}

pub fn random_value(rng: &mut impl Rng, shape: &Shape, range: (i64, i64)) -> Value {
    match shape {
        Shape::Array(t) => Value::Tensor(random_tensor(rng, t, range)),
        Shape::Tuple(elems) => Value::Tuple(elems.iter().map(|s| random_value(rng, s, range)).collect()),
    }
}

pub fn random_inputs(rng: &mut impl Rng, p: &Program) -> Vec<Value> {
    p.sig.iter().map(|t| random_value(rng, &t.to_shape().unwrap(), p.range)).collect()
}

/// Equal up to `rel` relative error on f32 data; exact otherwise.
pub fn values_close(a: &Value, b: &Value, rel: f64) -> bool {
    match (a, b) {
        (Value::Tuple(x), Value::Tuple(y)) => x.len() == y.len() && x.iter().zip(y).all(|(p, q)| values_close(p, q, rel)),
        (Value::Tensor(x), Value::Tensor(y)) => {
            x.ty() == y.ty()
                && match (x.data(), y.data()) {
                    (Data::F32(p), Data::F32(q)) => p.iter().zip(q).all(|(u, v)| {
                        let (u, v) = (*u as f64, *v as f64);
                        u == v || (u - v).abs() <= rel * u.abs().max(v.abs()) || (u.is_nan() && v.is_nan())
                    }),
                    (Data::S64(p), Data::S64(q)) => p == q,
                    (Data::Pred(p), Data::Pred(q)) => p == q,
                    _ => false,
                }
        }
        _ => false,
    }
}

fn f32s(dims: &[usize]) -> Shape {
    Shape::array(ElementType::F32, dims.to_vec())
}

/// Builds a computation from `(op, operands)` pairs, naming instructions in
/// the `c<K><mnemonic><J>` style and computing shapes with `shape_infer`.
pub struct CompMaker {
    pub k: usize,
    pub insts: Vec<HloInstruction>,
}

impl CompMaker {
    pub fn new(k: usize) -> Self {
        CompMaker { k, insts: Vec::new() }
    }

    pub fn push(&mut self, op: HloOp, operands: Vec<usize>, sigs: &[HloComputation]) -> Option<usize> {
        let shapes: Vec<&Shape> = operands.iter().map(|&o| &self.insts[o].shape).collect();
        let lookup = |id: CompId| sigs.get(id.0).map(HloComputation::signature);
        let shape = shape_infer(&op, &shapes, &lookup).ok()?;
        let name = format!("c{}{}{}", self.k, op.mnemonic(), self.insts.len());
        self.insts.push(HloInstruction { name, shape, op, operands });
        Some(self.insts.len() - 1)
    }

    pub fn finish(self, name: String, root: usize) -> HloComputation {
        HloComputation { name, instructions: self.insts, root }
    }
}

fn param(i: usize, s: Shape) -> HloOp {
    HloOp::Parameter { index: i, shape: s }
}

/// Small helper computations used by random modules and shape cases:
/// `c0` f32 add, `c1` f32 exp, `c2` s64 add, `c3` f32 maximum,
/// `c4` f32 exp of one parameter, `c5` doubling, `c6` `p < 5` on s64,
/// `c7` `p + 1` on s64.
pub fn helper_computations() -> Vec<HloComputation> {
    let mut out: Vec<HloComputation> = Vec::new();
    let scalar = |e| Shape::scalar(e);
    let binary = |k: usize, elem: ElementType, op: ElemOp, out: &Vec<HloComputation>| {
        let mut c = CompMaker::new(k);
        c.push(param(0, scalar(elem)), vec![], out).unwrap();
        c.push(param(1, scalar(elem)), vec![], out).unwrap();
        let r = c.push(HloOp::Elementwise(op), vec![0, 1], out).unwrap();
        c.finish(format!("c{k}"), r)
    };
    out.push(binary(0, ElementType::F32, ElemOp::Add, &out));
    let mut c = CompMaker::new(1);
    c.push(param(0, scalar(ElementType::F32)), vec![], &out).unwrap();
    let r = c.push(HloOp::Elementwise(ElemOp::Exp), vec![0], &out).unwrap();
    out.push(c.finish("c1".into(), r));
    out.push(binary(2, ElementType::S64, ElemOp::Add, &out));
    out.push(binary(3, ElementType::F32, ElemOp::Maximum, &out));
    let mut c = CompMaker::new(4);
    c.push(param(0, scalar(ElementType::F32)), vec![], &out).unwrap();
    let r = c.push(HloOp::Elementwise(ElemOp::Exp), vec![0], &out).unwrap();
    out.push(c.finish("c4".into(), r));
    let mut c = CompMaker::new(5);
    c.push(param(0, scalar(ElementType::F32)), vec![], &out).unwrap();
    let r = c.push(HloOp::Elementwise(ElemOp::Add), vec![0, 0], &out).unwrap();
    out.push(c.finish("c5".into(), r));
    let mut c = CompMaker::new(6);
    c.push(param(0, scalar(ElementType::S64)), vec![], &out).unwrap();
    c.push(HloOp::Constant(Value::Tensor(TensorValue::scalar_s64(5))), vec![], &out).unwrap();
    let r = c.push(HloOp::Elementwise(ElemOp::Lt), vec![0, 1], &out).unwrap();
    out.push(c.finish("c6".into(), r));
    let mut c = CompMaker::new(7);
    c.push(param(0, scalar(ElementType::S64)), vec![], &out).unwrap();
    c.push(HloOp::Constant(Value::Tensor(TensorValue::scalar_s64(1))), vec![], &out).unwrap();
    let r = c.push(HloOp::Elementwise(ElemOp::Add), vec![0, 1], &out).unwrap();
    out.push(c.finish("c7".into(), r));
    out
}

fn random_dims(rng: &mut impl Rng, max_rank: usize) -> Vec<usize> {
    let rank = rng.random_range(0..=max_rank);
    (0..rank).map(|_| rng.random_range(1..=4)).collect()
}

fn random_f32_literal(rng: &mut impl Rng) -> f32 {
    match rng.random_range(0..6) {
        0 => 0.0,
        1 => rng.random_range(-1e-6f32..1e-6),
        2 => rng.random_range(-1e6f32..1e6),
        3 => rng.random_range(-10i32..10) as f32,
        _ => rng.random_range(-3.0f32..3.0),
    }
}

fn random_f32_tensor(rng: &mut impl Rng, dims: &[usize]) -> Value {
    let n: usize = dims.iter().product();
    Value::Tensor(TensorValue::f32(dims.to_vec(), (0..n).map(|_| random_f32_literal(rng)).collect()))
}

fn shuffled(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(rng);
    v
}

/// One randomly chosen op with operand values that suit it, for checking
/// `shape_infer` against the interpreter. Uses `helper_computations`.
pub fn random_case(rng: &mut impl Rng) -> (HloOp, Vec<Value>) {
    let f = |rng: &mut _, d: &[usize]| random_value(rng, &f32s(d), (-5, 5));
    match rng.random_range(0..14) {
        0 => {
            let op = *ElemOp::ALL.choose(rng).unwrap();
            let dims = random_dims(rng, 3);
            let elem = if op == ElemOp::Exp || op == ElemOp::Divide {
                ElementType::F32
            } else {
                *[ElementType::F32, ElementType::S64].choose(rng).unwrap()
            };
            let t = Shape::array(elem, dims.clone());
            let mut args: Vec<Value> = (0..op.arity()).map(|_| random_value(rng, &t, (1, 9))).collect();
            if op == ElemOp::Select {
                args[0] = random_value(rng, &Shape::array(ElementType::Pred, dims), (0, 0));
            }
            (HloOp::Elementwise(op), args)
        }
        1 => {
            let (m, k) = (rng.random_range(1..5), rng.random_range(1..5));
            let rhs: Vec<usize> = if rng.random_bool(0.5) { vec![k] } else { vec![k, rng.random_range(1..5)] };
            (HloOp::Dot(DotDims::matmul()), vec![f(rng, &[m, k]), f(rng, &rhs)])
        }
        2 => {
            let dims = random_dims(rng, 4);
            let perm = shuffled(rng, dims.len());
            (HloOp::Transpose { permutation: perm }, vec![f(rng, &dims)])
        }
        3 => {
            let dims = random_dims(rng, 3);
            let n: usize = dims.iter().product();
            let target = if n.is_multiple_of(2) && rng.random_bool(0.5) { vec![2, n / 2] } else { vec![n] };
            (HloOp::Reshape { dims: target }, vec![f(rng, &dims)])
        }
        4 => {
            let dims = random_dims(rng, 2);
            let extra = rng.random_range(0..=2);
            let rank = dims.len() + extra;
            let mut positions = shuffled(rng, rank)[..dims.len()].to_vec();
            positions.sort_unstable();
            let mut out = vec![0; rank];
            for (i, &p) in positions.iter().enumerate() {
                out[p] = dims[i];
            }
            for d in out.iter_mut().filter(|d| **d == 0) {
                *d = rng.random_range(1..4);
            }
            (HloOp::Broadcast { dimensions: positions, dims: out }, vec![f(rng, &dims)])
        }
        5 => {
            let dims = random_dims(rng, 3);
            let mut red: Vec<usize> = (0..dims.len()).filter(|_| rng.random_bool(0.5)).collect();
            red.sort_unstable();
            let (comp, init) = if rng.random_bool(0.5) { (0, 0.0) } else { (3, f32::NEG_INFINITY) };
            let init = Value::Tensor(TensorValue::scalar_f32(init));
            (HloOp::Reduce { to_apply: CompId(comp), dimensions: red }, vec![f(rng, &dims), init])
        }
        6 => {
            let dims = random_dims(rng, 3);
            let (comp, n) = *[(0, 2), (1, 1), (3, 2), (5, 1)].choose(rng).unwrap();
            let args = (0..n).map(|_| f(rng, &dims)).collect();
            (HloOp::Map { to_apply: CompId(comp), dimensions: (0..dims.len()).collect() }, args)
        }
        7 => {
            let n = rng.random_range(0..4);
            let args = (0..n)
                .map(|_| {
                    let d = random_dims(rng, 2);
                    f(rng, &d)
                })
                .collect();
            (HloOp::Tuple, args)
        }
        8 => {
            let n = rng.random_range(1..4);
            let elems: Vec<Value> = (0..n)
                .map(|_| {
                    let d = random_dims(rng, 2);
                    f(rng, &d)
                })
                .collect();
            (HloOp::GetTupleElement { index: rng.random_range(0..n) }, vec![Value::Tuple(elems)])
        }
        9 => {
            let dims = random_dims(rng, 3);
            (HloOp::Rng { dims }, vec![])
        }
        10 => {
            let dims = random_dims(rng, 3);
            (HloOp::Constant(random_f32_tensor(rng, &dims)), vec![])
        }
        11 => {
            let p = random_value(rng, &Shape::scalar(ElementType::Pred), (0, 0));
            let (a, b) = (f(rng, &[]), f(rng, &[]));
            (HloOp::Conditional { true_comp: CompId(4), false_comp: CompId(5) }, vec![p, a, b])
        }
        12 => {
            let x = random_value(rng, &Shape::scalar(ElementType::S64), (-3, 6));
            (HloOp::While { condition: CompId(6), body: CompId(7) }, vec![x])
        }
        _ => {
            let dims = random_dims(rng, 2);
            let x = random_value(rng, &Shape::array(ElementType::S64, dims.clone()), (-9, 9));
            let init = Value::Tensor(TensorValue::scalar_s64(0));
            (HloOp::Reduce { to_apply: CompId(2), dimensions: (0..dims.len()).collect() }, vec![x, init])
        }
    }
}

/// A random valid module: the helper computations plus an entry built
/// from random ops over a few parameters.
pub fn random_hlo_module(rng: &mut impl Rng) -> HloModule {
    let mut comps = helper_computations();
    let k = comps.len();
    let mut c = CompMaker::new(k);
    let dims = random_dims(rng, 2);
    let nparams = rng.random_range(1..4);
    for i in 0..nparams {
        c.push(param(i, f32s(&dims)), vec![], &comps).unwrap();
    }
    let steps = rng.random_range(1..12);
    for _ in 0..steps {
        let n = c.insts.len();
        let pick = |rng: &mut _| rand::Rng::random_range(rng, 0..n);
        let a = pick(rng);
        let b = pick(rng);
        let op = match rng.random_range(0..9) {
            0 => (HloOp::Elementwise(*[ElemOp::Add, ElemOp::Multiply, ElemOp::Maximum].choose(rng).unwrap()), vec![a, b]),
            1 => (HloOp::Elementwise(ElemOp::Exp), vec![a]),
            2 => (HloOp::Constant(random_f32_tensor(rng, &dims)), vec![]),
            3 => (HloOp::Tuple, vec![a, b]),
            4 => (HloOp::GetTupleElement { index: rng.random_range(0..2) }, vec![a]),
            5 => (HloOp::Map { to_apply: CompId(0), dimensions: (0..dims.len()).collect() }, vec![a, b]),
            6 => {
                let z = c.push(HloOp::Constant(Value::Tensor(TensorValue::scalar_f32(0.0))), vec![], &comps).unwrap();
                (HloOp::Reduce { to_apply: CompId(0), dimensions: (0..dims.len()).collect() }, vec![a, z])
            }
            7 => (HloOp::Transpose { permutation: (0..dims.len()).rev().collect() }, vec![a]),
            _ => (HloOp::Rng { dims: dims.clone() }, vec![]),
        };
        c.push(op.0, op.1, &comps);
    }
    let root = c.insts.len() - 1;
    comps.push(c.finish("main".into(), root));
    HloModule { name: "main".into(), computations: comps, entry: CompId(k) }
}

fn random_type_text(rng: &mut impl Rng) -> String {
    let elem = ["f32", "s64", "pred"].choose(rng).unwrap();
    let dims: Vec<String> = random_dims(rng, 2).iter().map(ToString::to_string).collect();
    format!("{elem}[{}]", dims.join(","))
}

fn random_const_text(rng: &mut impl Rng) -> String {
    match rng.random_range(0..5) {
        0 => format!("const f32[] {:?}", random_f32_literal(rng)),
        1 => format!("const s64[2] {{{}, {}}}", rng.random_range(-99..99), rng.random_range(-99..99)),
        2 => "const dims all".to_string(),
        3 => format!("const fn @g[f32[] {}]", rng.random_range(-5..5)),
        _ => format!("const pred[] {}", rng.random_bool(0.5)),
    }
}

/// Source text of a random well-formed module. Programs need not type
/// check; only the syntax and SSA scoping are respected.
pub fn random_frontend_source(rng: &mut impl Rng) -> String {
    let mut out = String::new();
    let nparams = rng.random_range(0..4);
    let mut vals: Vec<String> = (0..nparams).map(|i| format!("%p{i}")).collect();
    let params: Vec<String> = vals
        .iter()
        .map(|v| if rng.random_bool(0.5) { format!("{v}: {}", random_type_text(rng)) } else { v.clone() })
        .collect();
    out.push_str(&format!("func @main({}) {{\nbb0:\n", params.join(", ")));
    let mut fresh = 0;
    let mut next = |vals: &mut Vec<String>| {
        fresh += 1;
        let v = format!("%v{fresh}");
        vals.push(v.clone());
        v
    };
    let mut body = |rng: &mut _, vals: &mut Vec<String>, out: &mut String| {
        for _ in 0..rand::Rng::random_range(rng, 1..6) {
            let kind = rand::Rng::random_range(rng, 0..5);
            let args = |rng: &mut _, vals: &Vec<String>, n: usize| -> Vec<String> {
                (0..n).map(|_| vals.choose(rng).unwrap().clone()).collect()
            };
            let line = if vals.is_empty() || kind == 0 {
                random_const_text(rng)
            } else {
                match kind {
                    1 => format!("call {}({})", ["add", "exp", "matmul", "sum"].choose(rng).unwrap(), args(rng, vals, 2).join(", ")),
                    2 => format!("tuple({})", args(rng, vals, 2).join(", ")),
                    3 => format!("get {}, {}", args(rng, vals, 1)[0], rand::Rng::random_range(rng, 0..3)),
                    _ => format!("call_fn @g({})", args(rng, vals, 1).join(", ")),
                }
            };
            let v = next(vals);
            out.push_str(&format!("  {v} = {line}\n"));
        }
    };
    body(rng, &mut vals, &mut out);
    let ret = if rng.random_bool(0.5) {
        let c = vals.last().unwrap().clone();
        out.push_str(&format!("  br {c}, bb1, bb2\nbb1:\n"));
        let mut a = vals.clone();
        body(rng, &mut a, &mut out);
        out.push_str("  jmp bb3\nbb2:\n");
        let mut b = vals.clone();
        body(rng, &mut b, &mut out);
        out.push_str("  jmp bb3\nbb3:\n");
        let phi = format!("%v{}", 1000);
        out.push_str(&format!("  {phi} = phi [bb1: {}, bb2: {}]\n", a.last().unwrap(), b.last().unwrap()));
        phi
    } else {
        vals.last().unwrap().clone()
    };
    out.push_str(&format!("  return {ret}\n}}\n\nfunc @g(%k, %x) {{\nbb0:\n  %y = call multiply(%k, %x)\n  return %y\n}}\n"));
    out
}
