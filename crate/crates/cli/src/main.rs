//! `hloc`: compile, run, optimize, count, differentiate and trace `.mhl`
//! programs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hloc::frontend::{parse_program, print_function, validate, Module, ValueType};
use hloc::grad::{grad, GradError, GradRequest};
use hloc::hlo::{print_hlo, HloModule};
use hloc::interp::{dynamic_eval, Device, DynamicError, TraceEntry};
use hloc::lower::{compile, declared_signature, CompileError};
use hloc::opt::{count_instructions, run_pipeline, DEFAULT_PIPELINE};
use hloc::text::{parse_shape_list, parse_value};
use hloc::types::{ElementType, Shape};
use hloc::value::{Data, TensorValue, Value};

#[derive(Parser)]
#[command(name = "hloc", version, about = "Compile a small SSA tensor language to HLO")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the HLO module for an entry function.
    Compile(Common),
    /// Run an entry function on input literals.
    Run {
        #[command(flatten)]
        common: Common,
        /// Evaluate op by op instead of compiling the whole function.
        #[arg(long)]
        dynamic: bool,
        /// Print device counters as JSON after the result.
        #[arg(long)]
        stats: bool,
        /// Inputs as JSON, the literal syntax, or `@path` to read either.
        inputs: Vec<String>,
    },
    /// Print the module after the optimization pipeline.
    Opt(Common),
    /// Instruction counts before and after optimization.
    Count(Common),
    /// Generate the gradient of a scalar loss.
    Grad {
        #[command(flatten)]
        common: Common,
        /// Parameter indices to differentiate with respect to (default: all).
        #[arg(long, value_delimiter = ',')]
        wrt: Vec<usize>,
        #[arg(long, value_enum, default_value_t = Emit::Frontend)]
        emit: Emit,
    },
    /// Evaluate op by op and log every device execution.
    Trace {
        #[command(flatten)]
        common: Common,
        inputs: Vec<String>,
    },
}

#[derive(Args)]
struct Common {
    /// Source file in the `.mhl` format.
    file: PathBuf,
    /// Entry function (default: a `;! entry` directive, else the first function).
    #[arg(long)]
    entry: Option<String>,
    /// Argument types such as `f32[10,10],f32[10]` (default: a `;! sig`
    /// directive, else the declared parameter types).
    #[arg(long)]
    sig: Option<String>,
    /// Run the default optimization pipeline.
    #[arg(long)]
    opt: bool,
    /// Comma-separated pass list; implies `--opt`.
    #[arg(long, value_delimiter = ',')]
    passes: Option<Vec<String>>,
    /// Fail instead of falling back when the entry cannot be offloaded.
    #[arg(long)]
    strict: bool,
    #[arg(long, env = "HLOC_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Write the main output here instead of stdout.
    #[arg(short = 'o', long = "output")]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Emit {
    Frontend,
    Hlo,
}

/// Exit status plus message for stderr.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }
}

impl From<CompileError> for Failure {
    fn from(e: CompileError) -> Self {
        let code = match &e {
            CompileError::Offload(_) => 2,
            e if e.is_internal() => 3,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<GradError> for Failure {
    fn from(e: GradError) -> Self {
        let code = match &e {
            GradError::ControlFlow(_) | GradError::NotDifferentiable { .. } | GradError::Unsupported { .. } => 2,
            GradError::Compile(_) | GradError::Eval(_) => 3,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<DynamicError> for Failure {
    fn from(e: DynamicError) -> Self {
        let code = match &e {
            DynamicError::Compile { error, .. } if error.is_internal() => 3,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

type Outcome = Result<String, Failure>;

/// A parsed source file with its entry and argument types resolved.
struct Program {
    module: Module,
    entry: String,
    sig: Vec<ValueType>,
}

fn directive<'a>(src: &'a str, key: &str) -> Option<&'a str> {
    src.lines().find_map(|l| l.trim().strip_prefix(";!")?.trim().strip_prefix(key).map(str::trim))
}

fn parse_sig(text: &str) -> Result<Vec<ValueType>, Failure> {
    let shapes = parse_shape_list(text).map_err(|e| Failure::input(format!("bad signature `{text}`: {e}")))?;
    Ok(shapes.iter().map(ValueType::from_shape).collect())
}

fn load(c: &Common) -> Result<Program, Failure> {
    let src = std::fs::read_to_string(&c.file).map_err(|e| Failure::input(format!("{}: {e}", c.file.display())))?;
    let module = parse_program(&src).map_err(|e| Failure::input(format!("{}:{e}", c.file.display())))?;
    let diags = validate(&module);
    if !diags.is_empty() {
        let text: Vec<String> = diags.iter().map(ToString::to_string).collect();
        return Err(Failure::input(text.join("\n")));
    }
    let entry = match c.entry.clone().or_else(|| directive(&src, "entry").map(str::to_string)) {
        Some(e) => e,
        None => module.functions.first().map(|f| f.name.clone()).ok_or_else(|| Failure::input("no functions"))?,
    };
    if module.function(&entry).is_none() {
        return Err(Failure::input(format!("no function named @{entry}")));
    }
    let sig = match c.sig.as_deref().or_else(|| directive(&src, "sig")) {
        Some(text) => parse_sig(text)?,
        None => declared_signature(&module, &entry)
            .ok_or_else(|| Failure::input(format!("@{entry} has untyped parameters; pass --sig")))?,
    };
    Ok(Program { module, entry, sig })
}

fn optimize(c: &Common, m: &HloModule) -> Result<HloModule, Failure> {
    match &c.passes {
        Some(p) => {
            let names: Vec<&str> = p.iter().map(String::as_str).filter(|s| !s.is_empty()).collect();
            run_pipeline(m, &names).map_err(|e| Failure::input(e.to_string()))
        }
        None => Ok(run_pipeline(m, DEFAULT_PIPELINE).expect("default passes exist")),
    }
}

fn compiled(c: &Common, p: &Program) -> Result<HloModule, Failure> {
    let m = compile(&p.module, &p.entry, &p.sig)?;
    if c.opt || c.passes.is_some() {
        optimize(c, &m)
    } else {
        Ok(m)
    }
}

fn json_to_value(j: &serde_json::Value, shape: &Shape) -> Result<Value, String> {
    match shape {
        Shape::Tuple(elems) => {
            let items = j.as_array().filter(|a| a.len() == elems.len()).ok_or_else(|| format!("expected a {}-tuple", elems.len()))?;
            items.iter().zip(elems).map(|(x, s)| json_to_value(x, s)).collect::<Result<_, _>>().map(Value::Tuple)
        }
        Shape::Array(t) => {
            let mut flat = Vec::new();
            flatten(j, &t.dims, &mut flat)?;
            let data = match t.elem {
                ElementType::F32 => Data::F32(flat.iter().map(|x| x.as_f64().map(|v| v as f32).ok_or("expected a number")).collect::<Result<_, _>>()?),
                ElementType::S64 => Data::S64(flat.iter().map(|x| x.as_i64().ok_or("expected an integer")).collect::<Result<_, _>>()?),
                ElementType::Pred => Data::Pred(flat.iter().map(|x| x.as_bool().ok_or("expected a boolean")).collect::<Result<_, _>>()?),
            };
            TensorValue::new(t.clone(), data).map(Value::Tensor).map_err(|e| e.to_string())
        }
    }
}

fn flatten<'a>(j: &'a serde_json::Value, dims: &[usize], out: &mut Vec<&'a serde_json::Value>) -> Result<(), String> {
    match dims.split_first() {
        None => {
            out.push(j);
            Ok(())
        }
        Some((&n, rest)) => {
            let items = j.as_array().filter(|a| a.len() == n).ok_or_else(|| format!("expected an array of length {n}"))?;
            items.iter().try_for_each(|x| flatten(x, rest, out))
        }
    }
}

fn value_to_json(v: &Value) -> serde_json::Value {
    fn scalar(d: &Data, i: usize) -> serde_json::Value {
        match d {
            Data::F32(x) => serde_json::Number::from_f64(x[i] as f64).map_or_else(|| x[i].to_string().into(), Into::into),
            Data::S64(x) => x[i].into(),
            Data::Pred(x) => x[i].into(),
        }
    }
    fn nest(d: &Data, dims: &[usize], offset: usize) -> serde_json::Value {
        match dims.split_first() {
            None => scalar(d, offset),
            Some((&n, rest)) => {
                let stride: usize = rest.iter().product();
                (0..n).map(|i| nest(d, rest, offset + i * stride)).collect::<Vec<_>>().into()
            }
        }
    }
    match v {
        Value::Tensor(t) => nest(t.data(), t.dims(), 0),
        Value::Tuple(elems) => elems.iter().map(value_to_json).collect::<Vec<_>>().into(),
    }
}

fn parse_inputs(texts: &[String], sig: &[ValueType]) -> Result<Vec<Value>, Failure> {
    if texts.len() != sig.len() {
        return Err(Failure::input(format!("expected {} inputs, got {}", sig.len(), texts.len())));
    }
    texts
        .iter()
        .zip(sig)
        .enumerate()
        .map(|(i, (text, ty))| {
            let text = match text.strip_prefix('@') {
                Some(path) => std::fs::read_to_string(path).map_err(|e| Failure::input(format!("{path}: {e}")))?,
                None => text.clone(),
            };
            let shape = ty.to_shape().ok_or_else(|| Failure::input(format!("input {i}: {ty} has no runtime form")))?;
            let parsed = match serde_json::from_str::<serde_json::Value>(&text) {
                Ok(j) => json_to_value(&j, &shape),
                Err(_) => parse_value(&text, &shape).map_err(|e| e.to_string()),
            };
            parsed.map_err(|e| Failure::input(format!("input {i} (`{}`) does not match {ty}: {e}", text.trim())))
        })
        .collect()
}

fn render(v: &Value, format: Format) -> String {
    match format {
        Format::Text => format!("{v}\n"),
        Format::Json => format!("{}\n", value_to_json(v)),
    }
}

fn stats_json(dev: &Device) -> String {
    serde_json::to_string(&dev.stats()).expect("stats serialize")
}

fn cmd_compile(c: &Common) -> Outcome {
    let p = load(c)?;
    Ok(print_hlo(&compiled(c, &p)?))
}

fn cmd_opt(c: &Common) -> Outcome {
    let p = load(c)?;
    let m = compile(&p.module, &p.entry, &p.sig)?;
    Ok(print_hlo(&optimize(c, &m)?))
}

fn cmd_count(c: &Common) -> Outcome {
    let p = load(c)?;
    let m = compile(&p.module, &p.entry, &p.sig)?;
    let (before, after) = (count_instructions(&m), count_instructions(&optimize(c, &m)?));
    Ok(match c.format {
        Format::Text => format!("Unopt\n{before}\nOpt\n{after}"),
        Format::Json => format!("{}\n", serde_json::json!({ "unopt": before, "opt": after })),
    })
}

fn cmd_run(c: &Common, dynamic: bool, stats: bool, inputs: &[String]) -> Outcome {
    let p = load(c)?;
    let args = parse_inputs(inputs, &p.sig)?;
    let dev = Device::new(c.seed);
    let hlo = if dynamic {
        None
    } else {
        match compiled(c, &p) {
            Ok(m) => Some(m),
            Err(f) if f.code == 2 && !c.strict => {
                eprintln!("falling back to op-by-op evaluation:\n{}", f.message);
                None
            }
            Err(f) => return Err(f),
        }
    };
    let result = match hlo {
        Some(m) => dev.run_module(&m, &args).map_err(|e| Failure::input(e.to_string()))?,
        None => dynamic_eval(&p.module, &p.entry, &args, &dev)?,
    };
    let mut out = render(&result, c.format);
    if stats {
        writeln!(out, "{}", stats_json(&dev)).expect("write to string");
    }
    Ok(out)
}

fn trace_line(e: &TraceEntry) -> String {
    let operands: Vec<String> = e.operands.iter().map(|(h, s)| format!("#{} {s}", h.0)).collect();
    format!("{} ({}) -> #{} {}", e.kind, operands.join(", "), e.result.0, e.shape)
}

fn cmd_trace(c: &Common, inputs: &[String]) -> Outcome {
    let p = load(c)?;
    let args = parse_inputs(inputs, &p.sig)?;
    let dev = Device::new(c.seed);
    dev.enable_trace();
    let result = dynamic_eval(&p.module, &p.entry, &args, &dev)?;
    let mut out = String::new();
    for e in dev.take_trace() {
        writeln!(out, "{}", trace_line(&e)).expect("write to string");
    }
    out.push_str(&render(&result, c.format));
    writeln!(out, "{}", stats_json(&dev)).expect("write to string");
    Ok(out)
}

fn cmd_grad(c: &Common, wrt: &[usize], emit: Emit) -> Outcome {
    let p = load(c)?;
    let wrt = if wrt.is_empty() { (0..p.sig.len()).collect() } else { wrt.to_vec() };
    let req = GradRequest::new(p.entry.clone(), wrt).with_types(p.sig.clone());
    let g = grad(&p.module, &req)?;
    match emit {
        Emit::Frontend => {
            let added = &g.module.functions[p.module.functions.len()..];
            Ok(added.iter().map(print_function).collect::<Vec<_>>().join("\n"))
        }
        Emit::Hlo => {
            let m = compile(&g.module, &g.function, &p.sig)?;
            let m = if c.opt || c.passes.is_some() { optimize(c, &m)? } else { m };
            Ok(print_hlo(&m))
        }
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::input(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, outcome) = match &cli.command {
        Command::Compile(c) => (c, cmd_compile(c)),
        Command::Opt(c) => (c, cmd_opt(c)),
        Command::Count(c) => (c, cmd_count(c)),
        Command::Run { common, dynamic, stats, inputs } => (common, cmd_run(common, *dynamic, *stats, inputs)),
        Command::Trace { common, inputs } => (common, cmd_trace(common, inputs)),
        Command::Grad { common, wrt, emit } => (common, cmd_grad(common, wrt, *emit)),
    };
    match outcome.and_then(|text| write_output(common.output.as_deref(), &text)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
