use std::path::PathBuf;
use std::process::{Command, Output};

fn corpus(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/corpus").join(format!("{name}.mhl"));
    p.to_string_lossy().into_owned()
}

fn hloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hloc")).args(args).env_remove("HLOC_SEED").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = hloc(args);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
    stdout(&o)
}

fn temp_source(text: &str) -> tempfile::NamedTempFile {
    let f = tempfile::Builder::new().suffix(".mhl").tempfile().unwrap();
    std::fs::write(f.path(), text).unwrap();
    f
}

#[test]
fn compile_dense_prints_the_golden_module() {
    let dense = corpus("dense");
    let out = ok(&["compile", &dense, "--entry", "dense", "--sig", "f32[10,10],f32[10],f32[10]"]);
    let golden = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden/dense.hlo")).unwrap();
    assert_eq!(out, golden);
    assert_eq!(ok(&["compile", &dense]), out, "directives give the same signature and output is deterministic");
}

#[test]
fn compile_with_opt_and_output_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("softmax.hlo");
    ok(&["compile", &corpus("softmax"), "--opt", "-o", path.to_str().unwrap()]);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.contains("ENTRY softmax"));
    assert!(!text.contains("get-tuple-element"), "{text}");
    assert_eq!(ok(&["opt", &corpus("softmax")]), text);
}

const DYNAMIC_PERM: &str = "func @f(%x, %p) {
bb0:
  %t = call transpose(%x, %p)
  return %t
}";

#[test]
fn strict_offload_failure_exits_2() {
    let src = temp_source(DYNAMIC_PERM);
    let path = src.path().to_str().unwrap();
    let o = hloc(&["compile", path, "--sig", "f32[2,3],s64[2]", "--strict"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unresolved-static-operand"), "{}", stderr(&o));

    let o = hloc(&["run", path, "--sig", "f32[2,3],s64[2]", "--strict", "[[1,2,3],[4,5,6]]", "[1,0]"]);
    assert_eq!(o.status.code(), Some(2));
    let out = ok(&["run", path, "--sig", "f32[2,3],s64[2]", "[[1,2,3],[4,5,6]]", "[1,0]"]);
    assert_eq!(out.trim(), "{{1, 4}, {2, 5}, {3, 6}}");
}

#[test]
fn run_softmax_and_loop_sum() {
    let out = ok(&["run", &corpus("softmax"), "[0,0,0,0,0,0,0,0,0,0]"]);
    assert_eq!(out.trim(), "{0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1}");
    assert_eq!(ok(&["run", &corpus("loop_sum"), "100"]).trim(), "4950");
    assert_eq!(ok(&["run", &corpus("loop_sum"), "--dynamic", "100"]).trim(), "4950");
    assert_eq!(ok(&["run", &corpus("loop_sum"), "--format", "json", "0"]).trim(), "0");
}

fn executions(out: &str) -> u64 {
    let stats: serde_json::Value = serde_json::from_str(out.lines().last().unwrap()).unwrap();
    stats["executions"].as_u64().unwrap()
}

#[test]
fn stats_count_device_executions() {
    let dense = corpus("dense");
    let inputs: Vec<String> = vec![
        serde_json::to_string(&vec![vec![0.5f32; 10]; 10]).unwrap(),
        serde_json::to_string(&vec![1.0f32; 10]).unwrap(),
        serde_json::to_string(&vec![-1.0f32; 10]).unwrap(),
    ];
    let mut args = vec!["run", dense.as_str(), "--stats"];
    args.extend(inputs.iter().map(String::as_str));
    let compiled = ok(&args);
    args.push("--dynamic");
    let dynamic = ok(&args);
    assert_eq!(executions(&compiled), 1);
    assert_eq!(executions(&dynamic), 2);
    assert_eq!(compiled.lines().next(), dynamic.lines().next());
    assert_eq!(compiled.lines().next().unwrap(), "{4, 4, 4, 4, 4, 4, 4, 4, 4, 4}");
}

#[test]
fn inputs_from_files_and_literal_syntax() {
    let dir = tempfile::tempdir().unwrap();
    let x = dir.path().join("x.json");
    std::fs::write(&x, "[1, 2, 3, 4, 5]").unwrap();
    let arg = format!("@{}", x.display());
    assert_eq!(ok(&["run", &corpus("sum_squares"), &arg]).trim(), "55");
    assert_eq!(ok(&["run", &corpus("sum_squares"), "{1, 2, 3, 4, 5}"]).trim(), "55");
}

#[test]
fn bad_inputs_exit_1() {
    let o = hloc(&["run", &corpus("sum_squares"), "[1, 2]"]);
    assert_eq!(o.status.code(), Some(1));
    let o = hloc(&["run", &corpus("sum_squares")]);
    assert_eq!(o.status.code(), Some(1));
    let src = temp_source("func @f(%x) {\nbb0:\n  return %y\n}");
    let o = hloc(&["compile", src.path().to_str().unwrap(), "--sig", "f32[]"]);
    assert_eq!(o.status.code(), Some(1));
    let o = hloc(&["count", &corpus("dense"), "--passes", "dce,nope"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown pass `nope`"));
    let o = hloc(&["compile", &corpus("dense"), "--bogus"]);
    assert_ne!(o.status.code(), Some(0));
}

fn count_json(args: &[&str]) -> serde_json::Value {
    let mut a = vec!["count", "--format", "json"];
    a.extend_from_slice(args);
    serde_json::from_str(&ok(&a)).unwrap()
}

#[test]
fn count_tables() {
    let dense = count_json(&[&corpus("dense")]);
    assert_eq!(dense["unopt"]["entry"], 5);
    assert_eq!(dense["unopt"]["total"], 8);
    let soft = count_json(&[&corpus("softmax")]);
    assert_eq!(soft["unopt"]["entry"], 7);
    let only_dce = count_json(&[&corpus("softmax"), "--passes", "dce"]);
    assert_eq!(only_dce["opt"], only_dce["unopt"], "softmax has no dead code");
    let text = ok(&["count", &corpus("dense")]);
    assert!(text.starts_with("Unopt\n") && text.contains("\nOpt\n"), "{text}");
    assert!(text.contains("Total          5      8"), "{text}");
}

#[test]
fn grad_emits_frontend_and_hlo() {
    let text = ok(&["grad", &corpus("sum_squares")]);
    assert!(text.starts_with("func @f_grad(%x)"), "{text}");
    assert!(text.contains("call multiply(") && text.contains("tuple("), "{text}");
    let hlo = ok(&["grad", &corpus("dense_loss"), "--emit", "hlo"]);
    assert!(hlo.contains(" dot(") && hlo.contains(" transpose("), "{hlo}");
    let partial = ok(&["grad", &corpus("dense_loss"), "--wrt", "2"]);
    assert!(partial.contains("func @loss_grad("), "{partial}");
}

#[test]
fn grad_of_a_loop_exits_2() {
    let o = hloc(&["grad", &corpus("power"), "--wrt", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("control flow unsupported in grad"), "{}", stderr(&o));
    let o = hloc(&["grad", &corpus("max_reduce")]);
    assert_eq!(o.status.code(), Some(1), "non-scalar loss is an input error");
}

fn trace_kinds(out: &str) -> Vec<String> {
    let mut k: Vec<String> = out.lines().filter(|l| l.contains(" -> #")).map(|l| l.split(' ').next().unwrap().to_string()).collect();
    k.sort();
    k
}

#[test]
fn trace_logs_one_line_per_execution() {
    let dense = corpus("dense");
    let zeros = serde_json::to_string(&vec![vec![0.0f32; 10]; 10]).unwrap();
    let v = serde_json::to_string(&vec![0.0f32; 10]).unwrap();
    let out = ok(&["trace", &dense, &zeros, &v, &v]);
    assert_eq!(trace_kinds(&out), ["dot", "map"]);
    assert_eq!(executions(&out), 2);

    let out = ok(&["trace", &corpus("softmax"), &v]);
    let counts = count_json(&[&corpus("softmax")]);
    let mut want: Vec<String> = Vec::new();
    for k in counts["unopt"]["kinds"].as_array().unwrap() {
        let kind = k["kind"].as_str().unwrap();
        if kind != "parameter" && kind != "constant" {
            want.extend(std::iter::repeat_n(kind.to_string(), k["entry"].as_u64().unwrap() as usize));
        }
    }
    want.sort();
    assert_eq!(trace_kinds(&out), want);

    let src = temp_source("func @k() {\nbb0:\n  %c = const f32[] 1\n  return %c\n}");
    let out = ok(&["trace", src.path().to_str().unwrap(), "--sig", ""]);
    assert_eq!(trace_kinds(&out).len(), 0);
    assert!(out.starts_with("1\n"), "{out}");
}

#[test]
fn seed_controls_rng() {
    let f = corpus("rng_add");
    let zeros = "[0,0,0,0]";
    let a = ok(&["run", &f, "--seed", "1", zeros]);
    assert_eq!(a, ok(&["run", &f, "--seed", "1", zeros]));
    assert_ne!(a, ok(&["run", &f, "--seed", "2", zeros]));
    let env = Command::new(env!("CARGO_BIN_EXE_hloc")).args(["run", &f, zeros]).env("HLOC_SEED", "1").output().unwrap();
    assert_eq!(stdout(&env), a);
    assert_eq!(a, ok(&["run", &f, "--seed", "1", "--dynamic", zeros]), "both paths draw the same numbers");
}

#[test]
fn compiled_and_dynamic_agree_on_corpus_samples() {
    for (name, inputs) in [
        ("two_phi", vec!["[1,2,3,4]", "[0.5,0.5,0.5,0.5]", "false"]),
        ("nested_loops", vec!["5"]),
        ("complex_mul", vec!["[[1,2,3,4],[0,1,0,1]]", "[[2,2,2,2],[1,1,1,1]]"]),
        ("early_return", vec!["3", "1", "[1,2,3]"]),
    ] {
        let mut args = vec!["run".to_string(), corpus(name)];
        args.extend(inputs.iter().map(|s| s.to_string()));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let compiled = ok(&refs);
        let mut dynamic = refs.clone();
        dynamic.push("--dynamic");
        assert_eq!(compiled, ok(&dynamic), "{name}");
    }
}
