use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn mxsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mxsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mxsim-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn arg(p: &std::path::Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn single_mz_assembles_to_one_word() {
    let dir = scratch("mz");
    let src = dir.join("a.s");
    fs::write(&src, "mz m4\n").unwrap();
    let bin = dir.join("a.qdrl");
    let o = mxsim(&["asm", arg(&src), "-o", arg(&bin)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let bytes = fs::read(&bin).unwrap();
    assert_eq!(&bytes[..4], b"QDRL");
    assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 1);
    assert_eq!(bytes.len(), 14);
    assert!(dir.join("a.manifest.json").exists());
    let d = mxsim(&["disasm", arg(&bin)]);
    assert_eq!(stdout(&d).trim(), "mz m4");
}

#[test]
fn malformed_mnemonic_exits_2_with_line() {
    let dir = scratch("bad");
    let src = dir.join("bad.s");
    fs::write(&src, "mz m4\nmzz m5\n").unwrap();
    let o = mxsim(&["asm", arg(&src), "-o", arg(&dir.join("bad.qdrl"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn generated_kernel_round_trips_through_binary() {
    let dir = scratch("gen8");
    let o = mxsim(&["gen-matmul", "8", "8", "8", "f32", "--seed", "3", "--out", arg(&dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["kernel.s", "a.op", "b.op", "memory.bin", "manifest.json", "spec.json"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let bin = dir.join("kernel.qdrl");
    let a = mxsim(&["asm", arg(&dir.join("kernel.s")), "-o", arg(&bin)]);
    assert!(stdout(&a).starts_with("24 instructions"), "{}", stdout(&a));
    let bytes = fs::read(&bin).unwrap();
    assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 24);

    // the binary with its sidecar image runs to the same memory as the source
    let from_src = mxsim(&["run", arg(&dir.join("kernel.s"))]);
    let from_bin = mxsim(&["run", arg(&bin)]);
    assert!(from_src.status.success());
    assert_eq!(stdout(&from_src), stdout(&from_bin));
}

#[test]
fn large_kernel_instruction_count() {
    let dir = scratch("gen64");
    let o = mxsim(&["gen-matmul", "64", "64", "64", "f32", "--out", arg(&dir)]);
    assert_eq!(stdout(&o).trim(), "8704 instructions");
}

#[test]
fn padding_is_opt_in() {
    let dir = scratch("pad");
    let o = mxsim(&["gen-matmul", "7", "4", "8", "f32", "--out", arg(&dir)]);
    assert_eq!(o.status.code(), Some(2));
    let o = mxsim(&["gen-matmul", "7", "4", "8", "f32", "--pad", "--out", arg(&dir)]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("8x4x8"));
    let spec: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("spec.json")).unwrap()).unwrap();
    assert_eq!(
        (spec["m"].as_u64(), spec["k"].as_u64(), spec["n"].as_u64()),
        (Some(8), Some(4), Some(8))
    );
}

#[test]
fn sim_writes_report_and_trace() {
    let dir = scratch("sim");
    let o = mxsim(&[
        "sim",
        "--matmul",
        "8,8,8",
        "--etype",
        "f32",
        "--out",
        arg(&dir),
        "--gantt",
        "svg",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("C checksum"));
    assert!(out.contains("C matches reference"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    let m = &report["metrics"];
    assert_eq!(m["M"], 8);
    assert!(m["performance_ideality"].as_f64().unwrap() > 0.0);
    assert!(m["fpu_utilization"].as_f64().unwrap() > 0.0);
    assert_eq!(report["total_macs"], 512);
    let trace = fs::read_to_string(dir.join("trace.csv")).unwrap();
    assert!(trace.starts_with("unit,instr_id,stage,start_cycle,end_cycle\n"));
    assert!(fs::read_to_string(dir.join("gantt.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn sim_from_manifest_is_deterministic() {
    let dir = scratch("manifest");
    let manifest = dir.join("run.json");
    fs::write(
        &manifest,
        r#"{"matmul": {"m": 16, "k": 32, "n": 8, "etype": "i8"}, "seed": 9, "out": "out", "format": "csv"}"#,
    )
    .unwrap();
    let first = mxsim(&["sim", arg(&manifest)]);
    assert!(first.status.success(), "{}", stderr(&first));
    let report = fs::read(dir.join("out/report.csv")).unwrap();
    let trace = fs::read(dir.join("out/trace.csv")).unwrap();
    let second = mxsim(&["sim", arg(&manifest)]);
    assert_eq!(stdout(&first), stdout(&second));
    assert_eq!(fs::read(dir.join("out/report.csv")).unwrap(), report);
    assert_eq!(fs::read(dir.join("out/trace.csv")).unwrap(), trace);
}

#[test]
fn empty_program_reports_zero_cycles() {
    let dir = scratch("empty");
    let src = dir.join("empty.s");
    fs::write(&src, "# nothing\n").unwrap();
    let o = mxsim(&["sim", "--program", arg(&src), "--out", arg(&dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["total_cycles"], 0);
}

#[test]
fn zero_write_ports_rejected_before_simulation() {
    let dir = scratch("cfg");
    let cfg = dir.join("cfg.json");
    fs::write(&cfg, r#"{"mrf_write_ports": 0}"#).unwrap();
    let o = mxsim(&["sim", "--matmul", "8,4,8", "--config", arg(&cfg), "--out", arg(&dir)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(!dir.join("report.json").exists());
}

#[test]
fn memory_fault_exits_3_with_json() {
    let dir = scratch("fault");
    let src = dir.join("fault.s");
    fs::write(&src, "mz m0\nmld.w m1, 0x1fff0, 16\n").unwrap();
    for cmd in ["sim", "run"] {
        let o = if cmd == "sim" {
            mxsim(&["sim", "--program", arg(&src), "--out", arg(&dir)])
        } else {
            mxsim(&["run", arg(&src)])
        };
        assert_eq!(o.status.code(), Some(3), "{cmd}: {}", stderr(&o));
        let err: serde_json::Value = serde_json::from_str(stderr(&o).trim()).unwrap();
        assert_eq!(err["error"], "exec");
        assert_eq!(err["instruction"], 1);
    }
}

#[test]
fn compare_isa_rows() {
    let o = mxsim(&["compare-isa", "--len", "128,32", "--sew", "32,8", "--dlen", "128"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("matrix,128,32,128,64,64,16,4"), "{out}");
    assert!(out.contains("vector,128,32,128,4,16,4,1"));
    // rlen equal to one lane: a single row, no reduction
    assert!(out.contains("matrix,32,32,128,1,4,4,1"));
    assert!(out.contains("matrix,128,8,128,256,256,64,4"));
    assert!(out.contains("vector,128,8,128,16,64,16,1"));
    let bad = mxsim(&["compare-isa", "--len", "100"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn table_covers_all_workloads() {
    let o = mxsim(&["table"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<serde_json::Value> = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rows.len(), 12);
    let cube = rows
        .iter()
        .find(|r| r["M"] == 64 && r["K"] == 64 && r["etype"] == "f32")
        .unwrap();
    assert_eq!(cube["cycles"], 17604);
}
