use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ptxlat_core::isa::MemoryLevel;
use ptxlat_core::report;
use ptxlat_core::CycleRange;
use tempfile::TempDir;

fn ptxlat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ptxlat"))
        .args(args)
        .env_remove("PTXLAT_CONFIG")
        .env_remove("SOURCE_DATE_EPOCH")
        .output()
        .expect("spawn ptxlat")
}

fn code(args: &[&str]) -> i32 {
    ptxlat(args).status.code().expect("exit code")
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

fn gen_add_u32(dir: &TempDir) -> String {
    assert_eq!(
        code(&["gen", "--spec", "add.u32", "--out", &path(dir, "bench")]),
        0
    );
    path(dir, "bench/manifest.json")
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&["gen", "--spec", "add.q32"]), 2);
    assert_eq!(
        code(&["run", "--manifest", "m.json", "--backend", "foo"]),
        2
    );
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["report", "--table", "/nonexistent/table.json"]), 2);
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = path(&dir, "cfg.toml");
    std::fs::write(&cfg, "[device]\nl3_bytes = 1\n").unwrap();
    assert_eq!(
        code(&["--config", &cfg, "seed", "--out", &path(&dir, "s.json")]),
        2
    );
}

#[test]
fn replay_reads_fixture_clocks() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_add_u32(&dir);
    let fx = fixtures().join("traces/clock64");
    let out = ptxlat(&[
        "run",
        "--manifest",
        &manifest,
        "--backend",
        "replay",
        "--fixtures",
        fx.to_str().unwrap(),
        "--out",
        &path(&dir, "r.json"),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        code(&[
            "analyze",
            "--results",
            &path(&dir, "r.json"),
            "--out",
            &path(&dir, "t.json")
        ]),
        0
    );
    let md = ptxlat(&["report", "--table", &path(&dir, "t.json")]);
    let md = String::from_utf8(md.stdout).unwrap();
    assert!(md.contains("| add | add.u32 | IADD | 2 |"), "{md}");
}

#[test]
fn replay_without_fixture_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_add_u32(&dir);
    let empty = tempfile::tempdir().unwrap();
    let out = ptxlat(&[
        "run",
        "--manifest",
        &manifest,
        "--backend",
        "replay",
        "--fixtures",
        empty.path().to_str().unwrap(),
        "--out",
        &path(&dir, "r.json"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let text =
        String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    assert!(
        text.contains("missing fixture") && text.contains("add.u32.alu."),
        "{text}"
    );
}

#[test]
fn analyze_and_report_are_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&[
            "gen",
            "--all",
            "--out",
            &path(&dir, "bench"),
            "--l1-bytes",
            "16384",
            "--l2-bytes",
            "65536"
        ]),
        0
    );
    let run = [
        "run",
        "--manifest",
        &path(&dir, "bench/manifest.json"),
        "--backend",
        "virtual",
        "--out",
    ];
    assert_eq!(code(&[&run[..], &[&path(&dir, "r1.json")]].concat()), 0);
    assert_eq!(
        code(&[&run[..], &[&path(&dir, "r2.json"), "--jobs", "1"]].concat()),
        0
    );
    for (r, t) in [("r1.json", "t1.json"), ("r2.json", "t2.json")] {
        let args = [
            "analyze",
            "--results",
            &path(&dir, r),
            "--out",
            &path(&dir, t),
            "--generated-at",
            "fixed",
        ];
        assert_eq!(code(&args), 0);
    }
    let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("t1.json"), read("t2.json"));
    for fmt in ["md", "csv"] {
        let a = ptxlat(&["report", "--table", &path(&dir, "t1.json"), "--format", fmt]).stdout;
        let b = ptxlat(&["report", "--table", &path(&dir, "t2.json"), "--format", fmt]).stdout;
        assert!(!a.is_empty());
        assert_eq!(a, b);
    }
}

#[test]
fn diff_reports_changes_and_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    let seed = path(&dir, "seed.json");
    assert_eq!(code(&["seed", "--out", &seed]), 0);
    let mut t = report::load(Path::new(&seed)).unwrap();
    t.memory.insert(MemoryLevel::Global, CycleRange::point(146));
    let other = path(&dir, "other.json");
    report::save(&t, Path::new(&other)).unwrap();
    let out = ptxlat(&["diff", "--a", &other, "--b", &seed]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("global"), "{text}");
    assert!(text.contains("-144"), "{text}");
}

#[test]
fn validate_flags_broken_ptx() {
    let dir = tempfile::tempdir().unwrap();
    let bad = path(&dir, "bad.ptx");
    std::fs::write(&bad, ".version 7.0\n.target sm_80\n.address_size 64\n.visible .entry k()\n{\n\tfoo.bar %r1;\n\tret;\n}\n").unwrap();
    assert_eq!(code(&["validate", &bad]), 1);
    let good = fixtures().join("listings/alu_add_u32.ptx");
    assert_eq!(code(&["validate", good.to_str().unwrap()]), 0);
}
