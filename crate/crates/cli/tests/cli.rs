//! Command line behavior: exit codes, config files, report formatting.

use std::path::Path;
use std::process::Command;

use serde_json::Value;

struct Out {
    code: u8,
    stdout: String,
    stderr: String,
}

fn mvskit(args: &[&str]) -> Out {
    let mut o = Vec::new();
    let mut e = Vec::new();
    let argv = std::iter::once("mvskit").chain(args.iter().copied());
    let code = mvskit_cli::run(argv, &mut o, &mut e);
    Out {
        code,
        stdout: String::from_utf8(o).unwrap(),
        stderr: String::from_utf8(e).unwrap(),
    }
}

fn json(s: &str) -> Value {
    serde_json::from_str(s).unwrap_or_else(|e| panic!("{e}: {s}"))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth_small(dir: &Path, preset: &str) -> Value {
    let out = mvskit(&["synth", "--preset", preset, "--width", "32", "--height", "24", "--out", p(dir)]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    json(&out.stdout)
}

#[test]
fn unknown_subcommand_and_flag_are_usage_errors() {
    let o = mvskit(&["frobnicate"]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("Usage"), "{}", o.stderr);
    let o = mvskit(&["depth", "--bogus", "1"]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("--bogus"));
}

#[test]
fn help_lists_every_subcommand() {
    let o = mvskit(&["--help"]);
    assert_eq!(o.code, 0);
    for c in mvskit_cli::SUBCOMMANDS {
        assert!(o.stdout.contains(c), "{c} missing from help");
    }
}

#[test]
fn missing_inputs_name_the_flag() {
    let o = mvskit(&["depth", "--out", "/tmp/x"]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("--data"), "{}", o.stderr);
    let o = mvskit(&["eval", "--recon", "/nonexistent/r.ply", "--gt", "/nonexistent/g.ply"]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("--recon"), "{}", o.stderr);
    assert!(o.stderr.contains("--help"));
}

#[test]
fn invalid_values_are_rejected_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let o = mvskit(&["synth", "--preset", "acceptance", "--width", "2", "--out", p(dir.path())]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("width"), "{}", o.stderr);
    let o = mvskit(&["synth", "--preset", "no_such_scene", "--out", p(dir.path())]);
    assert_eq!(o.code, 1);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_mvskit");
    let s = Command::new(bin).arg("--version").output().unwrap();
    assert!(s.status.success());
    let s = Command::new(bin).args(["eval"]).output().unwrap();
    assert_eq!(s.status.code(), Some(1));
}

#[test]
fn identical_clouds_evaluate_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path(), "acceptance");
    let gt = dir.path().join("gt.ply");
    let o = mvskit(&["eval", "--recon", p(&gt), "--gt", p(&gt), "--threshold", "0.1"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let v = json(&o.stdout);
    assert_eq!(v["accuracy"], 0.0);
    assert_eq!(v["completeness"], 0.0);
    assert_eq!(v["overall"], 0.0);
    assert_eq!(v["precision"], 1.0);
    assert_eq!(v["recall"], 1.0);
    assert_eq!(v["f"], 1.0);
    assert_eq!(v["command"], "eval");
    assert_eq!(v["config"]["threshold"], 0.1);
}

#[test]
fn config_file_fills_in_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path(), "acceptance");
    let gt = dir.path().join("gt.ply");
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[eval]\nthreshold = 0.25\nmax_dist = 7.0\n").unwrap();
    let o = mvskit(&["--config", p(&cfg), "eval", "--recon", p(&gt), "--gt", p(&gt)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let v = json(&o.stdout);
    assert_eq!(v["config"]["threshold"], 0.25);
    assert_eq!(v["config"]["max_dist"], 7.0);
    let o = mvskit(&["--config", p(&cfg), "eval", "--recon", p(&gt), "--gt", p(&gt), "--threshold", "0.5"]);
    let v = json(&o.stdout);
    assert_eq!(v["config"]["threshold"], 0.5);
    assert_eq!(v["config"]["max_dist"], 7.0);
}

#[test]
fn config_errors_carry_the_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[eval]\nthreshold = \"far\"\n").unwrap();
    let o = mvskit(&["--config", p(&cfg), "eval"]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("eval.threshold"), "{}", o.stderr);

    std::fs::write(&cfg, "[eval]\nthreshhold = 1.0\n").unwrap();
    let o = mvskit(&["--config", p(&cfg), "eval"]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("threshhold"), "{}", o.stderr);

    std::fs::write(&cfg, "[evaluate]\n").unwrap();
    let o = mvskit(&["--config", p(&cfg), "eval"]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("evaluate"), "{}", o.stderr);
}

/// Every number in the document has at most nine significant digits.
fn assert_sig9(v: &Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap();
            let r: f64 = format!("{x:.8e}").parse().unwrap();
            assert_eq!(x, r, "{x} has more than 9 significant digits");
        }
        Value::Array(a) => a.iter().for_each(assert_sig9),
        Value::Object(o) => o.values().for_each(assert_sig9),
        _ => {}
    }
}

#[test]
fn pipeline_reports_are_rounded_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let s = synth_small(&data, "textureless_strip");
    assert_eq!(s["views"], 3);
    assert_sig9(&s);

    let run_depth = |out: &Path| {
        let o = mvskit(&["depth", "--data", p(&data), "--out", p(out), "--hypotheses", "48"]);
        assert_eq!(o.code, 0, "{}", o.stderr);
        o.stdout
    };
    let a = run_depth(&dir.path().join("d1"));
    let b = run_depth(&dir.path().join("d2"));
    let (va, vb) = (json(&a), json(&b));
    assert_eq!(va["views"], vb["views"]);
    assert_sig9(&va);
    assert_eq!(
        std::fs::read(dir.path().join("d1/depth/00000000.pfm")).unwrap(),
        std::fs::read(dir.path().join("d2/depth/00000000.pfm")).unwrap()
    );

    let ens = dir.path().join("ens");
    let o = mvskit(&[
        "ensemble", "--data", p(&data), "--out", p(&ens), "--samples", "4", "--hypotheses", "48", "--seed", "3",
    ]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert_sig9(&json(&o.stdout));
    for f in ["mean.pfm", "uncertainty.pfm", "aleatoric.pfm", "certain.pfm", "ensemble.json"] {
        assert!(ens.join(f).exists(), "{f}");
    }

    let o = mvskit(&["sparsify", "--data", p(&data), "--ensemble", p(&ens), "--bins", "5"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let lines: Vec<&str> = o.stdout.lines().collect();
    assert_eq!(lines[0], "density,error,oracle");
    assert_eq!(lines.len(), 6);

    let o = mvskit(&["loss", "--data", p(&data), "--ensemble", p(&ens)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let v = json(&o.stdout);
    assert_sig9(&v);
    assert!(v["losses"]["pc"]["value"].as_f64().unwrap() >= 0.0);

    let o = mvskit(&["selftrain", "--data", p(&data), "--ensemble", p(&ens), "--hypotheses", "48"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert_sig9(&json(&o.stdout));

    let cloud = dir.path().join("fused.ply");
    let o = mvskit(&["fuse", "--data", p(&data), "--depths", p(&dir.path().join("d1")), "--out", p(&cloud), "--min-views", "2"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(json(&o.stdout)["points"].as_u64().unwrap() > 0);
    let o = mvskit(&["eval", "--recon", p(&cloud), "--data", p(&data)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert_sig9(&json(&o.stdout));
}

#[test]
fn fuse_warns_when_nothing_survives() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth_small(&data, "acceptance");
    let depths = dir.path().join("d");
    assert_eq!(mvskit(&["depth", "--data", p(&data), "--out", p(&depths), "--hypotheses", "16"]).code, 0);
    // Three neighbors cannot agree when only two exist.
    let o = mvskit(&["fuse", "--data", p(&data), "--depths", p(&depths), "--out", p(&dir.path().join("c.ply"))]);
    assert!(o.stderr.contains("warning") || o.code != 0, "{} {}", o.code, o.stderr);
}
