mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hdlkit::cli::{self, exit};
use hdlkit::design::{Design, Scope};
use hdlkit::signals::{TypeDesc, Value};
use hdlkit::stmt::{drive, e};
use hdlkit::Error;

use common::{check_vcd, Tb};

fn hdlkit(dir: &Path, args: &[&str], config: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hdlkit"));
    cmd.current_dir(dir).args(args).env_remove(cli::CONFIG_ENV);
    if let Some(c) = config {
        cmd.env(cli::CONFIG_ENV, c);
    }
    cmd.output().expect("run hdlkit")
}

fn first_stderr_line(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr)
        .lines()
        .next()
        .unwrap_or("")
        .to_string()
}

#[test]
fn build_writes_the_counter_chain() {
    let dir = tempfile::tempdir().unwrap();
    let o = hdlkit(dir.path(), &["build", "--top", "axi_chain"], None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let gen = dir.path().join("gen");
    for f in ["Counter.vhd", "axiStream_32_pkg.vhd", "tb.vhd", "manifest.json"] {
        assert!(gen.join(f).is_file(), "missing {f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(gen.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["top"], "tb");
    let listed: Vec<&str> = manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["file"].as_str().unwrap())
        .collect();
    assert!(listed.contains(&"Counter.vhd"));

    let first: Vec<_> = ["Counter.vhd", "tb.vhd", "manifest.json"]
        .iter()
        .map(|f| fs::read(gen.join(f)).unwrap())
        .collect();
    assert_eq!(
        hdlkit(dir.path(), &["build", "--top", "axi_chain"], None).status.code(),
        Some(0)
    );
    let second: Vec<_> = ["Counter.vhd", "tb.vhd", "manifest.json"]
        .iter()
        .map(|f| fs::read(gen.join(f)).unwrap())
        .collect();
    assert_eq!(first, second);
}

#[test]
fn missing_top_exits_3_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["build", "sim", "graph"] {
        let o = hdlkit(dir.path(), &[sub, "--top", "designs::no_such_tb"], None);
        assert_eq!(o.status.code(), Some(exit::ELABORATION));
        let line = first_stderr_line(&o);
        assert!(line.starts_with("error code=3 kind=elaboration: "), "{line}");
        assert!(line.contains("designs::no_such_tb"), "{line}");
    }
}

#[test]
fn sim_reports_the_wrapped_counter() {
    let dir = tempfile::tempdir().unwrap();
    let o = hdlkit(
        dir.path(),
        &["sim", "--top", "first_test_bench", "--cycles", "700", "--vcd", "w.vcd"],
        None,
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("w.json")).unwrap()).unwrap();
    assert_eq!(report["final_values"]["my_first_test_bench/counter"], 700 % 301);
    assert_eq!(report["activations"]["my_first_test_bench/proc"], 700);
    let vcd = check_vcd(&fs::read_to_string(dir.path().join("w.vcd")).unwrap()).unwrap();
    assert_eq!(vcd.change_lines, report["committed_changes"].as_u64().unwrap());
}

#[test]
fn zero_cycles_give_a_header_only_vcd() {
    let dir = tempfile::tempdir().unwrap();
    let o = hdlkit(
        dir.path(),
        &["sim", "--top", "counter_tb", "--cycles", "0", "--vcd", "z.vcd"],
        None,
    );
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("z.vcd")).unwrap();
    assert!(text.trim_end().ends_with("$enddefinitions $end"));
    assert_eq!(check_vcd(&text).unwrap().change_lines, 0);
}

#[test]
fn trace_patterns_limit_the_dump() {
    let dir = tempfile::tempdir().unwrap();
    let o = hdlkit(
        dir.path(),
        &[
            "sim",
            "--top",
            "first_test_bench",
            "--cycles",
            "5",
            "--vcd",
            "t.vcd",
            "--trace",
            "*/counter",
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(0));
    let vcd = check_vcd(&fs::read_to_string(dir.path().join("t.vcd")).unwrap()).unwrap();
    assert_eq!(vcd.vars, 1);
}

#[test]
fn graph_dot_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = hdlkit(dir.path(), &["graph", "--top", "axi_chain", "--output", "-"], None);
    assert_eq!(o.status.code(), Some(0));
    let dot = String::from_utf8(o.stdout).unwrap();
    assert!(dot.starts_with("digraph"));
    assert!(dot.contains("\"tb/cnt.Dout\" -> \"tb/axPrint.D_in\""));

    let o = hdlkit(
        dir.path(),
        &["graph", "--top", "axi_chain", "--format", "json", "--output", "g.json"],
        None,
    );
    assert_eq!(o.status.code(), Some(0));
    let g: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("g.json")).unwrap()).unwrap();
    for n in g["nodes"].as_array().unwrap() {
        assert!(["entity", "port", "signal"].contains(&n["kind"].as_str().unwrap()));
        assert!(n["id"].is_string() && n["label"].is_string() && n["type"].is_string());
    }
    for e in g["edges"].as_array().unwrap() {
        assert!(["bundle", "scalar"].contains(&e["kind"].as_str().unwrap()));
    }
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("project.cfg");
    fs::write(&cfg, "# project\ntop = first_test_bench\nout_dir = out\ncycles = 10\n").unwrap();
    let o = hdlkit(dir.path(), &["sim"], Some(&cfg));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/first_test_bench.json")).unwrap()).unwrap();
    assert_eq!(report["cycles"], 10);
    let o = hdlkit(dir.path(), &["sim", "--cycles", "3"], Some(&cfg));
    assert_eq!(o.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/first_test_bench.json")).unwrap()).unwrap();
    assert_eq!(report["cycles"], 3);
}

#[test]
fn unknown_config_key_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "top = axi_chain\nspeed = 9\n").unwrap();
    let o = hdlkit(dir.path(), &["build"], Some(&cfg));
    assert_eq!(o.status.code(), Some(exit::CONFIG));
    assert!(first_stderr_line(&o).contains("unknown key speed"));
}

#[test]
fn usage_errors_have_their_own_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = hdlkit(dir.path(), &["sim", "--cycles", "many"], None);
    assert_eq!(o.status.code(), Some(exit::USAGE));
    assert!(first_stderr_line(&o).starts_with("error code=64 kind=usage: "));
}

#[test]
fn oscillation_maps_to_exit_4_with_nodes() {
    let d = Design::elaborate(Tb(|a: &mut Scope<'_>| {
        let x = a.signal("x", TypeDesc::Logic, Some(Value::zero_bit()))?;
        let y = a.signal("y", TypeDesc::Logic, Some(Value::zero_bit()))?;
        a.combinational("fwd", vec![drive(y, !e(x))])?;
        a.combinational("back", vec![drive(x, y)])?;
        a.end_architecture()
    }))
    .unwrap();
    let err = cli::simulate(d, 1).unwrap_err();
    assert!(matches!(err, Error::Oscillation { .. }));
    assert_eq!(cli::exit_code(&err), exit::OSCILLATION);
    let diag = cli::diagnostic(&err);
    assert!(diag.starts_with("error code=4 kind=oscillation: "));
    assert!(
        diag.contains("  cycling: tb/x") && diag.contains("  cycling: tb/y"),
        "{diag}"
    );
}

#[test]
fn every_corpus_top_builds_sims_and_graphs() {
    let dir = tempfile::tempdir().unwrap();
    for top in hdlkit::corpus::DESIGNS {
        for args in [
            vec!["build", "--top", top],
            vec!["sim", "--top", top, "--cycles", "50"],
            vec!["graph", "--top", top],
        ] {
            let o = hdlkit(dir.path(), &args, None);
            assert_eq!(
                o.status.code(),
                Some(0),
                "{args:?}: {}",
                String::from_utf8_lossy(&o.stderr)
            );
        }
    }
}
