//! End-to-end checks of the `envdt` binary: exit codes, output shapes,
//! determinism of the file-producing subcommands, and the TCP loop
//! against a spawned twin stub.

use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_envdt"));
    // Keep ambient configuration out of the tests.
    cmd.env_remove("ENVDT_SEED");
    cmd
}

fn fixture(device: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(format!("{device}.envdt"))
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

#[test]
fn validate_and_census_report_model_shape() {
    let out = bin().args(["validate"]).arg(fixture("pilly")).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("ok: model Pilly"), "{}", stdout(&out));

    let out = bin().args(["census"]).arg(fixture("pilly")).output().unwrap();
    assert!(out.status.success());
    let text = stdout(&out);
    for line in ["machines             4", "coverable-elements   79"] {
        assert!(text.contains(line), "census output missing {line:?}:\n{text}");
    }
}

#[test]
fn missing_file_is_io_failure_and_bad_model_is_semantic() {
    let out = bin().args(["validate", "no-such-model.envdt"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("broken.envdt");
    std::fs::write(&bad, "model Broken\ncomponent {{{").unwrap();
    let out = bin().args(["validate"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("error:"), "{}", stderr(&out));
}

#[test]
fn instantiate_is_seed_deterministic() {
    let run = || {
        let out = bin()
            .args(["instantiate", "--seed", "11"])
            .arg(fixture("medido"))
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
        out.stdout
    };
    let first = run();
    assert!(!first.is_empty());
    assert_eq!(first, run(), "same seed, same instance");

    let out = bin()
        .args(["instantiate", "--param", "patients=nope"])
        .arg(fixture("medido"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_writes_reproducible_traces_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let trace = dir.path().join(name);
        let out = bin()
            .args(["simulate", "--seed", "5", "--dist", "exponential(0.25)", "--trace"])
            .arg(&trace)
            .arg(fixture("karie"))
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
        (stdout(&out), std::fs::read(&trace).unwrap())
    };
    let (summary_a, trace_a) = run("a.jsonl");
    let (_, trace_b) = run("b.jsonl");
    assert_eq!(trace_a, trace_b, "same configuration, same trace bytes");
    assert!(summary_a.starts_with("karie-exponential-s5:"), "{summary_a}");
    assert!(summary_a.contains("coverage="), "{summary_a}");

    let out = bin()
        .args(["simulate", "--dist", "zipf(1.1)"])
        .arg(fixture("karie"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "unknown distribution is a semantic error");

    // A twin address nothing listens on surfaces as an I/O failure
    // after the run completes.
    let out = bin()
        .args(["simulate", "--seed", "5", "--twin", "tcp://127.0.0.1:9", "--max-steps", "40"])
        .arg(fixture("pilly"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("twin delivery failed"), "{}", stderr(&out));

    let out = bin().args(["simulate", "--twin", "smoke://x"]).arg(fixture("pilly")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn seed_environment_variable_matches_explicit_flag() {
    let dir = tempfile::tempdir().unwrap();
    let via_flag = dir.path().join("flag.jsonl");
    let via_env = dir.path().join("env.jsonl");

    let out = bin()
        .args(["simulate", "--seed", "12", "--trace"])
        .arg(&via_flag)
        .arg(fixture("pilly"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));

    let out = bin()
        .env("ENVDT_SEED", "12")
        .args(["simulate", "--trace"])
        .arg(&via_env)
        .arg(fixture("pilly"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(std::fs::read(&via_flag).unwrap(), std::fs::read(&via_env).unwrap());

    let out = bin()
        .env("ENVDT_SEED", "twelve")
        .args(["simulate"])
        .arg(fixture("pilly"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn experiment_resumes_and_report_rebuilds_identical_tables() {
    let dir = tempfile::tempdir().unwrap();
    let plan_path = dir.path().join("plan.toml");
    std::fs::write(
        &plan_path,
        format!(
            r#"
fixtures = [{:?}]
distributions = ["uniform(0, 1)", "exponential(0.25)"]
repetitions = 3
seed = 99
out = "study"
"#,
            fixture("pilly")
        ),
    )
    .unwrap();

    let out = bin().args(["experiment"]).arg(&plan_path).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("= 6 runs"), "{text}");
    assert!(text.contains("executed 6 run(s), resumed 0"), "{text}");

    let study = dir.path().join("study");
    for f in ["coverage.csv", "diversity.csv", "simtime.csv"] {
        assert!(study.join(f).is_file(), "missing {f}");
    }

    let out = bin().args(["experiment"]).arg(&plan_path).output().unwrap();
    assert!(out.status.success());
    assert!(stdout(&out).contains("executed 0 run(s), resumed 6"), "{}", stdout(&out));

    let rebuilt = dir.path().join("rebuilt");
    let out = bin()
        .args(["report", "--in"])
        .arg(study.join("traces"))
        .arg("--out")
        .arg(&rebuilt)
        .arg("--fixture")
        .arg(fixture("pilly"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    for f in ["coverage.csv", "diversity.csv", "simtime.csv"] {
        assert_eq!(
            std::fs::read(study.join(f)).unwrap(),
            std::fs::read(rebuilt.join(f)).unwrap(),
            "{f} differs between experiment and report"
        );
    }

    // Traces from a device with no --fixture given are an error.
    let out = bin()
        .args(["report", "--in"])
        .arg(study.join("traces"))
        .arg("--out")
        .arg(dir.path().join("x"))
        .arg("--fixture")
        .arg(fixture("karie"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn twin_stub_serves_a_simulation_over_tcp() {
    let mut stub = bin()
        .args(["twin-stub", "--listen", "127.0.0.1:0", "--limit", "1"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut reader = BufReader::new(stub.stdout.take().unwrap());
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("twin-stub listening on ").unwrap().to_string();

    let out = bin()
        .args(["simulate", "--seed", "1", "--dist", "exponential(0.25)"])
        .arg("--twin")
        .arg(format!("tcp://{addr}"))
        .arg(fixture("medido"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let summary = stdout(&out);
    assert!(summary.contains("acked="), "{summary}");
    assert!(!summary.contains("acked=0 "), "nothing was delivered: {summary}");

    let status = stub.wait().unwrap();
    assert!(status.success());
    let mut rest = String::new();
    reader.read_to_string(&mut rest).unwrap();
    assert!(rest.contains("envelope(s) applied"), "{rest}");
}
