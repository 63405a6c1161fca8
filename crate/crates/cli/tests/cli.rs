use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::PathBuf;
use std::process::{Command, Output, Stdio};
use std::time::Duration;

use serde_json::Value;

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn emu(args: &[&str], stdin: &[u8]) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_emu"))
        .args(args)
        .env_remove("EMU_CONFIG")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("emu-cli-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        &["frobnicate"][..],
        &["simulate", "--bogus"],
        &[],
        &["kappa"],
    ] {
        let out = emu(args, b"");
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn domain_errors_exit_1() {
    let bad_trials = scratch("bad_trials.csv");
    std::fs::write(
        &bad_trials,
        "participant,trial,d_h,v_r,cues,cp,coder\nP01,1,0.1,0.5,XYZ,0,C1\n",
    )
    .unwrap();
    let cases: Vec<Vec<String>> = vec![
        vec!["ingest".into(), "/nonexistent/trials.csv".into()],
        vec!["ingest".into(), bad_trials.to_string_lossy().into()],
        vec![
            "fit-curve".into(),
            "--q-r".into(),
            "1.5".into(),
            fixture("reference_crossings.json"),
        ],
        vec![
            "--config".into(),
            "/nonexistent/bundle.json".into(),
            "simulate".into(),
        ],
    ];
    for args in cases {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = emu(&args, b"");
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    }
}

#[test]
fn unknown_cue_reports_line() {
    let out = emu(
        &["ingest", "-"],
        b"participant,trial,d_h,v_r,cues,cp,coder\nP01,2,0.1,0.5,SJ,0,C1\nP01,3,0.1,0.5,XYZ,0,C1\n",
    );
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("XYZ") && err.contains('3'), "{err}");
}

#[test]
fn fit_curve_on_crossings_fixture() {
    let out = emu(
        &[
            "fit-curve",
            "--q-r",
            "0.15",
            &fixture("reference_crossings.json"),
        ],
        b"",
    );
    let curve = stdout_json(&out);
    assert!((curve["a"].as_f64().unwrap() - 1.5).abs() < 1e-9);
    assert!((curve["b"].as_f64().unwrap() - 0.03).abs() < 1e-9);
    assert_eq!(curve["d_max"], 0.3);
    assert_eq!(curve["q_r"], 0.15);
}

#[test]
fn kappa_on_identical_fixture() {
    let out = emu(&["kappa", "--json", &fixture("identical_pairs.csv")], b"");
    let report = stdout_json(&out);
    assert_eq!(report["kappa"], 1.0);
    assert_eq!(report["band"], "almost_perfect");
    assert_eq!(report["n_items"], 10);

    let text = emu(&["kappa", &fixture("identical_pairs.csv")], b"");
    let text = String::from_utf8(text.stdout).unwrap();
    assert!(
        text.contains("kappa:  1.000") && text.contains("almost_perfect"),
        "{text}"
    );
}

#[test]
fn kappa_from_trials() {
    let out = emu(
        &[
            "kappa",
            "--json",
            "--trials",
            &fixture("sample_trials.csv"),
            "--coder-a",
            "C1",
            "--coder-b",
            "C2",
        ],
        b"",
    );
    let report = stdout_json(&out);
    assert_eq!(report["n_items"], 8);
    // C1 codes one extra IMO (P01 trial 3).
    assert_eq!(report["contingency"]["yes_no"], 1);
    assert!(report["kappa"].as_f64().unwrap() < 1.0);
}

#[test]
fn ingest_summary() {
    let out = emu(&["ingest", &fixture("sample_trials.csv")], b"");
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("records:      16"), "{text}");
    assert!(text.contains("participants: 2"));
    assert!(text.contains("first_trial_outlier: true"));
}

#[test]
fn riskmatrix_then_fit() {
    let matrix_path = scratch("matrix.json");
    let out = emu(
        &[
            "riskmatrix",
            &fixture("sample_trials.csv"),
            "-o",
            matrix_path.to_str().unwrap(),
        ],
        b"",
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let matrix: Value = serde_json::from_slice(&std::fs::read(&matrix_path).unwrap()).unwrap();
    let total: u64 = matrix["cells"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["n"].as_u64().unwrap())
        .sum();
    assert_eq!(total, 6, "first approaches are excluded");

    let all = stdout_json(&emu(
        &[
            "riskmatrix",
            "--include-first-trial",
            &fixture("sample_trials.csv"),
        ],
        b"",
    ));
    let total: u64 = all["cells"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["n"].as_u64().unwrap())
        .sum();
    assert_eq!(total, 8);

    let curve = stdout_json(&emu(&["fit-curve", matrix_path.to_str().unwrap()], b""));
    assert_eq!(curve["q_r"], 0.15);
    assert!(curve["a"].as_f64().unwrap() >= 0.0 && curve["b"].as_f64().unwrap() >= 0.0);
}

#[test]
fn simulate_formats() {
    let csv = emu(&["simulate"], b"");
    assert!(csv.status.success());
    let text = String::from_utf8(csv.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,d_h,v_cmd,active_limit"));
    assert_eq!(lines.next(), Some("0,0.44,0,smu"));
    assert!(text.ends_with(",0,0,nominal\n"), "trace ends at rest");

    let doc = stdout_json(&emu(&["simulate", "--format", "json"], b""));
    let samples = doc["samples"].as_array().unwrap();
    assert_eq!(samples.len(), text.lines().count() - 1);

    let plot = String::from_utf8(emu(&["simulate", "--emit-plot-data"], b"").stdout).unwrap();
    assert!(plot.starts_with("d_h,v_cmd\n"));
}

#[test]
fn simulate_with_scenario_file_and_q_r() {
    let scenario = scratch("scenario.json");
    std::fs::write(
        &scenario,
        r#"{"start_distance":0.3,"stop_distance":0.05,"v_nominal":0.5,"mass":{"fixed":3.0},
            "body_part":"hand","curvature":"flat"}"#,
    )
    .unwrap();
    let out = emu(&["simulate", scenario.to_str().unwrap()], b"");
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("0,0.3,"));

    // No curve for q_r = 0.4 in the demo bundle.
    let out = emu(
        &["--q-r", "0.4", "simulate", scenario.to_str().unwrap()],
        b"",
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn govern_replies_in_order_with_errors_inline() {
    let input = b"{\"seq\":1,\"d_h\":0.20,\"v_nom\":1.0,\"m_u\":2.0,\"body_part\":\"chest\",\"curvature\":\"flat\"}\n\
hello\n\
{\"seq\":2,\"d_h\":0.50,\"v_nom\":1.0,\"m_u\":2.0,\"body_part\":\"chest\",\"curvature\":\"flat\"}\n";
    let out = emu(&["govern"], input);
    assert!(out.status.success());
    let replies: Vec<Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(replies.len(), 3);
    assert!((replies[0]["v_safe"].as_f64().unwrap() - 0.33).abs() < 1e-12);
    assert_eq!(replies[0]["active_limit"], "emu");
    assert!(replies[0].get("latency_us").is_none());
    assert_eq!(replies[1]["error"], "parse");
    assert_eq!(replies[1]["line"], 2);
    assert_ne!(replies[2]["active_limit"], "emu");

    let out = emu(
        &["govern", "--latency"],
        &input[..input.iter().position(|&b| b == b'\n').unwrap() + 1],
    );
    let reply: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(reply["latency_us"].is_u64());
}

#[test]
fn config_from_environment() {
    let bundle = scratch("bundle.json");
    std::fs::write(
        &bundle,
        r#"{"safety_curves":{"curves":[{"body_part":"chest","curvature":"flat","points":[[1,0.1]]}]},
            "conditions":[{"token":"attentive","curve":{"q_r":0.15,"a":1.5,"b":0.03,"d_max":0.3}}]}"#,
    )
    .unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_emu"))
        .arg("govern")
        .env("EMU_CONFIG", &bundle)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"{\"seq\":1,\"d_h\":0.2,\"v_nom\":1.0,\"m_u\":2.0,\"body_part\":\"chest\",\"curvature\":\"flat\"}\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    let reply: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(reply["v_safe"], 0.1);
    assert_eq!(reply["active_limit"], "smu");
}

#[test]
fn serve_answers_over_tcp() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_emu"))
        .args(["serve", "--bind", "127.0.0.1:0"])
        .env_remove("EMU_CONFIG")
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let mut banner = String::new();
    stderr.read_line(&mut banner).unwrap();
    let addr = banner
        .trim()
        .strip_prefix("listening on ")
        .expect(&banner)
        .to_string();

    let stream = TcpStream::connect(&addr).unwrap();
    stream
        .set_read_timeout(Some(Duration::from_secs(5)))
        .unwrap();
    let mut writer = stream.try_clone().unwrap();
    let mut reader = BufReader::new(stream);
    writer
        .write_all(b"{\"seq\":7,\"d_h\":0.2,\"v_nom\":1.0,\"m_u\":2.0,\"body_part\":\"chest\",\"curvature\":\"flat\"}\n")
        .unwrap();
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();

    let reply: Value = serde_json::from_str(&line).unwrap();
    assert_eq!(reply["seq"], 7);
    assert!((reply["v_safe"].as_f64().unwrap() - 0.33).abs() < 1e-12);
    assert!(reply["latency_us"].is_u64());
}

#[test]
fn serve_bind_failure_exits_1() {
    let out = emu(&["serve", "--bind", "256.0.0.1:1"], b"");
    assert_eq!(out.status.code(), Some(1));
}
