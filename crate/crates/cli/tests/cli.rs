use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use dbchat_core::demo::DEMO_GOAL;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dbchat"));
    cmd.env_remove("DBCHAT_CONFIG").env("RUST_LOG", "off");
    cmd
}

fn golden(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn run(dir: &Path, args: &[&str], stdin: &str) -> Output {
    let mut child = bin()
        .args(args)
        .current_dir(dir)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn sales_dag() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/assets/sales.dag")
}

fn conversation_logs(dir: &Path) -> Vec<PathBuf> {
    match std::fs::read_dir(dir.join("data/conversations")) {
        Ok(rd) => rd.map(|e| e.unwrap().path()).collect(),
        Err(_) => Vec::new(),
    }
}

#[test]
fn chat_transcript_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["chat"], &format!("{DEMO_GOAL}\n/quit\nnever sent\n"));
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert_eq!(text(&out.stdout), golden("chat_demo.stdout"));
    assert!(text(&out.stderr).starts_with("conversation: "));

    let logs = conversation_logs(dir.path());
    assert_eq!(logs.len(), 1);
    let archived = std::fs::read_to_string(&logs[0]).unwrap();
    assert!(!archived.contains("never sent"));
    assert_eq!(archived.lines().filter(|l| l.contains("\"user_message\"")).count(), 1);
}

#[test]
fn chat_continues_a_named_conversation() {
    let dir = tempfile::tempdir().unwrap();
    for _ in 0..2 {
        let out = run(dir.path(), &["chat", "--conversation", "c1"], &format!("{DEMO_GOAL}\n"));
        assert!(out.status.success());
        assert_eq!(text(&out.stderr).trim(), "conversation: c1");
    }
    let archived = std::fs::read_to_string(dir.path().join("data/conversations/c1.jsonl")).unwrap();
    assert_eq!(archived.lines().filter(|l| l.contains("\"user_message\"")).count(), 2);
}

#[test]
fn run_dag_prints_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let goal = format!("goal={DEMO_GOAL}");
    let dag = sales_dag();
    for extra in [None, Some("--parallel")] {
        let mut args = vec!["run-dag", "--file", dag.to_str().unwrap(), "--input", &goal];
        args.extend(extra);
        let out = run(dir.path(), &args, "");
        assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
        let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(report["dag_name"], "sales_report");
        assert_eq!(report["failures"].as_array().unwrap().len(), 0);
        assert_eq!(report["order"].as_array().unwrap().len(), 6);
        assert_eq!(report["node_results"]["by_segment"]["value"]["chart_type"], "bar");
        assert!(report["node_results"]["summary"]["value"].as_str().unwrap().starts_with("Sales report."));
    }
    assert_eq!(conversation_logs(dir.path()).len(), 2);
}

#[test]
fn cyclic_dag_is_rejected_with_the_cycle() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "loop.dag", "dag \"loop\" {\n  node a: map()\n  node b: map()\n  a -> b\n  b -> a\n}\n");
    let out = run(dir.path(), &["run-dag", "--file", "loop.dag"], "");
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(text(&out.stderr), golden("cyclic_dag.stderr"));
    assert!(out.stdout.is_empty());
    assert!(conversation_logs(dir.path()).is_empty());
}

#[test]
fn run_dag_usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let dag = sales_dag();
    let out = run(dir.path(), &["run-dag", "--file", dag.to_str().unwrap()], "");
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("no input given for node `goal`"));
    assert!(conversation_logs(dir.path()).is_empty());

    write(dir.path(), "bad.dag", "dag \"x\" {\n  node a map()\n}\n");
    let out = run(dir.path(), &["run-dag", "--file", "bad.dag"], "");
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("syntax error at 2:"), "{}", text(&out.stderr));

    let out = run(dir.path(), &["run-dag", "--file", "bad.dag", "--input", "novalue"], "");
    assert_eq!(out.status.code(), Some(2));
    let out = run(dir.path(), &["run-dag", "--file", "missing.dag"], "");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn node_failure_exits_1_with_the_report() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "one.dag", "dag \"one\" {\n  node goal: input()\n  node chart: agent(role=\"chart_generator\", step=1)\n  goal -> chart\n}\n");
    let out = run(dir.path(), &["run-dag", "--file", "one.dag", "--input", "goal=hi"], "");
    assert_eq!(out.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["failures"][0]["node"], "chart");
    assert!(text(&out.stderr).contains("1 node(s) failed: chart"));
}

#[test]
fn ingest_reports_chunks_and_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let para = "Orders ship within two days of payment. ".repeat(30);
    write(dir.path(), "long.txt", &format!("{para}\n\n{para}"));
    write(dir.path(), "short.txt", "Returns are accepted for thirty days.");
    let out = run(dir.path(), &["ingest", "--space", "docs", "long.txt", "short.txt"], "");
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 3);
    let count = |l: &str| l.rsplit(": ").next().unwrap().split(' ').next().unwrap().parse::<usize>().unwrap();
    assert!(lines[0].starts_with("long.txt: ") && count(lines[0]) >= 2);
    assert_eq!(lines[1], "short.txt: 1 chunks");
    assert_eq!(lines[2], format!("total: {} chunks in space docs", count(lines[0]) + 1));
    assert!(dir.path().join("data/knowledge/docs").is_dir());

    // re-ingesting a file replaces its chunks
    let again = run(dir.path(), &["ingest", "--space", "docs", "short.txt"], "");
    assert_eq!(text(&again.stdout).lines().next(), Some("short.txt: 1 chunks"));

    let out = run(dir.path(), &["ingest", "--space", "Bad Space", "short.txt"], "");
    assert_eq!(out.status.code(), Some(2));
    let out = run(dir.path(), &["ingest", "--space", "docs", "nope.txt"], "");
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("nope.txt"));
}

#[test]
fn ingest_counts_paragraphs_and_sums_files() {
    let dir = tempfile::tempdir().unwrap();
    let para = |w: &str| format!("{w} ").repeat(40);
    write(dir.path(), "two.txt", &format!("{}\n\n{}\n", para("alpha"), para("beta")));
    let out = run(dir.path(), &["ingest", "--space", "kb", "two.txt"], "");
    assert_eq!(text(&out.stdout).lines().next(), Some("two.txt: 2 chunks"));

    write(dir.path(), "a.txt", &format!("{}\n\n{}\n\n{}", para("one"), para("two"), para("three")));
    write(dir.path(), "b.txt", &para("four"));
    let out = run(dir.path(), &["ingest", "--space", "kb2", "a.txt", "b.txt", "two.txt"], "");
    assert!(out.status.success());
    let stdout = text(&out.stdout);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(&lines[..3], ["a.txt: 3 chunks", "b.txt: 1 chunks", "two.txt: 2 chunks"]);
    assert_eq!(lines[3], "total: 6 chunks in space kb2");
}

#[test]
fn config_errors_name_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "bad.json", "{\n  \"data_dir\": \"d\",\n  \"knowledge\": {\n    \"k\": 0\n  }\n}\n");
    let out = run(dir.path(), &["--config", "bad.json", "chat"], "");
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(text(&out.stderr).trim(), "dbchat: bad.json:4: knowledge.k must be at least 1");

    write(dir.path(), "typo.json", "{\n  \"listen_adr\": \"127.0.0.1:1\"\n}\n");
    let out = run(dir.path(), &["--config", "typo.json", "chat"], "");
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).starts_with("dbchat: typo.json:2: unknown field `listen_adr`"), "{}", text(&out.stderr));

    let out = run(dir.path(), &["--config", "absent.json", "chat"], "");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn environment_config_overrides_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "good.json", "{}");
    write(dir.path(), "bad.json", "{\n  \"workers\": []\n}\n");
    let out = bin()
        .args(["--config", "good.json", "chat"])
        .env("DBCHAT_CONFIG", "bad.json")
        .current_dir(dir.path())
        .stdin(Stdio::null())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(text(&out.stderr).trim(), "dbchat: bad.json:2: at least one worker is required");

    let out = bin()
        .args(["--config", "bad.json", "chat"])
        .env("DBCHAT_CONFIG", "good.json")
        .current_dir(dir.path())
        .stdin(Stdio::null())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
}

#[test]
fn config_comes_from_the_environment_and_paths_follow_it() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("conf")).unwrap();
    let script = r#"{"hello there": "general reply"}"#;
    write(&dir.path().join("conf"), "script.json", script);
    let cfg = write(
        &dir.path().join("conf"),
        "c.json",
        r#"{"data_dir": "state", "workers": [{"model": "mock", "endpoint": "internal:mock", "script_path": "script.json"}]}"#,
    );
    let mut child = bin()
        .arg("chat")
        .env("DBCHAT_CONFIG", &cfg)
        .current_dir(dir.path())
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"hello there\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(dir.path().join("conf/state/conversations").is_dir());
    assert!(!dir.path().join("data").exists());
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

/// Starts `serve` and waits for its ready line.
fn spawn_server(dir: &Path, extra: &[&str]) -> (std::process::Child, String) {
    let addr = format!("127.0.0.1:{}", free_port());
    let mut child = bin()
        .args(extra)
        .args(["serve", "--listen", &addr])
        .current_dir(dir)
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let mut ready = String::new();
    stderr.read_line(&mut ready).unwrap();
    assert_eq!(ready.trim(), format!("dbchat listening on http://{addr}"));
    (child, addr)
}

/// One request over a fresh connection; returns the status line and the raw body.
fn http(addr: &str, method: &str, path: &str, body: Option<&str>) -> (String, String) {
    let mut stream = TcpStream::connect(addr).unwrap();
    let body = body.unwrap_or("");
    write!(
        stream,
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut resp = String::new();
    stream.read_to_string(&mut resp).unwrap();
    let (head, body) = resp.split_once("\r\n\r\n").unwrap();
    (head.lines().next().unwrap().to_string(), body.to_string())
}

#[test]
fn serve_answers_http_and_reports_bind_failures() {
    let dir = tempfile::tempdir().unwrap();
    let (mut child, addr) = spawn_server(dir.path(), &[]);

    let (status, body) = http(&addr, "GET", "/api/models", None);
    assert!(status.starts_with("HTTP/1.1 200"), "{status}");
    let json: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(json["models"][0]["model"], "mock");
    assert_eq!(json["models"][0]["healthy_workers"], 1);

    // second server on the same port
    let out = run(dir.path(), &["serve", "--listen", &addr], "");
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("cannot listen on"));

    child.kill().unwrap();
    child.wait().unwrap();
}

#[test]
fn bad_port_in_config_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.json", "{\n  \"listen_addr\": \"127.0.0.1:70000\"\n}\n");
    let out = run(dir.path(), &["--config", "c.json", "serve"], "");
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("c.json:2: listen_addr"));
}

#[test]
fn mock_only_config_serves_the_sales_scenario_offline() {
    let dir = tempfile::tempdir().unwrap();
    let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/assets/demo_script.json");
    let cfg = serde_json::json!({
        "workers": [{ "model": "mock", "endpoint": "internal:mock", "script_path": script }],
        "knowledge_space": "docs",
        "api_key": "secret"
    });
    write(dir.path(), "c.json", &cfg.to_string());
    let (mut child, addr) = spawn_server(dir.path(), &["--config", "c.json"]);

    let (status, _) = http(&addr, "GET", "/api/models", None);
    assert!(status.starts_with("HTTP/1.1 401"), "{status}");

    let authed = |method: &str, path: &str, body: &str| {
        let mut stream = TcpStream::connect(&addr).unwrap();
        write!(
            stream,
            "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nAuthorization: Bearer secret\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
            body.len()
        )
        .unwrap();
        let mut resp = String::new();
        stream.read_to_string(&mut resp).unwrap();
        resp
    };
    let goal = serde_json::json!({ "first_message": DEMO_GOAL }).to_string();
    let resp = authed("POST", "/api/conversations", &goal);
    assert!(resp.starts_with("HTTP/1.1 201"), "{resp}");
    let body = &resp[resp.find("\r\n\r\n").unwrap() + 4..];
    let id = serde_json::from_str::<serde_json::Value>(body).unwrap()["conversation_id"].as_str().unwrap().to_string();

    let msg = serde_json::json!({ "text": DEMO_GOAL }).to_string();
    let stream = authed("POST", &format!("/api/conversations/{id}/messages"), &msg);
    assert!(stream.starts_with("HTTP/1.1 200"), "{stream}");
    let count = |name: &str| stream.matches(&format!("event: {name}\n")).count();
    assert_eq!(count("plan"), 1);
    assert_eq!(count("step_start"), 4);
    assert_eq!(count("chart"), 3);
    assert_eq!(count("final"), 1);
    assert_eq!(count("error"), 0);
    assert_eq!(count("done"), 1);
    for t in ["donut", "bar", "area"] {
        assert!(stream.contains(&format!("\"chart_type\":\"{t}\"")), "{t}");
    }

    child.kill().unwrap();
    child.wait().unwrap();
}

#[test]
fn demo_config_is_valid() {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo/config.json");
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["--config", cfg.to_str().unwrap(), "run-dag", "--file", "nope.dag"], "");
    // the config loads; the failure is the missing workflow file
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("nope.dag"), "{}", text(&out.stderr));
}
