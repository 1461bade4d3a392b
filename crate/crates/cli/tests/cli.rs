use std::io::{BufRead, BufReader};
use std::process::{Child, Command, Output, Stdio};

fn spir(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spir")).args(args).env_remove("SPIR_ENUM_BOUND").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn retrieve_reports_the_download_cost() {
    let o = spir(&["retrieve", "--n", "2", "--k", "2", "--desired", "1", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("d = 3/2 (1.5000)"), "{out}");
    assert!(out.contains("correct"));
    assert_eq!(out, stdout(&spir(&["retrieve", "--n", "2", "--k", "2", "--desired", "1", "--seed", "7"])));
}

#[test]
fn retrieve_json_is_stable_and_parses() {
    let args = ["retrieve", "--n", "1", "--k", "3", "--desired", "2", "--seed", "3", "--format", "json"];
    let a = stdout(&spir(&args));
    assert_eq!(a, stdout(&spir(&args)));
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(v["correct"], true);
    assert_eq!(v["transcript"]["rates"]["d"], "3");
}

#[test]
fn faulty_retrieval_exits_one() {
    let o = spir(&["retrieve", "--n", "2", "--k", "2", "--inject", "unmasked-undesired"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn table_counts() {
    let o = spir(&["table", "--n", "1", "--k", "3", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["blocks"].as_array().unwrap().len(), 3);
    let o = spir(&["table", "--n", "2", "--k", "2", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["blocks"].as_array().unwrap().len(), 6);
    assert_eq!(v["exhaustive"], true);
    let o = spir(&["table", "--n", "2", "--k", "3"]);
    assert!(stdout(&o).starts_with("# N=2 K=3"));
}

#[test]
fn audit_exit_codes() {
    assert_eq!(spir(&["audit", "--n", "1", "--k", "2"]).status.code(), Some(0));
    let o = spir(&["audit", "--n", "1", "--k", "3", "--inject", "seed-reuse"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("user-privacy         FAIL"));
    let o = spir(&["audit", "--n", "2", "--k", "2", "--bound", "10"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn audit_json_lists_four_reports() {
    let o = spir(&["audit", "--n", "1", "--k", "2", "--q", "3", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let names: Vec<&str> = v.as_array().unwrap().iter().map(|e| e["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["reliability", "user-privacy", "database-privacy", "cr-independence"]);
    assert!(v.as_array().unwrap().iter().all(|e| e["report"]["pass"] == true));
}

#[test]
fn region_verdicts_and_boundary() {
    let o = spir(&["region", "--n", "2", "--k", "2", "--triple", "2,3/4,1/4"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("feasible"));
    let o = spir(&["region", "--n", "2", "--k", "2", "--triple", "1,1,1"]);
    assert_eq!(o.status.code(), Some(1));
    let o = spir(&["region", "--n", "2", "--k", "2", "--steps", "4", "--format", "csv"]);
    assert_eq!(stdout(&o).lines().nth(1), Some("0,2,1"));
    assert_eq!(spir(&["region", "--triple", "1,2"]).status.code(), Some(2));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(spir(&["retrieve", "--q", "4"]).status.code(), Some(2));
    assert_eq!(spir(&["retrieve", "--desired", "5"]).status.code(), Some(2));
    assert_eq!(spir(&["bogus"]).status.code(), Some(2));
    assert_eq!(spir(&["retrieve", "--inject", "nope"]).status.code(), Some(2));
    assert_eq!(spir(&["audit", "--format", "csv"]).status.code(), Some(2));
    assert_eq!(spir(&["retrieve", "--endpoints", "127.0.0.1:1,127.0.0.1:2"]).status.code(), Some(2));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "n = 1\nk = 3\nseed = 5\nformat = \"json\"\n").unwrap();
    let o = spir(&["retrieve", "--config", cfg.to_str().unwrap(), "--k", "2"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["transcript"]["params"]["k"], 2);
    assert_eq!(v["transcript"]["params"]["n"], 1);
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn serve(db: &std::path::Path) -> (Server, String) {
    let mut child = Command::new(env!("CARGO_BIN_EXE_spir"))
        .args(["serve", "--db", db.to_str().unwrap(), "--listen", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().rsplit(' ').next().unwrap().to_string();
    (Server(child), addr)
}

#[test]
fn provision_serve_and_retrieve_over_the_network() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = spir(&["provision", "--n", "2", "--k", "2", "--q", "5", "--seed", "4", "--endpoints", "127.0.0.1:1,127.0.0.1:2", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let (_a, a) = serve(&dir.path().join("db1.spirdb"));
    let (_b, b) = serve(&dir.path().join("db2.spirdb"));
    let user = dir.path().join("user.json");
    let endpoints = format!("{a},{b}");
    let common = ["--n", "2", "--k", "2", "--q", "5", "--seed", "4", "--desired", "2", "--format", "json"];
    let net = spir(&[&["retrieve", "--endpoints", &endpoints, "--user", user.to_str().unwrap()][..], &common].concat());
    assert_eq!(net.status.code(), Some(0), "{}", String::from_utf8_lossy(&net.stderr));
    let local = spir(&[&["retrieve"][..], &common].concat());
    let net: serde_json::Value = serde_json::from_slice(&net.stdout).unwrap();
    let local: serde_json::Value = serde_json::from_slice(&local.stdout).unwrap();
    for field in ["query", "answers", "decoded", "user_cr_index", "rates"] {
        assert_eq!(net["transcript"][field], local["transcript"][field], "{field}");
    }
    assert!(net["transcript"]["transport"]["bytes_sent"].as_u64().unwrap() > 0);
}

#[test]
fn provision_rejects_wrong_endpoint_count() {
    let dir = tempfile::tempdir().unwrap();
    let o = spir(&["provision", "--n", "2", "--endpoints", "127.0.0.1:1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
