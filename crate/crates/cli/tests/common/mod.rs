//! Helpers for driving the `labelaudit` binary and its review service.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use labelaudit::Label;
use serde_json::Value;

pub const ADMIN: &str = "admin-token";
pub const TOKEN_A: &str = "token-a";
pub const TOKEN_B: &str = "token-b";

/// Keys that must never appear in an independent-phase response.
pub const FORBIDDEN: &[&str] = &[
    "original_label",
    "ensemble_p",
    "label",
    "labels",
    "final_label",
    "independent_labels",
];

pub const TASK_KEYS: &[&str] = &[
    "status",
    "schema_version",
    "session_id",
    "example_id",
    "grounding",
    "generated_text",
    "position",
    "total",
];

pub fn sample_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/sample.toml")
}

pub fn sample_data() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/sample.jsonl")
}

pub fn cli(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_labelaudit"))
        .arg("--config")
        .arg(sample_config())
        .arg("--out")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn labelaudit")
}

pub fn cli_ok(out: &Path, args: &[&str]) -> String {
    let o = cli(out, args);
    assert!(
        o.status.success(),
        "labelaudit {args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

/// A `labelaudit serve-review` child process on an ephemeral port.
pub struct ServerProc {
    child: Child,
    pub base: String,
}

impl ServerProc {
    pub fn start(out: &Path) -> ServerProc {
        let mut child = Command::new(env!("CARGO_BIN_EXE_labelaudit"))
            .arg("--config")
            .arg(sample_config())
            .arg("--out")
            .arg(out)
            .args(["serve-review", "--bind", "127.0.0.1:0"])
            .env("RUST_LOG", "warn")
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .expect("spawn serve-review");
        let stdout = child.stdout.take().unwrap();
        let mut lines = BufReader::new(stdout).lines();
        let base = loop {
            let line = lines
                .next()
                .expect("serve-review exited before listening")
                .unwrap();
            if let Some(url) = line.strip_prefix("listening on ") {
                break url.trim().to_string();
            }
        };
        ServerProc { child, base }
    }

    /// SIGKILL, no shutdown path runs.
    pub fn kill(mut self) {
        self.child.kill().unwrap();
        self.child.wait().unwrap();
    }
}

impl Drop for ServerProc {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub struct Api {
    client: reqwest::blocking::Client,
    base: String,
}

impl Api {
    pub fn new(base: &str) -> Api {
        Api {
            client: reqwest::blocking::Client::new(),
            base: base.to_string(),
        }
    }

    pub fn call(&self, method: &str, path: &str, token: &str, body: Option<Value>) -> (u16, Value) {
        let url = format!("{}{}", self.base, path);
        let mut req = match method {
            "GET" => self.client.get(url),
            "POST" => self.client.post(url),
            _ => unreachable!(),
        }
        .bearer_auth(token);
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req.send().expect("request");
        let status = resp.status().as_u16();
        (status, resp.json().expect("json body"))
    }
}

pub fn keys(v: &Value, out: &mut BTreeSet<String>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                out.insert(k.clone());
                keys(x, out);
            }
        }
        Value::Array(xs) => xs.iter().for_each(|x| keys(x, out)),
        _ => {}
    }
}

/// Forbidden keys found anywhere in `v`.
pub fn leaks(v: &Value) -> Vec<String> {
    let mut ks = BTreeSet::new();
    keys(v, &mut ks);
    FORBIDDEN.iter().filter(|f| ks.contains(**f)).map(|f| f.to_string()).collect()
}

/// Clean labels of the bundled sample, which scripted experts answer with.
pub fn sample_truth() -> HashMap<String, Label> {
    let ds = labelaudit::load_dataset(&sample_data(), labelaudit::Format::Jsonl).unwrap();
    labelaudit::simulate::mock_truth(&ds).unwrap()
}

/// Scripted expert: the clean label, except expert-b inverts every fourth id.
pub fn expert_label(truth: &HashMap<String, Label>, who: &str, example_id: &str) -> Label {
    let t = truth[example_id];
    let n: usize = example_id.rsplit('-').next().unwrap().parse().unwrap();
    if who == "expert-b" && n % 4 == 0 {
        t.flipped()
    } else {
        t
    }
}
