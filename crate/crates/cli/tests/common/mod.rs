#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const SCHEMA: &str = "[[tasks]]\nname = \"kind\"\ncategories = [\"fix\", \"feature\"]\n";

pub const TEMPLATE: &str = "---
name = \"kind\"
schema = \"schema.toml\"
input_fields = [\"title\"]
---
## task
Classify the change described by the title as a fix or a feature.
## context
Titles come from merged pull requests of small libraries.
## output format
A JSON object with key `kind` and a short `rationale` quoting the title.
## input
Title: {{title}}
";

pub const CONFIG: &str = r#"seed = 11

[pilot]
sample_size = 10
gate = { threshold = 0.9, min_n = 10 }

[[llm.models]]
model_id = "keyword"
provider = "mock"
price_in_per_million = "1.00"
price_out_per_million = "2.00"
mock = { rule = "keyword", tasks = [{ task = "kind", default = "feature", rules = [{ contains = "fix", category = "fix" }] }] }

[[llm.models]]
model_id = "always-feature"
provider = "mock"
price_in_per_million = "0.10"
price_out_per_million = "0.20"
mock = { rule = "fixed", text = '<answer>{"kind": "feature", "rationale": "adds something"}</answer>' }
"#;

/// Titles for the tabular dataset; half mention a fix.
pub fn titles() -> Vec<String> {
    let topics = ["parser", "cache", "logger", "router", "scheduler", "loader", "encoder", "client", "config", "metrics"];
    let mut out = Vec::new();
    for t in topics {
        out.push(format!("fix crash in {t} on empty input"));
        out.push(format!("add streaming support to {t}"));
    }
    out
}

pub fn gold(title: &str) -> &'static str {
    if title.contains("fix") {
        "fix"
    } else {
        "feature"
    }
}

pub struct Workspace {
    pub dir: tempfile::TempDir,
}

impl Workspace {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        std::fs::write(root.join("schema.toml"), SCHEMA).unwrap();
        std::fs::write(root.join("template.md"), TEMPLATE).unwrap();
        std::fs::write(root.join("config.toml"), CONFIG).unwrap();
        let mut csv = String::from("title,author\n");
        for (i, t) in titles().iter().enumerate() {
            csv.push_str(&format!("{t},dev{}\n", i % 3));
        }
        std::fs::write(root.join("prs.csv"), csv).unwrap();
        Self { dir }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn out(&self, rel: &str) -> PathBuf {
        self.dir.path().join("out").join(rel)
    }

    pub fn primes(&self, args: &[&str]) -> Output {
        primes_in(self.dir.path(), args)
    }

    /// Runs and asserts exit 0, returning stdout.
    pub fn ok(&self, args: &[&str]) -> String {
        let out = self.primes(args);
        assert!(
            out.status.success(),
            "primes {args:?} failed ({:?})\nstdout:\n{}\nstderr:\n{}",
            out.status.code(),
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }
}

/// Runs `primes` in `dir`, adding `--out-dir out` and `--config config.toml`
/// unless `args` sets them.
pub fn primes_in(dir: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_primes"));
    cmd.current_dir(dir);
    if !args.contains(&"--out-dir") {
        cmd.args(["--out-dir", "out"]);
    }
    if !args.contains(&"--config") {
        cmd.args(["--config", "config.toml"]);
    }
    cmd.args(args).output().unwrap()
}

/// item_id,kind CSV for the given items using the gold rule.
pub fn label_csv(items: &[primes_core::DataItem], flip: usize) -> String {
    let mut s = String::from("item_id,kind,kind_rationale\n");
    for (i, item) in items.iter().enumerate() {
        let title = item.field("title").unwrap();
        let mut label = gold(title);
        if i < flip {
            label = if label == "fix" { "feature" } else { "fix" };
        }
        s.push_str(&format!("{},{label},\"{title}\"\n", item.id()));
    }
    s
}
