#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use primes_core::bench::OracleEntry;
use primes_core::config::{Config, ConfigSources};
use primes_core::llm::{KeywordRule, KeywordTask, MockBehavior, ModelSpec};
use primes_core::pipeline::PipelineInputs;
use primes_core::prompt::PromptTemplate;
use primes_core::{Annotation, Annotator, DataItem, LabelSchema};

pub const SCHEMA: &str = "[[tasks]]\nname = \"kind\"\ncategories = [\"fix\", \"feature\", \"refactor\"]\n";

pub const TEMPLATE: &str = "---
name = \"commit-kind\"
schema = \"schema.toml\"
input_fields = [\"title\", \"edited_files\"]
---
## task
Classify the commit as a fix, a feature or a refactor.
## context
Commits come from a small machine learning training library.
## output format
A JSON object with key `kind` and a `rationale` quoting the commit title.
## input
Title: {{title}}
Files: {{edited_files}}
";

/// (title, file touched) for the main-line commits.
pub const COMMITS: [(&str, &str); 18] = [
    ("initial training loop", "train.py"),
    ("add adam optimizer", "optim.py"),
    ("fix nan loss with empty batches", "train.py"),
    ("refactor data loader into module", "data/loader.py"),
    ("add learning rate warmup", "optim.py"),
    ("fix off by one in epoch counter", "train.py"),
    ("add checkpoint saving", "checkpoint.py"),
    ("refactor config parsing", "config.py"),
    ("fix crash when resuming from checkpoint", "checkpoint.py"),
    ("add mixed precision option", "train.py"),
    ("fix wrong shape in attention mask", "model/attention.py"),
    ("refactor model registry", "model/registry.py"),
    ("add gradient clipping", "optim.py"),
    ("fix memory leak in evaluation", "eval.py"),
    ("add early stopping callback", "callbacks.py"),
    ("refactor logging helpers", "log_utils.py"),
    ("fix seed handling in data shuffling", "data/loader.py"),
    ("add tensorboard writer", "log_utils.py"),
];

/// The same rule the keyword mock applies, used as gold labels.
pub fn gold(title: &str) -> &'static str {
    if title.contains("fix") {
        "fix"
    } else if title.contains("refactor") {
        "refactor"
    } else {
        "feature"
    }
}

fn git(dir: &Path, args: &[&str]) {
    let out = Command::new("git")
        .current_dir(dir)
        .args(args)
        .env("GIT_AUTHOR_NAME", "Dev")
        .env("GIT_AUTHOR_EMAIL", "dev@example.com")
        .env("GIT_COMMITTER_NAME", "Dev")
        .env("GIT_COMMITTER_EMAIL", "dev@example.com")
        .env("GIT_AUTHOR_DATE", "2024-01-01T00:00:00Z")
        .env("GIT_COMMITTER_DATE", "2024-01-01T00:00:00Z")
        .env("GIT_CONFIG_GLOBAL", "/dev/null")
        .env("GIT_CONFIG_NOSYSTEM", "1")
        .output()
        .expect("git runs");
    assert!(out.status.success(), "git {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

/// 18 main-line commits, one commit on a side branch and a merge: 20 commits,
/// byte-identical hashes on every call.
pub fn commit_repo(parent: &Path) -> PathBuf {
    let dir = parent.join("mlkit");
    std::fs::create_dir_all(&dir).unwrap();
    git(&dir, &["init", "-q", "-b", "main"]);
    for (i, (title, file)) in COMMITS.iter().enumerate() {
        let path = dir.join(file);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap_or_default();
        text.push_str(&format!("# change {i}\n"));
        std::fs::write(&path, text).unwrap();
        git(&dir, &["add", "-A"]);
        git(&dir, &["commit", "-q", "-m", title]);
        if i == 9 {
            git(&dir, &["checkout", "-q", "-b", "gpu"]);
            std::fs::write(dir.join("gpu.py"), "# cuda kernels\n").unwrap();
            git(&dir, &["add", "-A"]);
            git(&dir, &["commit", "-q", "-m", "add cuda kernels"]);
            git(&dir, &["checkout", "-q", "main"]);
        }
    }
    git(&dir, &["merge", "-q", "--no-ff", "gpu", "-m", "merge gpu support"]);
    dir
}

pub fn write_template(dir: &Path) -> PromptTemplate {
    std::fs::write(dir.join("schema.toml"), SCHEMA).unwrap();
    std::fs::write(dir.join("template.md"), TEMPLATE).unwrap();
    PromptTemplate::load(&dir.join("template.md")).unwrap()
}

pub fn keyword_behavior() -> MockBehavior {
    let rule = |contains: &str, category: &str| KeywordRule {
        contains: contains.into(),
        category: category.into(),
    };
    MockBehavior::Keyword {
        tasks: vec![KeywordTask {
            task: "kind".into(),
            rules: vec![rule("fix", "fix"), rule("refactor", "refactor")],
            default: "feature".into(),
        }],
    }
}

pub fn config() -> Config {
    let mut cfg = Config {
        seed: 5,
        ..Config::default()
    };
    cfg.pilot.sample_size = 12;
    cfg.pilot.gate.min_n = 12;
    let keyword = ModelSpec::mock("keyword", keyword_behavior())
        .with_prices("1.00".parse().unwrap(), "2.00".parse().unwrap());
    let fixed = ModelSpec::mock(
        "always-feature",
        MockBehavior::Fixed {
            text: "<answer>{\"kind\": \"feature\", \"rationale\": \"adds something\"}</answer>".into(),
        },
    )
    .with_prices("0.10".parse().unwrap(), "0.20".parse().unwrap());
    cfg.llm.models = vec![keyword, fixed];
    cfg
}

pub fn human_labels(items: &[DataItem], schema: &LabelSchema) -> Vec<Annotation> {
    items
        .iter()
        .map(|i| {
            Annotation::new(
                schema,
                i.id(),
                Annotator::Human("rater".into()),
                BTreeMap::from([("kind".to_string(), gold(i.field("title").unwrap()).to_string())]),
                None,
            )
            .unwrap()
        })
        .collect()
}

pub fn oracle(items: &[DataItem]) -> Vec<OracleEntry> {
    items
        .iter()
        .map(|i| OracleEntry {
            item_id: i.id().to_string(),
            labels: BTreeMap::from([("kind".to_string(), gold(i.field("title").unwrap()).to_string())]),
            annotator: "expert".into(),
            basis: "commit title".into(),
        })
        .collect()
}

pub fn pipeline_inputs(dataset: Vec<DataItem>, template: PromptTemplate, run_id: &str) -> PipelineInputs {
    let schema = template.schema.clone();
    PipelineInputs {
        run_id: run_id.into(),
        human_pilot: human_labels(&dataset, &schema),
        oracle: oracle(&dataset),
        dataset,
        template,
        changelog: "first version".into(),
        human_id: "rater".into(),
        refinement_notes: None,
        negatives: Vec::new(),
        rules: Vec::new(),
        interpretability: BTreeMap::new(),
        config: config(),
        config_sources: ConfigSources::defaults(),
    }
}

/// Direct-formula kappa over raw sequences, without a contingency table:
/// `p_o` from per-item matches, `p_e` from per-category marginal frequencies.
/// `None` when chance agreement is 1.
pub fn oracle_kappa(a: &[usize], b: &[usize], k: usize) -> (f64, f64, Option<f64>) {
    let n = a.len() as f64;
    let p_o = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let mut p_e = 0.0;
    let mut degenerate = false;
    for c in 0..k {
        let fa = a.iter().filter(|&&x| x == c).count();
        let fb = b.iter().filter(|&&x| x == c).count();
        if fa == a.len() && fb == b.len() {
            degenerate = true;
        }
        p_e += (fa as f64 / n) * (fb as f64 / n);
    }
    let kappa = (!degenerate).then(|| (p_o - p_e) / (1.0 - p_e));
    (p_o, p_e, kappa)
}

/// Every sequence of length `n` over `k` symbols, in lexicographic order.
pub fn sequences(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|s| {
                (0..k).map(move |c| {
                    let mut t = s.clone();
                    t.push(c);
                    t
                })
            })
            .collect();
    }
    out
}
