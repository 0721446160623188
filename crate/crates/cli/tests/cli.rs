mod common;

use std::path::Path;

use common::{label_csv, primes_in, Workspace};
use primes_core::bench::{required_sample_size, ConfidenceLevel};
use primes_core::config::{Config, ConfigSources};
use primes_core::digest::sha256_hex;
use primes_core::jsonl;
use primes_core::pilot::{cohens_kappa, import_annotations_csv, infer_schema};
use primes_core::pipeline::{self, PipelineInputs, PipelineOutcome};
use primes_core::prompt::PromptTemplate;
use primes_core::{Annotator, DataItem};

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn worked_example(w: &Workspace) {
    write(w.dir.path(), "a.csv", "item_id,kind\ni1,x\ni2,x\ni3,y\ni4,y\n");
    write(w.dir.path(), "b.csv", "item_id,kind\ni1,x\ni2,y\ni3,x\ni4,y\n");
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let w = Workspace::new();
    let out = w.primes(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let w = Workspace::new();
    let out = w.primes(&["bench", "size", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let out = w.primes(&["ingest", "--mode", "tabular", "--source", "prs.csv", "--map", "nocolumn"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_exits_zero() {
    let w = Workspace::new();
    let out = w.primes(&["pilot", "--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("annotate-llm"));
}

#[test]
fn domain_errors_exit_one() {
    let w = Workspace::new();
    let out = w.primes(&["pilot", "kappa", "--a", "missing.csv", "--b", "missing.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let out = w.primes(&["bench", "size", "--confidence", "0.8"]);
    assert_eq!(out.status.code(), Some(1));
    let broken = primes_in(w.dir.path(), &["--config", "nope.toml", "bench", "size"]);
    assert_eq!(broken.status.code(), Some(1));
}

#[test]
fn kappa_worked_example_matches_library_digest() {
    let w = Workspace::new();
    worked_example(&w);
    let stdout = w.ok(&["pilot", "kappa", "--a", "a.csv", "--b", "b.csv"]);
    assert!(stdout.contains("kappa=0.0"), "{stdout}");
    assert!(stdout.contains("p_o=0.5") && stdout.contains("p_e=0.5"), "{stdout}");

    let (a, b) = (w.path("a.csv"), w.path("b.csv"));
    let schema = infer_schema(&[a.as_path(), b.as_path()]).unwrap();
    let ann_a = import_annotations_csv(&a, &schema, Annotator::Human("a".into())).unwrap();
    let ann_b = import_annotations_csv(&b, &schema, Annotator::Human("b".into())).unwrap();
    let results: Vec<_> = schema.tasks().iter().map(|t| cohens_kappa(&ann_a, &ann_b, t).unwrap()).collect();
    assert_eq!(results[0].kappa, Some(0.0));
    let expected = serde_json::to_string_pretty(&results).unwrap() + "\n";
    let written = std::fs::read(w.out("pilot/kappa.json")).unwrap();
    assert_eq!(sha256_hex(&written), sha256_hex(expected));
}

#[test]
fn bench_size_matches_library() {
    let w = Workspace::new();
    let no_pop = w.ok(&["bench", "size", "--confidence", "0.95", "--margin", "0.05"]);
    assert_eq!(no_pop.trim(), "385");
    let with_pop = w.ok(&["bench", "size", "--population", "1000"]);
    assert_eq!(with_pop.trim(), "278");
    for (pop, level, e) in [(None, 0.90, 0.03), (Some(5000), 0.99, 0.02), (Some(50), 0.95, 0.1)] {
        let mut args = vec!["bench".to_string(), "size".into(), "--confidence".into(), level.to_string()];
        args.extend(["--margin".into(), e.to_string()]);
        if let Some(p) = pop {
            args.extend(["--population".into(), p.to_string()]);
        }
        let argv: Vec<&str> = args.iter().map(String::as_str).collect();
        let lib = required_sample_size(pop, ConfidenceLevel::from_f64(level).unwrap(), e, 0.5).unwrap();
        assert_eq!(sha256_hex(w.ok(&argv).trim()), sha256_hex(lib.to_string()));
    }
}

#[test]
fn gate_flags_override_config() {
    let w = Workspace::new();
    worked_example(&w);
    let refine = w.ok(&["pilot", "gate", "--a", "a.csv", "--b", "b.csv"]);
    assert!(refine.contains("gate: refine"), "{refine}");
    assert_eq!(refine.matches("  - ").count(), 2, "{refine}");
    let few = w.ok(&["pilot", "gate", "--a", "a.csv", "--b", "a.csv"]);
    assert!(few.contains("gate: refine") && few.matches("  - ").count() == 1, "{few}");
    let pass = w.ok(&["pilot", "gate", "--a", "a.csv", "--b", "a.csv", "--min-n", "4"]);
    assert!(pass.contains("gate: pass"), "{pass}");
    let low = w.ok(&["pilot", "gate", "--a", "a.csv", "--b", "a.csv", "--min-n", "4", "--threshold", "1.0"]);
    assert!(low.contains("gate: pass"), "{low}");
    let out = w.primes(&["pilot", "gate", "--a", "a.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn prompt_lint_fails_on_missing_task() {
    let w = Workspace::new();
    let broken = common::TEMPLATE.replace("Classify the change described by the title as a fix or a feature.", "");
    write(w.dir.path(), "broken.md", &broken);
    assert_eq!(w.primes(&["prompt", "lint", "broken.md"]).status.code(), Some(1));
    assert!(w.ok(&["prompt", "lint", "template.md"]).starts_with("ok"));
}

#[test]
fn bench_run_requires_a_passed_gate() {
    let w = Workspace::new();
    w.ok(&["ingest", "--mode", "tabular", "--source", "prs.csv", "--map", "title=title"]);
    w.ok(&["prompt", "register", "template.md"]);
    write(w.dir.path(), "oracle.csv", "item_id,task,gold_label,annotator,basis\n");
    let out = w.primes(&["bench", "run", "--dataset", "out/dataset.jsonl", "--oracle", "oracle.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("has not passed the pilot gate"));
}

fn oracle_csv(items: &[DataItem]) -> String {
    let mut s = String::from("item_id,task,gold_label,annotator,basis\n");
    for i in items {
        s.push_str(&format!("{},kind,{},expert,title\n", i.id(), common::gold(i.field("title").unwrap())));
    }
    s
}

#[test]
fn staged_workflow_end_to_end() {
    let w = Workspace::new();
    let root = w.dir.path();
    let ingested = w.ok(&["ingest", "--mode", "tabular", "--source", "prs.csv", "--map", "title=title"]);
    assert!(ingested.starts_with("20 item(s), 0 skipped"), "{ingested}");
    let dataset: Vec<DataItem> = jsonl::read(&w.out("dataset.jsonl")).unwrap();
    write(root, "oracle.csv", &oracle_csv(&dataset));

    let version = w.ok(&["prompt", "register", "template.md", "--changelog", "first"]);
    assert_eq!(version.trim().len(), 64);
    assert_eq!(w.ok(&["prompt", "register", "template.md"]), version);

    let ids = w.ok(&["pilot", "sample", "--dataset", "out/dataset.jsonl"]);
    assert_eq!(ids.lines().count(), 10);
    let sample: Vec<DataItem> = jsonl::read(&w.out("pilot/sample-r1.jsonl")).unwrap();
    assert_eq!(sample.iter().map(|i| i.id()).collect::<Vec<_>>(), ids.lines().collect::<Vec<_>>());
    assert_eq!(w.ok(&["pilot", "sample", "--dataset", "out/dataset.jsonl"]), ids);

    w.ok(&["pilot", "annotate-llm", "--items", "out/pilot/sample-r1.jsonl"]);
    assert!(w.out("pilot/round-1.json").exists());
    let again = w.primes(&["pilot", "annotate-llm", "--items", "out/pilot/sample-r1.jsonl"]);
    assert_eq!(again.status.code(), Some(1));

    write(root, "human.csv", &label_csv(&sample, 0));
    let imported = w.ok(&["pilot", "import-human", "--labels", "human.csv"]);
    assert!(imported.contains("created 10") && imported.contains("10/10"), "{imported}");
    let replay = w.ok(&["pilot", "import-human", "--labels", "human.csv"]);
    assert!(replay.contains("unchanged 10"), "{replay}");

    assert!(w.ok(&["pilot", "kappa"]).contains("kappa=1.0"));
    assert!(w.ok(&["pilot", "gate"]).contains("gate: pass"));
    assert!(w.ok(&["pilot", "disagreements"]).starts_with("0 disagreement(s)"));
    let closed = w.ok(&["pilot", "close"]);
    assert!(closed.contains("round 1 closed: pass"), "{closed}");
    assert_eq!(w.primes(&["pilot", "close"]).status.code(), Some(1));

    let bench = w.ok(&[
        "bench", "run", "--dataset", "out/dataset.jsonl", "--oracle", "oracle.csv", "--run-id", "bench-1",
    ]);
    let first = bench.lines().find(|l| l.starts_with("1 ")).unwrap();
    assert!(first.contains("keyword") && first.contains("1.0000"), "{bench}");

    let exported = w.ok(&["export", "csv", "--run", "bench-1", "--items", "out/dataset.jsonl"]);
    assert_eq!(exported.lines().count(), 1);
    let csv = std::fs::read_to_string(root.join(exported.trim())).unwrap();
    assert_eq!(csv.lines().count(), 41);
    assert_eq!(w.primes(&["export", "csv", "--run", "nope", "--items", "out/dataset.jsonl"]).status.code(), Some(1));

    let m1 = w.ok(&["export", "manifest", "--run", "bench-1", "--dataset", "out/dataset.jsonl"]);
    let m2 = w.ok(&["export", "manifest", "--run", "bench-1", "--dataset", "out/dataset.jsonl"]);
    assert_eq!(m1, m2);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(w.out("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["best_model"], "keyword");
    assert_eq!(manifest["prompt_version_ids"][0], version.trim());
    assert!(manifest["metrics_digests"]["pilot.round-1"].is_string());

    let cheap = w.ok(&[
        "bench", "compare", "out/bench/metrics-keyword.json", "out/bench/metrics-always-feature.json", "--weights", "0,1",
    ]);
    assert!(cheap.lines().find(|l| l.starts_with("1 ")).unwrap().contains("always-feature"), "{cheap}");
}

#[test]
fn refine_round_needs_notes() {
    let w = Workspace::new();
    let root = w.dir.path();
    w.ok(&["ingest", "--mode", "tabular", "--source", "prs.csv", "--map", "title=title"]);
    w.ok(&["prompt", "register", "template.md"]);
    w.ok(&["pilot", "sample", "--dataset", "out/dataset.jsonl"]);
    w.ok(&["pilot", "annotate-llm", "--items", "out/pilot/sample-r1.jsonl"]);
    let sample: Vec<DataItem> = jsonl::read(&w.out("pilot/sample-r1.jsonl")).unwrap();
    write(root, "human.csv", &label_csv(&sample, 3));
    w.ok(&["pilot", "import-human", "--labels", "human.csv"]);
    assert!(w.ok(&["pilot", "gate"]).contains("gate: refine"));
    assert!(w.ok(&["pilot", "disagreements"]).starts_with("3 disagreement(s)"));
    assert_eq!(w.primes(&["pilot", "close"]).status.code(), Some(1));
    let closed = w.ok(&["pilot", "close", "--notes", "define fix more narrowly", "--reuse-sample"]);
    assert!(closed.contains("refine") && closed.contains("register a refined prompt"), "{closed}");
    assert!(w.out("pilot/disagreements-r1.csv").exists());
    assert_eq!(w.ok(&["pilot", "sample", "--dataset", "out/dataset.jsonl"]).lines().count(), 10);
    let reused: Vec<DataItem> = jsonl::read(&w.out("pilot/sample-r2.jsonl")).unwrap();
    assert_eq!(reused, sample);
}

#[test]
fn validate_subcommands() {
    let w = Workspace::new();
    let root = w.dir.path();
    let responses = [
        r#"{"item_id":"a","text":"<answer>{\"kind\": \"fix\", \"rationale\": \"crash in parser\"}</answer>"}"#,
        r#"{"item_id":"b","text":"<answer>{\"kind\": \"bugfix\"}</answer>"}"#,
        r#"{"item_id":"c","text":"no answer at all"}"#,
        r#"{"item_id":"d","text":"<answer>{\"kind\": \"fix\", \"rationale\": \"crash in parser\"}</answer>"}"#,
    ];
    write(root, "responses.jsonl", &(responses.join("\n") + "\n"));
    let fmt = w.ok(&["validate", "format", "--responses", "responses.jsonl", "--schema", "schema.toml"]);
    assert!(fmt.starts_with("parsed 2/4"), "{fmt}");
    let findings = std::fs::read_to_string(w.out("validate/format.csv")).unwrap();
    assert!(findings.contains("illegal_category") && findings.contains("unparseable"));
    let strict = w.primes(&["validate", "format", "--responses", "responses.jsonl", "--schema", "schema.toml", "--strict"]);
    assert_eq!(strict.status.code(), Some(1));

    w.ok(&["validate", "dups", "--outputs", "responses.jsonl"]);
    let dups = std::fs::read_to_string(w.out("validate/dups.csv")).unwrap();
    assert!(dups.contains("exact_duplicate"), "{dups}");

    w.ok(&["ingest", "--mode", "tabular", "--source", "prs.csv", "--map", "title=title"]);
    let items: Vec<DataItem> = jsonl::read(&w.out("dataset.jsonl")).unwrap();
    let fix = items.iter().find(|i| i.field("title").unwrap().contains("parser")).unwrap();
    let lines = [
        format!(r#"{{"item_id":"{}","text":"<answer>{{\"kind\": \"fix\", \"rationale\": \"crash in parser\"}}</answer>"}}"#, fix.id()),
        format!(r#"{{"item_id":"{}","text":"<answer>{{\"kind\": \"fix\", \"rationale\": \"memory leak in tokenizer\"}}</answer>"}}"#, fix.id()),
    ];
    write(root, "grounded.jsonl", &lines[0]);
    write(root, "ungrounded.jsonl", &lines[1]);
    let clean = w.ok(&["validate", "hallucinations", "--responses", "grounded.jsonl", "--items", "out/dataset.jsonl", "--schema", "schema.toml"]);
    assert!(clean.contains("0 finding"), "{clean}");
    w.ok(&["validate", "hallucinations", "--responses", "ungrounded.jsonl", "--items", "out/dataset.jsonl", "--schema", "schema.toml"]);
    let flagged = std::fs::read_to_string(w.out("validate/hallucinations.csv")).unwrap();
    assert!(flagged.contains("tokenizer") && flagged.contains("leak"), "{flagged}");
    let vocab = w.ok(&[
        "validate", "hallucinations", "--responses", "ungrounded.jsonl", "--items", "out/dataset.jsonl",
        "--schema", "schema.toml", "--vocab", "memory", "--vocab", "leak", "--vocab", "tokenizer",
    ]);
    assert!(vocab.contains("0 finding"), "{vocab}");
}

fn pipeline_inputs(w: &Workspace, run_id: &str) -> PipelineInputs {
    let template = PromptTemplate::load(&w.path("template.md")).unwrap();
    let schema = template.schema.clone();
    let mut sources = ConfigSources::defaults();
    sources.push(format!("file:{}", Path::new("config.toml").display()));
    PipelineInputs {
        run_id: run_id.into(),
        dataset: jsonl::read(&w.out("dataset.jsonl")).unwrap(),
        template,
        changelog: String::new(),
        human_pilot: import_annotations_csv(&w.path("human.csv"), &schema, Annotator::Human("human".into())).unwrap(),
        human_id: "human".into(),
        refinement_notes: None,
        oracle: primes_core::bench::load_oracle_csv(&w.path("oracle.csv"), &schema).unwrap(),
        negatives: Vec::new(),
        rules: Vec::new(),
        interpretability: Default::default(),
        config: Config::load(&w.path("config.toml")).unwrap(),
        config_sources: sources,
    }
}

#[test]
fn run_subcommand_matches_library_pipeline() {
    let w = Workspace::new();
    let root = w.dir.path();
    w.ok(&["ingest", "--mode", "tabular", "--source", "prs.csv", "--map", "title=title"]);
    let dataset: Vec<DataItem> = jsonl::read(&w.out("dataset.jsonl")).unwrap();
    write(root, "human.csv", &label_csv(&dataset, 0));
    write(root, "oracle.csv", &oracle_csv(&dataset));
    write(
        root,
        "rules.toml",
        "[[rule]]\nkind = \"value_in_set\"\nfield = \"labels.kind\"\nvalues = [\"fix\", \"feature\"]\n\n[[rule]]\nkind = \"unique\"\nfield = \"item_id\"\n",
    );
    let stdout = w.ok(&[
        "--out-dir", "cli-run", "run", "--dataset", "out/dataset.jsonl", "--template", "template.md", "--human",
        "human.csv", "--oracle", "oracle.csv", "--run-id", "r",
    ]);
    assert!(stdout.contains("gate: pass") && stdout.contains("best model: keyword"), "{stdout}");

    let lib_dir = root.join("lib-run");
    let report = match pipeline::run(pipeline_inputs(&w, "r"), &lib_dir).unwrap() {
        PipelineOutcome::Completed(r) => r,
        other => panic!("{other:?}"),
    };
    let cli_enhanced = std::fs::read(root.join("cli-run/enhanced.jsonl")).unwrap();
    assert_eq!(sha256_hex(&cli_enhanced), report.enhanced_digest);
    for name in ["manifest.json", "export/prs.csv", "bench/comparison.json"] {
        let a = std::fs::read(root.join("cli-run").join(name)).unwrap();
        let b = std::fs::read(lib_dir.join(name)).unwrap();
        assert_eq!(sha256_hex(a), sha256_hex(b), "{name}");
    }

    let expect = w.ok(&[
        "validate", "expect", "--dataset", "cli-run/enhanced.jsonl", "--rules", "rules.toml", "--schema", "schema.toml",
    ]);
    assert!(expect.to_lowercase().contains("pass"), "{expect}");
}
