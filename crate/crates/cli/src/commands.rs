use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context as _, Result};
use log::info;
use serde::{Deserialize, Serialize};

use primes_core::bench::{
    compare_models, evaluate_model, load_oracle_csv, required_sample_size, ComparisonReport, ConfidenceLevel,
    ModelRunMetrics,
};
use primes_core::config::{Config, ConfigSources};
use primes_core::digest::{digest_json, sha256_hex};
use primes_core::ingest::{ingest, IngestMode, IngestSpec};
use primes_core::jsonl;
use primes_core::llm::{LlmClient, ResponseCache};
use primes_core::model::EnhancedRecord;
use primes_core::pilot::{
    cohens_kappa, evaluate_gate, export_annotations_csv, export_disagreements_csv, import_annotations_csv,
    infer_schema, list_disagreements, AgreementResult, PilotRound, RoundLedger, RoundSetup, RoundStore,
};
use primes_core::pipeline::{self, PipelineInputs, PipelineOutcome};
use primes_core::prompt::{lint_template, PromptLedger, PromptTemplate, PromptVersion, Severity};
use primes_core::provenance::{export_project_csv, write_manifest, ProvenanceLedger, RunManifest};
use primes_core::validate::{
    detect_duplicates, findings_summary, flag_hallucinations, load_rules, run_expectations, sort_findings,
    validate_format, write_findings_csv, GroundingConfig, OutputSchema, TextOutput, ValidationFinding,
};
use primes_core::{Annotation, Annotator, DataItem, LabelSchema};

use crate::{BenchCmd, Cli, Command, ExportCmd, IngestArgs, Mode, PairArgs, PilotCmd, PromptCmd, RunArgs, ValidateCmd};

/// Resolved configuration and output directory shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: Config,
    pub sources: ConfigSources,
    pub out_dir: PathBuf,
}

impl Context {
    /// Defaults, then the file, then `--seed`.
    pub fn load(config: Option<&Path>, seed: Option<u64>, out_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut sources = ConfigSources::defaults();
        let mut cfg = match config {
            Some(p) => {
                sources.push(format!("file:{}", p.display()));
                Config::load(p)?
            }
            None => Config::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
            sources.push("flag:--seed");
        }
        Ok(Self {
            config: cfg,
            sources,
            out_dir: out_dir.into(),
        })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out_dir.join(rel)
    }

    fn flag(&mut self, name: &str) {
        self.sources.push(format!("flag:--{name}"));
    }

    fn client(&self, run_id: String) -> Result<LlmClient> {
        let ledger = Arc::new(ProvenanceLedger::open(self.path("provenance.jsonl"))?);
        let cache = ResponseCache::open(self.path("cache"))?;
        Ok(LlmClient::new(run_id)
            .with_cache(cache)
            .with_ledger(ledger)
            .with_retry(self.config.llm.retry.clone()))
    }

    fn prompt(&self, requested: Option<&str>) -> Result<PromptVersion> {
        let prompts = PromptLedger::open(self.path("prompts.jsonl"))?;
        let id = match requested {
            Some(id) => id.to_string(),
            None => match read_next_round(&self.out_dir)?.and_then(|n| n.prompt_version_id) {
                Some(id) => id,
                None => prompts
                    .latest()
                    .map(|v| v.version_id.clone())
                    .ok_or_else(|| anyhow!("no prompt registered yet; run `primes prompt register` first"))?,
            },
        };
        prompts
            .get(&id)
            .cloned()
            .ok_or_else(|| anyhow!("unknown prompt version {id}"))
    }
}

/// What the next pilot round should use, written when a round closes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextRound {
    pub round_number: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_version_id: Option<String>,
    pub reuse_sample: bool,
}

fn next_round_path(out_dir: &Path) -> PathBuf {
    out_dir.join("pilot").join("next-round.json")
}

fn read_next_round(out_dir: &Path) -> Result<Option<NextRound>> {
    let p = next_round_path(out_dir);
    if !p.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&p).with_context(|| format!("read {}", p.display()))?;
    Ok(Some(serde_json::from_str(&text)?))
}

pub(crate) fn round_file(out_dir: &Path, n: u32) -> PathBuf {
    out_dir.join("pilot").join(format!("round-{n}.json"))
}

/// `pilot/round-<n>.json` with the largest `n`.
pub(crate) fn latest_round_file(out_dir: &Path) -> Option<PathBuf> {
    let entries = std::fs::read_dir(out_dir.join("pilot")).ok()?;
    entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let n: u32 = name.strip_prefix("round-")?.strip_suffix(".json")?.parse().ok()?;
            Some((n, e.path()))
        })
        .max_by_key(|(n, _)| *n)
        .map(|(_, p)| p)
}

fn open_current_round(out_dir: &Path) -> Result<RoundStore> {
    let p = latest_round_file(out_dir)
        .ok_or_else(|| anyhow!("no pilot round in {}; run `primes pilot annotate-llm` first", out_dir.display()))?;
    Ok(RoundStore::open(&p)?)
}

/// Closes the round, appends it to the round ledger, writes its disagreements and
/// the next-round pointer.
pub(crate) fn close_round(
    out_dir: &Path,
    store: &RoundStore,
    notes: Option<&str>,
    reuse_sample: bool,
    next_prompt: Option<&str>,
) -> primes_core::Result<(PilotRound, NextRound)> {
    if let Some(p) = next_prompt {
        if PromptLedger::open(out_dir.join("prompts.jsonl"))?.get(p).is_none() {
            return Err(primes_core::Error::invalid(format!("unknown prompt version {p}")));
        }
    }
    let ledger = RoundLedger::open(&out_dir.join("rounds.jsonl"))?;
    let number = store.snapshot().round_number;
    if let Some(last) = ledger.latest().filter(|l| l.round_number >= number) {
        return Err(primes_core::Error::invalid(format!(
            "round ledger already holds round {}",
            last.round_number
        )));
    }
    let rows = store.disagreements()?;
    let round = store.close(notes, reuse_sample)?;
    ledger.append(round.clone())?;
    export_disagreements_csv(&rows, &out_dir.join("pilot").join(format!("disagreements-r{number}.csv")))?;
    let next = NextRound {
        round_number: number + 1,
        prompt_version_id: next_prompt
            .map(str::to_string)
            .or_else(|| round.decision.passed().then(|| round.prompt_version_id.clone())),
        reuse_sample,
    };
    write_json(&next_round_path(out_dir), &next)?;
    Ok((round, next))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> primes_core::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    jsonl::write_atomic(path, text.as_bytes())
}

fn stamp() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

fn safe_name(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

/// Ratings CSV with columns `model_id`, `rating` (1-5) and optionally `item_id`.
pub fn read_ratings(path: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    #[derive(Deserialize)]
    struct Row {
        model_id: String,
        rating: u8,
    }
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("read {}", path.display()))?;
    let mut out: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row.with_context(|| format!("{} row {}", path.display(), i + 2))?;
        out.entry(row.model_id).or_default().push(row.rating);
    }
    Ok(out)
}

fn load_items(path: &Path) -> Result<Vec<DataItem>> {
    jsonl::read(path).with_context(|| format!("load items from {}", path.display()))
}

fn check_strict(strict: bool, findings: &[ValidationFinding]) -> Result<()> {
    let errors = findings.iter().filter(|f| f.is_error()).count();
    if strict && errors > 0 {
        bail!("{errors} error finding(s)");
    }
    Ok(())
}

pub(crate) fn dispatch(cli: Cli) -> Result<()> {
    let ctx = Context::load(cli.config.as_deref(), cli.seed, cli.out_dir)?;
    std::fs::create_dir_all(&ctx.out_dir).with_context(|| format!("create {}", ctx.out_dir.display()))?;
    match cli.command {
        Command::Ingest(a) => cmd_ingest(&ctx, a),
        Command::Prompt(c) => cmd_prompt(&ctx, c),
        Command::Pilot(c) => cmd_pilot(ctx, c),
        Command::Bench(c) => cmd_bench(ctx, c),
        Command::Validate(c) => cmd_validate(ctx, c),
        Command::Export(c) => cmd_export(&ctx, c),
        Command::Serve(a) => crate::server::serve_blocking(ctx, a.bind, a.round),
        Command::Run(a) => cmd_run(&ctx, a),
    }
}

fn cmd_ingest(ctx: &Context, a: IngestArgs) -> Result<()> {
    let mode = match a.mode {
        Mode::Files => IngestMode::Files,
        Mode::Commits => IngestMode::Commits,
        Mode::Tabular => IngestMode::Tabular,
    };
    let mut spec = match mode {
        IngestMode::Files => IngestSpec::files(&a.source, &[]),
        IngestMode::Commits => IngestSpec::commits(&a.source),
        IngestMode::Tabular => IngestSpec::tabular(&a.source, &[]),
    };
    spec.include_globs = a.include;
    spec.exclude_globs = a.exclude;
    spec.commit_range = a.range;
    spec.field_mapping = a.map.into_iter().collect();
    spec.repo_label = a.repo_label;
    spec.include_patch = a.include_patch;
    let outcome = ingest(&spec)?;
    let path = ctx.path("dataset.jsonl");
    jsonl::write(&path, &outcome.items)?;
    let report = outcome.report.to_text()?;
    jsonl::write_atomic(&ctx.path("ingest-report.txt"), report.as_bytes())?;
    println!(
        "{} item(s), {} skipped -> {}",
        outcome.report.items,
        outcome.report.skipped.len(),
        path.display()
    );
    Ok(())
}

fn cmd_prompt(ctx: &Context, c: PromptCmd) -> Result<()> {
    match c {
        PromptCmd::Lint { template } => {
            let t = PromptTemplate::load(&template)?;
            let findings = lint_template(&t);
            for f in &findings {
                println!("{f}");
            }
            let errors = findings.iter().filter(|f| f.severity == Severity::Error).count();
            if errors > 0 {
                bail!("{errors} lint error(s) in {}", template.display());
            }
            println!("ok: {} warning(s)", findings.len());
            Ok(())
        }
        PromptCmd::Register {
            template,
            parent,
            changelog,
        } => {
            let t = PromptTemplate::load(&template)?;
            let mut ledger = PromptLedger::open(ctx.path("prompts.jsonl"))?;
            let parent = parent.or_else(|| ledger.latest().map(|v| v.version_id.clone()));
            let v = ledger.register(&t, parent.as_deref(), &changelog)?;
            println!("{}", v.version_id);
            Ok(())
        }
    }
}

/// Both sides of a comparison: CSV files, or human (A) vs model (B) from the open round.
fn load_pair(ctx: &Context, p: &PairArgs) -> Result<(LabelSchema, Vec<Annotation>, Vec<Annotation>)> {
    match (&p.a, &p.b) {
        (Some(a), Some(b)) => {
            let schema = match &p.schema {
                Some(s) => LabelSchema::load(s)?,
                None => infer_schema(&[a.as_path(), b.as_path()])?,
            };
            let name = |p: &Path| p.file_stem().map_or("a".into(), |s| s.to_string_lossy().into_owned());
            let ann_a = import_annotations_csv(a, &schema, Annotator::Human(name(a)))?;
            let ann_b = import_annotations_csv(b, &schema, Annotator::Human(name(b)))?;
            Ok((schema, ann_a, ann_b))
        }
        _ => {
            let store = open_current_round(&ctx.out_dir)?;
            let schema = store.snapshot().schema;
            Ok((schema, store.human_annotations()?, store.model_annotations()))
        }
    }
}

fn agreement(schema: &LabelSchema, a: &[Annotation], b: &[Annotation]) -> Result<Vec<AgreementResult>> {
    Ok(schema
        .tasks()
        .iter()
        .map(|t| cohens_kappa(a, b, t))
        .collect::<primes_core::Result<Vec<_>>>()?)
}

fn print_agreement(results: &[AgreementResult]) {
    for r in results {
        let kappa = r.kappa.map_or("undefined (degenerate sample)".to_string(), |k| format!("{k:?}"));
        println!(
            "{}: n={} p_o={:?} p_e={:?} kappa={kappa}",
            r.task, r.n_items, r.p_o, r.p_e
        );
    }
}

fn cmd_pilot(mut ctx: Context, c: PilotCmd) -> Result<()> {
    let pilot_dir = ctx.path("pilot");
    std::fs::create_dir_all(&pilot_dir)?;
    match c {
        PilotCmd::Sample { dataset, n, stratify_by } => {
            if let Some(n) = n {
                ctx.config.pilot.sample_size = n;
                ctx.flag("n");
            }
            if stratify_by.is_some() {
                ctx.config.pilot.stratify_by = stratify_by;
            }
            ctx.config.validate()?;
            let items = load_items(&dataset)?;
            let rounds = RoundLedger::open(&ctx.path("rounds.jsonl"))?;
            let ids = pipeline::pilot_sample_ids(&items, &ctx.config, &rounds)?;
            let sample = pipeline::select_items(&items, &ids)?;
            let path = pilot_dir.join(format!("sample-r{}.jsonl", rounds.next_round_number()));
            jsonl::write(&path, &sample)?;
            for id in &ids {
                println!("{id}");
            }
            info!("{} item(s) -> {}", ids.len(), path.display());
            Ok(())
        }
        PilotCmd::AnnotateLlm {
            items,
            prompt,
            model,
            human_id,
            run_id,
        } => {
            let sample = load_items(&items)?;
            let version = ctx.prompt(prompt.as_deref())?;
            let model = match &model {
                Some(id) => ctx
                    .config
                    .model(id)
                    .ok_or_else(|| anyhow!("model `{id}` is not configured"))?
                    .clone(),
                None => ctx.config.pilot_model()?.clone(),
            };
            let number = RoundLedger::open(&ctx.path("rounds.jsonl"))?.next_round_number();
            let store_path = round_file(&ctx.out_dir, number);
            if store_path.exists() {
                bail!("round {number} is already open ({})", store_path.display());
            }
            let run_id = run_id.unwrap_or_else(|| format!("pilot-r{number}-{}", stamp()));
            let client = ctx.client(run_id)?;
            let parser = OutputSchema::for_template(&version.template);
            let annotations = pipeline::annotate_pilot(&client, &model, &version, &sample, &parser)?;
            let schema = version.template.schema.clone();
            let csv_path = pilot_dir.join(format!("llm-r{number}.csv"));
            export_annotations_csv(&annotations, &schema, &csv_path)?;
            RoundStore::create(
                &store_path,
                RoundSetup {
                    round_number: number,
                    prompt_version_id: version.version_id.clone(),
                    schema,
                    items: sample,
                    model_annotations: annotations,
                    gate: ctx.config.pilot.gate.clone(),
                    human_id,
                },
            )?;
            println!("round {number} open: {} -> {}", csv_path.display(), store_path.display());
            Ok(())
        }
        PilotCmd::ImportHuman { labels } => {
            let store = open_current_round(&ctx.out_dir)?;
            let st = store.snapshot();
            let anns = import_annotations_csv(&labels, &st.schema, Annotator::Human(st.human_id.clone()))?;
            let mut counts: BTreeMap<String, usize> = BTreeMap::new();
            for a in &anns {
                for (task, label) in a.labels() {
                    let outcome = store.submit_label(a.item_id(), task, label, a.rationale())?;
                    *counts.entry(format!("{outcome:?}").to_lowercase()).or_default() += 1;
                }
            }
            let total = st.items.len();
            let pending = store.pending_items().len();
            let summary: Vec<String> = counts.iter().map(|(k, v)| format!("{k} {v}")).collect();
            println!("{}; labelled {}/{total}", summary.join(", "), total - pending);
            Ok(())
        }
        PilotCmd::Kappa(p) => {
            let (schema, a, b) = load_pair(&ctx, &p)?;
            let results = agreement(&schema, &a, &b)?;
            print_agreement(&results);
            write_json(&pilot_dir.join("kappa.json"), &results)?;
            Ok(())
        }
        PilotCmd::Gate { pair, threshold, min_n } => {
            let mut gate = ctx.config.pilot.gate.clone();
            if let Some(t) = threshold {
                gate.threshold = t;
            }
            if let Some(n) = min_n {
                gate.min_n = n;
            }
            gate.validate()?;
            let (schema, a, b) = load_pair(&ctx, &pair)?;
            let results = agreement(&schema, &a, &b)?;
            let decision = evaluate_gate(&results, &gate);
            print_agreement(&results);
            println!("gate: {}", if decision.passed() { "pass" } else { "refine" });
            for r in &decision.reasons {
                println!("  - {}", r.message);
            }
            write_json(
                &pilot_dir.join("gate.json"),
                &serde_json::json!({ "gate": gate, "results": results, "decision": decision }),
            )?;
            Ok(())
        }
        PilotCmd::Disagreements(p) => {
            let (_, a, b) = load_pair(&ctx, &p)?;
            let rows = list_disagreements(&a, &b);
            let path = pilot_dir.join("disagreements.csv");
            export_disagreements_csv(&rows, &path)?;
            println!("{} disagreement(s) -> {}", rows.len(), path.display());
            Ok(())
        }
        PilotCmd::Close {
            notes,
            reuse_sample,
            next_prompt,
        } => {
            let store = open_current_round(&ctx.out_dir)?;
            let (round, next) = close_round(&ctx.out_dir, &store, notes.as_deref(), reuse_sample, next_prompt.as_deref())?;
            println!(
                "round {} closed: {}",
                round.round_number,
                if round.decision.passed() { "pass" } else { "refine" }
            );
            match &next.prompt_version_id {
                Some(v) => println!("next round {} uses prompt {v}", next.round_number),
                None => println!("next round {}: register a refined prompt", next.round_number),
            }
            Ok(())
        }
    }
}

fn cmd_bench(mut ctx: Context, c: BenchCmd) -> Result<()> {
    match c {
        BenchCmd::Size {
            population,
            confidence,
            margin,
            proportion,
        } => {
            let b = &ctx.config.bench;
            let level = ConfidenceLevel::from_f64(confidence.unwrap_or(b.confidence))?;
            let n = required_sample_size(
                population,
                level,
                margin.unwrap_or(b.margin),
                proportion.unwrap_or(b.proportion),
            )?;
            println!("{n}");
            Ok(())
        }
        BenchCmd::Run {
            dataset,
            oracle,
            prompt,
            models,
            negatives,
            ratings,
            run_id,
            allow_ungated,
        } => {
            let version = ctx.prompt(prompt.as_deref())?;
            if !allow_ungated {
                let rounds = RoundLedger::open(&ctx.path("rounds.jsonl"))?;
                let passed = rounds
                    .rounds()
                    .iter()
                    .any(|r| r.prompt_version_id == version.version_id && r.decision.passed());
                if !passed {
                    bail!(
                        "prompt version {} has not passed the pilot gate (use --allow-ungated to benchmark anyway)",
                        version.version_id
                    );
                }
            } else {
                ctx.flag("allow-ungated");
            }
            let schema = version.template.schema.clone();
            let items = load_items(&dataset)?;
            let entries = load_oracle_csv(&oracle, &schema)?;
            let negatives = negatives.as_deref().map(load_items).transpose()?.unwrap_or_default();
            let (entries, pool) = pipeline::benchmark_inputs(&entries, &items, &negatives, &schema, &ctx.config)?;
            let specs = if models.is_empty() {
                ctx.config.llm.models.clone()
            } else {
                models
                    .iter()
                    .map(|id| ctx.config.model(id).cloned().ok_or_else(|| anyhow!("model `{id}` is not configured")))
                    .collect::<Result<Vec<_>>>()?
            };
            if specs.is_empty() {
                bail!("no models configured under [[llm.models]]");
            }
            let ratings = ratings.as_deref().map(read_ratings).transpose()?.unwrap_or_default();
            let client = ctx.client(run_id.unwrap_or_else(|| format!("bench-{}", stamp())))?;
            let parser = OutputSchema::for_template(&version.template);
            let bench_dir = ctx.path("bench");
            let mut runs = Vec::new();
            for spec in &specs {
                let mut m = evaluate_model(&client, spec, &version, &pool, &entries, &parser)?;
                if let Some(r) = ratings.get(&spec.model_id) {
                    m = m.with_interpretability(r)?;
                }
                write_json(&bench_dir.join(format!("metrics-{}.json", safe_name(&m.model_id))), &m)?;
                runs.push(m);
            }
            finish_comparison(&ctx, &runs, ctx.config.bench.weights)
        }
        BenchCmd::Compare { metrics, weights } => {
            let runs = metrics
                .iter()
                .map(|p| {
                    let text = std::fs::read_to_string(p).with_context(|| format!("read {}", p.display()))?;
                    serde_json::from_str::<ModelRunMetrics>(&text).with_context(|| format!("parse {}", p.display()))
                })
                .collect::<Result<Vec<_>>>()?;
            if weights.is_some() {
                ctx.flag("weights");
            }
            finish_comparison(&ctx, &runs, weights.or(ctx.config.bench.weights))
        }
    }
}

fn finish_comparison(
    ctx: &Context,
    runs: &[ModelRunMetrics],
    weights: Option<primes_core::bench::Weights>,
) -> Result<()> {
    let report: ComparisonReport = compare_models(runs, weights)?;
    let text = report.to_text();
    write_json(&ctx.path("bench/comparison.json"), &report)?;
    jsonl::write_atomic(&ctx.path("bench/comparison.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn cmd_validate(ctx: Context, c: ValidateCmd) -> Result<()> {
    let dir = ctx.path("validate");
    std::fs::create_dir_all(&dir)?;
    let report = |name: &str, findings: &mut Vec<ValidationFinding>| -> Result<()> {
        sort_findings(findings);
        write_findings_csv(findings, &dir.join(format!("{name}.csv")))?;
        print!("{}", findings_summary(findings));
        Ok(())
    };
    match c {
        ValidateCmd::Format {
            responses,
            schema,
            bare_label,
            strict,
        } => {
            let outputs: Vec<TextOutput> = jsonl::read(&responses)?;
            let mut parser = OutputSchema::from_label_schema(&LabelSchema::load(&schema)?);
            parser.accept_bare_label = bare_label;
            let mut findings = Vec::new();
            let mut parsed = 0;
            for o in &outputs {
                let outcome = validate_format(&o.item_id, &o.text, &parser);
                parsed += usize::from(outcome.parsed().is_some());
                findings.extend(outcome.findings().iter().cloned());
            }
            println!("parsed {parsed}/{}", outputs.len());
            report("format", &mut findings)?;
            check_strict(strict, &findings)
        }
        ValidateCmd::Dups {
            outputs,
            threshold,
            shingle_w,
            strict,
        } => {
            let outputs: Vec<TextOutput> = jsonl::read(&outputs)?;
            let mut cfg = ctx.config.validate.dedup;
            if let Some(t) = threshold {
                cfg.threshold = t;
            }
            if let Some(w) = shingle_w {
                cfg.shingle_w = w;
            }
            let mut findings = detect_duplicates(&outputs, &cfg)?;
            report("dups", &mut findings)?;
            check_strict(strict, &findings)
        }
        ValidateCmd::Hallucinations {
            responses,
            items,
            schema,
            vocabulary,
            strict,
        } => {
            let outputs: Vec<TextOutput> = jsonl::read(&responses)?;
            let items = load_items(&items)?;
            let by_id: BTreeMap<&str, &DataItem> = items.iter().map(|i| (i.id(), i)).collect();
            let schema = LabelSchema::load(&schema)?;
            let parser = OutputSchema::from_label_schema(&schema);
            let grounding = GroundingConfig::default()
                .with_vocabulary(ctx.config.validate.grounding_vocabulary.iter().cloned().chain(vocabulary));
            let mut findings = Vec::new();
            let mut unparsed = 0;
            for o in &outputs {
                let item = by_id
                    .get(o.item_id.as_str())
                    .ok_or_else(|| anyhow!("response for unknown item {}", o.item_id))?;
                match validate_format(&o.item_id, &o.text, &parser).parsed() {
                    Some(p) => findings.extend(flag_hallucinations(p, item, &schema, &grounding)),
                    None => unparsed += 1,
                }
            }
            if unparsed > 0 {
                println!("skipped {unparsed} unparseable response(s)");
            }
            report("hallucinations", &mut findings)?;
            check_strict(strict, &findings)
        }
        ValidateCmd::Expect {
            dataset,
            rules,
            schema,
            strict,
        } => {
            let records: Vec<EnhancedRecord> = jsonl::read(&dataset)?;
            let schema = LabelSchema::load(&schema)?;
            let rows: Vec<_> = records.iter().map(|r| r.flatten(&schema)).collect();
            let result = run_expectations(&rows, &load_rules(&rules)?)?;
            result.write_csv(&dir.join("expectations.csv"))?;
            print!("{}", result.summary());
            if strict && !result.passed {
                bail!("expectations failed");
            }
            Ok(())
        }
    }
}

fn cmd_export(ctx: &Context, c: ExportCmd) -> Result<()> {
    match c {
        ExportCmd::Csv { run, items, prompt } => {
            let ledger = ProvenanceLedger::open(ctx.path("provenance.jsonl"))?;
            let version = ctx.prompt(prompt.as_deref())?;
            let items = load_items(&items)?;
            let parser = OutputSchema::for_template(&version.template);
            let paths = export_project_csv(
                &ledger,
                &run,
                &items,
                &version.template.schema,
                &parser,
                &ctx.path("export"),
            )?;
            for p in paths {
                println!("{}", p.display());
            }
            Ok(())
        }
        ExportCmd::Manifest { run, dataset } => {
            let manifest = build_manifest(ctx, &run, &load_items(&dataset)?)?;
            let digest = write_manifest(&manifest, &ctx.path("manifest.json"))?;
            println!("{digest}");
            Ok(())
        }
    }
}

/// Manifest for `run` (and its `run-*` stages) from what is on disk.
fn build_manifest(ctx: &Context, run: &str, dataset: &[DataItem]) -> Result<RunManifest> {
    let ledger = ProvenanceLedger::open(ctx.path("provenance.jsonl"))?;
    let stage_prefix = format!("{run}-");
    let records: Vec<_> = ledger
        .records()
        .into_iter()
        .filter(|r| r.run_id == run || r.run_id.starts_with(&stage_prefix))
        .collect();
    if records.is_empty() {
        return Err(primes_core::Error::UnknownRun(run.to_string()).into());
    }
    let mut m = RunManifest::new(run, pipeline::dataset_digest(dataset)?, ctx.config.clone(), ctx.sources.clone());
    let mut seen = BTreeSet::new();
    for r in &records {
        if seen.insert(r.prompt_version_id.clone()) {
            m.prompt_version_ids.push(r.prompt_version_id.clone());
        }
    }
    for round in RoundLedger::open(&ctx.path("rounds.jsonl"))?.rounds() {
        if seen.contains(&round.prompt_version_id) {
            m.metrics_digests.insert(
                format!("pilot.round-{}", round.round_number),
                digest_json(&(&round.results, &round.decision))?,
            );
        }
    }
    let bench = ctx.path("bench");
    if let Ok(entries) = std::fs::read_dir(&bench) {
        let mut files: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        files.sort();
        for p in files {
            let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
            if name.starts_with("metrics-") && name.ends_with(".json") {
                let metrics: ModelRunMetrics = serde_json::from_str(&std::fs::read_to_string(&p)?)?;
                m.metrics_digests.insert(format!("bench.{}", metrics.model_id), digest_json(&metrics)?);
            } else if name == "comparison.json" {
                let report: ComparisonReport = serde_json::from_str(&std::fs::read_to_string(&p)?)?;
                m.metrics_digests.insert("bench.comparison".into(), digest_json(&report.ranking)?);
                m.best_model = report.runs.iter().find(|r| !r.incomplete).map(|r| r.model_id.clone());
            }
        }
    }
    let enhanced = ctx.path("enhanced.jsonl");
    if enhanced.exists() {
        m.enhanced_dataset_digest = Some(sha256_hex(std::fs::read(&enhanced)?));
        m.partial = false;
    }
    let cache = ctx.path("cache");
    if cache.exists() {
        m.cache_digest = Some(ResponseCache::open(cache)?.digest()?);
    }
    Ok(m)
}

fn cmd_run(ctx: &Context, a: RunArgs) -> Result<()> {
    let template = PromptTemplate::load(&a.template)?;
    let schema = template.schema.clone();
    let inputs = PipelineInputs {
        run_id: a.run_id,
        dataset: load_items(&a.dataset)?,
        human_pilot: import_annotations_csv(&a.human, &schema, Annotator::Human(a.human_id.clone()))?,
        human_id: a.human_id,
        template,
        changelog: a.changelog,
        refinement_notes: a.notes,
        oracle: load_oracle_csv(&a.oracle, &schema)?,
        negatives: a.negatives.as_deref().map(load_items).transpose()?.unwrap_or_default(),
        rules: a.rules.as_deref().map(load_rules).transpose()?.unwrap_or_default(),
        interpretability: a.ratings.as_deref().map(read_ratings).transpose()?.unwrap_or_default(),
        config: ctx.config.clone(),
        config_sources: ctx.sources.clone(),
    };
    match pipeline::run(inputs, &ctx.out_dir)? {
        PipelineOutcome::Refine { round, manifest_digest } => {
            print_agreement(&round.results);
            println!("gate: refine (round {})", round.round_number);
            for r in &round.decision.reasons {
                println!("  - {}", r.message);
            }
            println!("manifest {manifest_digest}");
        }
        PipelineOutcome::Completed(report) => {
            print_agreement(&report.round.results);
            println!("gate: pass (round {})", report.round.round_number);
            print!("{}", report.comparison.to_text());
            println!("best model: {}", report.best_model);
            print!("{}", findings_summary(&report.findings));
            println!("enhanced {} ({})", report.enhanced_path.display(), report.enhanced_digest);
            println!("manifest {}", report.manifest_digest);
        }
    }
    Ok(())
}
