//! End-to-end run: register the prompt, pilot it against human labels, gate,
//! benchmark every configured model, apply the best one to the dataset, validate
//! the outputs and write the enhanced dataset, exports and manifest.
//!
//! Layout under the output directory:
//!
//! ```text
//! prompts.jsonl  provenance.jsonl  rounds.jsonl  cache/
//! pilot/round-<n>.json  pilot/disagreements-r<n>.csv
//! bench/metrics-<model>.json  bench/comparison.{json,txt}
//! enhanced.jsonl  findings.{csv,txt}  expectations.{csv,txt}
//! export/<project>.csv  manifest.json
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use serde::Serialize;

use crate::bench::{build_benchmark_suite, compare_models, evaluate_model, ComparisonReport, OracleEntry};
use crate::config::{Config, ConfigSources};
use crate::digest::{digest_json, sha256_hex};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::labeling::{first_failure, label_items, to_annotations, LabelResult};
use crate::llm::{LlmClient, ModelSpec, ResponseCache};
use crate::model::{Annotation, DataItem, EnhancedRecord, LabelSchema};
use crate::pilot::{draw_sample, AgreementView, export_disagreements_csv, PilotRound, RoundLedger, RoundSetup, RoundStore};
use crate::prompt::{PromptLedger, PromptTemplate, PromptVersion};
use crate::provenance::{export_project_csv, write_manifest, ProvenanceLedger, RunManifest};
use crate::validate::{
    detect_duplicates, findings_summary, flag_hallucinations, run_expectations, sort_findings,
    write_findings_csv, ExpectationReport, GroundingConfig, OutputSchema, Rule, TextOutput, ValidationFinding,
};

pub struct PipelineInputs {
    pub run_id: String,
    pub dataset: Vec<DataItem>,
    pub template: PromptTemplate,
    pub changelog: String,
    /// Human labels; must cover every item of the pilot sample.
    pub human_pilot: Vec<Annotation>,
    pub human_id: String,
    /// Notes recorded when the gate asks for refinement.
    pub refinement_notes: Option<String>,
    pub oracle: Vec<OracleEntry>,
    /// Benchmark-only distractors, not part of the dataset.
    pub negatives: Vec<DataItem>,
    pub rules: Vec<Rule>,
    /// model id -> 1-5 explanation ratings
    pub interpretability: BTreeMap<String, Vec<u8>>,
    pub config: Config,
    pub config_sources: ConfigSources,
}

#[derive(Debug)]
pub struct PipelineReport {
    pub round: PilotRound,
    pub comparison: ComparisonReport,
    pub best_model: String,
    pub enhanced_path: PathBuf,
    pub enhanced_digest: String,
    pub findings: Vec<ValidationFinding>,
    pub expectations: Option<ExpectationReport>,
    pub exports: Vec<PathBuf>,
    pub manifest: RunManifest,
    pub manifest_digest: String,
    pub network_calls: u64,
}

#[derive(Debug)]
pub enum PipelineOutcome {
    /// The pilot gate did not pass; nothing past the pilot ran.
    Refine { round: PilotRound, manifest_digest: String },
    Completed(Box<PipelineReport>),
}

/// Digest of the dataset as JSONL sorted by item id.
pub fn dataset_digest(items: &[DataItem]) -> Result<String> {
    let mut sorted: Vec<&DataItem> = items.iter().collect();
    sorted.sort_by(|a, b| a.id().cmp(b.id()));
    Ok(sha256_hex(jsonl::to_string(&sorted)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    jsonl::write_atomic(path, text.as_bytes())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    jsonl::write_atomic(path, text.as_bytes())
}

fn safe_name(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

/// Item ids for the next pilot round: the previous round's sample when reuse was
/// asked for, else a fresh draw seeded with `seed + round - 1`.
pub fn pilot_sample_ids(dataset: &[DataItem], config: &Config, rounds: &RoundLedger) -> Result<Vec<String>> {
    let round_number = rounds.next_round_number();
    match rounds.latest().filter(|p| p.reuse_sample || config.pilot.reuse_sample) {
        Some(prev) => Ok(prev.sample_item_ids),
        None => draw_sample(
            dataset,
            config.pilot.sample_size.min(dataset.len()),
            config.seed.wrapping_add(u64::from(round_number) - 1),
            config.pilot.stratify_by.as_deref(),
        ),
    }
}

/// The items with the given ids, in the order given.
pub fn select_items(dataset: &[DataItem], ids: &[String]) -> Result<Vec<DataItem>> {
    let by_id: BTreeMap<&str, &DataItem> = dataset.iter().map(|i| (i.id(), i)).collect();
    ids.iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .map(|i| (*i).clone())
                .ok_or_else(|| Error::invalid(format!("item {id} is not in the dataset")))
        })
        .collect()
}

/// Pilot-model labels for the sample. A provider failure or an unparseable
/// answer on any item is an error.
pub fn annotate_pilot(
    client: &LlmClient,
    model: &ModelSpec,
    version: &PromptVersion,
    sample: &[DataItem],
    parser: &OutputSchema,
) -> Result<Vec<Annotation>> {
    let results = label_items(client, model, version, sample, parser);
    if let Some((item, err)) = first_failure(&results) {
        return Err(Error::Provider {
            model_id: model.model_id.clone(),
            detail: format!("pilot labelling failed on item {item}: {err}"),
        });
    }
    let unparsed: Vec<&str> = results
        .iter()
        .filter_map(LabelResult::outcome)
        .filter(|o| o.format.parsed().is_none())
        .map(|o| o.item_id.as_str())
        .collect();
    if !unparsed.is_empty() {
        return Err(Error::invalid(format!(
            "pilot model {} gave unparseable answers for item(s) {}",
            model.model_id,
            unparsed.join(", ")
        )));
    }
    to_annotations(&results, &version.template.schema, &model.model_id)
}

/// Oracle entries and the pool of items to label for the benchmark. Distractors,
/// when given, join both with `bench.negative_label` as their gold label.
pub fn benchmark_inputs(
    oracle: &[OracleEntry],
    dataset: &[DataItem],
    negatives: &[DataItem],
    schema: &LabelSchema,
    config: &Config,
) -> Result<(Vec<OracleEntry>, Vec<DataItem>)> {
    if negatives.is_empty() {
        return Ok((oracle.to_vec(), dataset.to_vec()));
    }
    let label = config
        .bench
        .negative_label
        .as_deref()
        .ok_or_else(|| Error::Config("bench.negative_label is required when distractors are given".into()))?;
    let suite = build_benchmark_suite(oracle, negatives, schema, label, config.seed)?;
    let mut pool = dataset.to_vec();
    pool.extend(negatives.iter().cloned());
    Ok((suite.entries, pool))
}

pub fn run(inputs: PipelineInputs, out_dir: &Path) -> Result<PipelineOutcome> {
    run_with(inputs, out_dir, |c| c)
}

/// Like [`run`]; `customize` can swap transports, sleepers or credentials on the client.
pub fn run_with(
    inputs: PipelineInputs,
    out_dir: &Path,
    customize: impl FnOnce(LlmClient) -> LlmClient,
) -> Result<PipelineOutcome> {
    let cfg = &inputs.config;
    cfg.validate()?;
    if inputs.dataset.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    let mut ids = BTreeSet::new();
    for item in &inputs.dataset {
        if !ids.insert(item.id()) {
            return Err(Error::invalid(format!("item {} appears twice in the dataset", item.id())));
        }
    }
    if cfg.llm.models.is_empty() {
        return Err(Error::Config("no models configured under [[llm.models]]".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("create {}", out_dir.display()), e))?;

    let mut manifest = RunManifest::new(
        inputs.run_id.clone(),
        dataset_digest(&inputs.dataset)?,
        cfg.clone(),
        inputs.config_sources.clone(),
    );

    // prompt
    let mut prompts = PromptLedger::open(out_dir.join("prompts.jsonl"))?;
    let parent = prompts.latest().map(|v| v.version_id.clone());
    let version = prompts.register(&inputs.template, parent.as_deref(), &inputs.changelog)?;
    manifest.prompt_version_ids.push(version.version_id.clone());
    let schema = version.template.schema.clone();
    let parser = OutputSchema::for_template(&version.template);

    let ledger = Arc::new(ProvenanceLedger::open(out_dir.join("provenance.jsonl"))?);
    let cache = ResponseCache::open(out_dir.join("cache"))?;
    let mut client = customize(
        LlmClient::new(inputs.run_id.clone())
            .with_cache(cache)
            .with_ledger(ledger.clone())
            .with_retry(cfg.llm.retry.clone()),
    );

    // pilot
    let rounds = RoundLedger::open(&out_dir.join("rounds.jsonl"))?;
    let round_number = rounds.next_round_number();
    let sample_ids = pilot_sample_ids(&inputs.dataset, cfg, &rounds)?;
    let sample = select_items(&inputs.dataset, &sample_ids)?;

    let pilot_model = cfg.pilot_model()?.clone();
    let stage = format!("{}-r{round_number}", inputs.run_id);
    client.set_run_id(format!("{stage}-pilot"));
    info!("pilot round {round_number}: {} items with {}", sample.len(), pilot_model.model_id);
    let model_annotations = annotate_pilot(&client, &pilot_model, &version, &sample, &parser)?;

    let store = RoundStore::create(
        &out_dir.join("pilot").join(format!("round-{round_number}.json")),
        RoundSetup {
            round_number,
            prompt_version_id: version.version_id.clone(),
            schema: schema.clone(),
            items: sample.clone(),
            model_annotations,
            gate: cfg.pilot.gate.clone(),
            human_id: inputs.human_id.clone(),
        },
    )?;
    let human: BTreeMap<&str, &Annotation> = inputs.human_pilot.iter().map(|a| (a.item_id(), a)).collect();
    let missing: Vec<String> = sample_ids.iter().filter(|id| !human.contains_key(id.as_str())).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::MismatchedItems {
            only_a: Vec::new(),
            only_b: missing,
        });
    }
    for id in &sample_ids {
        let a = human[id.as_str()];
        for (task, label) in a.labels() {
            store.submit_label(id, task, label, a.rationale())?;
        }
    }
    export_disagreements_csv(
        &store.disagreements()?,
        &out_dir.join("pilot").join(format!("disagreements-r{round_number}.csv")),
    )?;
    let default_notes = "gate did not pass; refine the prompt before benchmarking";
    let notes = inputs.refinement_notes.as_deref().unwrap_or(default_notes);
    let passed = matches!(store.agreement()?, AgreementView::Complete { ref decision, .. } if decision.passed());
    let round = store.close((!passed).then_some(notes), cfg.pilot.reuse_sample)?;
    rounds.append(round.clone())?;
    manifest
        .metrics_digests
        .insert(format!("pilot.round-{round_number}"), digest_json(&(&round.results, &round.decision))?);
    if !round.decision.passed() {
        info!("gate: refine");
        manifest.cache_digest = client.cache().map(ResponseCache::digest).transpose()?;
        let manifest_digest = write_manifest(&manifest, &out_dir.join("manifest.json"))?;
        return Ok(PipelineOutcome::Refine { round, manifest_digest });
    }

    // benchmark
    let (oracle, pool) = benchmark_inputs(&inputs.oracle, &inputs.dataset, &inputs.negatives, &schema, cfg)?;
    client.set_run_id(format!("{stage}-bench"));
    let bench_dir = out_dir.join("bench");
    let mut runs = Vec::new();
    for model in &cfg.llm.models {
        let mut m = evaluate_model(&client, model, &version, &pool, &oracle, &parser)?;
        if let Some(r) = inputs.interpretability.get(&model.model_id) {
            m = m.with_interpretability(r)?;
        }
        if m.incomplete {
            warn!("benchmark of {} is incomplete: {}", m.model_id, m.abort_reason.as_deref().unwrap_or(""));
        }
        write_json(&bench_dir.join(format!("metrics-{}.json", safe_name(&m.model_id))), &m)?;
        manifest
            .metrics_digests
            .insert(format!("bench.{}", m.model_id), digest_json(&m)?);
        runs.push(m);
    }
    let comparison = compare_models(&runs, cfg.bench.weights)?;
    write_json(&bench_dir.join("comparison.json"), &comparison)?;
    write_text(&bench_dir.join("comparison.txt"), &comparison.to_text())?;
    manifest
        .metrics_digests
        .insert("bench.comparison".into(), digest_json(&comparison.ranking)?);
    let best_id = comparison
        .runs
        .iter()
        .find(|r| !r.incomplete)
        .map(|r| r.model_id.clone())
        .ok_or_else(|| Error::invalid("every benchmark run is incomplete; no model to apply"))?;
    let best = cfg.model(&best_id).expect("ranked model is configured").clone();
    manifest.best_model = Some(best_id.clone());
    info!("best model: {best_id}");

    // apply
    client.set_run_id(format!("{stage}-apply"));
    let mut dataset = inputs.dataset.clone();
    dataset.sort_by(|a, b| a.id().cmp(b.id()));
    let results = label_items(&client, &best, &version, &dataset, &parser);
    if let Some((item, err)) = first_failure(&results) {
        manifest.cache_digest = client.cache().map(ResponseCache::digest).transpose()?;
        write_manifest(&manifest, &out_dir.join("manifest.json"))?;
        return Err(Error::Provider {
            model_id: best_id,
            detail: format!("applying the model failed on item {item}: {err}"),
        });
    }

    // validate
    let grounding = GroundingConfig::default().with_vocabulary(cfg.validate.grounding_vocabulary.iter().cloned());
    let by_id: BTreeMap<&str, &DataItem> = dataset.iter().map(|i| (i.id(), i)).collect();
    let mut findings = Vec::new();
    let mut rationales = Vec::new();
    let mut records = Vec::new();
    for o in results.iter().filter_map(LabelResult::outcome) {
        let item = by_id[o.item_id.as_str()];
        findings.extend(o.format.findings().iter().cloned());
        let parsed = o.format.parsed();
        if let Some(p) = parsed {
            findings.extend(flag_hallucinations(p, item, &schema, &grounding));
            if let Some(r) = &p.rationale {
                rationales.push(TextOutput::new(o.item_id.clone(), r.clone()));
            }
        }
        records.push(EnhancedRecord {
            item_id: o.item_id.clone(),
            source: item.source().clone(),
            fields: item.fields().clone(),
            model_id: best_id.clone(),
            prompt_version_id: version.version_id.clone(),
            labels: parsed.map(|p| p.labels.clone()).unwrap_or_default(),
            rationale: parsed.and_then(|p| p.rationale.clone()),
            response_ref: sha256_hex(&o.response.text),
        });
    }
    findings.extend(detect_duplicates(&rationales, &cfg.validate.dedup)?);
    let expectations = if inputs.rules.is_empty() {
        None
    } else {
        let rows: Vec<_> = records.iter().map(|r| r.flatten(&schema)).collect();
        let report = run_expectations(&rows, &inputs.rules)?;
        report.write_csv(&out_dir.join("expectations.csv"))?;
        write_text(&out_dir.join("expectations.txt"), &report.summary())?;
        findings.extend(report.findings());
        Some(report)
    };
    sort_findings(&mut findings);
    write_findings_csv(&findings, &out_dir.join("findings.csv"))?;
    write_text(&out_dir.join("findings.txt"), &findings_summary(&findings))?;
    manifest
        .metrics_digests
        .insert("validate.findings".into(), digest_json(&findings)?);
    if let Some(r) = &expectations {
        manifest
            .metrics_digests
            .insert("validate.expectations".into(), digest_json(r)?);
    }

    // outputs
    let enhanced_path = out_dir.join("enhanced.jsonl");
    let enhanced_text = jsonl::to_string(&records)?;
    jsonl::write_atomic(&enhanced_path, enhanced_text.as_bytes())?;
    let enhanced_digest = sha256_hex(&enhanced_text);
    let exports = export_project_csv(&ledger, &format!("{stage}-apply"), &dataset, &schema, &parser, &out_dir.join("export"))?;

    manifest.enhanced_dataset_digest = Some(enhanced_digest.clone());
    manifest.cache_digest = client.cache().map(ResponseCache::digest).transpose()?;
    manifest.partial = false;
    let manifest_digest = write_manifest(&manifest, &out_dir.join("manifest.json"))?;

    Ok(PipelineOutcome::Completed(Box::new(PipelineReport {
        round,
        comparison,
        best_model: best_id,
        enhanced_path,
        enhanced_digest,
        findings,
        expectations,
        exports,
        manifest,
        manifest_digest,
        network_calls: client.network_calls(),
    })))
}
