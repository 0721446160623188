use std::collections::BTreeMap;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::oracle::{oracle_digest, OracleEntry};
use crate::error::{Error, Result};
use crate::labeling::{first_failure, label_items, predictions, LabelResult};
use crate::llm::{total_cost, LlmClient, ModelResponse, ModelSpec};
use crate::model::{DataItem, LabelSchema};
use crate::prompt::PromptVersion;
use crate::util::{median, percentile};
use crate::validate::OutputSchema;

/// Confusion-matrix column for responses that failed format validation.
pub const UNPARSED: &str = "(unparsed)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: String,
    pub categories: Vec<String>,
    pub n: u64,
    pub correct: u64,
    /// Parsed but different from gold.
    pub wrong: u64,
    pub parse_failures: u64,
    pub accuracy: f64,
    /// Rows: gold category; columns: predicted category, then [`UNPARSED`].
    pub confusion: Vec<Vec<u64>>,
    /// `None` when the category was never predicted.
    pub precision: BTreeMap<String, Option<f64>>,
    /// `None` when the category never occurs in the gold labels.
    pub recall: BTreeMap<String, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interpretability {
    pub mean: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRunMetrics {
    pub model_id: String,
    pub prompt_version_id: String,
    pub oracle_digest: String,
    pub n_items: u64,
    pub tasks: Vec<TaskMetrics>,
    pub mean_accuracy: f64,
    /// Items whose response could not be parsed.
    pub parse_failure_count: u64,
    pub cost: Decimal,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub latency_median_ms: u64,
    pub latency_p95_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interpretability: Option<Interpretability>,
    #[serde(default)]
    pub incomplete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<String>,
}

impl ModelRunMetrics {
    pub fn task(&self, name: &str) -> Option<&TaskMetrics> {
        self.tasks.iter().find(|t| t.task == name)
    }

    /// Attaches human 1-5 explanation ratings, aggregated by their mean.
    pub fn with_interpretability(mut self, ratings: &[u8]) -> Result<Self> {
        if let Some(bad) = ratings.iter().find(|r| !(1..=5).contains(*r)) {
            return Err(Error::invalid(format!("interpretability rating {bad} outside 1-5")));
        }
        self.interpretability = (!ratings.is_empty()).then(|| Interpretability {
            mean: ratings.iter().map(|&r| f64::from(r)).sum::<f64>() / ratings.len() as f64,
            count: ratings.len(),
        });
        Ok(self)
    }
}

/// Metrics over the oracle items present in `predictions` (item id -> parsed
/// labels, `None` for a parse failure). Parse failures count as wrong.
#[allow(clippy::too_many_arguments)]
pub fn compute_metrics(
    model: &ModelSpec,
    prompt_version_id: &str,
    schema: &LabelSchema,
    oracle: &[OracleEntry],
    predictions: &BTreeMap<String, Option<BTreeMap<String, String>>>,
    responses: &[ModelResponse],
) -> Result<ModelRunMetrics> {
    if oracle.is_empty() {
        return Err(Error::invalid("oracle is empty"));
    }
    let evaluated: Vec<&OracleEntry> = oracle.iter().filter(|e| predictions.contains_key(&e.item_id)).collect();
    let mut tasks = Vec::new();
    for task in schema.tasks() {
        let k = task.categories.len();
        let mut confusion = vec![vec![0u64; k + 1]; k];
        let (mut n, mut correct, mut wrong, mut failures) = (0u64, 0u64, 0u64, 0u64);
        for e in &evaluated {
            let Some(gold) = e.labels.get(&task.name) else { continue };
            let gi = task
                .category_index(gold)
                .ok_or_else(|| Error::invalid(format!("oracle gold `{gold}` not in task `{}`", task.name)))?;
            n += 1;
            let predicted = predictions[&e.item_id].as_ref().and_then(|l| l.get(&task.name));
            match predicted.and_then(|p| task.category_index(p)) {
                Some(pi) => {
                    confusion[gi][pi] += 1;
                    if pi == gi {
                        correct += 1;
                    } else {
                        wrong += 1;
                    }
                }
                None => {
                    confusion[gi][k] += 1;
                    failures += 1;
                }
            }
        }
        let mut precision = BTreeMap::new();
        let mut recall = BTreeMap::new();
        for (i, c) in task.categories.iter().enumerate() {
            let tp = confusion[i][i];
            let predicted: u64 = confusion.iter().map(|r| r[i]).sum();
            let actual: u64 = confusion[i].iter().sum();
            precision.insert(c.clone(), (predicted > 0).then(|| tp as f64 / predicted as f64));
            recall.insert(c.clone(), (actual > 0).then(|| tp as f64 / actual as f64));
        }
        tasks.push(TaskMetrics {
            task: task.name.clone(),
            categories: task.categories.clone(),
            n,
            correct,
            wrong,
            parse_failures: failures,
            accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
            confusion,
            precision,
            recall,
        });
    }
    let mean_accuracy = tasks.iter().map(|t| t.accuracy).sum::<f64>() / tasks.len() as f64;
    let mut latencies: Vec<u64> = responses.iter().map(|r| r.latency_ms).collect();
    latencies.sort_unstable();
    Ok(ModelRunMetrics {
        model_id: model.model_id.clone(),
        prompt_version_id: prompt_version_id.to_string(),
        oracle_digest: oracle_digest(oracle)?,
        n_items: evaluated.len() as u64,
        tasks,
        mean_accuracy,
        parse_failure_count: evaluated.iter().filter(|e| predictions[&e.item_id].is_none()).count() as u64,
        cost: total_cost(responses, model),
        input_tokens: responses.iter().map(|r| r.input_tokens).sum(),
        output_tokens: responses.iter().map(|r| r.output_tokens).sum(),
        latency_median_ms: median(&latencies),
        latency_p95_ms: percentile(&latencies, 0.95),
        interpretability: None,
        incomplete: evaluated.len() < oracle.len(),
        abort_reason: None,
    })
}

/// Labels every oracle item with `model` and scores it against the gold labels.
///
/// A hard provider failure stops the run; the metrics then cover the items
/// completed so far and are flagged incomplete.
pub fn evaluate_model(
    client: &LlmClient,
    model: &ModelSpec,
    version: &PromptVersion,
    items: &[DataItem],
    oracle: &[OracleEntry],
    parser: &OutputSchema,
) -> Result<ModelRunMetrics> {
    if oracle.is_empty() {
        return Err(Error::invalid("oracle is empty"));
    }
    let by_id: BTreeMap<&str, &DataItem> = items.iter().map(|i| (i.id(), i)).collect();
    let mut selected = Vec::with_capacity(oracle.len());
    let mut ids: Vec<&str> = oracle.iter().map(|e| e.item_id.as_str()).collect();
    ids.sort_unstable();
    for id in ids {
        let item = by_id
            .get(id)
            .ok_or_else(|| Error::invalid(format!("oracle item {id} is not in the dataset")))?;
        selected.push((*item).clone());
    }
    let results = label_items(client, model, version, &selected, parser);
    let responses: Vec<ModelResponse> = results
        .iter()
        .filter_map(LabelResult::outcome)
        .map(|o| o.response.clone())
        .collect();
    let mut metrics = compute_metrics(
        model,
        &version.version_id,
        &version.template.schema,
        oracle,
        &predictions(&results),
        &responses,
    )?;
    if let Some((item, err)) = first_failure(&results) {
        metrics.incomplete = true;
        metrics.abort_reason = Some(format!("item {item}: {err}"));
    }
    Ok(metrics)
}
