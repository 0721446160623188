//! Batch labelling: render each item through a prompt version, complete it
//! (cache first) and parse the answer. Shared by the pilot, benchmark and apply stages.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};

use log::warn;

use crate::error::{Error, Result};
use crate::llm::{LlmClient, ModelResponse, ModelSpec};
use crate::model::{Annotation, Annotator, DataItem, LabelSchema};
use crate::prompt::{compose_prompt, PromptVersion};
use crate::util::parallel_map;
use crate::validate::{validate_format, FormatOutcome, OutputSchema};

#[derive(Debug, Clone, PartialEq)]
pub struct LabelOutcome {
    pub item_id: String,
    pub response: ModelResponse,
    pub format: FormatOutcome,
}

#[derive(Debug)]
pub enum LabelResult {
    Done(LabelOutcome),
    /// The call failed for good (auth, exhausted retries, hard provider error).
    Failed { item_id: String, error: Error },
    /// Not attempted because an earlier item failed hard.
    Skipped { item_id: String },
}

impl LabelResult {
    pub fn item_id(&self) -> &str {
        match self {
            LabelResult::Done(o) => &o.item_id,
            LabelResult::Failed { item_id, .. } | LabelResult::Skipped { item_id } => item_id,
        }
    }

    pub fn outcome(&self) -> Option<&LabelOutcome> {
        match self {
            LabelResult::Done(o) => Some(o),
            _ => None,
        }
    }
}

/// Results in input order. Concurrency is bounded by the model's
/// `max_concurrency`; after the first hard failure the remaining items are skipped.
pub fn label_items(
    client: &LlmClient,
    model: &ModelSpec,
    version: &PromptVersion,
    items: &[DataItem],
    parser: &OutputSchema,
) -> Vec<LabelResult> {
    let abort = AtomicBool::new(false);
    parallel_map(items, model.max_concurrency, |item| {
        let item_id = item.id().to_string();
        if abort.load(Ordering::SeqCst) {
            return LabelResult::Skipped { item_id };
        }
        let run = || -> Result<LabelOutcome> {
            let prompt = compose_prompt(version, item)?;
            let response = client.cached_complete(model, &prompt)?;
            let format = validate_format(item.id(), &response.text, parser);
            Ok(LabelOutcome {
                item_id: item_id.clone(),
                response,
                format,
            })
        };
        match run() {
            Ok(o) => LabelResult::Done(o),
            Err(error) => {
                warn!("model {} item {item_id}: {error}", model.model_id);
                abort.store(true, Ordering::SeqCst);
                LabelResult::Failed { item_id, error }
            }
        }
    })
}

/// First hard failure, if any.
pub fn first_failure(results: &[LabelResult]) -> Option<(&str, &Error)> {
    results.iter().find_map(|r| match r {
        LabelResult::Failed { item_id, error } => Some((item_id.as_str(), error)),
        _ => None,
    })
}

/// Model annotations from parsed outcomes; unparsed responses yield none.
pub fn to_annotations(results: &[LabelResult], schema: &LabelSchema, model_id: &str) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for o in results.iter().filter_map(LabelResult::outcome) {
        if let Some(p) = o.format.parsed() {
            out.push(Annotation::new(
                schema,
                o.item_id.clone(),
                Annotator::Model(model_id.to_string()),
                p.labels.clone(),
                p.rationale.clone(),
            )?);
        }
    }
    Ok(out)
}

/// Parsed labels by item id; `None` marks a parse failure.
pub fn predictions(results: &[LabelResult]) -> BTreeMap<String, Option<BTreeMap<String, String>>> {
    results
        .iter()
        .filter_map(LabelResult::outcome)
        .map(|o| (o.item_id.clone(), o.format.parsed().map(|p| p.labels.clone())))
        .collect()
}
