use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::oracle::OracleEntry;
use crate::error::{Error, Result};
use crate::model::{DataItem, LabelSchema};

pub const DISTRACTOR_ANNOTATOR: &str = "benchmark-distractor";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteComposition {
    pub positives: usize,
    pub negatives: usize,
}

/// Oracle entries for positives and negative distractors in a seeded order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkSuite {
    pub entries: Vec<OracleEntry>,
    pub composition: SuiteComposition,
    pub negative_label: String,
    pub seed: u64,
}

impl BenchmarkSuite {
    pub fn item_ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.item_id.as_str()).collect()
    }
}

/// Merges the oracle with distractor items whose gold label is `negative_label`
/// on every task, then shuffles with `seed`.
pub fn build_benchmark_suite(
    oracle: &[OracleEntry],
    negatives: &[DataItem],
    schema: &LabelSchema,
    negative_label: &str,
    seed: u64,
) -> Result<BenchmarkSuite> {
    let lacking: Vec<&str> = schema
        .tasks()
        .iter()
        .filter(|t| !t.has_category(negative_label))
        .map(|t| t.name.as_str())
        .collect();
    if !lacking.is_empty() {
        return Err(Error::invalid(format!(
            "schema has no negative category `{negative_label}` in task(s) {}; extend the schema with it before adding distractors",
            lacking.join(", ")
        )));
    }
    let mut seen = BTreeSet::new();
    let mut entries = Vec::with_capacity(oracle.len() + negatives.len());
    let mut sorted_oracle: Vec<&OracleEntry> = oracle.iter().collect();
    sorted_oracle.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    for e in sorted_oracle {
        e.validate(schema)?;
        if !seen.insert(e.item_id.clone()) {
            return Err(Error::invalid(format!("item {} appears twice in the oracle", e.item_id)));
        }
        entries.push(e.clone());
    }
    let mut sorted_neg: Vec<&DataItem> = negatives.iter().collect();
    sorted_neg.sort_by(|a, b| a.id().cmp(b.id()));
    for item in sorted_neg {
        if !seen.insert(item.id().to_string()) {
            return Err(Error::invalid(format!("distractor {} is already in the suite", item.id())));
        }
        let labels: BTreeMap<String, String> = schema
            .tasks()
            .iter()
            .map(|t| (t.name.clone(), negative_label.to_string()))
            .collect();
        entries.push(OracleEntry {
            item_id: item.id().to_string(),
            labels,
            annotator: DISTRACTOR_ANNOTATOR.into(),
            basis: "negative distractor".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    entries.shuffle(&mut rng);
    Ok(BenchmarkSuite {
        entries,
        composition: SuiteComposition {
            positives: oracle.len(),
            negatives: negatives.len(),
        },
        negative_label: negative_label.to_string(),
        seed,
    })
}
