use std::cmp::Ordering;
use std::fmt::Write as _;

use rust_decimal::prelude::ToPrimitive;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::metrics::ModelRunMetrics;
use crate::error::{Error, Result};
use crate::llm::display_cost;

/// Weights over min-max normalized metrics; cost is inverted so cheaper scores higher.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub accuracy: f64,
    pub cost: f64,
    #[serde(default)]
    pub interpretability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedModel {
    pub rank: usize,
    pub model_id: String,
    pub mean_accuracy: f64,
    pub cost: Decimal,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interpretability: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub prompt_version_id: String,
    pub oracle_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Weights>,
    pub ranking: Vec<RankedModel>,
    pub runs: Vec<ModelRunMetrics>,
}

fn lexicographic(a: &ModelRunMetrics, b: &ModelRunMetrics) -> Ordering {
    b.mean_accuracy
        .total_cmp(&a.mean_accuracy)
        .then_with(|| a.cost.cmp(&b.cost))
        .then_with(|| a.model_id.cmp(&b.model_id))
}

fn normalize(values: &[f64], higher_is_better: bool) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|&v| {
            if hi - lo <= f64::EPSILON {
                1.0
            } else if higher_is_better {
                (v - lo) / (hi - lo)
            } else {
                (hi - v) / (hi - lo)
            }
        })
        .collect()
}

/// Ranks runs by mean accuracy (desc), total cost (asc), then model id. With
/// weights, the weighted score ranks first and that order breaks ties.
pub fn compare_models(runs: &[ModelRunMetrics], weights: Option<Weights>) -> Result<ComparisonReport> {
    let first = runs.first().ok_or_else(|| Error::invalid("no model runs to compare"))?;
    for r in runs {
        if r.oracle_digest != first.oracle_digest {
            return Err(Error::invalid(format!(
                "runs use different oracles: {} ({}) vs {} ({})",
                first.model_id, first.oracle_digest, r.model_id, r.oracle_digest
            )));
        }
        if r.prompt_version_id != first.prompt_version_id {
            return Err(Error::invalid(format!(
                "runs use different prompt versions: {} vs {}",
                first.prompt_version_id, r.prompt_version_id
            )));
        }
    }
    if let Some(w) = weights {
        if [w.accuracy, w.cost, w.interpretability].iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::invalid("weights must be finite and non-negative"));
        }
    }

    let scores: Option<Vec<f64>> = weights.map(|w| {
        let acc = normalize(&runs.iter().map(|r| r.mean_accuracy).collect::<Vec<_>>(), true);
        let cost = normalize(&runs.iter().map(|r| r.cost.to_f64().unwrap_or(f64::MAX)).collect::<Vec<_>>(), false);
        let interp = normalize(
            &runs
                .iter()
                .map(|r| r.interpretability.as_ref().map_or(0.0, |i| i.mean))
                .collect::<Vec<_>>(),
            true,
        );
        (0..runs.len())
            .map(|i| w.accuracy * acc[i] + w.cost * cost[i] + w.interpretability * interp[i])
            .collect()
    });

    let mut order: Vec<usize> = (0..runs.len()).collect();
    order.sort_by(|&a, &b| {
        let by_score = match &scores {
            Some(s) => s[b].total_cmp(&s[a]),
            None => Ordering::Equal,
        };
        by_score.then_with(|| lexicographic(&runs[a], &runs[b]))
    });
    let ranking = order
        .iter()
        .enumerate()
        .map(|(rank, &i)| RankedModel {
            rank: rank + 1,
            model_id: runs[i].model_id.clone(),
            mean_accuracy: runs[i].mean_accuracy,
            cost: runs[i].cost,
            interpretability: runs[i].interpretability.as_ref().map(|x| x.mean),
            score: scores.as_ref().map(|s| s[i]),
        })
        .collect();
    Ok(ComparisonReport {
        prompt_version_id: first.prompt_version_id.clone(),
        oracle_digest: first.oracle_digest.clone(),
        weights,
        ranking,
        runs: order.iter().map(|&i| runs[i].clone()).collect(),
    })
}

impl ComparisonReport {
    pub fn best(&self) -> &RankedModel {
        &self.ranking[0]
    }

    /// Plain-text ranking with accuracy, interpretability and cost, then per-task tables.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "prompt version: {}", self.prompt_version_id);
        let _ = writeln!(out, "oracle:         {}", self.oracle_digest);
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<4} {:<28} {:>9} {:>16} {:>14} {:>8}",
            "rank", "model", "accuracy", "interpretability", "cost (USD)", "score"
        );
        for r in &self.ranking {
            let interp = r.interpretability.map_or("-".to_string(), |v| format!("{v:.2}"));
            let score = r.score.map_or("-".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(
                out,
                "{:<4} {:<28} {:>9.4} {:>16} {:>14} {:>8}",
                r.rank,
                r.model_id,
                r.mean_accuracy,
                interp,
                display_cost(r.cost),
                score
            );
        }
        for run in &self.runs {
            let _ = writeln!(out);
            let mut status = String::new();
            if run.incomplete {
                status = format!(" INCOMPLETE: {}", run.abort_reason.as_deref().unwrap_or("partial run"));
            }
            let _ = writeln!(
                out,
                "== {} ({} items, {} parse failures, tokens {}/{}, latency p50 {} ms p95 {} ms){status}",
                run.model_id,
                run.n_items,
                run.parse_failure_count,
                run.input_tokens,
                run.output_tokens,
                run.latency_median_ms,
                run.latency_p95_ms
            );
            for t in &run.tasks {
                let _ = writeln!(out, "  task {}: accuracy {:.4} ({}/{})", t.task, t.accuracy, t.correct, t.n);
                let _ = writeln!(out, "    {:<20} {:>9} {:>9}", "category", "precision", "recall");
                for c in &t.categories {
                    let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
                    let _ = writeln!(out, "    {:<20} {:>9} {:>9}", c, f(t.precision[c]), f(t.recall[c]));
                }
            }
        }
        out
    }
}
