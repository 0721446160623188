use serde::{Deserialize, Serialize};

use super::kappa::{AgreementResult, AgreementStatus};
use crate::error::{Error, Result};

/// Pass/refine rule. `inclusive` selects `kappa >= threshold` (default) over `>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateConfig {
    pub threshold: f64,
    pub min_n: u64,
    pub inclusive: bool,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            threshold: 0.9,
            min_n: 30,
            inclusive: true,
        }
    }
}

impl GateConfig {
    pub fn new(threshold: f64, min_n: u64) -> Result<Self> {
        let cfg = Self {
            threshold,
            min_n,
            inclusive: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::invalid(format!(
                "gate threshold {} must be in (0, 1]",
                self.threshold
            )));
        }
        if self.min_n == 0 {
            return Err(Error::invalid("gate min_n must be at least 1"));
        }
        Ok(())
    }

    fn meets(&self, kappa: f64) -> bool {
        if self.inclusive {
            kappa >= self.threshold
        } else {
            kappa > self.threshold
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateOutcome {
    Pass,
    Refine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasonKind {
    NoTasks,
    Degenerate,
    TooFewItems,
    BelowThreshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReason {
    pub task: String,
    pub kind: ReasonKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub outcome: GateOutcome,
    pub reasons: Vec<GateReason>,
}

impl GateDecision {
    pub fn passed(&self) -> bool {
        self.outcome == GateOutcome::Pass
    }
}

/// Pass iff every task is defined, has at least `min_n` items and meets the threshold.
/// Each failing condition yields its own reason.
pub fn evaluate_gate(results: &[AgreementResult], config: &GateConfig) -> GateDecision {
    let mut reasons = Vec::new();
    if results.is_empty() {
        reasons.push(GateReason {
            task: String::new(),
            kind: ReasonKind::NoTasks,
            message: "no agreement results to gate on".into(),
        });
    }
    for r in results {
        if r.status == AgreementStatus::Degenerate {
            reasons.push(GateReason {
                task: r.task.clone(),
                kind: ReasonKind::Degenerate,
                message: format!("degenerate sample: both annotators used one identical category for task `{}`", r.task),
            });
        }
        if r.n_items < config.min_n {
            reasons.push(GateReason {
                task: r.task.clone(),
                kind: ReasonKind::TooFewItems,
                message: format!("task `{}`: {} items, need at least {}", r.task, r.n_items, config.min_n),
            });
        }
        if let Some(k) = r.kappa {
            if !config.meets(k) {
                let op = if config.inclusive { ">=" } else { ">" };
                reasons.push(GateReason {
                    task: r.task.clone(),
                    kind: ReasonKind::BelowThreshold,
                    message: format!("task `{}`: kappa {k:.4} does not satisfy {op} {}", r.task, config.threshold),
                });
            }
        }
    }
    GateDecision {
        outcome: if reasons.is_empty() { GateOutcome::Pass } else { GateOutcome::Refine },
        reasons,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn result(kappa: Option<f64>, n: u64) -> AgreementResult {
        AgreementResult {
            task: "t".into(),
            categories: vec!["x".into(), "y".into()],
            n_items: n,
            contingency: vec![vec![0, 0], vec![0, 0]],
            p_o: 0.0,
            p_e: 0.0,
            kappa,
            status: if kappa.is_some() { AgreementStatus::Defined } else { AgreementStatus::Degenerate },
        }
    }

    #[test]
    fn pass_at_092() {
        let d = evaluate_gate(&[result(Some(0.92), 50)], &GateConfig::default());
        assert!(d.passed());
        assert!(d.reasons.is_empty());
    }

    #[test]
    fn boundary_is_inclusive_by_default() {
        let cfg = GateConfig::new(0.9, 30).unwrap();
        assert!(evaluate_gate(&[result(Some(0.9), 50)], &cfg).passed());
        assert!(!evaluate_gate(&[result(Some(0.89), 50)], &cfg).passed());
        let strict = GateConfig { inclusive: false, ..cfg };
        assert!(!evaluate_gate(&[result(Some(0.9), 50)], &strict).passed());
    }

    #[test]
    fn degenerate_refines() {
        let d = evaluate_gate(&[result(None, 50)], &GateConfig::default());
        assert_eq!(d.outcome, GateOutcome::Refine);
        assert_eq!(d.reasons.len(), 1);
        assert!(d.reasons[0].message.contains("degenerate sample"));
    }

    #[test]
    fn one_reason_per_failing_condition() {
        let d = evaluate_gate(&[result(Some(0.5), 10)], &GateConfig::default());
        let kinds: Vec<_> = d.reasons.iter().map(|r| r.kind).collect();
        assert_eq!(kinds, vec![ReasonKind::TooFewItems, ReasonKind::BelowThreshold]);
    }

    #[test]
    fn config_validation() {
        assert!(GateConfig::new(0.0, 30).is_err());
        assert!(GateConfig::new(1.1, 30).is_err());
        assert!(GateConfig::new(1.0, 0).is_err());
        assert!(GateConfig::new(1.0, 1).is_ok());
    }

    #[test]
    fn no_results_refines() {
        assert!(!evaluate_gate(&[], &GateConfig::default()).passed());
    }
}
