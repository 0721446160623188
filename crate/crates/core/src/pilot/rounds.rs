//! Pilot round state shared by the CLI and the annotation server, plus the
//! append-only ledger of closed rounds.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::disagreement::{list_disagreements, DisagreementRow};
use super::gate::{evaluate_gate, GateConfig, GateDecision, GateOutcome};
use super::kappa::{cohens_kappa, AgreementResult};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::model::{Annotation, Annotator, DataItem, LabelSchema};

/// Everything needed to open a round: the sampled items and the model labels for them.
#[derive(Debug, Clone)]
pub struct RoundSetup {
    pub round_number: u32,
    pub prompt_version_id: String,
    pub schema: LabelSchema,
    pub items: Vec<DataItem>,
    pub model_annotations: Vec<Annotation>,
    pub gate: GateConfig,
    pub human_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundState {
    pub round_number: u32,
    pub prompt_version_id: String,
    pub schema: LabelSchema,
    pub items: Vec<DataItem>,
    pub model_annotations: BTreeMap<String, Annotation>,
    /// item id -> task -> label
    pub human_labels: BTreeMap<String, BTreeMap<String, String>>,
    #[serde(default)]
    pub human_rationales: BTreeMap<String, String>,
    pub human_id: String,
    pub gate: GateConfig,
    #[serde(default)]
    pub closed: bool,
}

impl RoundState {
    fn is_complete(&self, item_id: &str) -> bool {
        self.human_labels
            .get(item_id)
            .is_some_and(|l| self.schema.tasks().iter().all(|t| l.contains_key(&t.name)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubmitOutcome {
    Created,
    Unchanged,
    Updated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum AgreementView {
    Incomplete {
        labelled: usize,
        total: usize,
    },
    Complete {
        results: Vec<AgreementResult>,
        decision: GateDecision,
    },
}

/// Summary of a closed round as stored in the round ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotRound {
    pub round_number: u32,
    pub prompt_version_id: String,
    pub sample_item_ids: Vec<String>,
    pub gate: GateConfig,
    pub results: Vec<AgreementResult>,
    pub decision: GateDecision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    /// Whether the next round re-labels the same items instead of drawing a fresh sample.
    pub reuse_sample: bool,
    pub closed_at: DateTime<Utc>,
}

/// Round state, optionally persisted as one JSON file rewritten atomically on every change.
#[derive(Debug)]
pub struct RoundStore {
    path: Option<PathBuf>,
    state: Mutex<RoundState>,
}

impl RoundStore {
    fn from_setup(setup: RoundSetup) -> Result<RoundState> {
        setup.gate.validate()?;
        if setup.items.is_empty() {
            return Err(Error::invalid("a pilot round needs at least one item"));
        }
        let mut model = BTreeMap::new();
        for a in setup.model_annotations {
            a.validate(&setup.schema)?;
            model.insert(a.item_id().to_string(), a);
        }
        let missing: Vec<String> = setup
            .items
            .iter()
            .filter(|i| !model.contains_key(i.id()))
            .map(|i| i.id().to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MismatchedItems {
                only_a: missing,
                only_b: Vec::new(),
            });
        }
        let mut items = setup.items;
        items.sort_by(|a, b| a.id().cmp(b.id()));
        model.retain(|id, _| items.binary_search_by(|i| i.id().cmp(id)).is_ok());
        Ok(RoundState {
            round_number: setup.round_number,
            prompt_version_id: setup.prompt_version_id,
            schema: setup.schema,
            items,
            model_annotations: model,
            human_labels: BTreeMap::new(),
            human_rationales: BTreeMap::new(),
            human_id: setup.human_id,
            gate: setup.gate,
            closed: false,
        })
    }

    pub fn in_memory(setup: RoundSetup) -> Result<Self> {
        Ok(Self {
            path: None,
            state: Mutex::new(Self::from_setup(setup)?),
        })
    }

    pub fn create(path: &Path, setup: RoundSetup) -> Result<Self> {
        let store = Self {
            path: Some(path.to_path_buf()),
            state: Mutex::new(Self::from_setup(setup)?),
        };
        store.persist(&store.state.lock().unwrap())?;
        Ok(store)
    }

    pub fn open(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
            _ => Error::io(format!("read {}", path.display()), e),
        })?;
        let state: RoundState = serde_json::from_str(&text)?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            state: Mutex::new(state),
        })
    }

    fn persist(&self, state: &RoundState) -> Result<()> {
        if let Some(p) = &self.path {
            jsonl::write_atomic(p, serde_json::to_string_pretty(state)?.as_bytes())?;
        }
        Ok(())
    }

    pub fn snapshot(&self) -> RoundState {
        self.state.lock().unwrap().clone()
    }

    pub fn item(&self, id: &str) -> Option<DataItem> {
        self.state.lock().unwrap().items.iter().find(|i| i.id() == id).cloned()
    }

    /// Items still missing a human label for at least one task.
    pub fn pending_items(&self) -> Vec<DataItem> {
        let st = self.state.lock().unwrap();
        st.items.iter().filter(|i| !st.is_complete(i.id())).cloned().collect()
    }

    /// Records one human label. Resubmitting the same label is a no-op; a different
    /// label replaces the earlier one.
    pub fn submit_label(
        &self,
        item_id: &str,
        task: &str,
        label: &str,
        rationale: Option<&str>,
    ) -> Result<SubmitOutcome> {
        let mut st = self.state.lock().unwrap();
        if st.closed {
            return Err(Error::RoundClosed(st.round_number));
        }
        if !st.items.iter().any(|i| i.id() == item_id) {
            return Err(Error::invalid(format!("item {item_id} is not in this round's sample")));
        }
        st.schema.check_label(task, label)?;
        let prev = st
            .human_labels
            .entry(item_id.to_string())
            .or_default()
            .insert(task.to_string(), label.to_string());
        let mut outcome = match prev.as_deref() {
            None => SubmitOutcome::Created,
            Some(p) if p == label => SubmitOutcome::Unchanged,
            Some(_) => SubmitOutcome::Updated,
        };
        if let Some(r) = rationale.filter(|r| !r.trim().is_empty()) {
            let old = st.human_rationales.insert(item_id.to_string(), r.to_string());
            if outcome == SubmitOutcome::Unchanged && old.as_deref() != Some(r) {
                outcome = SubmitOutcome::Updated;
            }
        }
        if outcome != SubmitOutcome::Unchanged {
            self.persist(&st)?;
        }
        Ok(outcome)
    }

    fn human_annotations_of(st: &RoundState) -> Result<Vec<Annotation>> {
        st.human_labels
            .iter()
            .map(|(id, labels)| {
                Annotation::new(
                    &st.schema,
                    id.clone(),
                    Annotator::Human(st.human_id.clone()),
                    labels.clone(),
                    st.human_rationales.get(id).cloned(),
                )
            })
            .collect()
    }

    pub fn human_annotations(&self) -> Result<Vec<Annotation>> {
        Self::human_annotations_of(&self.state.lock().unwrap())
    }

    pub fn model_annotations(&self) -> Vec<Annotation> {
        self.state.lock().unwrap().model_annotations.values().cloned().collect()
    }

    fn agreement_of(st: &RoundState) -> Result<AgreementView> {
        let labelled = st.items.iter().filter(|i| st.is_complete(i.id())).count();
        if labelled < st.items.len() {
            return Ok(AgreementView::Incomplete {
                labelled,
                total: st.items.len(),
            });
        }
        let human = Self::human_annotations_of(st)?;
        let model: Vec<Annotation> = st.model_annotations.values().cloned().collect();
        let results = st
            .schema
            .tasks()
            .iter()
            .map(|t| cohens_kappa(&human, &model, t))
            .collect::<Result<Vec<_>>>()?;
        let decision = evaluate_gate(&results, &st.gate);
        Ok(AgreementView::Complete { results, decision })
    }

    /// Per-task kappa (human as A, model as B) and the gate, once every item is labelled.
    pub fn agreement(&self) -> Result<AgreementView> {
        Self::agreement_of(&self.state.lock().unwrap())
    }

    /// Human (A) versus model (B) disagreements over the items labelled so far.
    pub fn disagreements(&self) -> Result<Vec<DisagreementRow>> {
        let human = self.human_annotations()?;
        Ok(list_disagreements(&human, &self.model_annotations()))
    }

    /// Closes the round. A refine outcome requires non-empty refinement notes.
    pub fn close(&self, notes: Option<&str>, reuse_sample: bool) -> Result<PilotRound> {
        let mut st = self.state.lock().unwrap();
        if st.closed {
            return Err(Error::RoundClosed(st.round_number));
        }
        let (results, decision) = match Self::agreement_of(&st)? {
            AgreementView::Incomplete { labelled, total } => {
                return Err(Error::invalid(format!(
                    "round {} is incomplete: {labelled}/{total} items labelled",
                    st.round_number
                )))
            }
            AgreementView::Complete { results, decision } => (results, decision),
        };
        let notes = notes.map(str::trim).filter(|n| !n.is_empty()).map(str::to_string);
        if decision.outcome == GateOutcome::Refine && notes.is_none() {
            return Err(Error::invalid(
                "gate outcome is refine: refinement notes are required to close the round",
            ));
        }
        st.closed = true;
        self.persist(&st)?;
        Ok(PilotRound {
            round_number: st.round_number,
            prompt_version_id: st.prompt_version_id.clone(),
            sample_item_ids: st.items.iter().map(|i| i.id().to_string()).collect(),
            gate: st.gate.clone(),
            results,
            decision,
            notes,
            reuse_sample,
            closed_at: Utc::now(),
        })
    }
}

/// Append-only history of closed rounds.
#[derive(Debug)]
pub struct RoundLedger {
    path: Option<PathBuf>,
    rounds: Mutex<Vec<PilotRound>>,
}

impl RoundLedger {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            rounds: Mutex::new(Vec::new()),
        }
    }

    pub fn open(path: &Path) -> Result<Self> {
        let rounds = if path.exists() { jsonl::read(path)? } else { Vec::new() };
        Ok(Self {
            path: Some(path.to_path_buf()),
            rounds: Mutex::new(rounds),
        })
    }

    pub fn rounds(&self) -> Vec<PilotRound> {
        self.rounds.lock().unwrap().clone()
    }

    pub fn latest(&self) -> Option<PilotRound> {
        self.rounds.lock().unwrap().last().cloned()
    }

    pub fn next_round_number(&self) -> u32 {
        self.latest().map_or(1, |r| r.round_number + 1)
    }

    /// Appends a round; round numbers must increase and the recorded decision must
    /// match the gate recomputed from the stored results.
    pub fn append(&self, round: PilotRound) -> Result<()> {
        let mut rounds = self.rounds.lock().unwrap();
        if let Some(last) = rounds.last() {
            if round.round_number <= last.round_number {
                return Err(Error::invalid(format!(
                    "round {} does not follow round {}",
                    round.round_number, last.round_number
                )));
            }
        }
        if evaluate_gate(&round.results, &round.gate) != round.decision {
            return Err(Error::invalid(format!(
                "round {} decision is inconsistent with its agreement results",
                round.round_number
            )));
        }
        if let Some(p) = &self.path {
            jsonl::append(p, &round)?;
        }
        rounds.push(round);
        Ok(())
    }
}
