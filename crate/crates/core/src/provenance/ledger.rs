use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::jsonl;
use crate::model::ProvenanceRecord;

#[derive(Default)]
struct State {
    records: Vec<ProvenanceRecord>,
    keys: HashSet<(String, String, String)>,
}

/// JSONL-backed ledger. Appends are serialized; `(run, model, item)` is unique.
pub struct ProvenanceLedger {
    path: Option<PathBuf>,
    state: Mutex<State>,
}

impl ProvenanceLedger {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            state: Mutex::new(State::default()),
        }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut state = State::default();
        if path.exists() {
            for r in jsonl::read::<ProvenanceRecord>(&path)? {
                state.keys.insert(owned_key(&r));
                state.records.push(r);
            }
        }
        Ok(Self {
            path: Some(path),
            state: Mutex::new(state),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Appends a record and returns its position.
    pub fn record(&self, record: ProvenanceRecord) -> Result<usize> {
        record.check()?;
        let mut state = self.state.lock().expect("ledger lock");
        let key = owned_key(&record);
        if state.keys.contains(&key) {
            return Err(Error::DuplicateRecord {
                run_id: key.0,
                model_id: key.1,
                item_id: key.2,
            });
        }
        if let Some(path) = &self.path {
            jsonl::append(path, &record)?;
        }
        state.keys.insert(key);
        state.records.push(record);
        Ok(state.records.len() - 1)
    }

    pub fn records(&self) -> Vec<ProvenanceRecord> {
        self.state.lock().expect("ledger lock").records.clone()
    }

    pub fn records_for_run(&self, run_id: &str) -> Vec<ProvenanceRecord> {
        self.state
            .lock()
            .expect("ledger lock")
            .records
            .iter()
            .filter(|r| r.run_id == run_id)
            .cloned()
            .collect()
    }

    pub fn has_run(&self, run_id: &str) -> bool {
        self.state
            .lock()
            .expect("ledger lock")
            .records
            .iter()
            .any(|r| r.run_id == run_id)
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("ledger lock").records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn owned_key(r: &ProvenanceRecord) -> (String, String, String) {
    (r.run_id.clone(), r.model_id.clone(), r.item_id.clone())
}
