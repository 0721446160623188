use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::Annotation;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisagreementRow {
    pub item_id: String,
    pub task: String,
    pub label_a: Option<String>,
    pub label_b: Option<String>,
    pub rationale_a: Option<String>,
    pub rationale_b: Option<String>,
}

/// One row per (item, task) where the two annotators differ, sorted by item then task.
/// Items labelled by only one side are ignored.
pub fn list_disagreements(a: &[Annotation], b: &[Annotation]) -> Vec<DisagreementRow> {
    let by_id = |anns: &[Annotation]| -> BTreeMap<String, Annotation> {
        anns.iter().map(|x| (x.item_id().to_string(), x.clone())).collect()
    };
    let (ma, mb) = (by_id(a), by_id(b));
    let mut rows = Vec::new();
    for (id, xa) in &ma {
        let Some(xb) = mb.get(id) else { continue };
        let tasks: BTreeSet<&String> = xa.labels().keys().chain(xb.labels().keys()).collect();
        for task in tasks {
            let la = xa.label(task);
            let lb = xb.label(task);
            if la != lb {
                rows.push(DisagreementRow {
                    item_id: id.clone(),
                    task: task.clone(),
                    label_a: la.map(str::to_string),
                    label_b: lb.map(str::to_string),
                    rationale_a: xa.rationale().map(str::to_string),
                    rationale_b: xb.rationale().map(str::to_string),
                });
            }
        }
    }
    rows
}

pub fn export_disagreements_csv(rows: &[DisagreementRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["item_id", "task", "label_a", "label_b", "rationale_a", "rationale_b"])?;
    for r in rows {
        w.write_record([
            r.item_id.as_str(),
            r.task.as_str(),
            r.label_a.as_deref().unwrap_or(""),
            r.label_b.as_deref().unwrap_or(""),
            r.rationale_a.as_deref().unwrap_or(""),
            r.rationale_b.as_deref().unwrap_or(""),
        ])?;
    }
    w.flush().map_err(|e| crate::Error::io("flush disagreements", e))?;
    Ok(())
}
