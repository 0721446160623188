use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::model::{DataItem, LabelSchema};
use crate::validate::{validate_format, OutputSchema};

use super::ledger::ProvenanceLedger;

fn file_stem(project: &str) -> String {
    let s: String = project
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    if s.is_empty() || s.starts_with('.') {
        format!("project_{s}")
    } else {
        s
    }
}

/// Writes one CSV per project for `run_id` into `out_dir` and returns the paths,
/// sorted. Columns: `locator`, `prompt_version_id`, `model_id`, one column per
/// task, and `response_ref` (SHA-256 of the raw response kept in the ledger).
/// Unparseable responses leave the label cells empty.
pub fn export_project_csv(
    ledger: &ProvenanceLedger,
    run_id: &str,
    items: &[DataItem],
    schema: &LabelSchema,
    parser: &OutputSchema,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let records = ledger.records_for_run(run_id);
    if records.is_empty() {
        return Err(Error::UnknownRun(run_id.to_string()));
    }
    let by_id: BTreeMap<&str, &DataItem> = items.iter().map(|i| (i.id(), i)).collect();
    let mut groups: BTreeMap<String, Vec<Vec<String>>> = BTreeMap::new();
    for r in &records {
        let item = by_id
            .get(r.item_id.as_str())
            .ok_or_else(|| Error::invalid(format!("ledger item {} is not in the dataset", r.item_id)))?;
        let parsed = validate_format(&r.item_id, &r.raw_response, parser);
        let mut row = vec![item.source().normalized().to_string(), r.prompt_version_id.clone(), r.model_id.clone()];
        for t in schema.tasks() {
            row.push(
                parsed
                    .parsed()
                    .and_then(|p| p.labels.get(&t.name).cloned())
                    .unwrap_or_default(),
            );
        }
        row.push(sha256_hex(&r.raw_response));
        groups.entry(item.source().project()).or_default().push(row);
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("create {}", out_dir.display()), e))?;
    let mut header = vec!["locator".to_string(), "prompt_version_id".into(), "model_id".into()];
    header.extend(schema.tasks().iter().map(|t| t.name.clone()));
    header.push("response_ref".into());
    let mut paths = Vec::new();
    for (project, mut rows) in groups {
        rows.sort();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&header)?;
        for row in &rows {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::io("csv buffer", e.into_error()))?;
        let path = out_dir.join(format!("{}.csv", file_stem(&project)));
        crate::jsonl::write_atomic(&path, &bytes)?;
        paths.push(path);
    }
    paths.sort();
    Ok(paths)
}
