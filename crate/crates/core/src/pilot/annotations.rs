//! Annotation CSV files: `item_id`, then `<task>` and `<task>_rationale` per task.
//!
//! A single free-text rationale is kept per annotation, so on import the first
//! non-empty rationale column wins; on export it is written under every task.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Annotation, Annotator, LabelSchema, Task};

const RATIONALE_SUFFIX: &str = "_rationale";

/// (task, label column, rationale column)
type TaskColumn = (String, usize, Option<usize>);

fn task_columns(headers: &csv::StringRecord) -> Result<(usize, Vec<TaskColumn>)> {
    let id_col = headers
        .iter()
        .position(|h| h == "item_id")
        .ok_or_else(|| Error::ColumnNotFound("item_id".into()))?;
    let mut tasks = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if i == id_col || h.ends_with(RATIONALE_SUFFIX) || h == "annotator" {
            continue;
        }
        let rationale = headers.iter().position(|x| x == format!("{h}{RATIONALE_SUFFIX}"));
        tasks.push((h.to_string(), i, rationale));
    }
    Ok((id_col, tasks))
}

/// Builds a schema from annotation files when none is configured: one task per
/// label column, categories are the sorted distinct labels seen in any file.
pub fn infer_schema(paths: &[&Path]) -> Result<LabelSchema> {
    let mut cats: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for path in paths {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        let (_, tasks) = task_columns(&headers)?;
        for (t, _, _) in &tasks {
            if !order.contains(t) {
                order.push(t.clone());
            }
        }
        for rec in rdr.records() {
            let rec = rec?;
            for (t, col, _) in &tasks {
                let v = rec.get(*col).unwrap_or("").trim();
                if !v.is_empty() {
                    cats.entry(t.clone()).or_default().insert(v.to_string());
                }
            }
        }
    }
    LabelSchema::new(
        order
            .into_iter()
            .map(|t| Task {
                categories: cats.remove(&t).unwrap_or_default().into_iter().collect(),
                name: t,
            })
            .collect(),
    )
}

/// Reads annotations, validating every label against `schema`. Empty label cells
/// leave that task unlabelled for the item.
pub fn import_annotations_csv(path: &Path, schema: &LabelSchema, annotator: Annotator) -> Result<Vec<Annotation>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let (id_col, tasks) = task_columns(&headers)?;
    for (t, _, _) in &tasks {
        if schema.task(t).is_none() {
            return Err(Error::invalid(format!("{}: column `{t}` is not a task in the schema", path.display())));
        }
    }
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id = rec.get(id_col).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(Error::invalid(format!("{}: row {} has no item_id", path.display(), row + 2)));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::invalid(format!("{}: item {id} appears twice", path.display())));
        }
        let mut labels = BTreeMap::new();
        let mut rationale = None;
        for (t, col, rcol) in &tasks {
            let v = rec.get(*col).unwrap_or("").trim();
            if !v.is_empty() {
                labels.insert(t.clone(), v.to_string());
            }
            if rationale.is_none() {
                if let Some(r) = rcol.and_then(|c| rec.get(c)).filter(|r| !r.trim().is_empty()) {
                    rationale = Some(r.to_string());
                }
            }
        }
        let ann = Annotation::new(schema, id, annotator.clone(), labels, rationale)
            .map_err(|e| Error::invalid(format!("{} row {}: {e}", path.display(), row + 2)))?;
        out.push(ann);
    }
    Ok(out)
}

pub fn export_annotations_csv(annotations: &[Annotation], schema: &LabelSchema, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["item_id".to_string()];
    for t in schema.tasks() {
        header.push(t.name.clone());
        header.push(format!("{}{RATIONALE_SUFFIX}", t.name));
    }
    w.write_record(&header)?;
    let mut sorted: Vec<&Annotation> = annotations.iter().collect();
    sorted.sort_by(|a, b| a.item_id().cmp(b.item_id()));
    for a in sorted {
        let mut row = vec![a.item_id().to_string()];
        for t in schema.tasks() {
            row.push(a.label(&t.name).unwrap_or("").to_string());
            row.push(a.rationale().unwrap_or("").to_string());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("flush annotations", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_inference() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        std::fs::write(&p, "item_id,kind,kind_rationale\n1,x,\"looks, like x\"\n2,y,\n3,,\n").unwrap();
        let schema = infer_schema(&[&p]).unwrap();
        assert_eq!(schema.tasks()[0].categories, vec!["x", "y"]);
        let anns = import_annotations_csv(&p, &schema, Annotator::Human("h".into())).unwrap();
        assert_eq!(anns.len(), 3);
        assert_eq!(anns[0].rationale(), Some("looks, like x"));
        assert_eq!(anns[2].label("kind"), None);

        let out = dir.path().join("out.csv");
        export_annotations_csv(&anns, &schema, &out).unwrap();
        let again = import_annotations_csv(&out, &schema, Annotator::Human("h".into())).unwrap();
        assert_eq!(
            again.iter().map(|a| a.labels().clone()).collect::<Vec<_>>(),
            anns.iter().map(|a| a.labels().clone()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn illegal_category_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        std::fs::write(&p, "item_id,kind\n1,z\n").unwrap();
        let schema = LabelSchema::single(Task::new("kind", &["x", "y"])).unwrap();
        let err = import_annotations_csv(&p, &schema, Annotator::Human("h".into())).unwrap_err();
        assert!(err.to_string().contains("`z`"));
    }
}
