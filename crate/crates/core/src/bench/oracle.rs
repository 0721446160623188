use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::digest::digest_json;
use crate::error::{Error, Result};
use crate::model::LabelSchema;

/// Expert gold labels for one item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleEntry {
    pub item_id: String,
    pub labels: BTreeMap<String, String>,
    pub annotator: String,
    /// Pointer to the literature or example backing the label.
    pub basis: String,
}

impl OracleEntry {
    pub fn validate(&self, schema: &LabelSchema) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::invalid(format!("oracle entry {} has no labels", self.item_id)));
        }
        for (t, c) in &self.labels {
            schema
                .check_label(t, c)
                .map_err(|e| Error::invalid(format!("oracle entry {}: {e}", self.item_id)))?;
        }
        Ok(())
    }
}

/// Order-independent digest of an oracle.
pub fn oracle_digest(entries: &[OracleEntry]) -> Result<String> {
    let mut sorted: Vec<&OracleEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    digest_json(&sorted)
}

/// Reads `item_id,task,gold_label,annotator,basis` rows, one per (item, task),
/// into one entry per item sorted by id.
pub fn load_oracle_csv(path: &Path, schema: &LabelSchema) -> Result<Vec<OracleEntry>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::ColumnNotFound(name.to_string()))
    };
    let (ci, ct, cg, ca, cb) = (col("item_id")?, col("task")?, col("gold_label")?, col("annotator")?, col("basis")?);
    let mut by_item: BTreeMap<String, OracleEntry> = BTreeMap::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let get = |c: usize| rec.get(c).unwrap_or("").trim().to_string();
        let id = get(ci);
        if id.is_empty() {
            return Err(Error::invalid(format!("{}: row {} has no item_id", path.display(), n + 2)));
        }
        let entry = by_item.entry(id.clone()).or_insert_with(|| OracleEntry {
            item_id: id.clone(),
            labels: BTreeMap::new(),
            annotator: get(ca),
            basis: get(cb),
        });
        let task = get(ct);
        if entry.labels.insert(task.clone(), get(cg)).is_some() {
            return Err(Error::invalid(format!(
                "{}: item {id} has two gold labels for task `{task}`",
                path.display()
            )));
        }
    }
    let entries: Vec<OracleEntry> = by_item.into_values().collect();
    for e in &entries {
        e.validate(schema)?;
    }
    Ok(entries)
}

pub fn write_oracle_csv(entries: &[OracleEntry], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["item_id", "task", "gold_label", "annotator", "basis"])?;
    let mut sorted: Vec<&OracleEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    for e in sorted {
        for (t, g) in &e.labels {
            w.write_record([&e.item_id, t, g, &e.annotator, &e.basis])?;
        }
    }
    w.flush().map_err(|e| Error::io("flush oracle", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Task;

    #[test]
    fn csv_roundtrip_groups_by_item() {
        let schema = LabelSchema::new(vec![Task::new("a", &["x", "y"]), Task::new("b", &["p", "q"])]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("oracle.csv");
        std::fs::write(
            &p,
            "item_id,task,gold_label,annotator,basis\n2,a,y,e1,survey\n1,a,x,e1,catalog\n1,b,q,e1,catalog\n",
        )
        .unwrap();
        let o = load_oracle_csv(&p, &schema).unwrap();
        assert_eq!(o.len(), 2);
        assert_eq!(o[0].item_id, "1");
        assert_eq!(o[0].labels.len(), 2);
        let out = dir.path().join("o2.csv");
        write_oracle_csv(&o, &out).unwrap();
        assert_eq!(load_oracle_csv(&out, &schema).unwrap(), o);

        let mut rev = o.clone();
        rev.reverse();
        assert_eq!(oracle_digest(&rev).unwrap(), oracle_digest(&o).unwrap());
    }

    #[test]
    fn illegal_gold_label_rejected() {
        let schema = LabelSchema::single(Task::new("a", &["x"])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("oracle.csv");
        std::fs::write(&p, "item_id,task,gold_label,annotator,basis\n1,a,z,e,b\n").unwrap();
        assert!(load_oracle_csv(&p, &schema).is_err());
    }
}
