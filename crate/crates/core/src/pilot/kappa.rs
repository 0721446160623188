use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Annotation, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgreementStatus {
    Defined,
    /// Expected agreement is 1 (both annotators constant and equal); kappa is undefined.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementResult {
    pub task: String,
    pub categories: Vec<String>,
    pub n_items: u64,
    /// Rows: annotator A, columns: annotator B, both in `categories` order.
    pub contingency: Vec<Vec<u64>>,
    pub p_o: f64,
    pub p_e: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    pub status: AgreementStatus,
}

/// Agreement statistics over two parallel label sequences.
///
/// `p_o = trace / n`, `p_e = Σ row_c · col_c / n²`, `kappa = (p_o − p_e) / (1 − p_e)`.
/// Marginal products are summed in integers so the only rounding happens in the
/// final divisions.
pub fn kappa_from_labels(task: &str, categories: &[String], a: &[&str], b: &[&str]) -> Result<AgreementResult> {
    if a.len() != b.len() {
        return Err(Error::invalid("label sequences differ in length"));
    }
    if a.is_empty() {
        return Err(Error::invalid(format!("no annotated items for task `{task}`")));
    }
    let k = categories.len();
    let index: BTreeMap<&str, usize> = categories
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let mut table = vec![vec![0u64; k]; k];
    for (la, lb) in a.iter().zip(b) {
        let i = *index
            .get(la)
            .ok_or_else(|| Error::invalid(format!("category `{la}` not in task `{task}`")))?;
        let j = *index
            .get(lb)
            .ok_or_else(|| Error::invalid(format!("category `{lb}` not in task `{task}`")))?;
        table[i][j] += 1;
    }
    let n = a.len() as u64;
    let diag: u64 = (0..k).map(|i| table[i][i]).sum();
    let rows: Vec<u64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<u64> = (0..k).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let marg: u128 = rows
        .iter()
        .zip(&cols)
        .map(|(&r, &c)| u128::from(r) * u128::from(c))
        .sum();
    let nn = u128::from(n) * u128::from(n);

    let p_o = diag as f64 / n as f64;
    let p_e = marg as f64 / nn as f64;
    let (kappa, status) = if marg == nn {
        (None, AgreementStatus::Degenerate)
    } else {
        let kappa = ((p_o - p_e) / (1.0 - p_e)).clamp(-1.0, 1.0);
        (Some(kappa), AgreementStatus::Defined)
    };
    Ok(AgreementResult {
        task: task.to_string(),
        categories: categories.to_vec(),
        n_items: n,
        contingency: table,
        p_o,
        p_e,
        kappa,
        status,
    })
}

fn labels_by_item<'a>(anns: &'a [Annotation], task: &str, side: &str) -> Result<BTreeMap<&'a str, &'a str>> {
    let mut out = BTreeMap::new();
    for a in anns {
        let label = a.label(task).ok_or_else(|| {
            Error::invalid(format!(
                "annotator {side} has no `{task}` label for item {}",
                a.item_id()
            ))
        })?;
        if out.insert(a.item_id(), label).is_some() {
            return Err(Error::invalid(format!(
                "annotator {side} labels item {} more than once",
                a.item_id()
            )));
        }
    }
    Ok(out)
}

/// Cohen's kappa between two annotators on one task.
///
/// Both sides must label exactly the same items; otherwise the error lists the
/// symmetric difference.
pub fn cohens_kappa(a: &[Annotation], b: &[Annotation], task: &Task) -> Result<AgreementResult> {
    let la = labels_by_item(a, &task.name, "A")?;
    let lb = labels_by_item(b, &task.name, "B")?;
    let ka: BTreeSet<&str> = la.keys().copied().collect();
    let kb: BTreeSet<&str> = lb.keys().copied().collect();
    if ka != kb {
        return Err(Error::MismatchedItems {
            only_a: ka.difference(&kb).map(|s| s.to_string()).collect(),
            only_b: kb.difference(&ka).map(|s| s.to_string()).collect(),
        });
    }
    let seq_a: Vec<&str> = la.values().copied().collect();
    let seq_b: Vec<&str> = ka.iter().map(|id| lb[id]).collect();
    kappa_from_labels(&task.name, &task.categories, &seq_a, &seq_b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Annotator, LabelSchema};

    fn cats(c: &[&str]) -> Vec<String> {
        c.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn worked_example() {
        // contingency [[1,1],[1,1]]: p_o = 2/4, p_e = (2*2 + 2*2)/16
        let r = kappa_from_labels("t", &cats(&["x", "y"]), &["x", "x", "y", "y"], &["x", "y", "x", "y"]).unwrap();
        assert_eq!(r.contingency, vec![vec![1, 1], vec![1, 1]]);
        assert_eq!(r.p_o, 0.5);
        assert_eq!(r.p_e, 0.5);
        assert_eq!(r.kappa, Some(0.0));
        assert_eq!(r.status, AgreementStatus::Defined);
    }

    #[test]
    fn perfect_agreement() {
        let a = ["x", "y", "z", "x"];
        let r = kappa_from_labels("t", &cats(&["x", "y", "z"]), &a, &a).unwrap();
        assert_eq!(r.kappa, Some(1.0));
    }

    #[test]
    fn degenerate_when_both_constant() {
        let r = kappa_from_labels("t", &cats(&["x", "y"]), &["x"; 5], &["x"; 5]).unwrap();
        assert_eq!(r.status, AgreementStatus::Degenerate);
        assert_eq!(r.p_o, 1.0);
        assert_eq!(r.kappa, None);
    }

    #[test]
    fn constant_but_different_is_defined() {
        // p_o = 0, p_e = 0 -> kappa 0
        let r = kappa_from_labels("t", &cats(&["x", "y"]), &["x"; 3], &["y"; 3]).unwrap();
        assert_eq!(r.status, AgreementStatus::Defined);
        assert_eq!(r.kappa, Some(0.0));
    }

    #[test]
    fn total_disagreement_is_minus_one() {
        let r = kappa_from_labels("t", &cats(&["x", "y"]), &["x", "y"], &["y", "x"]).unwrap();
        assert_eq!(r.kappa, Some(-1.0));
    }

    #[test]
    fn mismatched_items_listed() {
        let schema = LabelSchema::single(Task::new("t", &["x", "y"])).unwrap();
        let ann = |id: &str, who: &str| {
            let mut l = BTreeMap::new();
            l.insert("t".to_string(), "x".to_string());
            Annotation::new(&schema, id, Annotator::Human(who.into()), l, None).unwrap()
        };
        let a = vec![ann("1", "a"), ann("2", "a")];
        let b = vec![ann("2", "b"), ann("3", "b")];
        match cohens_kappa(&a, &b, &schema.tasks()[0]).unwrap_err() {
            Error::MismatchedItems { only_a, only_b } => {
                assert_eq!(only_a, vec!["1"]);
                assert_eq!(only_b, vec!["3"]);
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn empty_is_error() {
        assert!(kappa_from_labels("t", &cats(&["x"]), &[], &[]).is_err());
    }
}
