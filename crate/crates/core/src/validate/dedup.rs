use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{FindingKind, Severity, ValidationFinding};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextOutput {
    pub item_id: String,
    pub text: String,
}

impl TextOutput {
    pub fn new(item_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            item_id: item_id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DedupConfig {
    pub shingle_w: usize,
    pub threshold: f64,
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self {
            shingle_w: 3,
            threshold: 0.8,
        }
    }
}

impl DedupConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shingle_w == 0 {
            return Err(Error::invalid("shingle width must be at least 1"));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::invalid(format!(
                "duplicate threshold {} must be in (0, 1]",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Lowercase, punctuation removed, whitespace runs collapsed to one space.
pub fn normalize_text(text: &str) -> String {
    let stripped: String = text
        .chars()
        .filter(|c| !(c.is_ascii_punctuation() || (!c.is_ascii() && !c.is_alphanumeric() && !c.is_whitespace())))
        .flat_map(char::to_lowercase)
        .collect();
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Word-level `w`-shingles of the normalized text. A non-empty text shorter
/// than `w` words yields a single shingle of all its words.
pub fn shingles(text: &str, w: usize) -> BTreeSet<String> {
    let norm = normalize_text(text);
    let words: Vec<&str> = norm.split(' ').filter(|s| !s.is_empty()).collect();
    if words.is_empty() {
        return BTreeSet::new();
    }
    if words.len() <= w {
        return BTreeSet::from([words.join(" ")]);
    }
    words.windows(w).map(|win| win.join(" ")).collect()
}

/// |A ∩ B| / |A ∪ B|, taken as 0 when both sets are empty.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicatePair {
    pub a: String,
    pub b: String,
    pub similarity: f64,
    pub exact: bool,
}

fn sorted_intersection(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// All pairs that are exact duplicates (equal text digests) or whose shingle
/// Jaccard reaches the threshold. Each unordered pair appears once, `a < b` by
/// input position, sorted by (a, b).
pub fn detect_duplicate_pairs(outputs: &[TextOutput], config: &DedupConfig) -> Result<Vec<DuplicatePair>> {
    config.validate()?;
    let digests: Vec<String> = outputs.iter().map(|o| sha256_hex(&o.text)).collect();
    let mut vocab: BTreeMap<String, u32> = BTreeMap::new();
    let sets: Vec<Vec<u32>> = outputs
        .iter()
        .map(|o| {
            let mut ids: Vec<u32> = shingles(&o.text, config.shingle_w)
                .into_iter()
                .map(|s| {
                    let next = vocab.len() as u32;
                    *vocab.entry(s).or_insert(next)
                })
                .collect();
            ids.sort_unstable();
            ids
        })
        .collect();

    let rows: Vec<usize> = (0..outputs.len()).collect();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let per_row = crate::util::parallel_map(&rows, workers, |&i| {
        let mut found = Vec::new();
        for j in i + 1..outputs.len() {
            let exact = digests[i] == digests[j];
            let inter = sorted_intersection(&sets[i], &sets[j]);
            let union = sets[i].len() + sets[j].len() - inter;
            let sim = if exact {
                1.0
            } else if union == 0 {
                0.0
            } else {
                inter as f64 / union as f64
            };
            if exact || sim >= config.threshold {
                found.push(DuplicatePair {
                    a: outputs[i].item_id.clone(),
                    b: outputs[j].item_id.clone(),
                    similarity: sim,
                    exact,
                });
            }
        }
        found
    });
    Ok(per_row.into_iter().flatten().collect())
}

/// Exact duplicates are errors, near duplicates warnings; both name the pair.
pub fn detect_duplicates(outputs: &[TextOutput], config: &DedupConfig) -> Result<Vec<ValidationFinding>> {
    Ok(detect_duplicate_pairs(outputs, config)?
        .into_iter()
        .map(|p| {
            let (sev, code, what) = if p.exact {
                (Severity::Error, "exact_duplicate", "identical to")
            } else {
                (Severity::Warning, "near_duplicate", "near-duplicate of")
            };
            ValidationFinding::new(
                p.a.clone(),
                FindingKind::Duplicate,
                sev,
                code,
                format!("{what} {} (jaccard {:.4})", p.b, p.similarity),
                vec![p.a, p.b],
            )
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn hand_enumerated_jaccard() {
        // union {a,b,c,d} = 4, intersection {b,c} = 2
        assert_eq!(jaccard(&set(&["a", "b", "c"]), &set(&["b", "c", "d"])), 0.5);
        assert_eq!(jaccard(&set(&[]), &set(&[])), 0.0);
    }

    #[test]
    fn threshold_boundary_on_word_shingles() {
        // w = 1: {a,b,c} vs {b,c,d}
        let outs = vec![TextOutput::new("x", "a b c"), TextOutput::new("y", "b c d")];
        let at = DedupConfig { shingle_w: 1, threshold: 0.5 };
        assert_eq!(detect_duplicate_pairs(&outs, &at).unwrap().len(), 1);
        let above = DedupConfig { shingle_w: 1, threshold: 0.51 };
        assert!(detect_duplicate_pairs(&outs, &above).unwrap().is_empty());
    }

    #[test]
    fn identical_texts_are_exact() {
        let outs = vec![TextOutput::new("x", "Same text here."), TextOutput::new("y", "Same text here.")];
        let f = detect_duplicates(&outs, &DedupConfig::default()).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].code, "exact_duplicate");
        assert!(f[0].is_error());
        assert!(f[0].detail.contains("1.0000"));
    }

    #[test]
    fn disjoint_texts_not_flagged() {
        let outs = vec![TextOutput::new("x", "one two three four"), TextOutput::new("y", "five six seven eight")];
        assert!(detect_duplicates(&outs, &DedupConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_text("  Fix, the   BUG!\n now "), "fix the bug now");
        assert_eq!(shingles("Fix the bug now", 3), set(&["fix the bug", "the bug now"]));
        assert_eq!(shingles("short", 3), set(&["short"]));
    }

    #[test]
    fn config_checked() {
        assert!(detect_duplicates(&[], &DedupConfig { shingle_w: 0, threshold: 0.8 }).is_err());
        assert!(detect_duplicates(&[], &DedupConfig { shingle_w: 3, threshold: 0.0 }).is_err());
    }
}
