use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::DataItem;

/// Splits `n` across strata proportionally to `sizes`, rounding by largest remainder.
///
/// Ties on the remainder go to the larger stratum, then to the earlier one.
pub fn allocate_largest_remainder(sizes: &[usize], n: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return vec![0; sizes.len()];
    }
    let mut alloc: Vec<usize> = sizes.iter().map(|s| n * s / total).collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = n * sizes[a] % total;
        let rb = n * sizes[b] % total;
        rb.cmp(&ra).then(sizes[b].cmp(&sizes[a])).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        alloc[i] += 1;
    }
    alloc
}

/// Seeded sample of item ids, returned sorted.
///
/// Without `stratify_by` this is uniform without replacement. With it, items are
/// grouped by that metadata key (missing values form their own stratum) and `n`
/// is allocated proportionally.
pub fn draw_sample(
    dataset: &[DataItem],
    n: usize,
    seed: u64,
    stratify_by: Option<&str>,
) -> Result<Vec<String>> {
    if n == 0 || n > dataset.len() {
        return Err(Error::invalid(format!(
            "sample size {n} must be between 1 and the dataset size {}",
            dataset.len()
        )));
    }
    let mut ids: Vec<&DataItem> = dataset.iter().collect();
    ids.sort_by(|a, b| a.id().cmp(b.id()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut out: Vec<String> = match stratify_by {
        None => index::sample(&mut rng, ids.len(), n)
            .into_iter()
            .map(|i| ids[i].id().to_string())
            .collect(),
        Some(key) => {
            let mut strata: BTreeMap<&str, Vec<&DataItem>> = BTreeMap::new();
            for item in &ids {
                let v = item.metadata().get(key).map(String::as_str).unwrap_or("");
                strata.entry(v).or_default().push(item);
            }
            let sizes: Vec<usize> = strata.values().map(Vec::len).collect();
            let alloc = allocate_largest_remainder(&sizes, n);
            let mut picked = Vec::with_capacity(n);
            for (members, take) in strata.values().zip(alloc) {
                for i in index::sample(&mut rng, members.len(), take) {
                    picked.push(members[i].id().to_string());
                }
            }
            picked
        }
    };
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SourceLocator;

    fn dataset(n: usize, strata: &[(usize, &str)]) -> Vec<DataItem> {
        let mut labels = Vec::new();
        for (count, label) in strata {
            labels.resize(labels.len() + *count, *label);
        }
        (0..n)
            .map(|i| {
                let mut f = BTreeMap::new();
                f.insert("title".to_string(), format!("commit {i}"));
                let item = DataItem::new(SourceLocator::repo("p"), f, BTreeMap::new()).unwrap();
                match labels.get(i) {
                    Some(l) => item.with_metadata("project", *l),
                    None => item,
                }
            })
            .collect()
    }

    #[test]
    fn whole_dataset() {
        let d = dataset(12, &[]);
        let s = draw_sample(&d, 12, 1, None).unwrap();
        let mut all: Vec<String> = d.iter().map(|i| i.id().to_string()).collect();
        all.sort();
        assert_eq!(s, all);
    }

    #[test]
    fn seeded_and_seed_sensitive() {
        let d = dataset(50, &[]);
        assert_eq!(draw_sample(&d, 10, 42, None).unwrap(), draw_sample(&d, 10, 42, None).unwrap());
        assert_ne!(draw_sample(&d, 10, 42, None).unwrap(), draw_sample(&d, 10, 43, None).unwrap());
    }

    #[test]
    fn independent_of_input_order() {
        let mut d = dataset(30, &[]);
        let a = draw_sample(&d, 7, 3, None).unwrap();
        d.reverse();
        assert_eq!(a, draw_sample(&d, 7, 3, None).unwrap());
    }

    #[test]
    fn bad_sizes() {
        let d = dataset(5, &[]);
        assert!(draw_sample(&d, 6, 0, None).is_err());
        assert!(draw_sample(&d, 0, 0, None).is_err());
    }

    #[test]
    fn stratified_60_40() {
        // 10 * 60/100 = 6 and 10 * 40/100 = 4, no remainders
        let d = dataset(100, &[(60, "a"), (40, "b")]);
        let s = draw_sample(&d, 10, 9, Some("project")).unwrap();
        let count = |label: &str| {
            s.iter()
                .filter(|id| {
                    d.iter()
                        .find(|i| i.id() == id.as_str())
                        .unwrap()
                        .metadata()["project"]
                        == label
                })
                .count()
        };
        assert_eq!((count("a"), count("b")), (6, 4));
    }

    #[test]
    fn largest_remainder_arithmetic() {
        // quotas 7*5/10 = 3.5, 7*3/10 = 2.1, 7*2/10 = 1.4 -> floors 3,2,1, one seat left to .5
        assert_eq!(allocate_largest_remainder(&[5, 3, 2], 7), vec![4, 2, 1]);
        // quotas 1/3 each: tie on remainder goes to the earlier stratum
        assert_eq!(allocate_largest_remainder(&[1, 1, 1], 1), vec![1, 0, 0]);
        assert_eq!(allocate_largest_remainder(&[60, 40], 10), vec![6, 4]);
    }
}
