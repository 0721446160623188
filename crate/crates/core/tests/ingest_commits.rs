mod common;

use primes_core::ingest::{ingest, IngestSpec};

#[test]
fn commit_history_becomes_one_item_per_commit() {
    let dir = tempfile::tempdir().unwrap();
    let repo = common::commit_repo(dir.path());
    let out = ingest(&IngestSpec::commits(&repo)).unwrap();

    assert_eq!(out.items.len(), 20);
    assert_eq!(out.report.candidates, 20);
    assert!(out.report.skipped.is_empty());

    let merges: Vec<_> = out.items.iter().filter(|i| i.metadata().get("merge").is_some()).collect();
    assert_eq!(merges.len(), 1);
    assert_eq!(merges[0].field("title"), Some("merge gpu support"));
    assert_eq!(merges[0].metadata().get("parents").map(String::as_str), Some("2"));

    let first = &out.items[0];
    assert_eq!(first.field("title"), Some("initial training loop"));
    assert_eq!(first.field("edited_files"), Some("train.py"));
    assert_eq!(first.field("insertions"), Some("1"));
    let hash = first.field("commit_hash").unwrap();
    assert_eq!(hash.len(), 40);
    assert_eq!(first.source().commit.as_deref(), Some(hash));

    for (title, _) in common::COMMITS {
        assert!(out.items.iter().any(|i| i.field("title") == Some(title)), "{title}");
    }
}

#[test]
fn fixture_and_ids_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ids = |d: &std::path::Path| -> Vec<String> {
        let repo = common::commit_repo(d);
        ingest(&IngestSpec::commits(&repo)).unwrap().items.iter().map(|i| i.id().to_string()).collect()
    };
    assert_eq!(ids(a.path()), ids(b.path()));
}

#[test]
fn range_limits_the_history() {
    let dir = tempfile::tempdir().unwrap();
    let repo = common::commit_repo(dir.path());
    let out = ingest(&IngestSpec::commits(&repo).range("HEAD~3..HEAD")).unwrap();
    // first-parent walk back three steps, plus the side-branch commit reachable through the merge
    assert!(out.items.len() >= 3 && out.items.len() < 20, "{}", out.items.len());
}
