//! Building the initial dataset from working trees, commit logs or CSV exports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use globset::{Glob, GlobSet, GlobSetBuilder};
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::error::{Error, Result};
use crate::model::{DataItem, SourceLocator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IngestMode {
    Files,
    Commits,
    Tabular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSpec {
    pub mode: IngestMode,
    /// Repository root (files, commits) or CSV file (tabular).
    pub root: PathBuf,
    #[serde(default)]
    pub include_globs: Vec<String>,
    #[serde(default)]
    pub exclude_globs: Vec<String>,
    /// Anything `git rev-list` accepts, e.g. `v1.0..HEAD`. Defaults to `HEAD`.
    #[serde(default)]
    pub commit_range: Option<String>,
    /// Item field name -> CSV column name.
    #[serde(default)]
    pub field_mapping: BTreeMap<String, String>,
    /// Repository label stored in each item's locator; defaults to the root's file name.
    #[serde(default)]
    pub repo_label: Option<String>,
    /// Store full patch text in a `patch` field (commits mode only).
    #[serde(default)]
    pub include_patch: bool,
}

impl IngestSpec {
    pub fn files(root: impl Into<PathBuf>, include: &[&str]) -> Self {
        Self::with_mode(IngestMode::Files, root).include(include)
    }

    pub fn commits(root: impl Into<PathBuf>) -> Self {
        Self::with_mode(IngestMode::Commits, root)
    }

    pub fn tabular(path: impl Into<PathBuf>, mapping: &[(&str, &str)]) -> Self {
        let mut spec = Self::with_mode(IngestMode::Tabular, path);
        spec.field_mapping = mapping
            .iter()
            .map(|(f, c)| (f.to_string(), c.to_string()))
            .collect();
        spec
    }

    fn with_mode(mode: IngestMode, root: impl Into<PathBuf>) -> Self {
        Self {
            mode,
            root: root.into(),
            include_globs: Vec::new(),
            exclude_globs: Vec::new(),
            commit_range: None,
            field_mapping: BTreeMap::new(),
            repo_label: None,
            include_patch: false,
        }
    }

    pub fn include(mut self, globs: &[&str]) -> Self {
        self.include_globs.extend(globs.iter().map(|g| g.to_string()));
        self
    }

    pub fn exclude(mut self, globs: &[&str]) -> Self {
        self.exclude_globs.extend(globs.iter().map(|g| g.to_string()));
        self
    }

    pub fn range(mut self, range: impl Into<String>) -> Self {
        self.commit_range = Some(range.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            IngestMode::Files if self.include_globs.is_empty() => {
                Err(Error::Config("files mode needs at least one include glob".into()))
            }
            IngestMode::Tabular if self.field_mapping.is_empty() => {
                Err(Error::Config("tabular mode needs a non-empty field mapping".into()))
            }
            _ => Ok(()),
        }
    }

    fn repo_label(&self) -> String {
        if let Some(l) = &self.repo_label {
            return l.clone();
        }
        let name = match self.mode {
            IngestMode::Tabular => self.root.file_stem().map(|n| n.to_string_lossy().into_owned()),
            _ => fs::canonicalize(&self.root)
                .ok()
                .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned())),
        };
        name.filter(|n| !n.is_empty()).unwrap_or_else(|| "repo".to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipEntry {
    pub locator: String,
    pub reason: String,
}

/// What an ingest saw: `items + skipped == candidates`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub candidates: usize,
    pub items: usize,
    pub skipped: Vec<SkipEntry>,
}

impl IngestReport {
    /// Human-readable log followed by a machine-readable JSON section.
    pub fn to_text(&self) -> Result<String> {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "candidates: {}\nitems: {}\nskipped: {}",
            self.candidates,
            self.items,
            self.skipped.len()
        );
        for s in &self.skipped {
            let _ = writeln!(out, "  skip {}: {}", s.locator, s.reason);
        }
        out.push_str("--- machine-readable ---\n");
        out.push_str(&serde_json::to_string_pretty(self)?);
        out.push('\n');
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub items: Vec<DataItem>,
    pub report: IngestReport,
}

pub fn ingest(spec: &IngestSpec) -> Result<IngestOutcome> {
    match spec.mode {
        IngestMode::Files => scan_repository(spec),
        IngestMode::Commits => extract_commits(spec),
        IngestMode::Tabular => import_tabular(spec),
    }
}

fn globset(globs: &[String]) -> Result<GlobSet> {
    let mut b = GlobSetBuilder::new();
    for g in globs {
        b.add(Glob::new(g).map_err(|e| Error::Config(format!("bad glob `{g}`: {e}")))?);
    }
    b.build().map_err(|e| Error::Config(e.to_string()))
}

/// One item per matched file with fields `path` and `content`, ordered by path.
pub fn scan_repository(spec: &IngestSpec) -> Result<IngestOutcome> {
    spec.validate()?;
    if !spec.root.is_dir() {
        return Err(Error::NotFound(spec.root.clone()));
    }
    let include = globset(&spec.include_globs)?;
    let exclude = globset(&spec.exclude_globs)?;
    let repo = spec.repo_label();

    let mut candidates = Vec::new();
    let walker = WalkDir::new(&spec.root)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| e.depth() == 0 || e.file_name() != ".git");
    for entry in walker {
        let entry = entry.map_err(|e| Error::Io {
            context: format!("walk {}", spec.root.display()),
            source: e.into(),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(&spec.root)
            .unwrap_or(entry.path())
            .to_string_lossy()
            .replace('\\', "/");
        if include.is_match(&rel) && !exclude.is_match(&rel) {
            candidates.push((rel, entry.into_path()));
        }
    }
    candidates.sort();

    let mut report = IngestReport {
        candidates: candidates.len(),
        ..Default::default()
    };
    let mut items = Vec::with_capacity(candidates.len());
    for (rel, path) in candidates {
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) => {
                report.skipped.push(SkipEntry {
                    locator: rel,
                    reason: format!("unreadable: {e}"),
                });
                continue;
            }
        };
        let content = match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(e) => {
                report.skipped.push(SkipEntry {
                    locator: rel,
                    reason: format!("not valid UTF-8: {e}"),
                });
                continue;
            }
        };
        let mut fields = BTreeMap::new();
        fields.insert("path".to_string(), rel.clone());
        fields.insert("content".to_string(), content);
        let source = SourceLocator::repo(&repo).with_path(&rel);
        items.push(DataItem::new(source, fields, BTreeMap::new())?);
    }
    report.items = items.len();
    Ok(IngestOutcome { items, report })
}

fn git(root: &Path, args: &[&str]) -> Result<String> {
    let out = Command::new("git")
        .arg("-C")
        .arg(root)
        .args(args)
        .output()
        .map_err(|e| Error::Git(format!("cannot run git: {e}")))?;
    if !out.status.success() {
        return Err(Error::Git(format!(
            "git {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    String::from_utf8(out.stdout).map_err(|e| Error::Git(format!("non-UTF-8 git output: {e}")))
}

/// One item per commit in range, oldest first.
///
/// Fields: `title`, `body`, `edited_files` (newline separated), `insertions`,
/// `deletions`, `commit_hash`. Merge commits get `metadata.merge = "true"` and
/// their file list from the combined diff.
pub fn extract_commits(spec: &IngestSpec) -> Result<IngestOutcome> {
    spec.validate()?;
    if !spec.root.is_dir() {
        return Err(Error::NotFound(spec.root.clone()));
    }
    let inside = git(&spec.root, &["rev-parse", "--is-inside-work-tree"])
        .map_err(|_| Error::Git(format!("{} is not a git repository", spec.root.display())))?;
    if inside.trim() != "true" {
        return Err(Error::Git(format!("{} is not a git work tree", spec.root.display())));
    }
    let range = spec.commit_range.as_deref().unwrap_or("HEAD");
    let revs = git(&spec.root, &["rev-list", "--reverse", "--topo-order", range])?;
    let repo = spec.repo_label();

    let mut items = Vec::new();
    let mut report = IngestReport::default();
    for sha in revs.lines().map(str::trim).filter(|l| !l.is_empty()) {
        report.candidates += 1;
        let header = git(
            &spec.root,
            &["show", "-s", "--format=%H%x00%P%x00%s%x00%b", sha],
        )?;
        let mut parts = header.splitn(4, '\0');
        let hash = parts.next().unwrap_or_default().trim().to_string();
        let parents: Vec<&str> = parts.next().unwrap_or_default().split_whitespace().collect();
        let title = parts.next().unwrap_or_default().to_string();
        let body = parts.next().unwrap_or_default().trim_end().to_string();

        let numstat = git(
            &spec.root,
            &["diff-tree", "-r", "-c", "--root", "--numstat", "--no-commit-id", sha],
        )?;
        let (files, insertions, deletions) = parse_numstat(&numstat);

        let mut fields = BTreeMap::new();
        fields.insert("title".into(), title);
        fields.insert("body".into(), body);
        fields.insert("edited_files".into(), files.join("\n"));
        fields.insert("insertions".into(), insertions.to_string());
        fields.insert("deletions".into(), deletions.to_string());
        fields.insert("commit_hash".into(), hash.clone());
        if spec.include_patch {
            let patch = git(&spec.root, &["show", "--format=", "-p", "-c", sha])?;
            fields.insert("patch".into(), patch);
        }
        let mut metadata = BTreeMap::new();
        metadata.insert("parents".into(), parents.len().to_string());
        if parents.len() > 1 {
            metadata.insert("merge".into(), "true".into());
        }
        let source = SourceLocator::repo(&repo).with_commit(&hash);
        items.push(DataItem::new(source, fields, metadata)?);
    }
    report.items = items.len();
    Ok(IngestOutcome { items, report })
}

fn parse_numstat(out: &str) -> (Vec<String>, u64, u64) {
    let mut files = Vec::new();
    let (mut ins, mut del) = (0u64, 0u64);
    for line in out.lines() {
        let mut cols = line.splitn(3, '\t');
        let (Some(a), Some(d), Some(path)) = (cols.next(), cols.next(), cols.next()) else {
            continue;
        };
        // binary files report "-"
        ins += a.parse::<u64>().unwrap_or(0);
        del += d.parse::<u64>().unwrap_or(0);
        files.push(path.to_string());
    }
    (files, ins, del)
}

/// One item per CSV row, mapping columns onto item fields.
///
/// Unmapped columns become item metadata. Rows with the wrong number of cells
/// are skipped and reported.
pub fn import_tabular(spec: &IngestSpec) -> Result<IngestOutcome> {
    spec.validate()?;
    if !spec.root.is_file() {
        return Err(Error::NotFound(spec.root.clone()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(&spec.root)?;
    let headers = rdr.headers()?.clone();
    let col_index = |name: &str| headers.iter().position(|h| h == name);

    let mut mapping = Vec::new();
    for (field, column) in &spec.field_mapping {
        let idx = col_index(column).ok_or_else(|| Error::ColumnNotFound(column.clone()))?;
        mapping.push((field.clone(), idx));
    }
    let mapped: Vec<usize> = mapping.iter().map(|(_, i)| *i).collect();
    let repo = spec.repo_label();
    let file_name = spec
        .root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();

    let mut items = Vec::new();
    let mut report = IngestReport::default();
    for (row_no, record) in rdr.records().enumerate() {
        report.candidates += 1;
        let locator = format!("{file_name}#{}", row_no + 1);
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                report.skipped.push(SkipEntry {
                    locator,
                    reason: format!("unparseable row: {e}"),
                });
                continue;
            }
        };
        if record.len() != headers.len() {
            report.skipped.push(SkipEntry {
                locator,
                reason: format!("ragged row: {} cells, header has {}", record.len(), headers.len()),
            });
            continue;
        }
        let fields: BTreeMap<String, String> = mapping
            .iter()
            .map(|(f, i)| (f.clone(), record[*i].to_string()))
            .collect();
        let metadata: BTreeMap<String, String> = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| !mapped.contains(i))
            .map(|(i, h)| (h.to_string(), record[i].to_string()))
            .collect();
        let source = SourceLocator::repo(&repo).with_path(locator);
        items.push(DataItem::new(source, fields, metadata)?);
    }
    report.items = items.len();
    Ok(IngestOutcome { items, report })
}
