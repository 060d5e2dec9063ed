//! Loading of PROMISE-style labeled version snapshots.
//!
//! Each version is a CSV with one row per source file: an identifier column,
//! a bug column (binary label or raw bug count) and the full source text.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary defect status of a file in one version.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Benign,
    Defective,
}

impl Label {
    pub fn from_bit(bit: u8) -> Option<Label> {
        match bit {
            0 => Some(Label::Benign),
            1 => Some(Label::Defective),
            _ => None,
        }
    }

    /// Raw bug counts collapse to a binary label: any bug makes the file defective.
    pub fn from_bug_count(count: u64) -> Label {
        if count > 0 {
            Label::Defective
        } else {
            Label::Benign
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Label::Benign => 0,
            Label::Defective => 1,
        }
    }

    pub fn is_defective(self) -> bool {
        self == Label::Defective
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Benign => "Benign",
            Label::Defective => "Defective",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One source file in one project version.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VersionedFile {
    pub path: String,
    pub source: String,
    pub label: Label,
    pub version_id: String,
}

/// All files of one project version, indexed by path.
#[derive(Debug, Clone)]
pub struct VersionSet {
    pub dataset_name: String,
    pub version_id: String,
    files: Vec<VersionedFile>,
    by_path: HashMap<String, usize>,
}

impl VersionSet {
    /// Builds a set from already-parsed files, rejecting empty input and duplicate paths.
    pub fn new(
        dataset_name: impl Into<String>,
        version_id: impl Into<String>,
        files: Vec<VersionedFile>,
    ) -> Result<VersionSet> {
        let version_id = version_id.into();
        if files.is_empty() {
            return Err(Error::Data(format!("version {version_id} contains no files")));
        }
        let mut by_path = HashMap::with_capacity(files.len());
        let mut dupes: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, f) in files.iter().enumerate() {
            if f.path.is_empty() {
                return Err(Error::Data(format!("row {} has an empty file path", i + 1)));
            }
            if by_path.insert(f.path.clone(), i).is_some() {
                *dupes.entry(f.path.as_str()).or_insert(1) += 1;
            }
        }
        if !dupes.is_empty() {
            let list: Vec<String> = dupes.iter().map(|(p, n)| format!("{p} (x{n})")).collect();
            return Err(Error::Data(format!(
                "duplicate file paths in version {version_id}: {}",
                list.join(", ")
            )));
        }
        Ok(VersionSet {
            dataset_name: dataset_name.into(),
            version_id,
            files,
            by_path,
        })
    }

    pub fn files(&self) -> &[VersionedFile] {
        &self.files
    }

    pub fn get(&self, path: &str) -> Option<&VersionedFile> {
        self.by_path.get(path).map(|&i| &self.files[i])
    }

    pub fn index_of(&self, path: &str) -> Option<usize> {
        self.by_path.get(path).copied()
    }

    pub fn contains(&self, path: &str) -> bool {
        self.by_path.contains_key(path)
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn defective_count(&self) -> usize {
        self.files.iter().filter(|f| f.label.is_defective()).count()
    }

    /// Share of defective files in percent.
    pub fn defective_pct(&self) -> f64 {
        100.0 * self.defective_count() as f64 / self.files.len() as f64
    }
}

/// Column names used to read a version CSV.
///
/// `None` means "use the default name, falling back to the PROMISE capitalized
/// variant" (`name`/`File`, `bug`/`Bug`, `src`/`SRC`).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ColumnSpec {
    pub path: Option<String>,
    pub label: Option<String>,
    pub source: Option<String>,
}

const PATH_DEFAULTS: [&str; 2] = ["name", "File"];
const LABEL_DEFAULTS: [&str; 2] = ["bug", "Bug"];
const SOURCE_DEFAULTS: [&str; 2] = ["src", "SRC"];

fn resolve_column(headers: &[String], explicit: Option<&str>, defaults: [&str; 2]) -> Result<usize> {
    match explicit {
        Some(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("missing column `{name}`"))),
        None => defaults
            .iter()
            .find_map(|d| headers.iter().position(|h| h == d))
            .ok_or_else(|| {
                Error::Config(format!("missing column `{}` (also tried `{}`)", defaults[0], defaults[1]))
            }),
    }
}

fn parse_label(raw: &str, row: usize) -> Result<Label> {
    let t = raw.trim();
    if let Ok(n) = t.parse::<u64>() {
        return Ok(Label::from_bug_count(n));
    }
    match t.parse::<f64>() {
        Ok(x) if x.is_finite() && x >= 0.0 && x.fract() == 0.0 => Ok(Label::from_bug_count(x as u64)),
        _ => Err(Error::Data(format!("row {row}: unparseable label `{t}`"))),
    }
}

/// Reads one version CSV.
///
/// Field bytes are decoded as UTF-8 with lossy replacement; the source column
/// is otherwise kept exactly as stored.
pub fn load_version(
    csv_path: &Path,
    columns: &ColumnSpec,
    dataset_name: &str,
    version_id: &str,
) -> Result<VersionSet> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_path(csv_path)?;
    let headers: Vec<String> = reader
        .byte_headers()?
        .iter()
        .map(|h| String::from_utf8_lossy(h).trim_start_matches('\u{feff}').to_string())
        .collect();
    let path_col = resolve_column(&headers, columns.path.as_deref(), PATH_DEFAULTS)?;
    let label_col = resolve_column(&headers, columns.label.as_deref(), LABEL_DEFAULTS)?;
    let source_col = resolve_column(&headers, columns.source.as_deref(), SOURCE_DEFAULTS)?;

    let mut files = Vec::new();
    for (i, rec) in reader.byte_records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let field = |col: usize| -> String {
            rec.get(col).map(|b| String::from_utf8_lossy(b).into_owned()).unwrap_or_default()
        };
        files.push(VersionedFile {
            path: field(path_col),
            label: parse_label(&field(label_col), row)?,
            source: field(source_col),
            version_id: version_id.to_string(),
        });
    }
    VersionSet::new(dataset_name, version_id, files)
}

/// Writes a set back as a `name,bug,src` CSV with binary labels.
pub fn write_version(set: &VersionSet, csv_path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(csv_path)?;
    w.write_record(["name", "bug", "src"])?;
    for f in set.files() {
        w.write_record([f.path.as_str(), if f.label.is_defective() { "1" } else { "0" }, f.source.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

/// Canonical line view: split on `\n`, drop one trailing `\r` per line.
///
/// A trailing newline does not produce an empty last line.
pub fn normalize_lines(source: &str) -> Vec<&str> {
    if source.is_empty() {
        return Vec::new();
    }
    let body = source.strip_suffix('\n').unwrap_or(source);
    body.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l)).collect()
}
