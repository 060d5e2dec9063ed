//! Cross-version file matching and the file-evolution partition.
//!
//! New-version files are first matched to old files with the identical path.
//! The rest are scored against every still-unmatched old file with the Dice
//! overlap of their distinct lines; the best candidate is accepted only if it
//! clears the similarity threshold and its lead over the runner-up stands out
//! from the spread of all consecutive score gaps.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Label, VersionSet, VersionedFile};
use crate::error::{Error, Result};

/// Floating-point slack for the gap test; `s1 - s2` can equal `mean + c*std`
/// exactly in real arithmetic (two candidates, or three with population std).
const GAP_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchParams {
    /// Minimum Dice similarity of the best candidate.
    pub threshold: f64,
    /// Multiplier on the gap standard deviation.
    pub gap_multiplier: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        MatchParams { threshold: 0.7, gap_multiplier: 1.0 }
    }
}

impl MatchParams {
    pub fn new(threshold: f64, gap_multiplier: f64) -> Result<MatchParams> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::Config(format!("threshold must lie in [0, 1], got {threshold}")));
        }
        if !gap_multiplier.is_finite() || gap_multiplier < 0.0 {
            return Err(Error::Config(format!("gap multiplier must be >= 0, got {gap_multiplier}")));
        }
        Ok(MatchParams { threshold, gap_multiplier })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchKind {
    Path,
    Similarity,
    None,
}

impl MatchKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MatchKind::Path => "path",
            MatchKind::Similarity => "similarity",
            MatchKind::None => "none",
        }
    }
}

impl fmt::Display for MatchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MatchKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "path" => Ok(MatchKind::Path),
            "similarity" => Ok(MatchKind::Similarity),
            "none" | "" => Ok(MatchKind::None),
            other => Err(Error::Data(format!("unknown match kind `{other}`"))),
        }
    }
}

/// Evolution bucket of a new-version file.
///
/// For changed-source common files the letter encodes the new label and the
/// digits encode `(old label, new label)`: `B10` is a defective file that was
/// fixed, `D01` a benign file that became defective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subset {
    B00,
    B10,
    D01,
    D11,
    UnchangedSource,
    Added,
}

impl Subset {
    pub const TRANSITIONS: [Subset; 4] = [Subset::B00, Subset::B10, Subset::D01, Subset::D11];

    pub fn from_labels(old: Label, new: Label) -> Subset {
        match (old, new) {
            (Label::Benign, Label::Benign) => Subset::B00,
            (Label::Defective, Label::Benign) => Subset::B10,
            (Label::Benign, Label::Defective) => Subset::D01,
            (Label::Defective, Label::Defective) => Subset::D11,
        }
    }

    pub fn is_transition(self) -> bool {
        Self::TRANSITIONS.contains(&self)
    }

    /// Label changed across versions (B10 or D01).
    pub fn is_status_changed(self) -> bool {
        matches!(self, Subset::B10 | Subset::D01)
    }

    /// Label kept across versions (B00 or D11).
    pub fn is_status_unchanged(self) -> bool {
        matches!(self, Subset::B00 | Subset::D11)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::B00 => "B00",
            Subset::B10 => "B10",
            Subset::D01 => "D01",
            Subset::D11 => "D11",
            Subset::UnchangedSource => "unchanged_source",
            Subset::Added => "added",
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "B00" => Subset::B00,
            "B10" => Subset::B10,
            "D01" => Subset::D01,
            "D11" => Subset::D11,
            "unchanged_source" => Subset::UnchangedSource,
            "added" => Subset::Added,
            other => return Err(Error::Data(format!("unknown subset `{other}`"))),
        })
    }
}

/// Match decision for one new-version file.
#[derive(Debug, Clone, PartialEq)]
pub struct FileMatch {
    pub new_path: String,
    pub old_path: Option<String>,
    pub kind: MatchKind,
    pub similarity: Option<f64>,
}

/// Match decisions for every new-version file, in new-set order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Matches {
    pub entries: Vec<FileMatch>,
}

impl Matches {
    pub fn get(&self, new_path: &str) -> Option<&FileMatch> {
        self.entries.iter().find(|m| m.new_path == new_path)
    }

    /// New path to optional old path.
    pub fn as_map(&self) -> BTreeMap<&str, Option<&str>> {
        self.entries.iter().map(|m| (m.new_path.as_str(), m.old_path.as_deref())).collect()
    }
}

fn similarity_lines(source: &str) -> HashSet<&str> {
    crate::corpus::normalize_lines(source).into_iter().map(str::trim_end).collect()
}

fn dice_sets(a: &HashSet<&str>, b: &HashSet<&str>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let common = small.iter().filter(|l| large.contains(*l)).count();
    2.0 * common as f64 / (a.len() + b.len()) as f64
}

/// Dice overlap of the distinct lines (trailing whitespace trimmed) of two files.
pub fn dice_similarity(old: &VersionedFile, new: &VersionedFile) -> f64 {
    dice_sets(&similarity_lines(&old.source), &similarity_lines(&new.source))
}

/// Decision rule on a descending list of candidate scores.
///
/// Returns true if the top candidate should be accepted.
pub fn accept_top_candidate(sorted_desc: &[f64], params: &MatchParams) -> bool {
    let Some(&s1) = sorted_desc.first() else {
        return false;
    };
    if s1 < params.threshold {
        return false;
    }
    if sorted_desc.len() == 1 {
        return true;
    }
    let gaps: Vec<f64> = sorted_desc.windows(2).map(|w| w[0] - w[1]).collect();
    let n = gaps.len() as f64;
    let mean = gaps.iter().sum::<f64>() / n;
    let std = (gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / n).sqrt();
    gaps[0] + GAP_EPS >= mean + params.gap_multiplier * std
}

/// Matches every new-version file to at most one old-version file.
pub fn match_files(old_set: &VersionSet, new_set: &VersionSet, params: &MatchParams) -> Matches {
    let old_lines: Vec<HashSet<&str>> = old_set.files().iter().map(|f| similarity_lines(&f.source)).collect();
    let new_lines: Vec<HashSet<&str>> = new_set.files().iter().map(|f| similarity_lines(&f.source)).collect();

    let path_taken: HashSet<usize> = new_set.files().iter().filter_map(|f| old_set.index_of(&f.path)).collect();
    let candidates: Vec<usize> = (0..old_set.len()).filter(|i| !path_taken.contains(i)).collect();

    // (new index, best old index, score) for files without a path match
    let proposals: Vec<(usize, Option<(usize, f64)>)> = new_set
        .files()
        .par_iter()
        .enumerate()
        .filter(|(_, f)| !old_set.contains(&f.path))
        .map(|(j, _)| {
            let mut scored: Vec<(f64, usize)> =
                candidates.iter().map(|&i| (dice_sets(&old_lines[i], &new_lines[j]), i)).collect();
            scored.sort_by(|a, b| {
                b.0.total_cmp(&a.0).then_with(|| old_set.files()[a.1].path.cmp(&old_set.files()[b.1].path))
            });
            let scores: Vec<f64> = scored.iter().map(|s| s.0).collect();
            let pick = accept_top_candidate(&scores, params).then(|| (scored[0].1, scored[0].0));
            (j, pick)
        })
        .collect();

    // enforce one-to-one among similarity matches, best scores first
    let mut accepted: Vec<(usize, usize, f64)> =
        proposals.iter().filter_map(|&(j, p)| p.map(|(i, s)| (j, i, s))).collect();
    accepted.sort_by(|a, b| {
        b.2.total_cmp(&a.2).then_with(|| new_set.files()[a.0].path.cmp(&new_set.files()[b.0].path))
    });
    let mut old_used: HashSet<usize> = HashSet::new();
    let mut sim_match: HashMap<usize, (usize, f64)> = HashMap::new();
    for (j, i, s) in accepted {
        if old_used.insert(i) {
            sim_match.insert(j, (i, s));
        }
    }

    let entries = new_set
        .files()
        .iter()
        .enumerate()
        .map(|(j, f)| {
            if let Some(i) = old_set.index_of(&f.path) {
                let old = &old_set.files()[i];
                FileMatch {
                    new_path: f.path.clone(),
                    old_path: Some(old.path.clone()),
                    kind: MatchKind::Path,
                    similarity: Some(dice_sets(&old_lines[i], &new_lines[j])),
                }
            } else if let Some(&(i, s)) = sim_match.get(&j) {
                FileMatch {
                    new_path: f.path.clone(),
                    old_path: Some(old_set.files()[i].path.clone()),
                    kind: MatchKind::Similarity,
                    similarity: Some(s),
                }
            } else {
                FileMatch { new_path: f.path.clone(), old_path: None, kind: MatchKind::None, similarity: None }
            }
        })
        .collect();
    Matches { entries }
}

/// A new-version file with its matched predecessor and evolution bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionRecord {
    pub new_file: VersionedFile,
    pub old_file: Option<VersionedFile>,
    pub match_kind: MatchKind,
    pub subset: Subset,
    pub similarity: Option<f64>,
}

impl EvolutionRecord {
    /// Records are identified by their new-version path.
    pub fn id(&self) -> &str {
        &self.new_file.path
    }

    pub fn old_label(&self) -> Option<Label> {
        self.old_file.as_ref().map(|f| f.label)
    }

    pub fn new_label(&self) -> Label {
        self.new_file.label
    }

    /// Common file whose source changed between versions.
    pub fn is_changed_source(&self) -> bool {
        self.subset.is_transition()
    }
}

/// File-evolution partition as percentages of all file events
/// (removed + added + common).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PartitionStats {
    pub removed: usize,
    pub added: usize,
    pub same_source: usize,
    pub b00: usize,
    pub b10: usize,
    pub d11: usize,
    pub d01: usize,
}

impl PartitionStats {
    pub fn total(&self) -> usize {
        self.removed + self.added + self.same_source + self.b00 + self.b10 + self.d11 + self.d01
    }

    fn pct(&self, n: usize) -> f64 {
        match self.total() {
            0 => 0.0,
            t => 100.0 * n as f64 / t as f64,
        }
    }

    pub fn pct_removed(&self) -> f64 {
        self.pct(self.removed)
    }
    pub fn pct_added(&self) -> f64 {
        self.pct(self.added)
    }
    pub fn pct_same_source(&self) -> f64 {
        self.pct(self.same_source)
    }
    pub fn pct_b00(&self) -> f64 {
        self.pct(self.b00)
    }
    pub fn pct_b10(&self) -> f64 {
        self.pct(self.b10)
    }
    pub fn pct_d11(&self) -> f64 {
        self.pct(self.d11)
    }
    pub fn pct_d01(&self) -> f64 {
        self.pct(self.d01)
    }

    /// Percentages in table column order: R, A, d=∅, B00, B10, D11, D01.
    pub fn percentages(&self) -> [f64; 7] {
        [
            self.pct_removed(),
            self.pct_added(),
            self.pct_same_source(),
            self.pct_b00(),
            self.pct_b10(),
            self.pct_d11(),
            self.pct_d01(),
        ]
    }

    pub const HEADER: [&'static str; 7] = ["R", "A", "d=0", "B00", "B10", "D11", "D01"];

    /// One aligned table row, e.g. for a dataset comparison printout.
    pub fn table_row(&self, dataset: &str) -> String {
        let cells: Vec<String> = self.percentages().iter().map(|p| format!("{p:>7.2}")).collect();
        format!("{dataset:<10}{}", cells.join(""))
    }

    pub fn table_header() -> String {
        let cells: Vec<String> = Self::HEADER.iter().map(|h| format!("{h:>7}")).collect();
        format!("{:<10}{}", "dataset", cells.join(""))
    }
}

/// Splits the corpus into evolution records and counts the partition.
pub fn partition(old_set: &VersionSet, new_set: &VersionSet, matches: &Matches) -> (Vec<EvolutionRecord>, PartitionStats) {
    let mut stats = PartitionStats::default();
    let mut matched_old: HashSet<&str> = HashSet::new();
    let by_new: HashMap<&str, &FileMatch> = matches.entries.iter().map(|m| (m.new_path.as_str(), m)).collect();

    let mut records = Vec::with_capacity(new_set.len());
    for f in new_set.files() {
        let m = by_new.get(f.path.as_str());
        let old = m.and_then(|m| m.old_path.as_deref()).and_then(|p| old_set.get(p));
        let subset = match old {
            None => Subset::Added,
            Some(o) if o.source == f.source => Subset::UnchangedSource,
            Some(o) => Subset::from_labels(o.label, f.label),
        };
        match subset {
            Subset::Added => stats.added += 1,
            Subset::UnchangedSource => stats.same_source += 1,
            Subset::B00 => stats.b00 += 1,
            Subset::B10 => stats.b10 += 1,
            Subset::D01 => stats.d01 += 1,
            Subset::D11 => stats.d11 += 1,
        }
        if let Some(o) = old {
            matched_old.insert(o.path.as_str());
        }
        records.push(EvolutionRecord {
            new_file: f.clone(),
            old_file: old.cloned(),
            match_kind: if old.is_some() { m.map_or(MatchKind::None, |m| m.kind) } else { MatchKind::None },
            subset,
            similarity: if old.is_some() { m.and_then(|m| m.similarity) } else { None },
        });
    }
    stats.removed = old_set.files().iter().filter(|o| !matched_old.contains(o.path.as_str())).count();
    (records, stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(path: &str, source: &str, label: u8) -> VersionedFile {
        VersionedFile {
            path: path.into(),
            source: source.into(),
            label: Label::from_bit(label).unwrap(),
            version_id: "v".into(),
        }
    }

    fn set(version: &str, files: Vec<VersionedFile>) -> VersionSet {
        VersionSet::new("toy", version, files).unwrap()
    }

    #[test]
    fn dice_examples() {
        let a = file("a", "x\ny\nz\n", 0);
        assert_eq!(dice_similarity(&a, &a), 1.0);
        let abc = file("a", "a\nb\nc\n", 0);
        let bcd = file("b", "b\nc\nd\n", 0);
        assert!((dice_similarity(&abc, &bcd) - 4.0 / 6.0).abs() < 1e-12);
        let other = file("c", "p\nq\n", 0);
        assert_eq!(dice_similarity(&abc, &other), 0.0);
        let empty = file("e", "", 0);
        assert_eq!(dice_similarity(&empty, &empty), 1.0);
        assert_eq!(dice_similarity(&empty, &abc), 0.0);
    }

    #[test]
    fn dice_uses_distinct_lines_and_ignores_trailing_space() {
        let a = file("a", "x\nx\ny  \n", 0);
        let b = file("b", "x\ny\n", 0);
        assert_eq!(dice_similarity(&a, &b), 1.0);
        let indented = file("c", "  x\ny\n", 0);
        assert!(dice_similarity(&indented, &b) < 1.0);
    }

    #[test]
    fn params_are_validated() {
        assert!(MatchParams::new(1.2, 1.0).is_err());
        assert!(MatchParams::new(0.5, -1.0).is_err());
        assert!(MatchParams::new(0.5, 0.0).is_ok());
    }

    #[test]
    fn path_match_wins_regardless_of_content() {
        let old = set("1", vec![file("A.java", "completely\ndifferent\n", 0)]);
        let new = set("2", vec![file("A.java", "nothing\nin\ncommon\n", 0)]);
        let m = match_files(&old, &new, &MatchParams::default());
        assert_eq!(m.entries[0].kind, MatchKind::Path);
        assert_eq!(m.entries[0].old_path.as_deref(), Some("A.java"));
    }

    #[test]
    fn single_candidate_needs_only_threshold() {
        let old = set("1", vec![file("old/A.java", "a\nb\nc\nd\n", 0)]);
        let new = set("2", vec![file("new/A.java", "a\nb\nc\ne\n", 0)]);
        // dice = 6/8 = 0.75
        let m = match_files(&old, &new, &MatchParams::new(0.7, 1.0).unwrap());
        assert_eq!(m.entries[0].kind, MatchKind::Similarity);
        let m = match_files(&old, &new, &MatchParams::new(0.8, 1.0).unwrap());
        assert_eq!(m.entries[0].kind, MatchKind::None);
    }

    #[test]
    fn gap_rule_by_hand() {
        let p = MatchParams::new(0.5, 1.0).unwrap();
        // gaps [0.6, 0.1, 0.1]: mean 0.2667, std 0.2357 -> 0.5024 <= 0.6
        assert!(accept_top_candidate(&[0.9, 0.3, 0.2, 0.1], &p));
        // close runner-up: gaps [0.05, 0.6]
        assert!(!accept_top_candidate(&[0.9, 0.85, 0.25], &p));
        // below threshold
        assert!(!accept_top_candidate(&[0.4, 0.0], &p));
        assert!(!accept_top_candidate(&[], &p));
        // two candidates: single gap, std 0
        assert!(accept_top_candidate(&[0.6, 0.59], &p));
    }

    #[test]
    fn one_to_one_greedy_by_similarity() {
        let base = "l1\nl2\nl3\nl4\nl5\nl6\nl7\nl8\nl9\nl10\n";
        let old = set("1", vec![file("old/A.java", base, 0)]);
        let closer = "l1\nl2\nl3\nl4\nl5\nl6\nl7\nl8\nl9\nX\n";
        let farther = "l1\nl2\nl3\nl4\nl5\nl6\nl7\nl8\nY\nZ\n";
        let new = set("2", vec![file("new/B.java", farther, 0), file("new/A.java", closer, 0)]);
        let m = match_files(&old, &new, &MatchParams::new(0.5, 1.0).unwrap());
        assert_eq!(m.get("new/A.java").unwrap().old_path.as_deref(), Some("old/A.java"));
        assert_eq!(m.get("new/B.java").unwrap().kind, MatchKind::None);
    }

    #[test]
    fn path_matched_old_files_are_not_candidates() {
        let src = "a\nb\nc\nd\n";
        let old = set("1", vec![file("A.java", src, 0)]);
        let new = set("2", vec![file("A.java", src, 0), file("Copy.java", src, 0)]);
        let m = match_files(&old, &new, &MatchParams::default());
        assert_eq!(m.get("Copy.java").unwrap().kind, MatchKind::None);
    }

    #[test]
    fn identical_sets_are_all_same_source() {
        let files = vec![file("A", "a\n", 0), file("B", "b\n", 1)];
        let old = set("1", files.clone());
        let new = set("2", files);
        let m = match_files(&old, &new, &MatchParams::default());
        let (records, stats) = partition(&old, &new, &m);
        assert!(records.iter().all(|r| r.subset == Subset::UnchangedSource));
        assert_eq!(stats.pct_same_source(), 100.0);
        assert_eq!(stats.percentages().iter().sum::<f64>(), 100.0);
    }

    #[test]
    fn toy_corpus_partition() {
        // A: label flip 0->1 with an edit; B: deleted; C: untouched
        let old = set(
            "1",
            vec![file("A", "int a;\nint b;\n", 0), file("B", "gone\n", 1), file("C", "keep\n", 0)],
        );
        let new = set("2", vec![file("A", "int a;\nint c;\n", 1), file("C", "keep\n", 0)]);
        let m = match_files(&old, &new, &MatchParams::default());
        let (records, stats) = partition(&old, &new, &m);
        let by_id: BTreeMap<&str, Subset> = records.iter().map(|r| (r.id(), r.subset)).collect();
        assert_eq!(by_id["A"], Subset::D01);
        assert_eq!(by_id["C"], Subset::UnchangedSource);
        assert_eq!((stats.removed, stats.d01, stats.same_source, stats.total()), (1, 1, 1, 3));
    }

    #[test]
    fn subset_coding() {
        assert_eq!(Subset::from_labels(Label::Benign, Label::Benign), Subset::B00);
        assert_eq!(Subset::from_labels(Label::Defective, Label::Benign), Subset::B10);
        assert_eq!(Subset::from_labels(Label::Benign, Label::Defective), Subset::D01);
        assert_eq!(Subset::from_labels(Label::Defective, Label::Defective), Subset::D11);
        for s in Subset::TRANSITIONS {
            assert_eq!(s.as_str().parse::<Subset>().unwrap(), s);
        }
    }
}
