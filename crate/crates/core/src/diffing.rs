//! Line diffs between two file versions.
//!
//! The edit script is a shortest edit script (equivalently a longest common
//! subsequence of lines) found with Myers' greedy algorithm. Hunks are rendered
//! in unified format; `parse_unified` and `apply_unified` read the same format
//! back.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const DEFAULT_CONTEXT_LINES: usize = 3;

const NO_NEWLINE_MARKER: &str = "\\ No newline at end of file";

/// Line-level differences between an old and a new source text.
///
/// Line numbers are 1-based. A changed line is a removal paired with an
/// addition; there is no separate "modified" category.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChangeSet {
    /// `(new line number, text)` in ascending order.
    pub added: Vec<(usize, String)>,
    /// `(old line number, text)` in ascending order.
    pub removed: Vec<(usize, String)>,
    pub unified: String,
    pub changed_new_lines: BTreeSet<usize>,
    /// New-file lines bordering a pure deletion, so consumers can locate
    /// changes that left no added line behind.
    pub removal_anchors: BTreeSet<usize>,
}

impl ChangeSet {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Line<'a> {
    text: &'a str,
    eol: bool,
}

fn split_lines(s: &str) -> Vec<Line<'_>> {
    s.split_inclusive('\n')
        .map(|piece| match piece.strip_suffix('\n') {
            Some(text) => Line { text, eol: true },
            None => Line { text: piece, eol: false },
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Equal(usize, usize),
    Delete(usize),
    Insert(usize),
}

/// Myers O(ND) shortest edit script. Keeps one compact copy of the furthest
/// reaching frontier per edit distance for the backtrack.
fn myers<T: PartialEq>(a: &[T], b: &[T]) -> Vec<Op> {
    let n = a.len() as isize;
    let m = b.len() as isize;
    let max = n + m;
    let offset = max + 1;
    let mut v = vec![0isize; (2 * max + 3) as usize];
    let mut trace: Vec<Vec<isize>> = Vec::new();
    let at = |k: isize| (k + offset) as usize;

    'outer: for d in 0..=max {
        let mut k = -d;
        while k <= d {
            let mut x = if d == 0 {
                0
            } else if k == -d || (k != d && v[at(k - 1)] < v[at(k + 1)]) {
                v[at(k + 1)]
            } else {
                v[at(k - 1)] + 1
            };
            let mut y = x - k;
            while x < n && y < m && a[x as usize] == b[y as usize] {
                x += 1;
                y += 1;
            }
            v[at(k)] = x;
            if x >= n && y >= m {
                trace.push(v[at(-d)..=at(d)].to_vec());
                break 'outer;
            }
            k += 2;
        }
        trace.push(v[at(-d)..=at(d)].to_vec());
    }

    let mut ops = Vec::with_capacity((n + m) as usize);
    let (mut x, mut y) = (n, m);
    for d in (0..trace.len() as isize).rev() {
        let k = x - y;
        if d == 0 {
            while x > 0 && y > 0 {
                x -= 1;
                y -= 1;
                ops.push(Op::Equal(x as usize, y as usize));
            }
            break;
        }
        let prev = &trace[(d - 1) as usize];
        let get = |k: isize| prev[(k + d - 1) as usize];
        let down = k == -d || (k != d && get(k - 1) < get(k + 1));
        let prev_k = if down { k + 1 } else { k - 1 };
        let prev_x = get(prev_k);
        let prev_y = prev_x - prev_k;
        let (mid_x, mid_y) = if down { (prev_x, prev_x - k) } else { (prev_x + 1, prev_y) };
        while x > mid_x && y > mid_y {
            x -= 1;
            y -= 1;
            ops.push(Op::Equal(x as usize, y as usize));
        }
        if down {
            ops.push(Op::Insert(prev_y as usize));
        } else {
            ops.push(Op::Delete(prev_x as usize));
        }
        x = prev_x;
        y = prev_y;
    }
    ops.reverse();
    ops
}

/// Within every maximal run of non-equal ops, put deletions before insertions.
fn group_runs(ops: Vec<Op>) -> Vec<Op> {
    let mut out = Vec::with_capacity(ops.len());
    let mut dels = Vec::new();
    let mut ins = Vec::new();
    for op in ops {
        match op {
            Op::Delete(_) => dels.push(op),
            Op::Insert(_) => ins.push(op),
            Op::Equal(..) => {
                out.append(&mut dels);
                out.append(&mut ins);
                out.push(op);
            }
        }
    }
    out.append(&mut dels);
    out.append(&mut ins);
    out
}

fn mirror(ops: Vec<Op>) -> Vec<Op> {
    ops.into_iter()
        .map(|op| match op {
            Op::Equal(i, j) => Op::Equal(j, i),
            Op::Delete(i) => Op::Insert(i),
            Op::Insert(j) => Op::Delete(j),
        })
        .collect()
}

/// Edit script for `old -> new`. The pair is always solved in a canonical
/// orientation so that `diff(a, b)` and `diff(b, a)` pick the same alignment.
fn edit_script(old: &[Line<'_>], new: &[Line<'_>]) -> Vec<Op> {
    let canonical = old.iter().map(|l| (l.text, l.eol)).le(new.iter().map(|l| (l.text, l.eol)));
    let ops = if canonical { myers(old, new) } else { mirror(myers(new, old)) };
    group_runs(ops)
}

/// Diff with generic `a/source`, `b/source` header paths.
pub fn diff(old_source: &str, new_source: &str, context_lines: usize) -> ChangeSet {
    diff_paths("source", "source", old_source, new_source, context_lines)
}

/// Diff with the given repository-relative paths in the unified header.
pub fn diff_paths(
    old_path: &str,
    new_path: &str,
    old_source: &str,
    new_source: &str,
    context_lines: usize,
) -> ChangeSet {
    let old = split_lines(old_source);
    let new = split_lines(new_source);
    let ops = edit_script(&old, &new);

    let mut cs = ChangeSet::default();
    let mut new_pos = 0usize;
    let mut run_has_insert = false;
    let mut run_has_delete = false;
    let close_run = |cs: &mut ChangeSet, new_pos: usize, has_del: bool, has_ins: bool| {
        if has_del && !has_ins && !new.is_empty() {
            // lines new_pos and new_pos + 1 (1-based) border the deletion point
            for line in [new_pos, new_pos + 1] {
                if (1..=new.len()).contains(&line) {
                    cs.removal_anchors.insert(line);
                }
            }
        }
    };
    for op in &ops {
        match *op {
            Op::Equal(_, j) => {
                close_run(&mut cs, new_pos, run_has_delete, run_has_insert);
                run_has_delete = false;
                run_has_insert = false;
                new_pos = j + 1;
            }
            Op::Delete(i) => {
                run_has_delete = true;
                cs.removed.push((i + 1, old[i].text.to_string()));
            }
            Op::Insert(j) => {
                run_has_insert = true;
                cs.added.push((j + 1, new[j].text.to_string()));
                cs.changed_new_lines.insert(j + 1);
                new_pos = j + 1;
            }
        }
    }
    close_run(&mut cs, new_pos, run_has_delete, run_has_insert);

    if !cs.is_empty() {
        cs.unified = render_unified(old_path, new_path, &old, &new, &ops, context_lines);
    }
    cs
}

fn render_unified(
    old_path: &str,
    new_path: &str,
    old: &[Line<'_>],
    new: &[Line<'_>],
    ops: &[Op],
    context: usize,
) -> String {
    let changes: Vec<usize> = ops
        .iter()
        .enumerate()
        .filter(|(_, op)| !matches!(op, Op::Equal(..)))
        .map(|(i, _)| i)
        .collect();

    // hunk boundaries as half-open ranges over `ops`
    let mut hunks: Vec<(usize, usize)> = Vec::new();
    for &c in &changes {
        let start = c.saturating_sub(context);
        let end = (c + context + 1).min(ops.len());
        match hunks.last_mut() {
            Some(last) if start <= last.1 => last.1 = end,
            _ => hunks.push((start, end)),
        }
    }

    let mut out = String::new();
    let _ = writeln!(out, "--- a/{old_path}");
    let _ = writeln!(out, "+++ b/{new_path}");
    for (start, end) in hunks {
        let old_before = ops[..start].iter().filter(|op| !matches!(op, Op::Insert(_))).count();
        let new_before = ops[..start].iter().filter(|op| !matches!(op, Op::Delete(_))).count();
        let body = &ops[start..end];
        let old_count = body.iter().filter(|op| !matches!(op, Op::Insert(_))).count();
        let new_count = body.iter().filter(|op| !matches!(op, Op::Delete(_))).count();
        let old_start = if old_count == 0 { old_before } else { old_before + 1 };
        let new_start = if new_count == 0 { new_before } else { new_before + 1 };
        let _ = writeln!(out, "@@ -{old_start},{old_count} +{new_start},{new_count} @@");
        for op in body {
            let (prefix, line) = match *op {
                Op::Equal(i, _) => (' ', old[i]),
                Op::Delete(i) => ('-', old[i]),
                Op::Insert(j) => ('+', new[j]),
            };
            out.push(prefix);
            out.push_str(line.text);
            out.push('\n');
            if !line.eol {
                out.push_str(NO_NEWLINE_MARKER);
                out.push('\n');
            }
        }
    }
    out
}

/// One line of a parsed hunk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HunkLine {
    /// `' '`, `'-'` or `'+'`.
    pub kind: char,
    pub text: String,
    pub eol: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hunk {
    pub old_start: usize,
    pub old_count: usize,
    pub new_start: usize,
    pub new_count: usize,
    pub lines: Vec<HunkLine>,
}

fn parse_range(s: &str) -> Option<(usize, usize)> {
    match s.split_once(',') {
        Some((a, b)) => Some((a.parse().ok()?, b.parse().ok()?)),
        None => Some((s.parse().ok()?, 1)),
    }
}

/// Parses the hunks of a single-file unified diff. File headers are skipped.
pub fn parse_unified(patch: &str) -> Result<Vec<Hunk>> {
    let mut hunks: Vec<Hunk> = Vec::new();
    let body = patch.strip_suffix('\n').unwrap_or(patch);
    for (n, raw) in body.split('\n').enumerate().filter(|_| !patch.is_empty()) {
        let bad = |what: &str| Error::Data(format!("patch line {}: {what}", n + 1));
        if let Some(rest) = raw.strip_prefix("@@ ") {
            let inner = rest.split(" @@").next().ok_or_else(|| bad("unterminated hunk header"))?;
            let mut parts = inner.split_whitespace();
            let old = parts.next().and_then(|p| p.strip_prefix('-')).and_then(parse_range);
            let new = parts.next().and_then(|p| p.strip_prefix('+')).and_then(parse_range);
            let ((old_start, old_count), (new_start, new_count)) =
                old.zip(new).ok_or_else(|| bad("malformed hunk header"))?;
            hunks.push(Hunk { old_start, old_count, new_start, new_count, lines: Vec::new() });
            continue;
        }
        let Some(hunk) = hunks.last_mut() else {
            // file headers and anything else before the first hunk
            continue;
        };
        if raw == NO_NEWLINE_MARKER {
            let last = hunk.lines.last_mut().ok_or_else(|| bad("marker without a line"))?;
            last.eol = false;
            continue;
        }
        let mut chars = raw.chars();
        let kind = match chars.next() {
            Some(c @ (' ' | '-' | '+')) => c,
            None => ' ',
            Some(_) => {
                if raw.starts_with("--- ") || raw.starts_with("+++ ") {
                    continue;
                }
                return Err(bad("unexpected line in hunk"));
            }
        };
        hunk.lines.push(HunkLine { kind, text: chars.as_str().to_string(), eol: true });
    }
    for h in &hunks {
        let old = h.lines.iter().filter(|l| l.kind != '+').count();
        let new = h.lines.iter().filter(|l| l.kind != '-').count();
        if old != h.old_count || new != h.new_count {
            return Err(Error::Data(format!(
                "hunk @@ -{},{} +{},{} @@ has {old}/{new} lines",
                h.old_start, h.old_count, h.new_start, h.new_count
            )));
        }
    }
    Ok(hunks)
}

/// Applies a unified diff to `old_source`, verifying every context and removed line.
pub fn apply_unified(old_source: &str, patch: &str) -> Result<String> {
    let old = split_lines(old_source);
    let hunks = parse_unified(patch)?;
    let mut out: Vec<(String, bool)> = Vec::with_capacity(old.len());
    let mut cursor = 0usize;
    for h in &hunks {
        let begin = if h.old_count == 0 { h.old_start } else { h.old_start - 1 };
        if begin < cursor || begin > old.len() {
            return Err(Error::Data(format!("hunk at old line {} is out of order", h.old_start)));
        }
        out.extend(old[cursor..begin].iter().map(|l| (l.text.to_string(), l.eol)));
        cursor = begin;
        for line in &h.lines {
            match line.kind {
                '+' => out.push((line.text.clone(), line.eol)),
                _ => {
                    let cur = old.get(cursor).ok_or_else(|| Error::Data("hunk runs past end of file".into()))?;
                    if cur.text != line.text || cur.eol != line.eol {
                        return Err(Error::Data(format!(
                            "patch does not apply at old line {}: expected `{}`",
                            cursor + 1,
                            line.text
                        )));
                    }
                    if line.kind == ' ' {
                        out.push((line.text.clone(), line.eol));
                    }
                    cursor += 1;
                }
            }
        }
    }
    out.extend(old[cursor..].iter().map(|l| (l.text.to_string(), l.eol)));
    let mut s = String::new();
    for (text, eol) in out {
        s.push_str(&text);
        if eol {
            s.push('\n');
        }
    }
    Ok(s)
}

/// Line-numbered listing of a change set: `- n: text` for removals (old
/// numbering) and `+ n: text` for additions (new numbering), ordered by
/// number with removals first on ties.
pub fn render_difference_list(cs: &ChangeSet) -> String {
    let mut rows: Vec<(usize, u8, &str)> = cs
        .removed
        .iter()
        .map(|(n, t)| (*n, 0u8, t.as_str()))
        .chain(cs.added.iter().map(|(n, t)| (*n, 1u8, t.as_str())))
        .collect();
    rows.sort_by_key(|&(n, kind, _)| (n, kind));
    rows.iter()
        .map(|&(n, kind, t)| format!("{} {n}: {t}", if kind == 0 { '-' } else { '+' }))
        .collect::<Vec<_>>()
        .join("\n")
}
