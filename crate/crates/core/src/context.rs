//! File-local context around a change.
//!
//! Methods are found with a lightweight scanner: comments and string/char
//! literals are blanked out, braces are balanced, and a `{` opened directly in
//! a class body after a `name(...)` header (optionally followed by `throws`)
//! starts a method. Calls are resolved by name within the same file.
//!
//! Starting from the methods that overlap changed lines, callers and callees
//! are pulled in wave by wave up to the requested depth, then the collected
//! methods are concatenated and cut to a line budget.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::diffing::ChangeSet;

pub const DEFAULT_DEPTH: usize = 3;
pub const DEFAULT_MAX_LINES: usize = 400;
/// Budget used for the final debate runs.
pub const FINAL_MAX_LINES: usize = 600;

/// Lines of raw context kept around a changed line that sits outside every method.
const RAW_WINDOW: usize = 3;

const CONTROL_KEYWORDS: &[&str] = &[
    "if", "for", "while", "switch", "catch", "synchronized", "return", "new", "throw", "else", "do", "try",
    "finally", "assert", "case", "super", "this",
];

/// A method (or constructor) declaration with its body extent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodSpan {
    pub name: String,
    /// First line of the declaration, trimmed.
    pub signature: String,
    /// 1-based, inclusive.
    pub start_line: usize,
    /// 1-based, inclusive.
    pub end_line: usize,
    /// Source lines `start_line..=end_line`.
    pub body: String,
}

impl MethodSpan {
    pub fn overlaps_line(&self, line: usize) -> bool {
        (self.start_line..=self.end_line).contains(&line)
    }

    fn contains_span(&self, other: &MethodSpan) -> bool {
        self.start_line <= other.start_line && other.end_line <= self.end_line
    }
}

/// Same-file call graph with one node per method name (overloads collapse).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CallGraph {
    /// Method names ordered by their first declaration in the file.
    pub nodes: Vec<String>,
    /// Caller to callee.
    pub edges: BTreeSet<(String, String)>,
}

impl CallGraph {
    pub fn callees<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.edges.iter().filter(move |(a, _)| a == name).map(|(_, b)| b.as_str())
    }

    pub fn callers<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.edges.iter().filter(move |(_, b)| b == name).map(|(a, _)| a.as_str())
    }

    fn position(&self, name: &str) -> usize {
        self.nodes.iter().position(|n| n == name).unwrap_or(usize::MAX)
    }

    /// Callers and callees of `name`, in node order, without duplicates.
    pub fn neighbors<'a>(&'a self, name: &'a str) -> Vec<&'a str> {
        let mut out: Vec<&str> = self.callers(name).chain(self.callees(name)).collect();
        out.sort_by_key(|n| self.position(n));
        out.dedup();
        out
    }
}

/// Expanded code context for one changed file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextBundle {
    pub snippet: String,
    /// Visited method names in discovery order (before truncation).
    pub included_methods: Vec<String>,
    pub truncated: bool,
    /// Number of expansion waves that reached new methods.
    pub depth_used: usize,
    pub line_budget: usize,
}

/// Copy of `src` with comments and string/char literal contents replaced by
/// spaces. Newlines and byte offsets are preserved.
pub(crate) fn mask_source(src: &str) -> Vec<u8> {
    #[derive(PartialEq)]
    enum St {
        Code,
        LineComment,
        BlockComment,
        Str,
        Char,
        TextBlock,
    }
    let b = src.as_bytes();
    let mut out = b.to_vec();
    let mut st = St::Code;
    let mut i = 0;
    let blank = |out: &mut Vec<u8>, i: usize| {
        if out[i] != b'\n' {
            out[i] = b' ';
        }
    };
    while i < b.len() {
        let c = b[i];
        let next = b.get(i + 1).copied();
        match st {
            St::Code => match c {
                b'/' if next == Some(b'/') => {
                    st = St::LineComment;
                    blank(&mut out, i);
                    blank(&mut out, i + 1);
                    i += 1;
                }
                b'/' if next == Some(b'*') => {
                    st = St::BlockComment;
                    blank(&mut out, i);
                    blank(&mut out, i + 1);
                    i += 1;
                }
                b'"' if b[i..].starts_with(b"\"\"\"") => {
                    st = St::TextBlock;
                    i += 2;
                }
                b'"' => st = St::Str,
                b'\'' => st = St::Char,
                _ => {}
            },
            St::LineComment => {
                if c == b'\n' {
                    st = St::Code;
                } else {
                    blank(&mut out, i);
                }
            }
            St::BlockComment => {
                if c == b'*' && next == Some(b'/') {
                    blank(&mut out, i);
                    blank(&mut out, i + 1);
                    i += 1;
                    st = St::Code;
                } else {
                    blank(&mut out, i);
                }
            }
            St::Str | St::Char => {
                let close = if st == St::Str { b'"' } else { b'\'' };
                if c == b'\\' {
                    blank(&mut out, i);
                    if i + 1 < b.len() {
                        blank(&mut out, i + 1);
                    }
                    i += 1;
                } else if c == close || c == b'\n' {
                    st = St::Code;
                } else {
                    blank(&mut out, i);
                }
            }
            St::TextBlock => {
                if b[i..].starts_with(b"\"\"\"") {
                    i += 2;
                    st = St::Code;
                } else if c == b'\\' {
                    blank(&mut out, i);
                    if i + 1 < b.len() {
                        blank(&mut out, i + 1);
                    }
                    i += 1;
                } else {
                    blank(&mut out, i);
                }
            }
        }
        i += 1;
    }
    out
}

fn is_ident_byte(c: u8) -> bool {
    c.is_ascii_alphanumeric() || c == b'_' || c == b'$' || c >= 0x80
}

/// Identifier tokens of a masked fragment.
fn idents(s: &[u8]) -> Vec<&str> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < s.len() {
        if is_ident_byte(s[i]) && !s[i].is_ascii_digit() {
            let start = i;
            while i < s.len() && is_ident_byte(s[i]) {
                i += 1;
            }
            if let Ok(t) = std::str::from_utf8(&s[start..i]) {
                out.push(t);
            }
        } else {
            i += 1;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Frame {
    Class,
    Method { name_start: usize, name_end: usize, decl_start: usize },
    Block,
}

/// Skips leading annotations (`@Name`, `@a.b.Name(...)`) and whitespace.
fn skip_annotations(s: &[u8], mut i: usize, end: usize) -> usize {
    loop {
        while i < end && s[i].is_ascii_whitespace() {
            i += 1;
        }
        if i >= end || s[i] != b'@' {
            return i;
        }
        i += 1;
        while i < end && (is_ident_byte(s[i]) || s[i] == b'.') {
            i += 1;
        }
        let mut j = i;
        while j < end && s[j].is_ascii_whitespace() {
            j += 1;
        }
        if j < end && s[j] == b'(' {
            let mut depth = 0usize;
            while j < end {
                match s[j] {
                    b'(' => depth += 1,
                    b')' => {
                        depth -= 1;
                        if depth == 0 {
                            j += 1;
                            break;
                        }
                    }
                    _ => {}
                }
                j += 1;
            }
            i = j;
        }
    }
}

/// Decides what kind of block a `{` at `brace` opens, given its header
/// `masked[start..brace]` and the enclosing frame.
fn classify(masked: &[u8], start: usize, brace: usize, parent: Option<Frame>) -> Frame {
    let header = &masked[start..brace];
    let toks = idents(header);
    let type_decl = toks.iter().enumerate().any(|(k, t)| match *t {
        "class" | "interface" | "enum" => true,
        "record" => toks.get(k + 1).is_some() && {
            // `record Name(` rather than a method called `record`
            let text = String::from_utf8_lossy(header);
            text.contains(&format!("record {}", toks[k + 1]))
        },
        _ => false,
    });
    if type_decl || toks.contains(&"new") {
        return Frame::Class;
    }
    if parent != Some(Frame::Class) {
        return Frame::Block;
    }

    // trailing `throws A, b.C` after the parameter list
    let mut end = header.len();
    while end > 0 && header[end - 1].is_ascii_whitespace() {
        end -= 1;
    }
    let Some(close) = header[..end].iter().rposition(|&c| c == b')') else {
        return Frame::Block;
    };
    let tail = &header[close + 1..end];
    let tail_toks = idents(tail);
    let tail_ok = tail.iter().all(|&c| is_ident_byte(c) || c.is_ascii_whitespace() || b".,<>".contains(&c))
        && (tail_toks.is_empty() || tail_toks[0] == "throws");
    if !tail_ok {
        return Frame::Block;
    }
    let mut depth = 0usize;
    let mut open = None;
    for k in (0..=close).rev() {
        match header[k] {
            b')' => depth += 1,
            b'(' => {
                depth -= 1;
                if depth == 0 {
                    open = Some(k);
                    break;
                }
            }
            _ => {}
        }
    }
    let Some(open) = open else {
        return Frame::Block;
    };
    let mut name_end = open;
    while name_end > 0 && header[name_end - 1].is_ascii_whitespace() {
        name_end -= 1;
    }
    let mut name_start = name_end;
    while name_start > 0 && is_ident_byte(header[name_start - 1]) {
        name_start -= 1;
    }
    if name_start == name_end || header[name_start].is_ascii_digit() {
        return Frame::Block;
    }
    let name = String::from_utf8_lossy(&header[name_start..name_end]);
    if CONTROL_KEYWORDS.contains(&name.as_ref()) {
        return Frame::Block;
    }
    let before = &header[..name_start];
    if before.contains(&b'=') || before.iter().rev().find(|c| !c.is_ascii_whitespace()) == Some(&b'.') {
        return Frame::Block;
    }
    let decl_start = skip_annotations(masked, start, brace);
    Frame::Method { name_start: start + name_start, name_end: start + name_end, decl_start }
}

fn line_starts(src: &str) -> Vec<usize> {
    std::iter::once(0).chain(src.match_indices('\n').map(|(i, _)| i + 1)).collect()
}

fn line_of(starts: &[usize], offset: usize) -> usize {
    match starts.binary_search(&offset) {
        Ok(i) => i + 1,
        Err(i) => i,
    }
}

/// Finds method and constructor declarations with bodies. Never fails;
/// malformed input yields whatever spans could be closed.
pub fn extract_methods(source: &str) -> Vec<MethodSpan> {
    let masked = mask_source(source);
    let starts = line_starts(source);
    let lines: Vec<&str> = source.split('\n').collect();

    let mut stack: Vec<Frame> = Vec::new();
    let mut stmt_start = 0usize;
    let mut paren = 0usize;
    let mut found: Vec<MethodSpan> = Vec::new();
    for (i, &c) in masked.iter().enumerate() {
        match c {
            b'(' => paren += 1,
            b')' => paren = paren.saturating_sub(1),
            b';' if paren == 0 => stmt_start = i + 1,
            b'{' if paren == 0 => {
                let frame = classify(&masked, stmt_start, i, stack.last().copied());
                stack.push(frame);
                stmt_start = i + 1;
            }
            b'}' if paren == 0 => {
                if let Some(Frame::Method { name_start, name_end, decl_start }) = stack.pop() {
                    let start_line = line_of(&starts, decl_start);
                    let end_line = line_of(&starts, i);
                    let body = lines[start_line - 1..end_line]
                        .iter()
                        .map(|l| l.strip_suffix('\r').unwrap_or(l))
                        .collect::<Vec<_>>()
                        .join("\n");
                    found.push(MethodSpan {
                        name: source[name_start..name_end].to_string(),
                        signature: lines[start_line - 1].trim().to_string(),
                        start_line,
                        end_line,
                        body,
                    });
                }
                stmt_start = i + 1;
            }
            _ => {}
        }
    }

    // spans may nest but never coincide or partially overlap
    found.sort_by(|a, b| a.start_line.cmp(&b.start_line).then(b.end_line.cmp(&a.end_line)));
    let mut kept: Vec<MethodSpan> = Vec::with_capacity(found.len());
    for m in found {
        let clash = kept.iter().any(|k| {
            let disjoint = m.end_line < k.start_line || k.end_line < m.start_line;
            let same = m.start_line == k.start_line && m.end_line == k.end_line;
            !disjoint && (same || !(k.contains_span(&m) || m.contains_span(k)))
        });
        if !clash {
            kept.push(m);
        }
    }
    kept
}

/// Names called inside a method body: an identifier directly followed by `(`
/// in the masked text after the opening brace.
fn called_names(body: &str) -> HashSet<String> {
    let masked = mask_source(body);
    let mut paren = 0usize;
    let mut open = None;
    for (i, &c) in masked.iter().enumerate() {
        match c {
            b'(' => paren += 1,
            b')' => paren = paren.saturating_sub(1),
            b'{' if paren == 0 => {
                open = Some(i);
                break;
            }
            _ => {}
        }
    }
    let Some(open) = open else {
        return HashSet::new();
    };
    let s = &masked[open + 1..];
    let mut out = HashSet::new();
    let mut i = 0;
    while i < s.len() {
        if is_ident_byte(s[i]) && (i == 0 || !is_ident_byte(s[i - 1])) {
            let start = i;
            while i < s.len() && is_ident_byte(s[i]) {
                i += 1;
            }
            let mut j = i;
            while j < s.len() && s[j].is_ascii_whitespace() {
                j += 1;
            }
            if j < s.len() && s[j] == b'(' && !s[start].is_ascii_digit() {
                out.insert(String::from_utf8_lossy(&s[start..i]).into_owned());
            }
        } else {
            i += 1;
        }
    }
    out
}

/// Builds the same-file, name-resolved call graph of `methods`.
pub fn build_call_graph(methods: &[MethodSpan]) -> CallGraph {
    let mut nodes: Vec<String> = Vec::new();
    for m in methods {
        if !nodes.contains(&m.name) {
            nodes.push(m.name.clone());
        }
    }
    let known: HashSet<&str> = nodes.iter().map(String::as_str).collect();
    let mut edges = BTreeSet::new();
    for m in methods {
        for callee in called_names(&m.body) {
            if known.contains(callee.as_str()) {
                edges.insert((m.name.clone(), callee));
            }
        }
    }
    CallGraph { nodes, edges }
}

/// Wave-by-wave expansion: wave 0 visits the seeds, each further wave visits
/// callers and callees of the previous one, for `depth` extra waves.
fn expand(graph: &CallGraph, seeds: Vec<String>, depth: usize) -> (Vec<String>, usize) {
    let mut visited: Vec<String> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut queue = seeds;
    let mut remaining = depth as isize;
    let mut waves = 0usize;
    while !queue.is_empty() && remaining >= 0 {
        let frontier = std::mem::take(&mut queue);
        let mut any_new = false;
        for m in &frontier {
            if seen.insert(m.clone()) {
                visited.push(m.clone());
                any_new = true;
            }
        }
        for m in &frontier {
            for n in graph.neighbors(m) {
                if !seen.contains(n) && !queue.iter().any(|q| q == n) {
                    queue.push(n.to_string());
                }
            }
        }
        if any_new {
            waves += 1;
        }
        remaining -= 1;
    }
    (visited, waves.saturating_sub(1))
}

/// Builds the context snippet for a changed file.
///
/// `source` is the new version of the file. Changed lines outside every
/// method contribute a raw window of three lines on each side.
pub fn extract_context(cs: &ChangeSet, source: &str, depth: usize, max_lines: usize) -> ContextBundle {
    let methods = extract_methods(source);
    let graph = build_call_graph(&methods);
    let touched: BTreeSet<usize> = cs.changed_new_lines.union(&cs.removal_anchors).copied().collect();

    let seeds: Vec<String> = graph
        .nodes
        .iter()
        .filter(|name| methods.iter().any(|m| &m.name == *name && touched.iter().any(|&l| m.overlaps_line(l))))
        .cloned()
        .collect();
    let seed_count = seeds.len();
    let (visited, depth_used) = expand(&graph, seeds, depth);

    let src_lines: Vec<&str> = source.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l)).collect();
    let mut blocks: Vec<String> = Vec::new();
    let mut rendered: Vec<&MethodSpan> = Vec::new();
    let mut render_method = |name: &str, blocks: &mut Vec<String>| {
        for m in methods.iter().filter(|m| m.name == name) {
            if rendered.iter().any(|r| r.contains_span(m)) {
                continue;
            }
            rendered.push(m);
            blocks.push(m.body.clone());
        }
    };
    for name in &visited[..seed_count.min(visited.len())] {
        render_method(name, &mut blocks);
    }

    // raw windows for changes outside any method
    let mut windows: BTreeMap<usize, usize> = BTreeMap::new();
    let line_total = src_lines.len();
    for &l in touched.iter().filter(|&&l| !methods.iter().any(|m| m.overlaps_line(l))) {
        if l == 0 || l > line_total {
            continue;
        }
        let lo = l.saturating_sub(RAW_WINDOW).max(1);
        let hi = (l + RAW_WINDOW).min(line_total);
        match windows.iter_mut().next_back() {
            Some((_, end)) if lo <= *end + 1 => *end = (*end).max(hi),
            _ => {
                windows.insert(lo, hi);
            }
        }
    }
    for (lo, hi) in windows {
        blocks.push(src_lines[lo - 1..hi].join("\n"));
    }

    for name in &visited[seed_count.min(visited.len())..] {
        render_method(name, &mut blocks);
    }

    let full = blocks.join("\n\n");
    let all_lines: Vec<&str> = if full.is_empty() { Vec::new() } else { full.split('\n').collect() };
    let truncated = all_lines.len() > max_lines;
    let mut kept: Vec<&str> = all_lines.into_iter().take(max_lines).collect();
    while kept.last().is_some_and(|l| l.is_empty()) && truncated {
        kept.pop();
    }
    ContextBundle {
        snippet: kept.join("\n"),
        included_methods: visited,
        truncated,
        depth_used,
        line_budget: max_lines,
    }
}
